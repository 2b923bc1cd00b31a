//! Numeric foundations shared by every other module: complex baseband
//! samples, waveforms, power unit conversions and labelled random streams.
//!
//! Amplitudes follow the sqrt-milliwatt convention: `|x|^2` of a sample is
//! its instantaneous power in mW.

use num_complex::Complex64;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{config, Result};

pub type ComplexSample = Complex64;

/// Power in dBm to sample amplitude in sqrt(mW).
pub fn dbm_to_amplitude(power_dbm: f64) -> f64 {
    10f64.powf(power_dbm / 20.0)
}

pub fn amplitude_to_dbm(amplitude: f64) -> f64 {
    20.0 * amplitude.abs().log10()
}

pub fn dbm_to_mw(power_dbm: f64) -> f64 {
    10f64.powf(power_dbm / 10.0)
}

pub fn mw_to_dbm(power_mw: f64) -> f64 {
    10.0 * power_mw.log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Complex baseband samples at a fixed rate. `t0` is the index of the first
/// sample on the global simulation clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<ComplexSample>,
    pub sample_rate: f64,
    pub t0: i64,
}

impl Waveform {
    pub fn new(samples: Vec<ComplexSample>, sample_rate: f64, t0: i64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return config(format!("sample rate must be positive, got {sample_rate}"));
        }
        Ok(Self {
            samples,
            sample_rate,
            t0,
        })
    }

    pub fn zeros(len: usize, sample_rate: f64, t0: i64) -> Result<Self> {
        Self::new(vec![ComplexSample::new(0.0, 0.0); len], sample_rate, t0)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Sum of instantaneous powers, mW.
    pub fn total_power_mw(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn mean_power_mw(&self) -> Option<f64> {
        if self.samples.is_empty() {
            None
        } else {
            Some(self.total_power_mw() / self.samples.len() as f64)
        }
    }

    /// Energy in mW·s (rectangle rule).
    pub fn energy(&self) -> f64 {
        self.total_power_mw() / self.sample_rate
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|s| s.re.is_finite() && s.im.is_finite())
    }
}

/// Deterministic random stream keyed by `(root_seed, label)`.
///
/// The key is hashed with SHA-256 into a ChaCha8 seed, so streams for
/// different labels are independent and adding a label never shifts another.
#[derive(Debug, Clone)]
pub struct RngStream {
    root_seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

pub fn substream(root_seed: u64, label: &str) -> Result<RngStream> {
    if label.is_empty() {
        return config("random stream label must not be empty");
    }
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    Ok(RngStream {
        root_seed,
        label: label.to_owned(),
        rng: ChaCha8Rng::from_seed(seed),
    })
}

impl RngStream {
    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform draw on (0, 1]; never returns zero, so `ln` is always finite.
    pub fn uniform_open0(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
