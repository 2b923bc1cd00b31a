//! Pulse-based OOK transmitter: raised-cosine shaped pulses, carrier
//! frequency offset rotation, and ambient noise-floor estimation.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::signal::{dbm_to_amplitude, dbm_to_mw, mw_to_dbm, ComplexSample, Waveform};

/// Raised-cosine span in chip periods.
pub const FILTER_SPAN_CHIPS: f64 = 8.0;

const INTEGER_TOLERANCE: f64 = 1e-6;
const RATE_SNAP_TOLERANCE: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhyParams {
    pub sample_rate: f64,
    pub pulse_duration: f64,
    pub symbol_period: f64,
    pub rolloff: f64,
    pub tx_power_dbm: f64,
    pub antenna_gain_dbi: f64,
    pub carrier_freq: f64,
    pub occupied_bandwidth: f64,
}

impl Default for PhyParams {
    fn default() -> Self {
        Self {
            sample_rate: 2.0e7,
            pulse_duration: 3.0e-6,
            symbol_period: 25.0e-6,
            rolloff: 0.5,
            tx_power_dbm: 0.0,
            antenna_gain_dbi: 5.0,
            carrier_freq: 2.491e9,
            occupied_bandwidth: 2.8e6,
        }
    }
}

/// Convert a duration to a whole number of samples, rejecting durations that
/// do not land on the sample grid.
pub fn duration_to_samples(duration: f64, sample_rate: f64, what: &str) -> Result<usize> {
    let exact = duration * sample_rate;
    let rounded = exact.round();
    if !(exact.is_finite() && rounded >= 0.0) {
        return config(format!("{what} must be a non-negative duration"));
    }
    if (exact - rounded).abs() > INTEGER_TOLERANCE * rounded.max(1.0) {
        return config(format!(
            "{what} of {duration} s is not a whole number of samples at {sample_rate} Hz"
        ));
    }
    Ok(rounded as usize)
}

impl PhyParams {
    /// Set the symbol period from a data rate, snapping to a whole number of
    /// samples. Rates quoted to three figures (66.7 kbps) land within 0.5%
    /// of a sample boundary; anything further off is rejected.
    pub fn with_data_rate(mut self, data_rate_bps: f64) -> Result<Self> {
        if !(data_rate_bps > 0.0 && data_rate_bps.is_finite()) {
            return config(format!("data rate must be positive, got {data_rate_bps}"));
        }
        let exact = self.sample_rate / data_rate_bps;
        let ns = exact.round();
        if ns < 1.0 || (ns - exact).abs() > RATE_SNAP_TOLERANCE * exact {
            return config(format!(
                "data rate {data_rate_bps} bps is not within 0.5% of a whole number of samples per symbol"
            ));
        }
        self.symbol_period = ns / self.sample_rate;
        Ok(self)
    }

    pub fn pulse_samples(&self) -> Result<usize> {
        duration_to_samples(self.pulse_duration, self.sample_rate, "pulse duration")
    }

    pub fn symbol_samples(&self) -> Result<usize> {
        duration_to_samples(self.symbol_period, self.sample_rate, "symbol period")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return config("sample_rate must be positive");
        }
        if !(self.pulse_duration > 0.0 && self.pulse_duration < self.symbol_period) {
            return config(format!(
                "pulse duration {} s must be positive and shorter than the symbol period {} s",
                self.pulse_duration, self.symbol_period
            ));
        }
        if !(0.0..=1.0).contains(&self.rolloff) {
            return config(format!("roll-off {} outside [0, 1]", self.rolloff));
        }
        if !self.tx_power_dbm.is_finite() || !self.antenna_gain_dbi.is_finite() {
            return config("transmit power and antenna gain must be finite");
        }
        if !(self.carrier_freq > 0.0) {
            return config("carrier frequency must be positive");
        }
        self.pulse_samples()?;
        self.symbol_samples()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapingFilter {
    pub taps: Vec<f64>,
    /// Offset of the centre tap, in samples.
    pub group_delay: usize,
    pub chip_rate: f64,
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Raised-cosine impulse response at `x` chip periods from the centre.
fn raised_cosine(x: f64, rolloff: f64) -> f64 {
    let denom = 1.0 - (2.0 * rolloff * x).powi(2);
    if rolloff > 0.0 && denom.abs() < 1e-10 {
        PI / 4.0 * sinc(1.0 / (2.0 * rolloff))
    } else {
        sinc(x) * (PI * rolloff * x).cos() / denom
    }
}

/// Raised-cosine filter whose chip rate puts `(1 + rolloff) * chip_rate` at the
/// configured occupied bandwidth. Truncated to [`FILTER_SPAN_CHIPS`] and
/// normalised to unit DC gain.
pub fn design_shaping_filter(params: &PhyParams) -> Result<ShapingFilter> {
    if !(0.0..=1.0).contains(&params.rolloff) {
        return config(format!("roll-off {} outside [0, 1]", params.rolloff));
    }
    if !(params.occupied_bandwidth > 0.0) {
        return config("occupied bandwidth must be positive");
    }
    let chip_rate = params.occupied_bandwidth / (1.0 + params.rolloff);
    let samples_per_chip = params.sample_rate / chip_rate;
    if samples_per_chip < 2.0 {
        return config(format!(
            "bandwidth {} Hz needs a chip rate of {chip_rate:.1} Hz, not representable at {} Hz",
            params.occupied_bandwidth, params.sample_rate
        ));
    }
    let half = (FILTER_SPAN_CHIPS / 2.0 * samples_per_chip).floor() as usize;
    let mut taps: Vec<f64> = (0..=2 * half)
        .map(|i| raised_cosine((i as f64 - half as f64) / samples_per_chip, params.rolloff))
        .collect();
    let dc: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= dc);
    // exact mirror so symmetry survives the division rounding
    for i in 0..half {
        taps[2 * half - i] = taps[i];
    }
    Ok(ShapingFilter {
        taps,
        group_delay: half,
        chip_rate,
    })
}

/// Precomputed transmitter: the shaped, power-scaled pulse for a 1-symbol.
#[derive(Debug, Clone)]
pub struct Modulator {
    params: PhyParams,
    filter: ShapingFilter,
    symbol_samples: usize,
    pulse: Vec<ComplexSample>,
}

impl Modulator {
    pub fn new(params: &PhyParams) -> Result<Self> {
        params.validate()?;
        let filter = design_shaping_filter(params)?;
        let width = params.pulse_samples()?;
        let symbol_samples = params.symbol_samples()?;
        let gd = filter.group_delay as isize;
        let len = width + filter.group_delay;
        if len > symbol_samples {
            return config(format!(
                "shaped pulse spans {len} samples, longer than the {symbol_samples}-sample symbol"
            ));
        }
        // Rectangle on [0, width) filtered with zero phase; the pre-cursor
        // before sample 0 is dropped so each pulse stays inside its own slot.
        let mut shaped: Vec<f64> = (0..len as isize)
            .map(|k| {
                (0..width as isize)
                    .map(|j| k - j + gd)
                    .filter(|&idx| idx >= 0 && (idx as usize) < filter.taps.len())
                    .map(|idx| filter.taps[idx as usize])
                    .sum()
            })
            .collect();
        let mean_sq = shaped[..width].iter().map(|v| v * v).sum::<f64>() / width as f64;
        let scale = (dbm_to_mw(params.tx_power_dbm) / mean_sq).sqrt();
        shaped.iter_mut().for_each(|v| *v *= scale);
        Ok(Self {
            params: params.clone(),
            filter,
            symbol_samples,
            pulse: shaped.into_iter().map(|v| ComplexSample::new(v, 0.0)).collect(),
        })
    }

    pub fn params(&self) -> &PhyParams {
        &self.params
    }

    pub fn filter(&self) -> &ShapingFilter {
        &self.filter
    }

    pub fn symbol_samples(&self) -> usize {
        self.symbol_samples
    }

    /// Non-zero extent of a transmitted 1-symbol.
    pub fn pulse(&self) -> &[ComplexSample] {
        &self.pulse
    }

    pub fn bit(&self, bit: bool) -> Waveform {
        let mut samples = vec![ComplexSample::new(0.0, 0.0); self.symbol_samples];
        if bit {
            samples[..self.pulse.len()].copy_from_slice(&self.pulse);
        }
        Waveform {
            samples,
            sample_rate: self.params.sample_rate,
            t0: 0,
        }
    }

    /// Modulate a bit string by superposing pulses on a single sample grid.
    pub fn bits(&self, bits: &[bool]) -> Waveform {
        let ns = self.symbol_samples;
        let mut samples = vec![ComplexSample::new(0.0, 0.0); ns * bits.len()];
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            let start = i * ns;
            for (k, p) in self.pulse.iter().enumerate() {
                if let Some(s) = samples.get_mut(start + k) {
                    *s += p;
                }
            }
        }
        Waveform {
            samples,
            sample_rate: self.params.sample_rate,
            t0: 0,
        }
    }
}

pub fn modulate_bit(bit: bool, params: &PhyParams) -> Result<Waveform> {
    Ok(Modulator::new(params)?.bit(bit))
}

pub fn modulate_bits(bits: &[bool], params: &PhyParams) -> Result<Waveform> {
    Ok(Modulator::new(params)?.bits(bits))
}

/// Rotate a baseband waveform by a carrier frequency offset, using the
/// absolute sample clock so that rotations compose across calls.
pub fn apply_cfo(w: &Waveform, cfo_hz: f64, phase0: f64) -> Waveform {
    let step = 2.0 * PI * cfo_hz / w.sample_rate;
    let samples = w
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| s * ComplexSample::from_polar(1.0, step * (w.t0 as f64 + k as f64) + phase0))
        .collect();
    Waveform {
        samples,
        sample_rate: w.sample_rate,
        t0: w.t0,
    }
}

pub const DEFAULT_MARGIN_DB: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    pub floor_dbm: f64,
    pub threshold_amplitude: f64,
}

pub fn measure_noise_floor(ambient: &Waveform, margin_db: f64) -> Result<NoiseFloor> {
    let Some(mean) = ambient.mean_power_mw() else {
        return Err(crate::Error::Input(
            "cannot estimate a noise floor from an empty recording".into(),
        ));
    };
    if !(mean > 0.0) {
        return Err(crate::Error::Input(
            "ambient recording has zero power; noise floor undefined".into(),
        ));
    }
    let floor_dbm = mw_to_dbm(mean);
    Ok(NoiseFloor {
        floor_dbm,
        threshold_amplitude: dbm_to_amplitude(floor_dbm + margin_db),
    })
}
