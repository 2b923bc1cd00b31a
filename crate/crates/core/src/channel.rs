//! Per-link propagation: dual-slope log-distance path loss, Rician block
//! fading, integer-sample propagation delay, per-node CFO schedules and the
//! receiver-side superposition of concurrent transmissions with AWGN.
//!
//! Profiles `DLike` and `ELike` stand in for the indoor TGac models D and E.
//! They keep the two properties the flooding results depend on: how fast the
//! signal decays with distance and how strong the line-of-sight component is.

use std::collections::HashMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::signal::{db_to_linear, dbm_to_mw, substream, ComplexSample, RngStream, Waveform};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    DLike,
    ELike,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub name: ProfileKind,
    pub pathloss_exponent_near: f64,
    pub pathloss_exponent_far: f64,
    pub breakpoint_m: f64,
    pub rician_k_db: f64,
    pub shadowing_sigma_db: f64,
}

impl ChannelProfile {
    pub fn d_like() -> Self {
        Self {
            name: ProfileKind::DLike,
            pathloss_exponent_near: 2.0,
            pathloss_exponent_far: 3.5,
            breakpoint_m: 10.0,
            rician_k_db: 3.0,
            shadowing_sigma_db: 0.0,
        }
    }

    pub fn e_like() -> Self {
        Self {
            name: ProfileKind::ELike,
            breakpoint_m: 20.0,
            rician_k_db: 6.0,
            ..Self::d_like()
        }
    }

    pub fn from_kind(kind: ProfileKind) -> Self {
        match kind {
            ProfileKind::DLike | ProfileKind::Custom => Self {
                name: kind,
                ..Self::d_like()
            },
            ProfileKind::ELike => Self::e_like(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.breakpoint_m > 0.0) {
            return config("channel breakpoint must be positive");
        }
        for e in [self.pathloss_exponent_near, self.pathloss_exponent_far] {
            if !(1.6..=6.0).contains(&e) {
                return config(format!("path-loss exponent {e} outside [1.6, 6]"));
            }
        }
        if !self.rician_k_db.is_finite() {
            return config("Rician K-factor must be finite");
        }
        if !(self.shadowing_sigma_db >= 0.0) {
            return config("shadowing sigma must be non-negative");
        }
        Ok(())
    }
}

impl Default for ChannelProfile {
    fn default() -> Self {
        Self::d_like()
    }
}

/// Free-space path loss at 1 m, dB.
pub fn fspl_1m_db(carrier_hz: f64) -> f64 {
    20.0 * (4.0 * PI * carrier_hz / SPEED_OF_LIGHT).log10()
}

/// Large-scale path gain in dB (negative), referenced to free space at 1 m.
pub fn path_gain_db(distance_m: f64, profile: &ChannelProfile, carrier_hz: f64) -> Result<f64> {
    if !(distance_m > 0.0 && distance_m.is_finite()) {
        return config(format!("link distance must be positive, got {distance_m}"));
    }
    let bp = profile.breakpoint_m;
    let loss = fspl_1m_db(carrier_hz)
        + 10.0 * profile.pathloss_exponent_near * distance_m.min(bp).log10()
        + 10.0 * profile.pathloss_exponent_far * (distance_m / bp).max(1.0).log10();
    Ok(-loss)
}

/// One Rician flat-fading coefficient with `E[|h|^2] = 1`.
pub fn draw_fading(k_db: f64, rng: &mut RngStream) -> Complex64 {
    let k = db_to_linear(k_db);
    let theta = 2.0 * PI * rng.uniform();
    let los = Complex64::from_polar((k / (k + 1.0)).sqrt(), theta);
    let scale = (1.0 / (2.0 * (k + 1.0))).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    los + Complex64::new(re, im) * scale
}

pub fn delay_samples(distance_m: f64, sample_rate: f64) -> usize {
    (distance_m / SPEED_OF_LIGHT * sample_rate).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub tx: usize,
    pub rx: usize,
    /// Fading coefficient times the amplitude path gain, antenna gains included.
    pub gain: Complex64,
    pub delay_samples: usize,
}

impl LinkState {
    /// Combine large-scale gain (dB, both antennas and shadowing already
    /// summed in) with a small-scale fading draw.
    pub fn new(tx: usize, rx: usize, budget_db: f64, fading: Complex64, delay: usize) -> Self {
        Self {
            tx,
            rx,
            gain: fading * db_to_linear(budget_db).sqrt(),
            delay_samples: delay,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfoSchedule {
    pub root_seed: u64,
    pub range_hz: f64,
    pub redraw_interval_s: f64,
}

impl CfoSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.range_hz >= 0.0 && self.range_hz.is_finite()) {
            return config("CFO range must be a non-negative frequency");
        }
        if !(self.redraw_interval_s > 0.0) {
            return config("CFO redraw interval must be positive");
        }
        Ok(())
    }

    pub fn epoch(&self, t: f64) -> u64 {
        (t / self.redraw_interval_s).floor() as u64
    }

    pub fn epoch_offset(&self, node: usize, epoch: u64) -> f64 {
        if self.range_hz == 0.0 {
            return 0.0;
        }
        let label = format!("node/{node}/cfo/epoch/{epoch}");
        let mut rng = substream(self.root_seed, &label).expect("label is non-empty");
        self.range_hz * (2.0 * rng.uniform() - 1.0)
    }
}

/// CFO of `node` at time `t` seconds: uniform in `[-range, range]`, redrawn
/// at every epoch boundary.
pub fn cfo_at(schedule: &CfoSchedule, node: usize, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return config(format!("CFO queried at negative time {t}"));
    }
    Ok(schedule.epoch_offset(node, schedule.epoch(t)))
}

/// Memoised CFO lookups for a run.
#[derive(Debug, Clone)]
pub struct CfoTable {
    schedule: CfoSchedule,
    cache: HashMap<(usize, u64), f64>,
}

impl CfoTable {
    pub fn new(schedule: CfoSchedule) -> Self {
        Self {
            schedule,
            cache: HashMap::new(),
        }
    }

    pub fn schedule(&self) -> &CfoSchedule {
        &self.schedule
    }

    pub fn at(&mut self, node: usize, t: f64) -> f64 {
        let epoch = self.schedule.epoch(t.max(0.0));
        let schedule = &self.schedule;
        *self
            .cache
            .entry((node, epoch))
            .or_insert_with(|| schedule.epoch_offset(node, epoch))
    }
}

/// A transmitted waveform as seen through one link.
#[derive(Debug, Clone, Copy)]
pub struct Transmission<'a> {
    pub link: LinkState,
    pub signal: &'a Waveform,
    pub cfo_hz: f64,
}

/// The slice of the global clock a receiver observes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverWindow {
    pub rx: usize,
    pub start: i64,
    pub len: usize,
    pub cfo_hz: f64,
    /// Half-open intervals during which the receiver is itself transmitting.
    pub blanked: Vec<(i64, i64)>,
}

/// Complex AWGN sample with total power `power_mw`.
pub fn awgn_sample<R: rand::Rng + ?Sized>(power_mw: f64, rng: &mut R) -> ComplexSample {
    let sigma = (power_mw / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    ComplexSample::new(re * sigma, im * sigma)
}

/// Received baseband at `window.rx`: every transmission scaled by its link
/// gain, delayed, rotated by the transmitter-receiver CFO difference, plus
/// AWGN. `noise_power_dbm = None` disables the noise.
pub fn superpose_at_receiver(
    window: &ReceiverWindow,
    transmissions: &[Transmission<'_>],
    sample_rate: f64,
    noise_power_dbm: Option<f64>,
    rng: &mut RngStream,
) -> Result<Waveform> {
    for t in transmissions {
        if t.signal.sample_rate != sample_rate {
            return config(format!(
                "transmission from node {} sampled at {} Hz, receiver runs at {} Hz",
                t.link.tx, t.signal.sample_rate, sample_rate
            ));
        }
    }
    let noise_mw = noise_power_dbm.map(dbm_to_mw);
    let mut samples = Vec::with_capacity(window.len);
    for k in 0..window.len {
        let t = window.start + k as i64;
        if window.blanked.iter().any(|&(a, b)| t >= a && t < b) {
            samples.push(ComplexSample::new(0.0, 0.0));
            continue;
        }
        let mut acc = ComplexSample::new(0.0, 0.0);
        for tr in transmissions {
            let idx = t - tr.link.delay_samples as i64 - tr.signal.t0;
            if idx < 0 || idx as usize >= tr.signal.len() {
                continue;
            }
            let phase = 2.0 * PI * (tr.cfo_hz - window.cfo_hz) * t as f64 / sample_rate;
            acc += tr.link.gain * tr.signal.samples[idx as usize] * Complex64::from_polar(1.0, phase);
        }
        if let Some(p) = noise_mw {
            acc += awgn_sample(p, rng);
        }
        samples.push(acc);
    }
    Waveform::new(samples, sample_rate, window.start)
}
