//! Sample-clock flooding engine.
//!
//! Every frame is simulated on its own span of the global clock: a short
//! lead-in, the source frame, then an inter-frame gap, with all relays reset
//! to listening at the start of the span. Transmissions are injected into
//! per-receiver ring buffers the moment they are decided, so each receiver
//! reads the superposition of all pulses on air with their link gains,
//! delays and carrier offsets already applied.
//!
//! Receiver-side CFO derotation is not applied: with one oscillator per
//! receiver it rotates signal and noise together, and rotating circular
//! Gaussian noise leaves its distribution unchanged, so the envelope the
//! detector sees is identical in law.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{MetricsAccumulator, MetricsReport};
use crate::channel::{delay_samples, draw_fading, path_gain_db, CfoSchedule, ChannelProfile};
use crate::detector::DetectorConfig;
use crate::error::{config, Error, Result};
use crate::modem::{measure_noise_floor, Modulator, PhyParams};
use crate::node::{NodeState, NodeTiming};
use crate::signal::{db_to_linear, dbm_to_mw, substream, ComplexSample, RngStream, Waveform};
use crate::topology::{build_grid, SourceCorner, Topology, DEFAULT_MAX_RANGE_M};

const RING: usize = 256;
const RING_MASK: i64 = RING as i64 - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub phy: PhyParams,
    pub detector: DetectorConfig,
    pub channel: ChannelProfile,
    pub rows: usize,
    pub cols: usize,
    pub grid_distance_m: f64,
    pub max_range_m: f64,
    pub source_corner: SourceCorner,
    pub data_rate_bps: f64,
    /// Frame length in bits, preamble included.
    pub frame_bits: usize,
    pub num_frames: usize,
    pub cfo_range_hz: f64,
    pub cfo_redraw_s: f64,
    pub noise_dbm: f64,
    pub tau_s: f64,
    pub gap_symbols: usize,
    /// Ambient-noise samples each node measures before the run to set its
    /// detection threshold.
    pub calibration_samples: usize,
    pub root_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            phy: PhyParams::default(),
            detector: DetectorConfig::default(),
            channel: ChannelProfile::default(),
            rows: 5,
            cols: 5,
            grid_distance_m: 5.0,
            max_range_m: DEFAULT_MAX_RANGE_M,
            source_corner: SourceCorner::Origin,
            data_rate_bps: 40e3,
            frame_bits: 128,
            num_frames: 10,
            cfo_range_hz: 0.0,
            cfo_redraw_s: 1.0,
            noise_dbm: -60.0,
            tau_s: 0.5e-6,
            gap_symbols: 20,
            calibration_samples: 20_000,
            root_seed: 1,
        }
    }
}

impl SimConfig {
    pub fn resolved_phy(&self) -> Result<PhyParams> {
        self.phy.clone().with_data_rate(self.data_rate_bps)
    }

    pub fn timing(&self) -> Result<NodeTiming> {
        let phy = self.resolved_phy()?;
        let modulator = Modulator::new(&phy)?;
        let tau = self.tau_s * phy.sample_rate;
        if !(tau >= 0.0) || (tau - tau.round()).abs() > 1e-6 {
            return config(format!("tau of {} s is not a whole number of samples", self.tau_s));
        }
        Ok(NodeTiming {
            frame_bits: self.frame_bits,
            symbol_samples: modulator.symbol_samples(),
            window_len: self.detector.window_len,
            buffer_size: self.detector.buffer_size,
            group_size: self.detector.group_size,
            tau_samples: tau.round() as usize,
            pulse_samples: modulator.pulse().len(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let phy = self.resolved_phy()?;
        phy.validate()?;
        self.channel.validate()?;
        self.detector
            .validate_for(phy.pulse_samples()?, phy.symbol_samples()?)?;
        if self.frame_bits == 0 {
            return config("frame size must be at least one bit");
        }
        if self.num_frames == 0 {
            return config("at least one frame must be simulated");
        }
        if self.calibration_samples == 0 {
            return config("noise calibration needs at least one sample");
        }
        if !self.noise_dbm.is_finite() {
            return config("noise power must be finite");
        }
        CfoSchedule {
            root_seed: self.root_seed,
            range_hz: self.cfo_range_hz,
            redraw_interval_s: self.cfo_redraw_s,
        }
        .validate()?;
        let timing = self.timing()?;
        timing.validate()?;
        self.topology()?;
        Ok(())
    }

    /// Samples in one frame span: lead-in, frame and inter-frame gap. The
    /// lead-in keeps the first possible preamble detection past r + tau and
    /// leaves the source on the buffer grid.
    pub fn span_layout(&self) -> Result<(usize, usize)> {
        let timing = self.timing()?;
        let buffer = timing.buffer_size;
        let lead_in = buffer * (1 + (buffer + timing.tau_samples).div_ceil(buffer));
        Ok((lead_in, lead_in + (self.frame_bits + self.gap_symbols) * timing.symbol_samples))
    }

    /// Frames needed to cover `seconds` of air time.
    pub fn frames_for_duration(&self, seconds: f64) -> Result<usize> {
        if !(seconds > 0.0 && seconds.is_finite()) {
            return config(format!("duration must be positive, got {seconds} s"));
        }
        let (_, span) = self.span_layout()?;
        let fs = self.resolved_phy()?.sample_rate;
        Ok(((seconds * fs / span as f64).ceil() as usize).max(1))
    }

    pub fn topology(&self) -> Result<Topology> {
        build_grid(self.rows, self.cols, self.grid_distance_m, self.max_range_m, self.source_corner)
    }
}

/// Outcome of one frame. Times are in samples relative to the start of the
/// source preamble.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: usize,
    /// Absolute sample index of the source preamble.
    pub source_start: i64,
    pub truth: Vec<bool>,
    pub source: usize,
    pub decoded: Vec<Vec<bool>>,
    pub decision_times: Vec<Vec<i64>>,
    pub decision_offsets: Vec<Vec<u32>>,
}

impl FrameRecord {
    /// Time of the node's last decision, if it decoded the whole frame.
    pub fn completion(&self, node: usize) -> Option<i64> {
        if node == self.source {
            return Some(0);
        }
        (self.decoded[node].len() == self.truth.len())
            .then(|| *self.decision_times[node].last().expect("frame has at least one bit"))
    }

    pub fn destinations(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.decoded.len()).filter(move |&i| i != self.source)
    }

    pub fn is_complete(&self) -> bool {
        self.destinations().all(|i| self.completion(i).is_some())
    }

    pub fn is_error_free(&self) -> bool {
        self.destinations().all(|i| self.decoded[i] == self.truth)
    }
}

/// End-to-end latency of a frame in seconds: the last destination's
/// completion time measured from the source preamble.
pub fn e2e_latency(record: &FrameRecord, sample_rate: f64) -> Result<f64> {
    let mut worst = 0i64;
    for i in record.destinations() {
        match record.completion(i) {
            Some(c) => worst = worst.max(c),
            None => {
                return Err(Error::Input(format!(
                    "frame {} timed out at node {i}",
                    record.frame_index
                )))
            }
        }
    }
    Ok(worst as f64 / sample_rate)
}

/// A prepared run: topology, link budgets, thresholds and CFO draws are
/// fixed; frames can then be simulated independently and in any order.
#[derive(Debug, Clone)]
pub struct Simulation {
    cfg: SimConfig,
    topology: Topology,
    timing: NodeTiming,
    sample_rate: f64,
    pulse: Vec<f64>,
    lead_in: usize,
    span: usize,
    /// Amplitude link budget, row = transmitter.
    budget: Vec<f64>,
    delays: Vec<usize>,
    thresholds: Vec<f64>,
    noise_mw: f64,
    cfo: Vec<Vec<f64>>,
    cfo_interval_samples: f64,
}

impl Simulation {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let topology = cfg.topology()?;
        let phy = cfg.resolved_phy()?;
        let modulator = Modulator::new(&phy)?;
        let timing = cfg.timing()?;
        let fs = phy.sample_rate;
        let n = topology.len();

        let pulse: Vec<f64> = modulator.pulse().iter().map(|s| s.re).collect();
        let (lead_in, span) = cfg.span_layout()?;

        let mut budget = vec![0.0; n * n];
        let mut delays = vec![0usize; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let d = topology.distance(a, b);
                let mut db = path_gain_db(d, &cfg.channel, phy.carrier_freq)? + 2.0 * phy.antenna_gain_dbi;
                if cfg.channel.shadowing_sigma_db > 0.0 {
                    let mut rng = substream(cfg.root_seed, &format!("link/{a}-{b}/shadowing"))?;
                    let z: f64 = StandardNormal.sample(&mut rng);
                    db += cfg.channel.shadowing_sigma_db * z;
                }
                let amp = db_to_linear(db).sqrt();
                let delay = delay_samples(d, fs);
                if delay + pulse.len() >= RING {
                    return config(format!(
                        "link {a}-{b} of {d} m is too long for the propagation buffer"
                    ));
                }
                for (tx, rx) in [(a, b), (b, a)] {
                    budget[tx * n + rx] = amp;
                    delays[tx * n + rx] = delay;
                }
            }
        }

        let noise_mw = dbm_to_mw(cfg.noise_dbm);
        let mut thresholds = Vec::with_capacity(n);
        for i in 0..n {
            if cfg.detector.threshold_amplitude > 0.0 {
                thresholds.push(cfg.detector.threshold_amplitude);
                continue;
            }
            let mut rng = substream(cfg.root_seed, &format!("node/{i}/calibration"))?;
            let sigma = (noise_mw / 2.0).sqrt();
            let ambient: Vec<ComplexSample> = (0..cfg.calibration_samples)
                .map(|_| gaussian(&mut rng, sigma))
                .collect();
            let floor = measure_noise_floor(&Waveform::new(ambient, fs, 0)?, cfg.detector.margin_db)?;
            thresholds.push(floor.threshold_amplitude);
        }

        let schedule = CfoSchedule {
            root_seed: cfg.root_seed,
            range_hz: cfg.cfo_range_hz,
            redraw_interval_s: cfg.cfo_redraw_s,
        };
        let total_s = (cfg.num_frames * span) as f64 / fs;
        let epochs = schedule.epoch(total_s) as usize + 1;
        let cfo = (0..n)
            .map(|i| (0..epochs as u64).map(|e| schedule.epoch_offset(i, e)).collect())
            .collect();

        Ok(Self {
            cfg: cfg.clone(),
            topology,
            timing,
            sample_rate: fs,
            pulse,
            lead_in,
            span,
            budget,
            delays,
            thresholds,
            noise_mw,
            cfo,
            cfo_interval_samples: cfg.cfo_redraw_s * fs,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn timing(&self) -> &NodeTiming {
        &self.timing
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// Samples per frame span, lead-in and gap included.
    pub fn span_samples(&self) -> usize {
        self.span
    }

    fn cfo_at(&self, node: usize, t_abs: i64) -> f64 {
        let epoch = (t_abs as f64 / self.cfo_interval_samples).floor() as usize;
        let row = &self.cfo[node];
        row[epoch.min(row.len() - 1)]
    }

    /// Simulate frame `f`.
    pub fn run_frame(&self, f: usize) -> Result<FrameRecord> {
        let n = self.topology.len();
        let src = self.topology.source;
        let seed = self.cfg.root_seed;
        let frame_bits = self.cfg.frame_bits;
        let ns = self.timing.symbol_samples as i64;
        let span_origin = (f * self.span) as i64;
        let lead_in = self.lead_in as i64;

        let mut truth = Vec::with_capacity(frame_bits);
        truth.push(true);
        let mut rng = substream(seed, &format!("frame/{f}/payload"))?;
        truth.extend((1..frame_bits).map(|_| rng.random::<bool>()));

        let mut gain = vec![Complex64::new(0.0, 0.0); n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                let mut rng = substream(seed, &format!("frame/{f}/link/{a}-{b}"))?;
                let h = draw_fading(self.cfg.channel.rician_k_db, &mut rng);
                gain[a * n + b] = h * self.budget[a * n + b];
                gain[b * n + a] = h * self.budget[b * n + a];
            }
        }

        let mut nodes: Vec<NodeState> = (0..n)
            .map(|i| NodeState::new(self.timing, self.thresholds[i]))
            .collect();
        let mut noise: Vec<RngStream> = (0..n)
            .map(|i| substream(seed, &format!("frame/{f}/node/{i}/noise")))
            .collect::<Result<_>>()?;
        let sigma = (self.noise_mw / 2.0).sqrt();
        let thr_sq: Vec<f64> = self.thresholds.iter().map(|t| t * t).collect();
        // per-sample probability that noise alone exceeds the threshold
        let ln_quiet: Vec<f64> = thr_sq
            .iter()
            .map(|t| (-(-t / self.noise_mw).exp()).ln_1p())
            .collect();
        let mut next_exceed = vec![i64::MIN; n];

        let mut ring_re = vec![0.0f64; n * RING];
        let mut ring_im = vec![0.0f64; n * RING];
        let mut wave_re = vec![0.0f64; self.pulse.len()];
        let mut wave_im = vec![0.0f64; self.pulse.len()];
        let mut listening = vec![true; n];
        listening[src] = false;
        let mut pending = n - 1;

        let last_source_pulse = lead_in + (frame_bits as i64 - 1) * ns;
        for t in 0..self.span as i64 {
            if t >= lead_in && t <= last_source_pulse && (t - lead_in) % ns == 0 && truth[((t - lead_in) / ns) as usize] {
                self.inject(src, t, span_origin, &gain, &listening, &mut wave_re, &mut wave_im, &mut ring_re, &mut ring_im);
            }
            let slot = (t & RING_MASK) as usize;
            for i in 0..n {
                if !listening[i] {
                    continue;
                }
                let idx = i * RING + slot;
                let (sr, si) = (ring_re[idx], ring_im[idx]);
                ring_re[idx] = 0.0;
                ring_im[idx] = 0.0;
                let node = &mut nodes[i];
                if !node.wants_sample(t) {
                    continue;
                }
                let above = if node.is_transmitting(t) {
                    false
                } else if sr != 0.0 || si != 0.0 {
                    let z = gaussian(&mut noise[i], sigma);
                    (sr + z.re).powi(2) + (si + z.im).powi(2) > thr_sq[i]
                } else {
                    let ne = &mut next_exceed[i];
                    if *ne < t {
                        *ne = t.saturating_add(geometric(&mut noise[i], ln_quiet[i]));
                    }
                    if *ne == t {
                        *ne = t.saturating_add(1).saturating_add(geometric(&mut noise[i], ln_quiet[i]));
                        true
                    } else {
                        false
                    }
                };
                if let Some(ev) = node.step_flag(above, t) {
                    if node.is_done() {
                        listening[i] = false;
                        pending -= 1;
                    }
                    self.inject(i, ev.start, span_origin, &gain, &listening, &mut wave_re, &mut wave_im, &mut ring_re, &mut ring_im);
                } else if node.is_done() {
                    listening[i] = false;
                    pending -= 1;
                }
            }
            if pending == 0 && t > last_source_pulse {
                break;
            }
        }

        let rel = |times: Vec<i64>| times.into_iter().map(|t| t - lead_in).collect();
        let (mut decoded, mut decision_times, mut decision_offsets) = (Vec::new(), Vec::new(), Vec::new());
        for (i, node) in nodes.into_iter().enumerate() {
            if i == src {
                decoded.push(truth.clone());
                decision_times.push((0..frame_bits as i64).map(|k| k * ns).collect());
                decision_offsets.push(vec![0; frame_bits]);
            } else {
                decoded.push(node.decoded);
                decision_times.push(rel(node.decision_times));
                decision_offsets.push(node.decision_offsets);
            }
        }
        Ok(FrameRecord {
            frame_index: f,
            source_start: span_origin + lead_in,
            truth,
            source: src,
            decoded,
            decision_times,
            decision_offsets,
        })
    }

    /// Add a pulse from `tx` starting at frame-local sample `start` to the
    /// receive buffers of every node still listening.
    #[allow(clippy::too_many_arguments)]
    fn inject(
        &self,
        tx: usize,
        start: i64,
        span_origin: i64,
        gain: &[Complex64],
        listening: &[bool],
        wave_re: &mut [f64],
        wave_im: &mut [f64],
        ring_re: &mut [f64],
        ring_im: &mut [f64],
    ) {
        let n = self.topology.len();
        let t_abs = span_origin + start;
        let cfo = self.cfo_at(tx, t_abs);
        let cycles_per_sample = cfo / self.sample_rate;
        let phase0 = 2.0 * PI * (cycles_per_sample * t_abs as f64).fract();
        let step = 2.0 * PI * cycles_per_sample;
        for (k, p) in self.pulse.iter().enumerate() {
            let (s, c) = (phase0 + step * k as f64).sin_cos();
            wave_re[k] = p * c;
            wave_im[k] = p * s;
        }
        let len = self.pulse.len();
        for rx in 0..n {
            if rx == tx || !listening[rx] {
                continue;
            }
            let g = gain[tx * n + rx];
            let first = ((start + self.delays[tx * n + rx] as i64) & RING_MASK) as usize;
            let head = len.min(RING - first);
            let base = rx * RING;
            axpy(
                g,
                &wave_re[..head],
                &wave_im[..head],
                &mut ring_re[base + first..base + first + head],
                &mut ring_im[base + first..base + first + head],
            );
            if head < len {
                axpy(
                    g,
                    &wave_re[head..],
                    &wave_im[head..],
                    &mut ring_re[base..base + len - head],
                    &mut ring_im[base..base + len - head],
                );
            }
        }
    }

    /// Simulate frames `0..num_frames`, handing each record to `sink` in
    /// frame order. Frames are computed in parallel batches.
    pub fn run_with(&self, mut sink: impl FnMut(FrameRecord) -> Result<()>) -> Result<()> {
        let batch = 4 * rayon::current_num_threads().max(1);
        let mut f = 0;
        while f < self.cfg.num_frames {
            let end = (f + batch).min(self.cfg.num_frames);
            let records: Vec<FrameRecord> = (f..end)
                .into_par_iter()
                .map(|i| self.run_frame(i))
                .collect::<Result<_>>()?;
            for r in records {
                sink(r)?;
            }
            f = end;
        }
        Ok(())
    }

    /// Run every frame and fold the outcome into a metrics report.
    pub fn run_metrics(&self) -> Result<MetricsReport> {
        let mut acc = MetricsAccumulator::new(self)?;
        self.run_with(|r| {
            acc.push(&r);
            Ok(())
        })?;
        acc.finish()
    }
}

#[inline]
fn axpy(g: Complex64, xr: &[f64], xi: &[f64], yr: &mut [f64], yi: &mut [f64]) {
    for (((yr, yi), xr), xi) in yr.iter_mut().zip(yi.iter_mut()).zip(xr).zip(xi) {
        *yr += g.re * xr - g.im * xi;
        *yi += g.re * xi + g.im * xr;
    }
}

#[inline]
fn gaussian(rng: &mut RngStream, sigma: f64) -> ComplexSample {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    ComplexSample::new(re * sigma, im * sigma)
}

/// Number of quiet samples before the next noise-only exceedance.
#[inline]
fn geometric(rng: &mut RngStream, ln_quiet: f64) -> i64 {
    if ln_quiet == 0.0 {
        return i64::MAX / 2;
    }
    let g = rng.uniform_open0().ln() / ln_quiet;
    if g >= (i64::MAX / 4) as f64 {
        i64::MAX / 4
    } else {
        g as i64
    }
}

/// Run all frames of `cfg`, keeping every frame record.
pub fn run_flood(cfg: &SimConfig) -> Result<(Vec<FrameRecord>, MetricsReport)> {
    let sim = Simulation::new(cfg)?;
    let mut acc = MetricsAccumulator::new(&sim)?;
    let mut records = Vec::with_capacity(cfg.num_frames);
    sim.run_with(|r| {
        acc.push(&r);
        records.push(r);
        Ok(())
    })?;
    Ok((records, acc.finish()?))
}
