//! Post-run metrics and closed-form latency, error-statistics and BCH
//! frame-loss calculations.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::sim::{FrameRecord, Simulation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: usize,
    pub hop_count: usize,
    pub ber: f64,
    /// Fraction of transmitted 1-symbols decoded as 0.
    pub ser_one: f64,
    /// Fraction of transmitted 0-symbols decoded as 1.
    pub ser_zero: f64,
    pub bit_errors: u64,
    pub payload_bits: u64,
    pub timeouts: u64,
    pub mean_completion_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub frame_bits: usize,
    pub diameter: usize,
    /// Mean of the per-destination BERs.
    pub network_ber: f64,
    pub ser_one: f64,
    pub ser_zero: f64,
    pub mean_latency_s: Option<f64>,
    pub max_latency_s: Option<f64>,
    pub frame_latencies_s: Vec<f64>,
    /// Frames in which at least one destination did not decode every symbol.
    pub timeouts: usize,
    pub error_free_frames: usize,
    pub latency_bounds_s: (f64, f64),
    /// Error-free frames whose latency falls outside the bounds.
    pub latency_bound_violations: usize,
    /// Largest excursion outside the bounds among error-free frames.
    pub max_bound_excess_s: f64,
    /// Mean time from window start to a decided 1 / decided 0.
    pub mean_one_decision_s: Option<f64>,
    pub mean_zero_decision_s: Option<f64>,
    pub nodes: Vec<NodeMetrics>,
    /// Global payload-bit indices of errors, per node.
    pub error_positions: Vec<Vec<u64>>,
    pub config: serde_json::Value,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Input(e.to_string()))
    }

    pub fn destinations(&self) -> impl Iterator<Item = &NodeMetrics> {
        self.nodes.iter().filter(|m| m.hop_count > 0)
    }

    pub fn payload_bits_per_node(&self) -> u64 {
        (self.frames * self.frame_bits.saturating_sub(1)) as u64
    }
}

#[derive(Debug, Clone, Default)]
struct NodeCounts {
    bit_errors: u64,
    payload_bits: u64,
    ones_sent: u64,
    ones_missed: u64,
    zeros_sent: u64,
    zeros_flipped: u64,
    timeouts: u64,
    completion_sum: f64,
    completions: u64,
    errors: Vec<u64>,
}

/// Streaming fold of frame records into a [`MetricsReport`].
#[derive(Debug, Clone)]
pub struct MetricsAccumulator {
    sample_rate: f64,
    frame_bits: usize,
    hop_count: Vec<usize>,
    diameter: usize,
    bounds_samples: (i64, i64),
    bounds_s: (f64, f64),
    counts: Vec<NodeCounts>,
    frames: usize,
    latencies: Vec<f64>,
    timeouts: usize,
    error_free: usize,
    violations: usize,
    max_excess: i64,
    one_offsets: (f64, u64),
    zero_offsets: (f64, u64),
    config: serde_json::Value,
}

impl MetricsAccumulator {
    pub fn new(sim: &Simulation) -> Result<Self> {
        let timing = sim.timing();
        let topo = sim.topology();
        let fs = sim.sample_rate();
        let lower = (timing.frame_bits as i64 - 1) * timing.symbol_samples as i64;
        let upper = lower + (timing.buffer_size * topo.diameter) as i64;
        Ok(Self {
            sample_rate: fs,
            frame_bits: timing.frame_bits,
            hop_count: topo.hop_count.clone(),
            diameter: topo.diameter,
            bounds_samples: (lower, upper),
            bounds_s: (lower as f64 / fs, upper as f64 / fs),
            counts: vec![NodeCounts::default(); topo.len()],
            frames: 0,
            latencies: Vec::new(),
            timeouts: 0,
            error_free: 0,
            violations: 0,
            max_excess: 0,
            one_offsets: (0.0, 0),
            zero_offsets: (0.0, 0),
            config: serde_json::to_value(sim.config()).map_err(|e| Error::Input(e.to_string()))?,
        })
    }

    pub fn push(&mut self, rec: &FrameRecord) {
        let payload = self.frame_bits as u64 - 1;
        let base = rec.frame_index as u64 * payload;
        let mut complete = true;
        let mut worst = 0i64;
        for i in rec.destinations() {
            let c = &mut self.counts[i];
            let decoded = &rec.decoded[i];
            for k in 1..self.frame_bits {
                let truth = rec.truth[k];
                let got = decoded.get(k).copied().unwrap_or(false);
                if truth {
                    c.ones_sent += 1;
                    c.ones_missed += (!got) as u64;
                } else {
                    c.zeros_sent += 1;
                    c.zeros_flipped += got as u64;
                }
                if got != truth {
                    c.bit_errors += 1;
                    c.errors.push(base + k as u64 - 1);
                }
                if let Some(&off) = rec.decision_offsets[i].get(k) {
                    let slot = if got { &mut self.one_offsets } else { &mut self.zero_offsets };
                    slot.0 += off as f64;
                    slot.1 += 1;
                }
            }
            c.payload_bits += payload;
            match rec.completion(i) {
                Some(t) => {
                    c.completion_sum += t as f64 / self.sample_rate;
                    c.completions += 1;
                    worst = worst.max(t);
                }
                None => {
                    c.timeouts += 1;
                    complete = false;
                }
            }
        }
        self.frames += 1;
        if !complete {
            self.timeouts += 1;
            return;
        }
        self.latencies.push(worst as f64 / self.sample_rate);
        if rec.is_error_free() {
            self.error_free += 1;
            let (lo, hi) = self.bounds_samples;
            let excess = (lo - worst).max(worst - hi);
            if excess > 0 {
                self.violations += 1;
                self.max_excess = self.max_excess.max(excess);
            }
        }
    }

    pub fn finish(self) -> Result<MetricsReport> {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let mut nodes = Vec::with_capacity(self.counts.len());
        let mut error_positions = Vec::with_capacity(self.counts.len());
        let (mut ber_sum, mut dests) = (0.0, 0usize);
        let (mut ones, mut missed, mut zeros, mut flipped) = (0, 0, 0, 0);
        for (i, c) in self.counts.into_iter().enumerate() {
            let ber = ratio(c.bit_errors, c.payload_bits);
            if self.hop_count[i] > 0 {
                ber_sum += ber;
                dests += 1;
                ones += c.ones_sent;
                missed += c.ones_missed;
                zeros += c.zeros_sent;
                flipped += c.zeros_flipped;
            }
            nodes.push(NodeMetrics {
                node: i,
                hop_count: self.hop_count[i],
                ber,
                ser_one: ratio(c.ones_missed, c.ones_sent),
                ser_zero: ratio(c.zeros_flipped, c.zeros_sent),
                bit_errors: c.bit_errors,
                payload_bits: c.payload_bits,
                timeouts: c.timeouts,
                mean_completion_s: (c.completions > 0).then(|| c.completion_sum / c.completions as f64),
            });
            error_positions.push(c.errors);
        }
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let mean_off = |(s, n): (f64, u64)| (n > 0).then(|| s / n as f64 / self.sample_rate);
        Ok(MetricsReport {
            frames: self.frames,
            frame_bits: self.frame_bits,
            diameter: self.diameter,
            network_ber: if dests == 0 { 0.0 } else { ber_sum / dests as f64 },
            ser_one: ratio(missed, ones),
            ser_zero: ratio(flipped, zeros),
            mean_latency_s: mean(&self.latencies),
            max_latency_s: self.latencies.iter().copied().reduce(f64::max),
            frame_latencies_s: self.latencies,
            timeouts: self.timeouts,
            error_free_frames: self.error_free,
            latency_bounds_s: self.bounds_s,
            latency_bound_violations: self.violations,
            max_bound_excess_s: self.max_excess as f64 / self.sample_rate,
            mean_one_decision_s: mean_off(self.one_offsets),
            mean_zero_decision_s: mean_off(self.zero_offsets),
            nodes,
            error_positions,
            config: self.config,
        })
    }
}

/// Bounds on end-to-end latency for an `n`-bit frame over `h_max` hops.
pub fn latency_bounds(n: usize, ts: f64, r: f64, h_max: usize) -> Result<(f64, f64)> {
    if n == 0 {
        return config("frame must hold at least one bit");
    }
    let lower = (n - 1) as f64 * ts;
    Ok((lower, lower + r * h_max as f64))
}

/// Store-and-forward latency over `h_max` hops with channel-access wait
/// `t_acc` per hop.
pub fn sf_latency(n: usize, ts: f64, t_acc: f64, h_max: usize) -> Result<f64> {
    if !(ts >= 0.0 && t_acc >= 0.0) {
        return config("symbol period and access time must be non-negative");
    }
    Ok(h_max as f64 * (n as f64 * ts + t_acc))
}

/// Powers of two from 1 to 2^20.
pub fn default_spacing_breakpoints() -> Vec<u64> {
    (0..=20).map(|k| 1u64 << k).collect()
}

/// Empirical distribution of gaps between consecutive bit errors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpacingCdf {
    sorted: Vec<u64>,
}

impl SpacingCdf {
    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn spacings(&self) -> &[u64] {
        &self.sorted
    }

    /// Fraction of spacings `<= x`.
    pub fn at(&self, x: u64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    pub fn evaluate(&self, breakpoints: &[u64]) -> Vec<(u64, f64)> {
        breakpoints.iter().map(|&b| (b, self.at(b))).collect()
    }

    /// Merge spacings from several independent streams (one per node).
    pub fn merged<'a>(parts: impl IntoIterator<Item = &'a SpacingCdf>) -> SpacingCdf {
        let mut sorted: Vec<u64> = parts.into_iter().flat_map(|p| p.sorted.iter().copied()).collect();
        sorted.sort_unstable();
        SpacingCdf { sorted }
    }
}

pub fn error_spacing_cdf(positions: &[u64]) -> Result<SpacingCdf> {
    check_increasing(positions)?;
    let mut sorted: Vec<u64> = positions.windows(2).map(|w| w[1] - w[0]).collect();
    sorted.sort_unstable();
    Ok(SpacingCdf { sorted })
}

fn check_increasing(positions: &[u64]) -> Result<()> {
    if positions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Input("error positions must be strictly increasing".into()));
    }
    Ok(())
}

/// Error count in each consecutive `frame_size`-bit slice of a stream of
/// `total_bits` bits. A trailing partial frame is dropped.
pub fn errors_per_frame(positions: &[u64], frame_size: usize, total_bits: u64) -> Result<Vec<u32>> {
    if frame_size == 0 {
        return config("frame size must be at least one bit");
    }
    check_increasing(positions)?;
    let frames = (total_bits / frame_size as u64) as usize;
    let mut counts = vec![0u32; frames];
    for &p in positions {
        if let Some(c) = counts.get_mut((p / frame_size as u64) as usize) {
            *c += 1;
        }
    }
    Ok(counts)
}

/// CDF of per-frame error counts: fraction of frames with at most `k`
/// errors, for `k = 0..=max`.
pub fn count_cdf(counts: &[u32]) -> Vec<(u32, f64)> {
    let max = counts.iter().copied().max().unwrap_or(0);
    let n = counts.len().max(1) as f64;
    (0..=max)
        .map(|k| (k, counts.iter().filter(|&&c| c <= k).count() as f64 / n))
        .collect()
}

/// How a nominal frame size maps onto a BCH codeword.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BchInterpretation {
    /// The frame is the whole codeword.
    #[default]
    Codeword,
    /// The frame is the message; the codeword grows to keep the rate.
    Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BchModel {
    pub codeword_len: usize,
    pub code_rate: f64,
    pub t: usize,
}

impl BchModel {
    pub fn new(frame_size: usize, rate: f64, interpretation: BchInterpretation) -> Result<Self> {
        let codeword_len = match interpretation {
            BchInterpretation::Codeword => frame_size,
            BchInterpretation::Payload => {
                if !(rate > 0.0 && rate < 1.0) {
                    return config(format!("code rate {rate} outside (0, 1)"));
                }
                (frame_size as f64 / rate).ceil() as usize
            }
        };
        Ok(Self {
            codeword_len,
            code_rate: rate,
            t: bch_capacity(codeword_len, rate)?,
        })
    }
}

/// Degree of the generator of the narrow-sense binary BCH code of length
/// `2^m - 1` with designed distance `2t + 1`.
fn bch_generator_degree(m: u32, t: usize) -> usize {
    let len = (1u64 << m) - 1;
    let mut roots = std::collections::BTreeSet::new();
    for i in 1..=(2 * t as u64) {
        let mut r = i % len;
        loop {
            if !roots.insert(r) {
                break;
            }
            r = (r * 2) % len;
        }
    }
    roots.len()
}

/// Correctable errors of a rate-`rate` binary BCH code shortened to
/// `codeword_len` bits.
pub fn bch_capacity(codeword_len: usize, rate: f64) -> Result<usize> {
    if !(rate > 0.0 && rate < 1.0) {
        return config(format!("code rate {rate} outside (0, 1)"));
    }
    if codeword_len < 7 {
        return config(format!("codeword length {codeword_len} below the shortest BCH code"));
    }
    let m = (codeword_len as f64 + 1.0).log2().ceil() as u32;
    let parity = codeword_len - (rate * codeword_len as f64).floor() as usize;
    let bound = parity / m as usize;
    let mut t = 0;
    while t < bound && 2 * (t + 1) < (1usize << m) - 1 && bch_generator_degree(m, t + 1) <= parity {
        t += 1;
    }
    Ok(t)
}

/// Fraction of frames with more than `t` errors.
pub fn frame_loss_ratio(positions: &[u64], frame_size: usize, total_bits: u64, t: usize) -> Result<f64> {
    let counts = errors_per_frame(positions, frame_size, total_bits)?;
    if counts.is_empty() {
        return Ok(0.0);
    }
    Ok(counts.iter().filter(|&&c| c as usize > t).count() as f64 / counts.len() as f64)
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(points: &[(f64, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

/// Slope of mean per-node completion time against hop count, seconds/hop.
pub fn hop_latency_slope(report: &MetricsReport) -> Option<f64> {
    let points: Vec<(f64, f64)> = report
        .destinations()
        .filter_map(|m| m.mean_completion_s.map(|c| (m.hop_count as f64, c)))
        .collect();
    ls_slope(&points)
}
