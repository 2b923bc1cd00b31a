//! Window-based voting detector and detection-window scheduling.
//!
//! A window of `window_len` samples is split into buffers of `buffer_size`
//! samples, each buffer into groups of `group_size`. A group wins when more
//! than half of its samples exceed the amplitude threshold; the first buffer
//! holding a winning group decides symbol 1 at that buffer's end. A window
//! with no winning group decides symbol 0 at its end.

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::modem::DEFAULT_MARGIN_DB;
use crate::signal::{ComplexSample, Waveform};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub window_len: usize,
    pub buffer_size: usize,
    pub group_size: usize,
    pub threshold_amplitude: f64,
    pub margin_db: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            window_len: 200,
            buffer_size: 100,
            group_size: 10,
            threshold_amplitude: 0.0,
            margin_db: DEFAULT_MARGIN_DB,
        }
    }
}

impl DetectorConfig {
    /// Structural checks that apply to any use of the detector.
    pub fn validate_layout(&self) -> Result<()> {
        if self.group_size == 0 || self.buffer_size == 0 || self.window_len == 0 {
            return config("window, buffer and group sizes must be positive");
        }
        if self.buffer_size % self.group_size != 0 {
            return config(format!(
                "buffer size {} is not a multiple of the group size {}",
                self.buffer_size, self.group_size
            ));
        }
        if self.window_len % self.buffer_size != 0 {
            return config(format!(
                "window length {} is not a multiple of the buffer size {}",
                self.window_len, self.buffer_size
            ));
        }
        if !(self.threshold_amplitude >= 0.0) {
            return config("threshold amplitude must be non-negative");
        }
        Ok(())
    }

    /// Full check for use inside a flooding simulation: the window must be
    /// longer than a pulse and fit inside a symbol. A window filling the
    /// whole symbol is allowed, since the 100 kbps setting needs it.
    pub fn validate_for(&self, pulse_samples: usize, symbol_samples: usize) -> Result<()> {
        self.validate_layout()?;
        if !(pulse_samples < self.window_len && self.window_len <= symbol_samples) {
            return config(format!(
                "window length {} must exceed the pulse ({pulse_samples}) and fit in the symbol ({symbol_samples})",
                self.window_len
            ));
        }
        Ok(())
    }

    pub fn attempts_per_symbol(&self) -> usize {
        self.window_len / self.buffer_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SymbolDecision {
    pub bit: bool,
    /// Samples from the window start to the decision.
    pub decided_at: usize,
}

/// Majority vote over one group of `group_size` samples.
pub fn vote_group(group: &[ComplexSample], group_size: usize, threshold_amplitude: f64) -> Result<bool> {
    if group.len() != group_size {
        return Err(Error::Input(format!(
            "group holds {} samples, expected {group_size}",
            group.len()
        )));
    }
    let above = group.iter().filter(|s| s.norm() > threshold_amplitude).count();
    Ok(2 * above > group_size)
}

pub fn detect_window(window: &Waveform, cfg: &DetectorConfig) -> Result<SymbolDecision> {
    detect_samples(&window.samples, cfg)
}

pub fn detect_samples(samples: &[ComplexSample], cfg: &DetectorConfig) -> Result<SymbolDecision> {
    cfg.validate_layout()?;
    if samples.len() != cfg.window_len {
        return Err(Error::Input(format!(
            "window holds {} samples, expected {}",
            samples.len(),
            cfg.window_len
        )));
    }
    for (b, buffer) in samples.chunks(cfg.buffer_size).enumerate() {
        for group in buffer.chunks(cfg.group_size) {
            if vote_group(group, cfg.group_size, cfg.threshold_amplitude)? {
                return Ok(SymbolDecision {
                    bit: true,
                    decided_at: (b + 1) * cfg.buffer_size,
                });
            }
        }
    }
    Ok(SymbolDecision {
        bit: false,
        decided_at: cfg.window_len,
    })
}

/// Start of the next detection window after a preamble detected at `t_n`.
pub fn window_start(t_n: f64, r: f64, tau: f64) -> Result<f64> {
    if t_n < r + tau {
        return config(format!(
            "preamble detected at {t_n} s, earlier than relay time plus offset {} s",
            r + tau
        ));
    }
    Ok(t_n - r - tau)
}

/// Integer-sample form of [`window_start`].
pub fn window_start_samples(t_n: i64, r: i64, tau: i64) -> Result<i64> {
    if t_n < r + tau {
        return config(format!(
            "preamble detected at sample {t_n}, earlier than relay time plus offset {}",
            r + tau
        ));
    }
    Ok(t_n - r - tau)
}

/// Per-hop relay time: the time to fill one receive buffer.
pub fn relay_time(buffer_size: usize, sample_rate: f64) -> f64 {
    buffer_size as f64 / sample_rate
}

/// Sample-at-a-time form of the buffer/group vote, fed with precomputed
/// above-threshold flags. Reports once per completed buffer.
#[derive(Debug, Clone)]
pub struct StreamingVoter {
    buffer_size: u32,
    group_size: u32,
    in_group: u32,
    in_buffer: u32,
    above: u32,
    won: bool,
}

impl StreamingVoter {
    pub fn new(buffer_size: usize, group_size: usize) -> Self {
        Self {
            buffer_size: buffer_size as u32,
            group_size: group_size as u32,
            in_group: 0,
            in_buffer: 0,
            above: 0,
            won: false,
        }
    }

    pub fn reset(&mut self) {
        self.in_group = 0;
        self.in_buffer = 0;
        self.above = 0;
        self.won = false;
    }

    /// Returns `Some(won)` when this sample completes a buffer.
    #[inline]
    pub fn push(&mut self, above: bool) -> Option<bool> {
        self.above += above as u32;
        self.in_group += 1;
        if self.in_group == self.group_size {
            self.won |= 2 * self.above > self.group_size;
            self.in_group = 0;
            self.above = 0;
        }
        self.in_buffer += 1;
        if self.in_buffer == self.buffer_size {
            self.in_buffer = 0;
            let won = self.won;
            self.won = false;
            Some(won)
        } else {
            None
        }
    }

    /// Skip `n` below-threshold samples that do not cross a buffer boundary.
    #[inline]
    pub fn push_quiet(&mut self, n: u32) {
        debug_assert!(self.in_buffer + n < self.buffer_size);
        let filled = self.in_group + n;
        if filled >= self.group_size {
            // the group that was in progress closes with its current count
            self.won |= 2 * self.above > self.group_size;
            self.above = 0;
            self.in_group = filled % self.group_size;
        } else {
            self.in_group = filled;
        }
        self.in_buffer += n;
    }

    pub fn buffer_position(&self) -> usize {
        self.in_buffer as usize
    }
}
