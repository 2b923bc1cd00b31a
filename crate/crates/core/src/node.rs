//! Per-node flooding protocol: preamble synchronisation, windowed symbol
//! detection and immediate relaying.

use serde::{Deserialize, Serialize};

use crate::detector::{window_start_samples, StreamingVoter};
use crate::error::{config, Result};
use crate::signal::ComplexSample;

/// Sample-domain timing shared by every node in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeTiming {
    /// Frame length in symbols, preamble included.
    pub frame_bits: usize,
    pub symbol_samples: usize,
    pub window_len: usize,
    pub buffer_size: usize,
    pub group_size: usize,
    pub tau_samples: usize,
    /// Length of the relayed pulse, during which the receiver is blanked.
    pub pulse_samples: usize,
}

impl NodeTiming {
    pub fn validate(&self) -> Result<()> {
        if self.frame_bits == 0 {
            return config("frame must hold at least the preamble bit");
        }
        if self.group_size == 0 || self.buffer_size % self.group_size != 0 || self.window_len % self.buffer_size != 0 {
            return config("window, buffer and group sizes are inconsistent");
        }
        if self.window_len > self.symbol_samples {
            return config("detection window must fit inside a symbol");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Listening,
    Synced { symbol: usize, window_start: i64 },
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxEvent {
    pub start: i64,
}

/// Protocol state of one receiving node.
///
/// Transmission is tracked as an overlay (`transmitting_until`) rather than
/// a separate mode: while its own pulse is on air the node hears nothing,
/// but its window schedule keeps running so the next window opens exactly
/// one symbol later.
#[derive(Debug, Clone)]
pub struct NodeState {
    timing: NodeTiming,
    mode: Mode,
    voter: StreamingVoter,
    threshold_sq: f64,
    transmitting_until: i64,
    pub decoded: Vec<bool>,
    /// Sample index of each decision.
    pub decision_times: Vec<i64>,
    /// Samples from the window start to each decision.
    pub decision_offsets: Vec<u32>,
}

impl NodeState {
    pub fn new(timing: NodeTiming, threshold_amplitude: f64) -> Self {
        Self {
            timing,
            mode: Mode::Listening,
            voter: StreamingVoter::new(timing.buffer_size, timing.group_size),
            threshold_sq: threshold_amplitude * threshold_amplitude,
            transmitting_until: i64::MIN,
            decoded: Vec::with_capacity(timing.frame_bits),
            decision_times: Vec::with_capacity(timing.frame_bits),
            decision_offsets: Vec::with_capacity(timing.frame_bits),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn timing(&self) -> &NodeTiming {
        &self.timing
    }

    pub fn is_done(&self) -> bool {
        self.mode == Mode::Done
    }

    #[inline]
    pub fn is_transmitting(&self, t: i64) -> bool {
        t < self.transmitting_until
    }

    /// Whether the detector consumes the sample at `t`. Outside a window a
    /// synced node ignores the channel.
    #[inline]
    pub fn wants_sample(&self, t: i64) -> bool {
        match self.mode {
            Mode::Listening => true,
            Mode::Synced { window_start, .. } => t >= window_start,
            Mode::Done => false,
        }
    }

    /// Record that this node started a pulse at `start`.
    pub fn mark_transmission(&mut self, start: i64) {
        self.transmitting_until = start + self.timing.pulse_samples as i64;
    }

    /// Advance with the received sample at time `t`.
    pub fn step(&mut self, rx: ComplexSample, t: i64) -> Option<TxEvent> {
        let above = !self.is_transmitting(t) && rx.norm_sqr() > self.threshold_sq;
        self.step_flag(above, t)
    }

    /// Advance with a precomputed above-threshold flag for the sample at
    /// `t`. Decisions made on this sample take effect at `t + 1`.
    #[inline]
    pub fn step_flag(&mut self, above: bool, t: i64) -> Option<TxEvent> {
        match self.mode {
            Mode::Done => None,
            Mode::Listening => {
                if self.voter.push(above) != Some(true) {
                    return None;
                }
                let t_n = t + 1;
                let base = window_start_samples(t_n, self.timing.buffer_size as i64, self.timing.tau_samples as i64).ok()?;
                self.record(true, t_n, self.timing.buffer_size as u32);
                self.voter.reset();
                self.advance(1, base + self.timing.symbol_samples as i64);
                self.relay(t_n)
            }
            Mode::Synced { symbol, window_start } => {
                if t < window_start {
                    return None;
                }
                let offset = (t + 1 - window_start) as usize;
                let won = self.voter.push(above);
                if won == Some(true) {
                    self.record(true, t + 1, offset as u32);
                    self.voter.reset();
                    self.advance(symbol + 1, window_start + self.timing.symbol_samples as i64);
                    self.relay(t + 1)
                } else {
                    if offset == self.timing.window_len {
                        self.record(false, t + 1, offset as u32);
                        self.voter.reset();
                        self.advance(symbol + 1, window_start + self.timing.symbol_samples as i64);
                    }
                    None
                }
            }
        }
    }

    fn record(&mut self, bit: bool, at: i64, offset: u32) {
        self.decoded.push(bit);
        self.decision_times.push(at);
        self.decision_offsets.push(offset);
    }

    fn advance(&mut self, next_symbol: usize, next_window: i64) {
        self.mode = if next_symbol >= self.timing.frame_bits {
            Mode::Done
        } else {
            Mode::Synced {
                symbol: next_symbol,
                window_start: next_window,
            }
        };
    }

    fn relay(&mut self, start: i64) -> Option<TxEvent> {
        self.mark_transmission(start);
        Some(TxEvent { start })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timing(frame_bits: usize) -> NodeTiming {
        NodeTiming {
            frame_bits,
            symbol_samples: 500,
            window_len: 200,
            buffer_size: 100,
            group_size: 10,
            tau_samples: 10,
            pulse_samples: 102,
        }
    }

    fn drive(node: &mut NodeState, flags: impl Fn(i64) -> bool, until: i64) -> Vec<TxEvent> {
        (0..until).filter_map(|t| node.step_flag(flags(t), t)).collect()
    }

    #[test]
    fn preamble_triggers_relay_within_one_buffer() {
        let mut node = NodeState::new(timing(4), 1.0);
        // pulse on samples 300..360
        let events = drive(&mut node, |t| (300..360).contains(&t), 400);
        assert_eq!(events, vec![TxEvent { start: 400 }]);
        assert_eq!(node.decoded, vec![true]);
        assert_eq!(
            node.mode(),
            Mode::Synced {
                symbol: 1,
                window_start: 400 - 100 - 10 + 500
            }
        );
        assert!(node.is_transmitting(401) && !node.is_transmitting(502));
    }

    #[test]
    fn silent_window_decodes_zero_and_advances_one_symbol() {
        let mut node = NodeState::new(timing(3), 1.0);
        drive(&mut node, |t| (300..360).contains(&t), 400);
        let Mode::Synced { window_start, .. } = node.mode() else { panic!() };
        let events: Vec<_> = (400..window_start + 200).filter_map(|t| node.step_flag(false, t)).collect();
        assert!(events.is_empty());
        assert_eq!(node.decoded, vec![true, false]);
        assert_eq!(*node.decision_times.last().unwrap(), window_start + 200);
        assert_eq!(
            node.mode(),
            Mode::Synced {
                symbol: 2,
                window_start: window_start + 500
            }
        );
    }

    #[test]
    fn full_frame_then_done() {
        let bits = [true, true, false, true, false];
        let mut node = NodeState::new(timing(bits.len()), 1.0);
        let pulse = |t: i64| {
            let s = (t - 300).div_euclid(500);
            let k = (t - 300).rem_euclid(500);
            s >= 0 && (s as usize) < bits.len() && bits[s as usize] && k < 60
        };
        let events = drive(&mut node, pulse, 300 + 500 * 8);
        assert_eq!(node.decoded, bits);
        assert!(node.is_done());
        assert_eq!(events.len(), 3);
        // every payload 1 is decided at the end of the window's first buffer
        for (i, (&b, &at)) in bits.iter().zip(&node.decision_times).enumerate().skip(1) {
            let ws = 300 + 500 * i as i64 - 10;
            assert_eq!(at, if b { ws + 100 } else { ws + 200 });
        }
        assert_eq!(node.decoded.len(), bits.len());
    }

    #[test]
    fn echoes_after_the_frame_are_ignored() {
        let mut node = NodeState::new(timing(2), 1.0);
        drive(&mut node, |t| (t - 300).rem_euclid(500) < 60 && t >= 300, 5000);
        assert_eq!(node.decoded, vec![true, true]);
    }

    #[test]
    fn early_preamble_is_rejected() {
        let mut node = NodeState::new(timing(2), 1.0);
        assert!(drive(&mut node, |t| t < 60, 100).is_empty());
        assert_eq!(node.mode(), Mode::Listening);
    }

    #[test]
    fn blanked_while_transmitting() {
        let mut node = NodeState::new(timing(2), 0.5);
        node.mark_transmission(0);
        for t in 0..100 {
            assert_eq!(node.step(ComplexSample::new(10.0, 0.0), t), None);
        }
        assert_eq!(node.mode(), Mode::Listening);
    }
}
