//! Offline detection on recorded IQ traces.
//!
//! Traces are headerless interleaved I,Q streams, either little-endian
//! int16 or little-endian float32. The leading calibration segment is
//! ambient noise used to set the threshold; the rest is expected to hold
//! back-to-back pulses with no guard period, so the detector runs with
//! window = buffer = one pulse and every window should decide 1.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::detector::{detect_samples, DetectorConfig};
use crate::error::{Error, Result};
use crate::modem::{duration_to_samples, measure_noise_floor, DEFAULT_MARGIN_DB};
use crate::signal::{ComplexSample, Waveform};

pub const DEFAULT_CALIBRATION_S: f64 = 1.0;
pub const DEFAULT_PULSE_S: f64 = 3e-6;
pub const DEFAULT_GROUP_SIZE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    Int16,
    F32,
}

impl SampleFormat {
    /// Bytes per I,Q pair.
    pub fn frame_bytes(self) -> usize {
        match self {
            SampleFormat::Int16 => 4,
            SampleFormat::F32 => 8,
        }
    }
}

impl FromStr for SampleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int16" => Ok(SampleFormat::Int16),
            "f32" | "float32" => Ok(SampleFormat::F32),
            other => Err(Error::Trace(format!("unknown sample format `{other}` (expected int16 or f32)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqTraceHeader {
    pub format: SampleFormat,
    pub sample_rate: f64,
    /// Amplitude per LSB for int16, plain multiplier for f32.
    pub scale: f64,
}

impl IqTraceHeader {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Trace(format!("sample rate must be positive, got {}", self.sample_rate)));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Trace(format!("scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

pub fn decode_iq(bytes: &[u8], header: &IqTraceHeader) -> Result<Waveform> {
    header.validate()?;
    let frame = header.format.frame_bytes();
    if bytes.len() % frame != 0 {
        return Err(Error::Trace(format!(
            "trace length {} bytes is not a multiple of {frame} bytes per IQ sample; file truncated?",
            bytes.len()
        )));
    }
    let k = header.scale;
    let samples = match header.format {
        SampleFormat::Int16 => bytes
            .chunks_exact(4)
            .map(|c| {
                let i = i16::from_le_bytes([c[0], c[1]]) as f64;
                let q = i16::from_le_bytes([c[2], c[3]]) as f64;
                ComplexSample::new(i * k, q * k)
            })
            .collect(),
        SampleFormat::F32 => bytes
            .chunks_exact(8)
            .map(|c| {
                let i = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
                let q = f32::from_le_bytes([c[4], c[5], c[6], c[7]]) as f64;
                ComplexSample::new(i * k, q * k)
            })
            .collect(),
    };
    Waveform::new(samples, header.sample_rate, 0)
}

/// Inverse of [`decode_iq`]; int16 values are rounded and saturated.
pub fn encode_iq(samples: &[ComplexSample], header: &IqTraceHeader) -> Result<Vec<u8>> {
    header.validate()?;
    let mut out = Vec::with_capacity(samples.len() * header.format.frame_bytes());
    for s in samples {
        let (i, q) = (s.re / header.scale, s.im / header.scale);
        match header.format {
            SampleFormat::Int16 => {
                let cvt = |x: f64| x.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                out.extend_from_slice(&cvt(i).to_le_bytes());
                out.extend_from_slice(&cvt(q).to_le_bytes());
            }
            SampleFormat::F32 => {
                out.extend_from_slice(&(i as f32).to_le_bytes());
                out.extend_from_slice(&(q as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceOptions {
    pub calibration_s: f64,
    /// Pulse length; defaults to 3 us at the trace rate.
    pub pulse_samples: Option<usize>,
    pub group_size: usize,
    pub margin_db: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            calibration_s: DEFAULT_CALIBRATION_S,
            pulse_samples: None,
            group_size: DEFAULT_GROUP_SIZE,
            margin_db: DEFAULT_MARGIN_DB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub total_samples: usize,
    pub calibration_samples: usize,
    pub pulse_samples: usize,
    pub noise_floor_dbm: f64,
    pub threshold_amplitude: f64,
    pub expected_pulses: usize,
    pub detected_pulses: usize,
    pub ser: f64,
}

pub fn detect_trace(trace: &Waveform, opts: &TraceOptions) -> Result<TraceReport> {
    if !(opts.calibration_s > 0.0) {
        return Err(Error::Trace("calibration segment must be longer than zero".into()));
    }
    let calibration = (opts.calibration_s * trace.sample_rate).round() as usize;
    if calibration == 0 {
        return Err(Error::Trace("calibration segment rounds to zero samples".into()));
    }
    if calibration > trace.len() {
        return Err(Error::Trace(format!(
            "calibration segment of {calibration} samples exceeds the trace ({} samples)",
            trace.len()
        )));
    }
    let pulse = match opts.pulse_samples {
        Some(p) => p,
        None => duration_to_samples(DEFAULT_PULSE_S, trace.sample_rate, "pulse duration")?,
    };
    let ambient = Waveform::new(trace.samples[..calibration].to_vec(), trace.sample_rate, 0)?;
    let floor = measure_noise_floor(&ambient, opts.margin_db).map_err(|e| Error::Trace(e.to_string()))?;
    let cfg = DetectorConfig {
        window_len: pulse,
        buffer_size: pulse,
        group_size: opts.group_size,
        threshold_amplitude: floor.threshold_amplitude,
        margin_db: opts.margin_db,
    };
    cfg.validate_layout()?;
    let body = &trace.samples[calibration..];
    let mut expected = 0;
    let mut detected = 0;
    for window in body.chunks_exact(pulse) {
        expected += 1;
        if detect_samples(window, &cfg)?.bit {
            detected += 1;
        }
    }
    Ok(TraceReport {
        total_samples: trace.len(),
        calibration_samples: calibration,
        pulse_samples: pulse,
        noise_floor_dbm: floor.floor_dbm,
        threshold_amplitude: floor.threshold_amplitude,
        expected_pulses: expected,
        detected_pulses: detected,
        ser: if expected == 0 { 0.0 } else { (expected - detected) as f64 / expected as f64 },
    })
}

pub fn detect_trace_file(path: &Path, header: &IqTraceHeader, opts: &TraceOptions) -> Result<TraceReport> {
    let bytes = fs::read(path)?;
    detect_trace(&decode_iq(&bytes, header)?, opts)
}
