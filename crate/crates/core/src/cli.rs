//! Command-line front end.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::analysis::{latency_bounds, sf_latency};
use crate::error::{Error, Result};
use crate::experiment::{format_float, run_experiment, ExperimentSpec, RunOptions, BUNDLED_SPECS};
use crate::trace::{detect_trace_file, IqTraceHeader, SampleFormat, TraceOptions, DEFAULT_GROUP_SIZE};

pub const OUTPUT_DIR_ENV: &str = "ZEROWIRE_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "zerowire", version, about = "Symbol-synchronous flooding simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment spec (a TOML file or a bundled spec name).
    Run {
        spec: String,
        /// Apply the spec's reduced desk preset.
        #[arg(long)]
        desk: bool,
        /// Override the spec's root seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the spec's own.
        #[arg(long, env = OUTPUT_DIR_ENV)]
        out: Option<PathBuf>,
        /// Also write an SVG plot when the spec defines one.
        #[arg(long)]
        svg: bool,
    },
    /// Detect back-to-back pulses in a recorded IQ trace.
    DetectTrace {
        file: PathBuf,
        #[arg(long, value_parser = parse_format)]
        format: SampleFormat,
        /// Sample rate in Hz.
        #[arg(long)]
        rate: f64,
        /// Amplitude per LSB (int16) or multiplier (f32).
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Length of the leading ambient-noise segment.
        #[arg(long, default_value_t = crate::trace::DEFAULT_CALIBRATION_S)]
        calib_seconds: f64,
        /// Pulse length in samples; defaults to 3 us at the trace rate.
        #[arg(long)]
        pulse_samples: Option<usize>,
        #[arg(long, default_value_t = DEFAULT_GROUP_SIZE)]
        group_size: usize,
    },
    /// Print the flooding latency bounds and the store-and-forward latency.
    Latency {
        /// Frame length in bits.
        n: usize,
        /// Data rate in bit/s.
        rate: f64,
        /// Relay time in seconds.
        #[arg(long, default_value_t = 5e-6)]
        r: f64,
        /// Network diameter in hops.
        #[arg(long, default_value_t = 1)]
        hops: usize,
        /// Per-hop channel access time for store-and-forward, in seconds.
        #[arg(long, default_value_t = 0.0)]
        tacc: f64,
    },
    /// List the bundled experiment specs.
    ListSpecs,
}

fn parse_format(s: &str) -> std::result::Result<SampleFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Run {
            spec,
            desk,
            seed,
            out: dir,
            svg,
        } => {
            let spec = ExperimentSpec::resolve(&spec)?;
            let opts = RunOptions {
                desk,
                seed,
                output_dir: dir,
                svg,
            };
            let result = run_experiment(&spec, &opts)?;
            writeln!(out, "{}: {} run(s)", spec.name, result.results.len())?;
            for f in &result.files {
                writeln!(out, "wrote {}", f.display())?;
            }
        }
        Command::DetectTrace {
            file,
            format,
            rate,
            scale,
            calib_seconds,
            pulse_samples,
            group_size,
        } => {
            let header = IqTraceHeader {
                format,
                sample_rate: rate,
                scale,
            };
            let opts = TraceOptions {
                calibration_s: calib_seconds,
                pulse_samples,
                group_size,
                ..TraceOptions::default()
            };
            let r = detect_trace_file(&file, &header, &opts)?;
            writeln!(out, "samples           {}", r.total_samples)?;
            writeln!(out, "calibration       {}", r.calibration_samples)?;
            writeln!(out, "pulse_samples     {}", r.pulse_samples)?;
            writeln!(out, "noise_floor_dbm   {}", format_float(r.noise_floor_dbm))?;
            writeln!(out, "threshold         {}", format_float(r.threshold_amplitude))?;
            writeln!(out, "expected_pulses   {}", r.expected_pulses)?;
            writeln!(out, "detected_pulses   {}", r.detected_pulses)?;
            writeln!(out, "ser               {}", format_float(r.ser))?;
        }
        Command::Latency { n, rate, r, hops, tacc } => {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::Input(format!("data rate must be positive, got {rate}")));
            }
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Input(format!("relay time must be non-negative, got {r}")));
            }
            let ts = 1.0 / rate;
            let (lo, hi) = latency_bounds(n, ts, r, hops)?;
            let sf = sf_latency(n, ts, tacc, hops)?;
            writeln!(out, "symbol_period_s   {}", format_float(ts))?;
            writeln!(out, "flood_lower_s     {}", format_float(lo))?;
            writeln!(out, "flood_upper_s     {}", format_float(hi))?;
            writeln!(out, "store_forward_s   {}", format_float(sf))?;
            let ratio = if hi > 0.0 { format_float(sf / hi) } else { "nan".into() };
            writeln!(out, "sf_over_upper     {ratio}")?;
        }
        Command::ListSpecs => {
            for (name, text) in BUNDLED_SPECS {
                let spec = ExperimentSpec::parse(text, std::path::Path::new(name))?;
                writeln!(out, "{name:6} {:4} runs  {}", spec.point_count(), spec.description)?;
            }
        }
    }
    Ok(())
}
