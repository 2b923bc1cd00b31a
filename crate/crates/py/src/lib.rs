//! Python bindings: run simulations and specs, query latency formulas and
//! detect pulses in recorded traces.

use std::path::{Path, PathBuf};

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyString};

use zerowire::analysis;
use zerowire::experiment::{self, ExperimentSpec, RunOptions, RunParams};
use zerowire::sim::Simulation;
use zerowire::trace::{self, IqTraceHeader, SampleFormat, TraceOptions};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Flooding latency bounds `(lower, upper)` in seconds.
#[pyfunction]
#[pyo3(signature = (n, rate, r = 5e-6, hops = 1))]
fn latency_bounds(n: usize, rate: f64, r: f64, hops: usize) -> PyResult<(f64, f64)> {
    if !(rate > 0.0) {
        return Err(err("data rate must be positive"));
    }
    analysis::latency_bounds(n, 1.0 / rate, r, hops).map_err(err)
}

/// Store-and-forward latency in seconds.
#[pyfunction]
#[pyo3(signature = (n, rate, hops, tacc = 0.0))]
fn sf_latency(n: usize, rate: f64, hops: usize, tacc: f64) -> PyResult<f64> {
    if !(rate > 0.0) {
        return Err(err("data rate must be positive"));
    }
    analysis::sf_latency(n, 1.0 / rate, tacc, hops).map_err(err)
}

#[pyfunction]
fn list_specs() -> Vec<&'static str> {
    experiment::BUNDLED_SPECS.iter().map(|(n, _)| *n).collect()
}

/// Run a spec file or bundled spec; returns the written file paths.
#[pyfunction]
#[pyo3(signature = (spec, desk = false, seed = None, out_dir = None, svg = false))]
fn run_spec(
    py: Python<'_>,
    spec: &str,
    desk: bool,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    svg: bool,
) -> PyResult<Vec<String>> {
    let spec = ExperimentSpec::resolve(spec).map_err(err)?;
    let opts = RunOptions {
        desk,
        seed,
        output_dir: out_dir,
        svg,
    };
    let out = py.detach(|| experiment::run_experiment(&spec, &opts)).map_err(err)?;
    Ok(out.files.iter().map(|f| f.display().to_string()).collect())
}

fn to_json(value: &Bound<'_, PyAny>) -> PyResult<serde_json::Value> {
    if value.is_instance_of::<PyBool>() {
        Ok(serde_json::Value::Bool(value.extract()?))
    } else if value.is_instance_of::<PyInt>() {
        Ok(serde_json::Value::from(value.extract::<i64>()?))
    } else if value.is_instance_of::<PyFloat>() {
        Ok(serde_json::Value::from(value.extract::<f64>()?))
    } else if value.is_instance_of::<PyString>() {
        Ok(serde_json::Value::String(value.extract()?))
    } else {
        Err(err(format!("unsupported parameter value {value}")))
    }
}

/// Simulate one configuration given as flat, unit-suffixed keyword
/// arguments (the keys of a spec's `[base]` table). Returns the headline
/// metrics.
#[pyfunction]
#[pyo3(signature = (seed = 1, **params))]
fn simulate<'py>(
    py: Python<'py>,
    seed: u64,
    params: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyDict>> {
    let mut map = serde_json::Map::new();
    if let Some(p) = params {
        for (k, v) in p.iter() {
            map.insert(k.extract::<String>()?, to_json(&v)?);
        }
    }
    let run: RunParams = serde_json::from_value(serde_json::Value::Object(map)).map_err(err)?;
    let cfg = run.to_config(seed).map_err(err)?;
    let report = py
        .detach(|| Simulation::new(&cfg).and_then(|s| s.run_metrics()))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("frames", report.frames)?;
    d.set_item("nodes", report.nodes.len())?;
    d.set_item("diameter", report.diameter)?;
    d.set_item("network_ber", report.network_ber)?;
    d.set_item("ser_one", report.ser_one)?;
    d.set_item("ser_zero", report.ser_zero)?;
    d.set_item("mean_latency_s", report.mean_latency_s)?;
    d.set_item("max_latency_s", report.max_latency_s)?;
    d.set_item("latency_bounds_s", report.latency_bounds_s)?;
    d.set_item("timeouts", report.timeouts)?;
    d.set_item("error_free_frames", report.error_free_frames)?;
    d.set_item("hop_slope_s", analysis::hop_latency_slope(&report))?;
    d.set_item("node_ber", report.nodes.iter().map(|m| m.ber).collect::<Vec<_>>())?;
    Ok(d)
}

/// Back-to-back pulse detection on a headerless IQ file.
#[pyfunction]
#[pyo3(signature = (path, format, rate, scale = 1.0, calib_seconds = 1.0))]
fn detect_trace<'py>(
    py: Python<'py>,
    path: PathBuf,
    format: &str,
    rate: f64,
    scale: f64,
    calib_seconds: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let header = IqTraceHeader {
        format: format.parse::<SampleFormat>().map_err(err)?,
        sample_rate: rate,
        scale,
    };
    let opts = TraceOptions {
        calibration_s: calib_seconds,
        ..TraceOptions::default()
    };
    let r = trace::detect_trace_file(Path::new(&path), &header, &opts).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("expected_pulses", r.expected_pulses)?;
    d.set_item("detected_pulses", r.detected_pulses)?;
    d.set_item("ser", r.ser)?;
    d.set_item("noise_floor_dbm", r.noise_floor_dbm)?;
    d.set_item("threshold_amplitude", r.threshold_amplitude)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "zerowire")]
fn zerowire_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(latency_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(sf_latency, m)?)?;
    m.add_function(wrap_pyfunction!(list_specs, m)?)?;
    m.add_function(wrap_pyfunction!(run_spec, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(detect_trace, m)?)?;
    Ok(())
}
