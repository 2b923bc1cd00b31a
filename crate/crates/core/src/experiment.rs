//! Experiment specs and sweep execution.
//!
//! A spec is a TOML file with a flat `[base]` table of run parameters (unit
//! suffixed keys such as `grid_distance_m` or `data_rate_bps`), an optional
//! `[sweep]` table of parameter lists and an optional `[desk]` table of
//! overrides that shrink the run for quick reproduction. Sweep axes combine
//! as a cartesian product in file order, first axis slowest; axes listed
//! together under `sweep.zip` advance in lockstep instead.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    count_cdf, default_spacing_breakpoints, error_spacing_cdf, errors_per_frame, hop_latency_slope,
    BchInterpretation, BchModel, MetricsReport, SpacingCdf,
};
use crate::channel::{ChannelProfile, ProfileKind};
use crate::error::{Error, Result};
use crate::sim::{SimConfig, Simulation};
use crate::signal::substream;
use crate::topology::SourceCorner;

pub const DEFAULT_MAX_POINTS: usize = 1000;
pub const DEFAULT_OUTPUT_DIR: &str = "results";

/// Bundled figure specs, by name.
pub const BUNDLED_SPECS: &[(&str, &str)] = &[
    ("fig13", include_str!("../specs/fig13.toml")),
    ("fig14", include_str!("../specs/fig14.toml")),
    ("fig15", include_str!("../specs/fig15.toml")),
    ("fig17", include_str!("../specs/fig17.toml")),
    ("fig18", include_str!("../specs/fig18.toml")),
    ("fig19", include_str!("../specs/fig19.toml")),
    ("fig20", include_str!("../specs/fig20.toml")),
    ("fig21", include_str!("../specs/fig21.toml")),
    ("fig22", include_str!("../specs/fig22.toml")),
    ("fig23", include_str!("../specs/fig23.toml")),
    ("fig24", include_str!("../specs/fig24.toml")),
];

pub fn bundled_spec(name: &str) -> Option<&'static str> {
    BUNDLED_SPECS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Flat run parameters. Every key is optional; unset keys keep the
/// simulator defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub grid_distance_m: Option<f64>,
    pub max_range_m: Option<f64>,
    pub source_corner: Option<SourceCorner>,
    pub data_rate_bps: Option<f64>,
    pub frame_bits: Option<usize>,
    pub num_frames: Option<usize>,
    /// Air time to cover; overrides `num_frames` when set.
    pub duration_s: Option<f64>,
    pub cfo_range_hz: Option<f64>,
    pub cfo_redraw_s: Option<f64>,
    pub noise_dbm: Option<f64>,
    pub tau_s: Option<f64>,
    pub gap_symbols: Option<usize>,
    pub calibration_samples: Option<usize>,
    pub channel_profile: Option<ProfileKind>,
    pub pathloss_exponent_near: Option<f64>,
    pub pathloss_exponent_far: Option<f64>,
    pub breakpoint_m: Option<f64>,
    pub rician_k_db: Option<f64>,
    pub shadowing_sigma_db: Option<f64>,
    pub window_len_samples: Option<usize>,
    pub buffer_size_samples: Option<usize>,
    pub group_size_samples: Option<usize>,
    pub margin_db: Option<f64>,
    pub threshold_amplitude: Option<f64>,
    pub sample_rate_hz: Option<f64>,
    pub pulse_duration_s: Option<f64>,
    pub rolloff: Option<f64>,
    pub tx_power_dbm: Option<f64>,
    pub antenna_gain_dbi: Option<f64>,
    pub carrier_hz: Option<f64>,
    pub bandwidth_hz: Option<f64>,
}

impl RunParams {
    pub fn to_config(&self, seed: u64) -> Result<SimConfig> {
        let mut c = SimConfig {
            root_seed: seed,
            ..SimConfig::default()
        };
        if let Some(kind) = self.channel_profile {
            c.channel = ChannelProfile::from_kind(kind);
        }
        macro_rules! set {
            ($($field:ident => $($target:ident).+),* $(,)?) => {
                $(if let Some(v) = self.$field { c.$($target).+ = v; })*
            };
        }
        set!(
            rows => rows,
            cols => cols,
            grid_distance_m => grid_distance_m,
            max_range_m => max_range_m,
            source_corner => source_corner,
            data_rate_bps => data_rate_bps,
            frame_bits => frame_bits,
            num_frames => num_frames,
            cfo_range_hz => cfo_range_hz,
            cfo_redraw_s => cfo_redraw_s,
            noise_dbm => noise_dbm,
            tau_s => tau_s,
            gap_symbols => gap_symbols,
            calibration_samples => calibration_samples,
            pathloss_exponent_near => channel.pathloss_exponent_near,
            pathloss_exponent_far => channel.pathloss_exponent_far,
            breakpoint_m => channel.breakpoint_m,
            rician_k_db => channel.rician_k_db,
            shadowing_sigma_db => channel.shadowing_sigma_db,
            window_len_samples => detector.window_len,
            buffer_size_samples => detector.buffer_size,
            group_size_samples => detector.group_size,
            margin_db => detector.margin_db,
            threshold_amplitude => detector.threshold_amplitude,
            sample_rate_hz => phy.sample_rate,
            pulse_duration_s => phy.pulse_duration,
            rolloff => phy.rolloff,
            tx_power_dbm => phy.tx_power_dbm,
            antenna_gain_dbi => phy.antenna_gain_dbi,
            carrier_hz => phy.carrier_freq,
            bandwidth_hz => phy.occupied_bandwidth,
        );
        if let Some(d) = self.duration_s {
            c.num_frames = c.frames_for_duration(d)?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisOptions {
    /// Frame sizes for the errors-per-frame and frame-loss tables.
    #[serde(default = "default_frame_sizes")]
    pub frame_sizes: Vec<usize>,
    #[serde(default = "default_code_rate")]
    pub code_rate: f64,
    #[serde(default)]
    pub bch_interpretation: BchInterpretation,
    #[serde(default = "default_spacing_breakpoints")]
    pub spacing_breakpoints: Vec<u64>,
    /// Extra tables to write next to the main CSV.
    #[serde(default)]
    pub tables: Vec<Table>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            frame_sizes: default_frame_sizes(),
            code_rate: default_code_rate(),
            bch_interpretation: BchInterpretation::default(),
            spacing_breakpoints: default_spacing_breakpoints(),
            tables: Vec::new(),
        }
    }
}

fn default_frame_sizes() -> Vec<usize> {
    vec![64, 128, 256, 512]
}

fn default_code_rate() -> f64 {
    0.8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Table {
    Nodes,
    Hops,
    Spacing,
    ErrorsPerFrame,
    FrameLoss,
}

impl Table {
    fn suffix(self) -> &'static str {
        match self {
            Table::Nodes => "nodes",
            Table::Hops => "hops",
            Table::Spacing => "spacing",
            Table::ErrorsPerFrame => "errors_per_frame",
            Table::FrameLoss => "frame_loss",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotSpec {
    pub x: String,
    pub y: String,
    pub series: Option<String>,
    #[serde(default)]
    pub log_x: bool,
    #[serde(default)]
    pub log_y: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default = "default_seed")]
    seed: u64,
    #[serde(default = "default_repetitions")]
    repetitions: usize,
    #[serde(default = "default_max_points")]
    max_points: usize,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    desk_note: String,
    #[serde(default)]
    base: toml::Table,
    #[serde(default)]
    sweep: toml::Table,
    #[serde(default)]
    desk: toml::Table,
    #[serde(default)]
    analysis: AnalysisOptions,
    plot: Option<PlotSpec>,
}

fn default_seed() -> u64 {
    1
}

fn default_repetitions() -> usize {
    1
}

fn default_max_points() -> usize {
    DEFAULT_MAX_POINTS
}

/// Axes that advance together; a lone axis is a group of one.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGroup {
    pub axes: Vec<String>,
    /// `values[i]` holds one value per axis for step `i`.
    pub values: Vec<Vec<toml::Value>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub description: String,
    pub seed: u64,
    pub repetitions: usize,
    pub max_points: usize,
    pub output_dir: Option<PathBuf>,
    pub desk_note: String,
    pub base: toml::Table,
    pub desk: toml::Table,
    pub sweep: Vec<SweepGroup>,
    pub analysis: AnalysisOptions,
    pub plot: Option<PlotSpec>,
    origin: PathBuf,
    text: String,
}

/// One expanded run.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub index: usize,
    pub repetition: usize,
    /// Axis name and value, in column order.
    pub coords: Vec<(String, toml::Value)>,
    pub config: SimConfig,
}

impl ExperimentSpec {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    /// Load a spec from a file, falling back to a bundled spec of that name.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if path.exists() {
            return Self::from_path(path);
        }
        match bundled_spec(name_or_path) {
            Some(text) => Self::parse(text, Path::new(&format!("<bundled>/{name_or_path}.toml"))),
            None => Err(Error::Spec {
                path: path.to_path_buf(),
                message: "no such file and no bundled spec with that name".into(),
            }),
        }
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let spec_err = |message: String| Error::Spec {
            path: origin.to_path_buf(),
            message,
        };
        let raw: RawSpec = toml::from_str(text).map_err(|e| spec_err(toml_error_message(text, &e)))?;
        let at = |table: Option<&str>, key: &str, msg: String| {
            spec_err(match key_line(text, table, key) {
                Some(line) => format!("line {line}: {msg}"),
                None => msg,
            })
        };
        if raw.name.trim().is_empty() {
            return Err(at(None, "name", "experiment name must not be empty".into()));
        }
        if raw.repetitions == 0 {
            return Err(at(None, "repetitions", "repetitions must be at least 1".into()));
        }
        if !(raw.analysis.code_rate > 0.0 && raw.analysis.code_rate < 1.0) {
            return Err(at(Some("analysis"), "code_rate", "code rate must lie in (0, 1)".into()));
        }
        if raw.analysis.frame_sizes.iter().any(|&f| f < 7) {
            return Err(at(
                Some("analysis"),
                "frame_sizes",
                "frame sizes must be at least 7 bits".into(),
            ));
        }
        for (table, key, value) in raw
            .base
            .iter()
            .map(|(k, v)| ("base", k, v))
            .chain(raw.desk.iter().map(|(k, v)| ("desk", k, v)))
        {
            let mut one = toml::Table::new();
            one.insert(key.clone(), value.clone());
            one.try_into::<RunParams>()
                .map_err(|e| at(Some(table), key, format!("`{key}`: {}", e.message())))?;
        }
        let sweep = parse_sweep(&raw.sweep, |key, msg| at(Some("sweep"), key, msg))?;

        let spec = Self {
            name: raw.name,
            description: raw.description,
            seed: raw.seed,
            repetitions: raw.repetitions,
            max_points: raw.max_points,
            output_dir: raw.output_dir,
            desk_note: raw.desk_note,
            base: raw.base,
            desk: raw.desk,
            sweep,
            analysis: raw.analysis,
            plot: raw.plot,
            origin: origin.to_path_buf(),
            text: text.to_string(),
        };
        if let Some(plot) = &spec.plot {
            let known = |c: &str| spec.axis_names().any(|a| a == c) || METRIC_COLUMNS.contains(&c);
            for col in [Some(&plot.x), Some(&plot.y), plot.series.as_ref()].into_iter().flatten() {
                if !known(col) {
                    return Err(at(Some("plot"), "x", format!("plot column `{col}` is not a sweep axis or metric")));
                }
            }
        }
        // Validate every point up front so a bad sweep value fails before
        // any simulation starts.
        spec.points(false, None)?;
        spec.points(true, None)?;
        Ok(spec)
    }

    pub fn axis_names(&self) -> impl Iterator<Item = &str> {
        self.sweep.iter().flat_map(|g| g.axes.iter().map(String::as_str))
    }

    pub fn point_count(&self) -> usize {
        self.sweep.iter().map(|g| g.values.len()).product::<usize>() * self.repetitions
    }

    fn error_at(&self, table: Option<&str>, key: &str, msg: String) -> Error {
        Error::Spec {
            path: self.origin.clone(),
            message: match key_line(&self.text, table, key) {
                Some(line) => format!("line {line}: {msg}"),
                None => msg,
            },
        }
    }

    /// Expand the sweep into concrete runs.
    pub fn points(&self, desk: bool, seed_override: Option<u64>) -> Result<Vec<SweepPoint>> {
        let total = self.point_count();
        if total > self.max_points {
            let key = self.sweep.first().map(|g| g.axes[0].as_str()).unwrap_or("repetitions");
            return Err(self.error_at(
                Some("sweep"),
                key,
                format!("sweep expands to {total} runs, above the cap of {}", self.max_points),
            ));
        }
        let seed = seed_override.unwrap_or(self.seed);
        let mut points = Vec::with_capacity(total);
        let steps: usize = self.sweep.iter().map(|g| g.values.len()).product();
        for step in 0..steps {
            let mut table = self.base.clone();
            if desk {
                table.extend(self.desk.iter().map(|(k, v)| (k.clone(), v.clone())));
            }
            let mut coords = Vec::new();
            let mut rest = step;
            let mut picks = vec![0; self.sweep.len()];
            for (g, group) in self.sweep.iter().enumerate().rev() {
                picks[g] = rest % group.values.len();
                rest /= group.values.len();
            }
            for (group, &pick) in self.sweep.iter().zip(&picks) {
                for (axis, value) in group.axes.iter().zip(&group.values[pick]) {
                    table.insert(axis.clone(), value.clone());
                    coords.push((axis.clone(), value.clone()));
                }
            }
            let params: RunParams = table
                .try_into()
                .map_err(|e: toml::de::Error| self.error_at(Some("base"), "", e.message().to_string()))?;
            for repetition in 0..self.repetitions {
                let run_seed = repetition_seed(seed, repetition)?;
                let config = params.to_config(run_seed).map_err(|e| {
                    let where_ = coords.first().map(|(k, _)| k.as_str());
                    let msg = format!("{}{e}", describe_coords(&coords));
                    match where_ {
                        Some(k) => self.error_at(Some("sweep"), k, msg),
                        None => self.error_at(None, "[base]", msg),
                    }
                })?;
                points.push(SweepPoint {
                    index: points.len(),
                    repetition,
                    coords: coords.clone(),
                    config,
                });
            }
        }
        Ok(points)
    }
}

fn describe_coords(coords: &[(String, toml::Value)]) -> String {
    if coords.is_empty() {
        return String::new();
    }
    let parts: Vec<String> = coords.iter().map(|(k, v)| format!("{k} = {v}")).collect();
    format!("at {}: ", parts.join(", "))
}

/// Seed for repetition `r`; repetition 0 runs on the spec seed itself.
pub fn repetition_seed(seed: u64, repetition: usize) -> Result<u64> {
    if repetition == 0 {
        return Ok(seed);
    }
    use rand::RngCore;
    Ok(substream(seed, &format!("repetition/{repetition}"))?.next_u64())
}

fn parse_sweep(table: &toml::Table, err: impl Fn(&str, String) -> Error) -> Result<Vec<SweepGroup>> {
    let mut zipped: Vec<Vec<String>> = Vec::new();
    if let Some(z) = table.get("zip") {
        let groups = z
            .as_array()
            .ok_or_else(|| err("zip", "`zip` must be a list of axis-name lists".into()))?;
        for g in groups {
            let names = g
                .as_array()
                .ok_or_else(|| err("zip", "`zip` entries must be lists of axis names".into()))?;
            let names: Vec<String> = names
                .iter()
                .map(|n| n.as_str().map(str::to_string))
                .collect::<Option<_>>()
                .ok_or_else(|| err("zip", "axis names in `zip` must be strings".into()))?;
            if names.is_empty() {
                return Err(err("zip", "empty zip group".into()));
            }
            zipped.push(names);
        }
    }
    let mut lists: Vec<(String, Vec<toml::Value>)> = Vec::new();
    for (key, value) in table.iter().filter(|(k, _)| k.as_str() != "zip") {
        let values = value
            .as_array()
            .ok_or_else(|| err(key, format!("sweep axis `{key}` must be a list")))?;
        if values.is_empty() {
            return Err(err(key, format!("sweep axis `{key}` has no values")));
        }
        for v in values {
            let mut one = toml::Table::new();
            one.insert(key.clone(), v.clone());
            one.try_into::<RunParams>()
                .map_err(|e| err(key, format!("`{key}`: {}", e.message())))?;
        }
        lists.push((key.clone(), values.clone()));
    }
    let mut groups = Vec::new();
    let mut used = vec![false; lists.len()];
    for (i, (key, values)) in lists.iter().enumerate() {
        if used[i] {
            continue;
        }
        match zipped.iter().find(|z| z.contains(key)) {
            None => {
                used[i] = true;
                groups.push(SweepGroup {
                    axes: vec![key.clone()],
                    values: values.iter().map(|v| vec![v.clone()]).collect(),
                });
            }
            Some(names) => {
                let mut members = Vec::new();
                for name in names {
                    let j = lists
                        .iter()
                        .position(|(k, _)| k == name)
                        .ok_or_else(|| err("zip", format!("zip names unknown axis `{name}`")))?;
                    if used[j] {
                        return Err(err("zip", format!("axis `{name}` appears in more than one zip group")));
                    }
                    if lists[j].1.len() != values.len() {
                        return Err(err(
                            name,
                            format!("zipped axes `{key}` and `{name}` have different lengths"),
                        ));
                    }
                    used[j] = true;
                    members.push(j);
                }
                groups.push(SweepGroup {
                    axes: members.iter().map(|&j| lists[j].0.clone()).collect(),
                    values: (0..values.len())
                        .map(|s| members.iter().map(|&j| lists[j].1[s].clone()).collect())
                        .collect(),
                });
            }
        }
    }
    Ok(groups)
}

fn toml_error_message(text: &str, e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => {
            let line = text[..span.start.min(text.len())].matches('\n').count() + 1;
            format!("line {line}: {}", e.message())
        }
        None => e.message().to_string(),
    }
}

/// 1-based line on which `key` is assigned inside `[table]` (or at the top
/// level when `table` is `None`). A key of the form `[name]` finds the
/// table header itself.
pub fn key_line(text: &str, table: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            let name = line.trim_start_matches('[').split(']').next().unwrap_or("").trim().to_string();
            if key.starts_with('[') && key.trim_matches(['[', ']']) == name {
                return Some(i + 1);
            }
            current = Some(name);
            continue;
        }
        if current.as_deref() != table || key.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix(key) {
            if rest.trim_start().starts_with('=') {
                return Some(i + 1);
            }
        }
    }
    match table {
        Some(t) => key_line(text, None, &format!("[{t}]")),
        None => None,
    }
}

/// Format a float with 9 significant digits, using plain notation for
/// moderate magnitudes and exponent notation otherwise.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

fn format_value(v: &toml::Value) -> String {
    match v {
        toml::Value::Float(f) => format_float(*f),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::String(s) => s.clone(),
        toml::Value::Boolean(b) => b.to_string(),
        other => other.to_string(),
    }
}

/// Metric columns of the main CSV, after the point/axis columns.
pub const METRIC_COLUMNS: &[&str] = &[
    "nodes",
    "diameter",
    "frames",
    "frame_bits",
    "data_rate_bps",
    "symbol_samples",
    "network_ber",
    "ser_one",
    "ser_zero",
    "mean_latency_s",
    "max_latency_s",
    "latency_lower_s",
    "latency_upper_s",
    "latency_bound_violations",
    "max_bound_excess_s",
    "timeouts",
    "error_free_frames",
    "mean_one_decision_s",
    "mean_zero_decision_s",
    "hop_slope_s",
    "error_spacings",
    "spacing_cdf_64",
];

/// Outcome of one sweep point.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub point: SweepPoint,
    pub report: MetricsReport,
    pub spacing: SpacingCdf,
}

impl PointResult {
    fn metric_fields(&self) -> Vec<String> {
        let r = &self.report;
        let cfg = &self.point.config;
        let symbol_samples = cfg.timing().map(|t| t.symbol_samples).unwrap_or(0);
        vec![
            r.nodes.len().to_string(),
            r.diameter.to_string(),
            r.frames.to_string(),
            r.frame_bits.to_string(),
            format_float(cfg.data_rate_bps),
            symbol_samples.to_string(),
            format_float(r.network_ber),
            format_float(r.ser_one),
            format_float(r.ser_zero),
            format_opt(r.mean_latency_s),
            format_opt(r.max_latency_s),
            format_float(r.latency_bounds_s.0),
            format_float(r.latency_bounds_s.1),
            r.latency_bound_violations.to_string(),
            format_float(r.max_bound_excess_s),
            r.timeouts.to_string(),
            r.error_free_frames.to_string(),
            format_opt(r.mean_one_decision_s),
            format_opt(r.mean_zero_decision_s),
            format_opt(hop_latency_slope(r)),
            self.spacing.len().to_string(),
            format_float(self.spacing.at(64)),
        ]
    }

    pub fn metric(&self, column: &str) -> Option<String> {
        METRIC_COLUMNS
            .iter()
            .position(|c| *c == column)
            .map(|i| self.metric_fields().swap_remove(i))
    }
}

pub fn run_point(point: &SweepPoint) -> Result<PointResult> {
    let sim = Simulation::new(&point.config)?;
    let report = sim.run_metrics()?;
    let parts: Vec<SpacingCdf> = report
        .error_positions
        .iter()
        .map(|p| error_spacing_cdf(p))
        .collect::<Result<_>>()?;
    Ok(PointResult {
        point: point.clone(),
        spacing: SpacingCdf::merged(parts.iter()),
        report,
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub desk: bool,
    pub seed: Option<u64>,
    /// Overrides the spec's output directory.
    pub output_dir: Option<PathBuf>,
    pub svg: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub results: Vec<PointResult>,
    pub files: Vec<PathBuf>,
}

/// Run every sweep point and write the CSV tables (plus an SVG plot when
/// requested). Points run in parallel; output follows sweep order.
pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ExperimentOutput> {
    let points = spec.points(opts.desk, opts.seed)?;
    let results: Vec<PointResult> = points.par_iter().map(run_point).collect::<Result<_>>()?;
    let dir = opts
        .output_dir
        .clone()
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
    fs::create_dir_all(&dir)?;

    let mut files = Vec::new();
    let main = dir.join(format!("{}.csv", spec.name));
    fs::write(&main, main_csv(spec, &results)?)?;
    files.push(main);
    for &table in &spec.analysis.tables {
        let path = dir.join(format!("{}_{}.csv", spec.name, table.suffix()));
        fs::write(&path, table_csv(spec, table, &results)?)?;
        files.push(path);
    }
    let meta = dir.join(format!("{}.meta.json", spec.name));
    fs::write(&meta, metadata(spec, opts, &results)?)?;
    files.push(meta);
    if opts.svg {
        if let Some(plot) = &spec.plot {
            let path = dir.join(format!("{}.svg", spec.name));
            fs::write(&path, render_svg(spec, plot, &results)?)?;
            files.push(path);
        }
    }
    Ok(ExperimentOutput { results, files })
}

fn csv_bytes(header: Vec<String>, rows: Vec<Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn point_header(spec: &ExperimentSpec) -> Vec<String> {
    let mut h = vec!["point".to_string(), "repetition".into(), "seed".into()];
    h.extend(spec.axis_names().map(str::to_string));
    h
}

fn point_fields(r: &PointResult) -> Vec<String> {
    let mut f = vec![
        r.point.index.to_string(),
        r.point.repetition.to_string(),
        r.point.config.root_seed.to_string(),
    ];
    f.extend(r.point.coords.iter().map(|(_, v)| format_value(v)));
    f
}

pub fn main_csv(spec: &ExperimentSpec, results: &[PointResult]) -> Result<Vec<u8>> {
    let mut header = point_header(spec);
    header.extend(METRIC_COLUMNS.iter().map(|c| c.to_string()));
    let rows = results
        .iter()
        .map(|r| {
            let mut f = point_fields(r);
            f.extend(r.metric_fields());
            f
        })
        .collect();
    csv_bytes(header, rows)
}

/// Per-frame error counts pooled over destinations, for frames of
/// `frame_size` bits cut from each node's payload stream.
fn pooled_counts(report: &MetricsReport, frame_size: usize) -> Result<(Vec<u32>, Vec<f64>, Vec<Vec<u32>>)> {
    let total = report.payload_bits_per_node();
    let mut pooled = Vec::new();
    let mut per_node = Vec::new();
    for m in report.destinations() {
        let counts = errors_per_frame(&report.error_positions[m.node], frame_size, total)?;
        pooled.extend_from_slice(&counts);
        per_node.push(counts);
    }
    Ok((pooled, Vec::new(), per_node))
}

pub fn table_csv(spec: &ExperimentSpec, table: Table, results: &[PointResult]) -> Result<Vec<u8>> {
    let mut header = point_header(spec);
    let mut rows = Vec::new();
    match table {
        Table::Nodes => {
            header.extend(
                [
                    "node",
                    "hop_count",
                    "ber",
                    "ser_one",
                    "ser_zero",
                    "bit_errors",
                    "payload_bits",
                    "timeouts",
                    "mean_completion_s",
                ]
                .map(String::from),
            );
            for r in results {
                for m in &r.report.nodes {
                    let mut f = point_fields(r);
                    f.extend([
                        m.node.to_string(),
                        m.hop_count.to_string(),
                        format_float(m.ber),
                        format_float(m.ser_one),
                        format_float(m.ser_zero),
                        m.bit_errors.to_string(),
                        m.payload_bits.to_string(),
                        m.timeouts.to_string(),
                        format_opt(m.mean_completion_s),
                    ]);
                    rows.push(f);
                }
            }
        }
        Table::Hops => {
            header.extend(["hop", "nodes", "mean_completion_s", "mean_ber"].map(String::from));
            for r in results {
                for hop in 1..=r.report.diameter {
                    let at_hop: Vec<_> = r.report.nodes.iter().filter(|m| m.hop_count == hop).collect();
                    let done: Vec<f64> = at_hop.iter().filter_map(|m| m.mean_completion_s).collect();
                    let mean_done = (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64);
                    let mean_ber = at_hop.iter().map(|m| m.ber).sum::<f64>() / at_hop.len().max(1) as f64;
                    let mut f = point_fields(r);
                    f.extend([
                        hop.to_string(),
                        at_hop.len().to_string(),
                        format_opt(mean_done),
                        format_float(mean_ber),
                    ]);
                    rows.push(f);
                }
            }
        }
        Table::Spacing => {
            header.extend(["spacing_bits", "cdf"].map(String::from));
            for r in results {
                for (b, p) in r.spacing.evaluate(&spec.analysis.spacing_breakpoints) {
                    let mut f = point_fields(r);
                    f.extend([b.to_string(), format_float(p)]);
                    rows.push(f);
                }
            }
        }
        Table::ErrorsPerFrame => {
            header.extend(["frame_size", "errors", "cdf"].map(String::from));
            for r in results {
                for &size in &spec.analysis.frame_sizes {
                    let (pooled, _, _) = pooled_counts(&r.report, size)?;
                    for (k, p) in count_cdf(&pooled) {
                        let mut f = point_fields(r);
                        f.extend([size.to_string(), k.to_string(), format_float(p)]);
                        rows.push(f);
                    }
                }
            }
        }
        Table::FrameLoss => {
            header.extend(
                [
                    "frame_size",
                    "codeword_len",
                    "correctable",
                    "frames",
                    "lost",
                    "frame_loss_ratio",
                    "frame_loss_std",
                ]
                .map(String::from),
            );
            for r in results {
                for &size in &spec.analysis.frame_sizes {
                    let row = frame_loss(&r.report, size, spec.analysis.code_rate, spec.analysis.bch_interpretation)?;
                    let mut f = point_fields(r);
                    f.extend([
                        size.to_string(),
                        row.model.codeword_len.to_string(),
                        row.model.t.to_string(),
                        row.frames.to_string(),
                        row.lost.to_string(),
                        format_float(row.ratio),
                        format_float(row.std_across_nodes),
                    ]);
                    rows.push(f);
                }
            }
        }
    }
    csv_bytes(header, rows)
}

/// Frame loss under a BCH code, pooled over destinations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLossRow {
    pub model: BchModel,
    pub frames: usize,
    pub lost: usize,
    pub ratio: f64,
    /// Standard deviation of the per-node loss ratios.
    pub std_across_nodes: f64,
}

pub fn frame_loss(
    report: &MetricsReport,
    frame_size: usize,
    code_rate: f64,
    interpretation: BchInterpretation,
) -> Result<FrameLossRow> {
    let model = BchModel::new(frame_size, code_rate, interpretation)?;
    let (pooled, _, per_node) = pooled_counts(report, model.codeword_len)?;
    let lost = pooled.iter().filter(|&&c| c as usize > model.t).count();
    let ratios: Vec<f64> = per_node
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| c.iter().filter(|&&e| e as usize > model.t).count() as f64 / c.len() as f64)
        .collect();
    let std = if ratios.len() < 2 {
        0.0
    } else {
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (ratios.len() - 1) as f64).sqrt()
    };
    Ok(FrameLossRow {
        model,
        frames: pooled.len(),
        lost,
        ratio: if pooled.is_empty() { 0.0 } else { lost as f64 / pooled.len() as f64 },
        std_across_nodes: std,
    })
}

fn metadata(spec: &ExperimentSpec, opts: &RunOptions, results: &[PointResult]) -> Result<String> {
    let v = serde_json::json!({
        "name": spec.name,
        "description": spec.description,
        "seed": opts.seed.unwrap_or(spec.seed),
        "repetitions": spec.repetitions,
        "points": results.len(),
        "desk": opts.desk,
        "desk_note": if opts.desk { spec.desk_note.as_str() } else { "" },
        "desk_overrides": if opts.desk { toml_to_json(&spec.desk) } else { serde_json::Value::Null },
        "axes": spec.axis_names().collect::<Vec<_>>(),
        "frames_per_point": results.iter().map(|r| r.report.frames).collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    serde_json::to_string_pretty(&v).map_err(|e| Error::Input(e.to_string()))
}

fn toml_to_json(t: &toml::Table) -> serde_json::Value {
    serde_json::to_value(t).unwrap_or(serde_json::Value::Null)
}

fn column_value(r: &PointResult, column: &str) -> Option<String> {
    r.point
        .coords
        .iter()
        .find(|(k, _)| k == column)
        .map(|(_, v)| format_value(v))
        .or_else(|| r.metric(column))
}

/// Line plot of one metric against a sweep axis, one line per value of
/// the optional series axis.
pub fn render_svg(spec: &ExperimentSpec, plot: &PlotSpec, results: &[PointResult]) -> Result<String> {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 150.0;
    const TOP: f64 = 30.0;
    const BOTTOM: f64 = 50.0;
    const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"];

    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in results {
        let parse = |c: &str| column_value(r, c).and_then(|s| s.parse::<f64>().ok());
        let (Some(x), Some(y)) = (parse(&plot.x), parse(&plot.y)) else {
            continue;
        };
        if (plot.log_x && x <= 0.0) || (plot.log_y && y <= 0.0) {
            continue;
        }
        let key = plot
            .series
            .as_deref()
            .and_then(|s| column_value(r, s).map(|v| format!("{s} = {v}")))
            .unwrap_or_default();
        match series.iter_mut().find(|(k, _)| *k == key) {
            Some((_, pts)) => pts.push((x, y)),
            None => series.push((key, vec![(x, y)])),
        }
    }
    let tx = |v: f64, log: bool| if log { v.log10() } else { v };
    let all: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|(_, p)| p.iter().map(|&(x, y)| (tx(x, plot.log_x), tx(y, plot.log_y))))
        .collect();
    let range = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        match (lo.is_finite(), hi > lo) {
            (false, _) => (0.0, 1.0),
            (true, true) => (lo, hi),
            (true, false) => (lo - 0.5, lo + 0.5),
        }
    };
    let (x0, x1) = range(all.iter().map(|p| p.0).collect());
    let (y0, y1) = range(all.iter().map(|p| p.1).collect());
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);
    let label = |v: f64, log: bool| format_float(if log { 10f64.powf(v) } else { v });

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, xml_escape(&spec.name));
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(xv), H - BOTTOM + 15.0, label(xv, plot.log_x));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, LEFT - 4.0, py(yv) + 4.0, label(yv, plot.log_y));
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + (W - LEFT - RIGHT) / 2.0, H - 12.0, xml_escape(&plot.x));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        xml_escape(&plot.y)
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut pts = pts.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", px(tx(x, plot.log_x)), py(tx(y, plot.log_y))))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        for p in &path {
            let (cx, cy) = p.split_once(',').expect("point pair");
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="2.5" fill="{color}"/>"#);
        }
        if !name.is_empty() {
            let ly = TOP + 12.0 + 16.0 * i as f64;
            let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, W - RIGHT + 10.0, W - RIGHT + 28.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT + 32.0, ly + 4.0, xml_escape(name));
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
