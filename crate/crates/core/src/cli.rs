//! Command-line surface: configuration, spec parsing, commands and output.
//!
//! Every command resolves an [`ExperimentConfig`] (defaults, then an optional
//! JSON config file, then flags), validates it completely, and only then
//! computes. Output is either an aligned table or a JSON document carrying the
//! schema version, the seed and the full resolved config.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bloch::{
    bloch_to_state, build_generators, candidate_min_eigenvalue, is_bona_fide, state_to_bloch,
    BlochVector, CMatrix, DensityMatrix, GeneratorBasis, EIGEN_TOL, UNIT_NORM_TOL,
};
use crate::density::{MembraneDensity, PiecewiseDensity, SimplexGrid};
use crate::engine::{
    max_abs_deviation, run_ensemble, run_measurement, universal_average, EnsembleOptions,
    MeasurementRecord, PerDensityEstimator, Sampler,
};
use crate::error::EbrError;
use crate::rng::{RngStream, ALGORITHM};
use crate::simplex::{
    born_probabilities, build_membrane, plunge, subregion_measures, total_measure,
    MembraneSimplex, Observable,
};
use crate::trajectory::{make_trajectory, MembraneState};

pub const SCHEMA_VERSION: &str = "ebr/1";

/// Largest tolerated gap between trace-formula and geometric probabilities.
pub const BORN_IDENTITY_TOL: f64 = 1e-8;
/// Frequencies must sit within this many standard errors of Born.
pub const SIGMA_CRITERION: f64 = 4.0;
/// Universal-average deviation reported as passing.
pub const UNIVERSAL_AVERAGE_TOL: f64 = 0.01;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_STATISTICAL_FAIL: i32 = 3;
pub const EXIT_NUMERICAL_FAIL: i32 = 4;

// Stream numbers keep the draws of each purpose independent under one seed.
const STREAM_STATE: u64 = 0;
const STREAM_OBSERVABLE: u64 = 1;
const STREAM_MEASURE: u64 = 2;
const STREAM_SCAN: u64 = 3;
const STREAM_UNIVERSAL: u64 = 4;
const STREAM_DENSITY: u64 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid {field}: {message}")]
    Validation { field: String, message: String },
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn field(field: &str, message: impl ToString) -> Self {
        CliError::Validation {
            field: field.to_string(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => EXIT_VALIDATION,
            CliError::Runtime(_) | CliError::Io(_) => EXIT_RUNTIME,
        }
    }
}

impl From<EbrError> for CliError {
    fn from(e: EbrError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "ebr", version, about = "Elastic-membrane simulation of quantum measurements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare trace-formula and geometric outcome probabilities.
    Born(CommonArgs),
    /// Run an ensemble of simulated measurements.
    Measure(CommonArgs),
    /// Emit the frames of one simulated measurement as JSON lines.
    Trajectory(CommonArgs),
    /// Average outcome probabilities over random non-uniform membranes.
    UniversalAverage(CommonArgs),
    /// Norm, positivity and bona-fide status of a Bloch vector.
    SphereInfo(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum OutputFormat {
    #[default]
    Table,
    Json,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Hilbert-space dimension N.
    #[arg(long)]
    pub dim: Option<usize>,
    /// random-pure | maximally-mixed | eigenstate:K | basis:K | bloch-angle:THETA | bloch:X,Y,...
    #[arg(long)]
    pub state: Option<String>,
    /// spin-z | spin-x | random | diag:A,B,...
    #[arg(long)]
    pub observable: Option<String>,
    /// Polar angle of a qubit state from +z (same as --state bloch-angle:THETA).
    #[arg(long, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    /// uniform | random-grid:DEPTH | grid:DEPTH:W1,W2,...
    #[arg(long)]
    pub density: Option<String>,
    #[arg(long)]
    pub runs: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores). Does not change any output.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// mechanistic | fast
    #[arg(long)]
    pub sampler: Option<String>,
    /// Frames per stage for `trajectory`.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Comma-separated density counts for `universal-average`.
    #[arg(long)]
    pub densities: Option<String>,
    /// Grid depth for `universal-average`.
    #[arg(long)]
    pub depth: Option<u32>,
    /// Breaks sampled per density; omit for exact integration when N = 2.
    #[arg(long)]
    pub runs_per_density: Option<u64>,
    /// Bloch coordinates for `sphere-info`, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    pub bloch: Option<String>,
    /// Number of random unit vectors to test in `sphere-info`.
    #[arg(long)]
    pub scan: Option<u64>,
}

/// A complex matrix as rows of `[re, im]` pairs.
pub type MatrixJson = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Preset(String),
    Matrix { matrix: MatrixJson },
    Bloch { bloch: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservableSpec {
    Preset(String),
    Matrix { matrix: MatrixJson },
}

/// Everything that determines a command's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub state: StateSpec,
    pub observable: ObservableSpec,
    pub density: String,
    pub runs: u64,
    pub seed: u64,
    pub sampler: Sampler,
    pub frames_per_stage: usize,
    pub densities: Vec<usize>,
    pub depth: u32,
    pub runs_per_density: Option<u64>,
    pub bloch: Option<Vec<f64>>,
    pub scan: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            state: StateSpec::Preset("random-pure".into()),
            observable: ObservableSpec::Preset("spin-z".into()),
            density: "uniform".into(),
            runs: 100_000,
            seed: 0,
            sampler: Sampler::Mechanistic,
            frames_per_stage: 10,
            densities: vec![2000],
            depth: 6,
            runs_per_density: None,
            bloch: None,
            scan: None,
        }
    }
}

fn parse_list<T: std::str::FromStr>(field: &str, s: &str) -> Result<Vec<T>, CliError> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<T>()
                .map_err(|_| CliError::field(field, format!("cannot parse '{x}'")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                serde_json::from_str(&text).map_err(|e| CliError::field("config", e))?
            }
            None => Self::default(),
        };
        if let Some(d) = args.dim {
            cfg.dim = d;
        }
        if let Some(s) = &args.state {
            cfg.state = StateSpec::Preset(s.clone());
        }
        if let Some(theta) = args.theta {
            if args.state.is_some() {
                return Err(CliError::field("theta", "conflicts with --state"));
            }
            cfg.state = StateSpec::Preset(format!("bloch-angle:{theta}"));
        }
        if let Some(o) = &args.observable {
            cfg.observable = ObservableSpec::Preset(o.clone());
        }
        if let Some(d) = &args.density {
            cfg.density = d.clone();
        }
        if let Some(r) = args.runs {
            cfg.runs = r;
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(s) = &args.sampler {
            cfg.sampler = match s.as_str() {
                "mechanistic" => Sampler::Mechanistic,
                "fast" => Sampler::Fast,
                other => return Err(CliError::field("sampler", format!("unknown sampler '{other}'"))),
            };
        }
        if let Some(f) = args.frames {
            cfg.frames_per_stage = f;
        }
        if let Some(d) = &args.densities {
            cfg.densities = parse_list("densities", d)?;
        }
        if let Some(d) = args.depth {
            cfg.depth = d;
        }
        if let Some(r) = args.runs_per_density {
            cfg.runs_per_density = Some(r);
        }
        if let Some(b) = &args.bloch {
            cfg.bloch = Some(parse_list("bloch", b)?);
        }
        if let Some(k) = args.scan {
            cfg.scan = Some(k);
        }
        cfg.validate_scalars()?;
        Ok(cfg)
    }

    fn validate_scalars(&self) -> Result<(), CliError> {
        if self.dim < 2 {
            return Err(CliError::field("dim", "must be at least 2"));
        }
        if self.dim > 16 {
            return Err(CliError::field("dim", "dimensions above 16 are not supported"));
        }
        if self.runs == 0 {
            return Err(CliError::field("runs", "must be at least 1"));
        }
        if self.frames_per_stage < 2 {
            return Err(CliError::field("frames_per_stage", "must be at least 2"));
        }
        if self.densities.is_empty() || self.densities.contains(&0) {
            return Err(CliError::field("densities", "counts must be positive"));
        }
        if self.depth == 0 {
            return Err(CliError::field("depth", "must be at least 1"));
        }
        if self.runs_per_density == Some(0) {
            return Err(CliError::field("runs_per_density", "must be at least 1"));
        }
        Ok(())
    }
}

fn matrix_from_json(field: &str, rows: &MatrixJson, dim: usize) -> Result<CMatrix, CliError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(CliError::field(field, format!("matrix must be {dim}x{dim}")));
    }
    Ok(CMatrix::from_fn(dim, dim, |r, c| {
        Complex64::new(rows[r][c][0], rows[r][c][1])
    }))
}

pub fn matrix_to_json(m: &CMatrix) -> MatrixJson {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| [m[(r, c)].re, m[(r, c)].im]).collect())
        .collect()
}

/// A fully validated experiment.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub basis: GeneratorBasis,
    pub observable: Observable,
    pub membrane: MembraneSimplex,
    pub initial: BlochVector,
    pub state: DensityMatrix,
    pub density: MembraneDensity,
}

fn parse_observable(cfg: &ExperimentConfig) -> Result<Observable, CliError> {
    let n = cfg.dim;
    let obs = match &cfg.observable {
        ObservableSpec::Matrix { matrix } => {
            Observable::new(matrix_from_json("observable", matrix, n)?)
        }
        ObservableSpec::Preset(p) => match p.as_str() {
            "spin-z" => Observable::spin_z(n),
            "spin-x" => Observable::spin_x(n),
            "random" => {
                let mut rng = RngStream::new(cfg.seed, STREAM_OBSERVABLE).substream(0);
                Observable::random(n, &mut rng)
            }
            other => match other.strip_prefix("diag:") {
                Some(list) => {
                    let values: Vec<f64> = parse_list("observable", list)?;
                    if values.len() != n {
                        return Err(CliError::field(
                            "observable",
                            format!("expected {n} eigenvalues, got {}", values.len()),
                        ));
                    }
                    Observable::diagonal(&values)
                }
                None => {
                    return Err(CliError::field(
                        "observable",
                        format!("unknown preset '{other}'"),
                    ))
                }
            },
        },
    };
    obs.map_err(|e| CliError::field("observable", e))
}

/// The Bloch vector named by the state spec, without positivity checks.
fn parse_bloch(
    cfg: &ExperimentConfig,
    basis: &GeneratorBasis,
    obs: Option<&Observable>,
) -> Result<BlochVector, CliError> {
    let n = cfg.dim;
    let bad = |e: EbrError| CliError::field("state", e);
    match &cfg.state {
        StateSpec::Bloch { bloch } => BlochVector::new(n, bloch.clone()).map_err(bad),
        StateSpec::Matrix { matrix } => {
            let rho = DensityMatrix::new(matrix_from_json("state", matrix, n)?).map_err(bad)?;
            state_to_bloch(&rho, basis).map_err(bad)
        }
        StateSpec::Preset(p) => {
            let p = p.as_str();
            if p == "random-pure" {
                let mut rng = RngStream::new(cfg.seed, STREAM_STATE).substream(0);
                let rho = DensityMatrix::random_pure(n, &mut rng).map_err(bad)?;
                return state_to_bloch(&rho, basis).map_err(bad);
            }
            if p == "maximally-mixed" {
                return BlochVector::zero(n).map_err(bad);
            }
            if let Some(theta) = p.strip_prefix("bloch-angle:") {
                if n != 2 {
                    return Err(CliError::field("state", "bloch-angle presets need dim 2"));
                }
                let theta: f64 = theta
                    .parse()
                    .map_err(|_| CliError::field("state", format!("bad angle '{theta}'")))?;
                if !(0.0..=std::f64::consts::PI).contains(&theta) {
                    return Err(CliError::field("state", "angle must lie in [0, pi]"));
                }
                return BlochVector::new(2, vec![theta.sin(), 0.0, theta.cos()]).map_err(bad);
            }
            if let Some(list) = p.strip_prefix("bloch:") {
                return BlochVector::new(n, parse_list("state", list)?).map_err(bad);
            }
            if let Some(k) = p.strip_prefix("basis:") {
                let k: usize = k
                    .parse()
                    .map_err(|_| CliError::field("state", format!("bad index '{k}'")))?;
                let rho = DensityMatrix::basis_state(n, k).map_err(bad)?;
                return state_to_bloch(&rho, basis).map_err(bad);
            }
            if let Some(k) = p.strip_prefix("eigenstate:") {
                let k: usize = k
                    .parse()
                    .map_err(|_| CliError::field("state", format!("bad index '{k}'")))?;
                let obs = obs.ok_or_else(|| CliError::field("state", "needs an observable"))?;
                if k >= n {
                    return Err(CliError::field("state", format!("eigenstate {k} out of range")));
                }
                let rho = DensityMatrix::new(obs.projectors()[k].clone()).map_err(bad)?;
                return state_to_bloch(&rho, basis).map_err(bad);
            }
            Err(CliError::field("state", format!("unknown preset '{p}'")))
        }
    }
}

fn parse_density(cfg: &ExperimentConfig) -> Result<MembraneDensity, CliError> {
    let spec = cfg.density.as_str();
    let bad = |e: EbrError| CliError::field("density", e);
    if spec == "uniform" {
        return Ok(MembraneDensity::Uniform);
    }
    let parse_depth = |d: &str| -> Result<u32, CliError> {
        d.parse::<u32>()
            .ok()
            .filter(|&d| d >= 1)
            .ok_or_else(|| CliError::field("density", format!("bad grid depth '{d}'")))
    };
    if let Some(d) = spec.strip_prefix("random-grid:") {
        let grid = Arc::new(SimplexGrid::new(cfg.dim, parse_depth(d)?).map_err(bad)?);
        let mut rng = RngStream::new(cfg.seed, STREAM_DENSITY).substream(0);
        return Ok(MembraneDensity::Piecewise(
            PiecewiseDensity::random(grid, &mut rng).map_err(bad)?,
        ));
    }
    if let Some(rest) = spec.strip_prefix("grid:") {
        let (d, weights) = rest
            .split_once(':')
            .ok_or_else(|| CliError::field("density", "expected grid:DEPTH:W1,W2,..."))?;
        let grid = Arc::new(SimplexGrid::new(cfg.dim, parse_depth(d)?).map_err(bad)?);
        let weights = parse_list("density", weights)?;
        return Ok(MembraneDensity::Piecewise(
            PiecewiseDensity::new(grid, weights).map_err(bad)?,
        ));
    }
    Err(CliError::field("density", format!("unknown density '{spec}'")))
}

impl Experiment {
    pub fn build(config: ExperimentConfig) -> Result<Self, CliError> {
        config.validate_scalars()?;
        let basis = build_generators(config.dim).map_err(|e| CliError::field("dim", e))?;
        let observable = parse_observable(&config)?;
        let membrane = build_membrane(&observable, &basis)
            .map_err(|e| CliError::field("observable", e))?;
        let initial = parse_bloch(&config, &basis, Some(&observable))?;
        let norm = initial.norm();
        if norm > 1.0 + UNIT_NORM_TOL {
            return Err(CliError::field(
                "state",
                format!("Bloch vector norm {norm} exceeds 1"),
            ));
        }
        let min = candidate_min_eigenvalue(&initial, &basis)?;
        if min < -EIGEN_TOL {
            return Err(CliError::field(
                "state",
                format!("Bloch vector is not a state (min eigenvalue {min:e})"),
            ));
        }
        let state = DensityMatrix::new(bloch_to_state(&initial, &basis)?)
            .map_err(|e| CliError::field("state", e))?;
        let density = parse_density(&config)?;
        if config.sampler == Sampler::Fast && !density.is_uniform() {
            return Err(CliError::field(
                "sampler",
                "the fast sampler requires the uniform density",
            ));
        }
        Ok(Self {
            config,
            basis,
            observable,
            membrane,
            initial,
            state,
            density,
        })
    }
}

/// Rendered command output and the exit status it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub text: String,
    pub exit_code: i32,
}

fn envelope(command: &str, cfg: &ExperimentConfig, result: Value) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "seed": cfg.seed,
        "config": cfg,
        "result": result,
    })
}

fn to_json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON values always serialize");
    s.push('\n');
    s
}

fn fmt_row(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:>12.8}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(headers.to_vec(), &mut out);
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BornReport {
    pub eigenvalues: Vec<f64>,
    pub trace: Vec<f64>,
    pub barycentric: Vec<f64>,
    pub measure_ratio: Vec<f64>,
    pub max_abs_difference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn born_report(exp: &Experiment) -> Result<BornReport, CliError> {
    let trace = born_probabilities(&exp.state, &exp.observable)?;
    let landing = plunge(&exp.initial, &exp.membrane)?;
    let total = total_measure(&exp.membrane);
    let measure_ratio: Vec<f64> = subregion_measures(&landing, &exp.membrane)?
        .iter()
        .map(|m| m / total)
        .collect();
    let diff = max_abs_deviation(&trace, &landing.barycentric)
        .max(max_abs_deviation(&trace, &measure_ratio));
    Ok(BornReport {
        eigenvalues: exp.observable.eigenvalues().to_vec(),
        trace,
        barycentric: landing.barycentric,
        measure_ratio,
        max_abs_difference: diff,
        tolerance: BORN_IDENTITY_TOL,
        pass: diff <= BORN_IDENTITY_TOL,
    })
}

pub fn cmd_born(exp: &Experiment, format: OutputFormat) -> Result<CommandOutput, CliError> {
    let report = born_report(exp)?;
    let exit_code = if report.pass { EXIT_OK } else { EXIT_NUMERICAL_FAIL };
    let text = match format {
        OutputFormat::Json => to_json_text(&envelope("born", &exp.config, json!(report))),
        OutputFormat::Table => {
            let rows: Vec<Vec<String>> = (0..report.trace.len())
                .map(|k| {
                    vec![
                        k.to_string(),
                        format!("{:.6}", report.eigenvalues[k]),
                        format!("{:.12}", report.trace[k]),
                        format!("{:.12}", report.barycentric[k]),
                        format!("{:.12}", report.measure_ratio[k]),
                    ]
                })
                .collect();
            let mut s = render_table(
                &["outcome", "value", "trace", "barycentric", "measure_ratio"],
                &rows,
            );
            let _ = writeln!(
                s,
                "max |difference| = {:.3e}  ({})",
                report.max_abs_difference,
                if report.pass { "PASS" } else { "FAIL" }
            );
            s
        }
    };
    Ok(CommandOutput { text, exit_code })
}

fn record_json(rec: &MeasurementRecord) -> Value {
    json!({
        "initial": rec.initial.coords(),
        "on_membrane": rec.on_membrane.point.coords(),
        "landing_barycentric": rec.on_membrane.barycentric,
        "break_point": rec.break_point,
        "outcome_index": rec.outcome_index,
        "outcome_value": rec.outcome_value,
        "final_state": matrix_to_json(rec.final_state.matrix()),
        "rng": rec.rng,
    })
}

pub fn cmd_measure(
    exp: &Experiment,
    format: OutputFormat,
    workers: usize,
) -> Result<CommandOutput, CliError> {
    let cfg = &exp.config;
    let stream = RngStream::new(cfg.seed, STREAM_MEASURE);
    let stats = run_ensemble(
        &exp.initial,
        &exp.membrane,
        &exp.observable,
        &exp.density,
        cfg.runs,
        &stream,
        EnsembleOptions {
            sampler: cfg.sampler,
            workers,
        },
    )?;
    // The 4σ check only makes sense when the prediction is Born's.
    let pass = !exp.density.is_uniform() || stats.within_sigma(SIGMA_CRITERION);
    let exit_code = if pass { EXIT_OK } else { EXIT_STATISTICAL_FAIL };
    let record = if cfg.runs == 1 {
        Some(run_measurement(
            &exp.initial,
            &exp.membrane,
            &exp.observable,
            &exp.density,
            &stream,
            0,
        )?)
    } else {
        None
    };
    let text = match format {
        OutputFormat::Json => {
            let result = json!({
                "rng": { "algorithm": ALGORITHM, "seed": stream.seed, "stream_id": stream.stream_id },
                "eigenvalues": exp.observable.eigenvalues(),
                "stats": stats,
                "criterion_sigma": SIGMA_CRITERION,
                "pass": pass,
                "record": record.as_ref().map(record_json),
            });
            to_json_text(&envelope("measure", cfg, result))
        }
        OutputFormat::Table => {
            let rows: Vec<Vec<String>> = (0..stats.counts.len())
                .map(|k| {
                    let se = stats.standard_errors[k];
                    let dev = (stats.frequencies[k] - stats.born[k]).abs();
                    vec![
                        k.to_string(),
                        format!("{:.6}", exp.observable.eigenvalues()[k]),
                        stats.counts[k].to_string(),
                        format!("{:.6}", stats.frequencies[k]),
                        format!("{:.6}", stats.born[k]),
                        format!("{se:.2e}"),
                        if se > 0.0 {
                            format!("{:.2}", dev / se)
                        } else {
                            "-".into()
                        },
                    ]
                })
                .collect();
            let mut s = render_table(
                &["outcome", "value", "count", "frequency", "born", "std_err", "|dev|/se"],
                &rows,
            );
            if let Some(rec) = &record {
                let _ = writeln!(
                    s,
                    "single run: outcome {} (value {}), break point [{}]",
                    rec.outcome_index,
                    rec.outcome_value,
                    fmt_row(&rec.break_point).trim()
                );
            }
            let _ = writeln!(
                s,
                "runs = {}, max |dev| = {:.3e}, {}σ criterion: {}",
                stats.n_runs,
                stats.max_abs_deviation,
                SIGMA_CRITERION,
                if pass { "PASS" } else { "FAIL" }
            );
            s
        }
    };
    Ok(CommandOutput { text, exit_code })
}

pub fn cmd_trajectory(exp: &Experiment, format: OutputFormat) -> Result<CommandOutput, CliError> {
    let cfg = &exp.config;
    let stream = RngStream::new(cfg.seed, STREAM_MEASURE);
    let rec = run_measurement(
        &exp.initial,
        &exp.membrane,
        &exp.observable,
        &exp.density,
        &stream,
        0,
    )?;
    let frames = make_trajectory(&rec, &exp.membrane, cfg.frames_per_stage)?;
    let text = match format {
        OutputFormat::Json => {
            let mut s = String::new();
            let header = json!({
                "schema_version": SCHEMA_VERSION,
                "command": "trajectory",
                "seed": cfg.seed,
                "config": cfg,
                "frames": frames.len(),
                "outcome": rec.outcome_index,
                "vertices": exp.membrane.vertices().iter().map(BlochVector::coords).collect::<Vec<_>>(),
            });
            s.push_str(&serde_json::to_string(&header).expect("serializable"));
            s.push('\n');
            for f in &frames {
                let break_point = match &f.membrane_state {
                    MembraneState::Breaking(b) => Some(b.clone()),
                    _ => None,
                };
                let line = json!({
                    "stage": f.stage,
                    "t": f.t,
                    "particle": f.particle.coords(),
                    "embedding": f.embedding,
                    "membrane": match f.membrane_state {
                        MembraneState::Full => "full",
                        MembraneState::Breaking(_) => "breaking",
                        MembraneState::Contracted => "contracted",
                    },
                    "break_point": break_point,
                    "outcome": rec.outcome_index,
                });
                s.push_str(&serde_json::to_string(&line).expect("serializable"));
                s.push('\n');
            }
            s
        }
        OutputFormat::Table => {
            let rows: Vec<Vec<String>> = frames
                .iter()
                .map(|f| {
                    vec![
                        format!("{:?}", f.stage).to_lowercase(),
                        format!("{:.4}", f.t),
                        fmt_row(f.embedding.as_deref().unwrap_or(&[])).trim().to_string(),
                    ]
                })
                .collect();
            let mut s = render_table(&["stage", "t", "embedding"], &rows);
            let _ = writeln!(s, "outcome {} (value {})", rec.outcome_index, rec.outcome_value);
            s
        }
    };
    Ok(CommandOutput {
        text,
        exit_code: EXIT_OK,
    })
}

pub fn cmd_universal_average(
    exp: &Experiment,
    format: OutputFormat,
    workers: usize,
) -> Result<CommandOutput, CliError> {
    let cfg = &exp.config;
    let estimator = match (cfg.runs_per_density, cfg.dim) {
        (Some(runs), _) => PerDensityEstimator::Sampled { runs },
        (None, 2) => PerDensityEstimator::ExactSegment,
        (None, _) => PerDensityEstimator::Sampled { runs: 2000 },
    };
    let max_count = *cfg.densities.iter().max().expect("validated non-empty");
    let avg = universal_average(
        &exp.initial,
        &exp.membrane,
        &exp.observable,
        max_count,
        cfg.depth,
        estimator,
        &RngStream::new(cfg.seed, STREAM_UNIVERSAL),
        workers,
    )?;
    let rows: Vec<(usize, Vec<f64>, f64)> = cfg
        .densities
        .iter()
        .map(|&k| {
            let a = avg.prefix_average(k);
            let dev = max_abs_deviation(&a, &avg.born);
            (k, a, dev)
        })
        .collect();
    let final_dev = rows.last().map_or(f64::NAN, |r| r.2);
    let pass = final_dev <= UNIVERSAL_AVERAGE_TOL;
    let exit_code = if pass { EXIT_OK } else { EXIT_STATISTICAL_FAIL };
    let text = match format {
        OutputFormat::Json => {
            let result = json!({
                "estimator": estimator,
                "born": avg.born,
                "rows": rows.iter().map(|(k, a, d)| json!({
                    "densities": k, "averaged": a, "max_abs_deviation": d
                })).collect::<Vec<_>>(),
                "tolerance": UNIVERSAL_AVERAGE_TOL,
                "pass": pass,
            });
            to_json_text(&envelope("universal-average", cfg, result))
        }
        OutputFormat::Table => {
            let table_rows: Vec<Vec<String>> = rows
                .iter()
                .map(|(k, a, d)| vec![k.to_string(), fmt_row(a).trim().to_string(), format!("{d:.3e}")])
                .collect();
            let mut s = render_table(&["densities", "averaged", "max_abs_dev"], &table_rows);
            let _ = writeln!(s, "born: {}", fmt_row(&avg.born).trim());
            let _ = writeln!(
                s,
                "final deviation {:.3e} vs tolerance {}: {}",
                final_dev,
                UNIVERSAL_AVERAGE_TOL,
                if pass { "PASS" } else { "FAIL" }
            );
            s
        }
    };
    Ok(CommandOutput { text, exit_code })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SphereReport {
    pub coords: Vec<f64>,
    pub norm: f64,
    pub bona_fide: bool,
    pub min_eigenvalue: f64,
    pub scan: Option<ScanReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub samples: u64,
    pub bona_fide: u64,
    pub fraction: f64,
}

/// Fraction of uniformly random unit vectors that are states.
pub fn scan_bona_fide(basis: &GeneratorBasis, samples: u64, stream: &RngStream) -> ScanReport {
    use rayon::prelude::*;
    let dim = basis.dim();
    let hits: u64 = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream.substream(k);
            let v = BlochVector::random_unit(dim, &mut rng).expect("dim validated");
            u64::from(is_bona_fide(&v, basis).expect("same dim"))
        })
        .sum();
    ScanReport {
        samples,
        bona_fide: hits,
        fraction: hits as f64 / samples as f64,
    }
}

pub fn cmd_sphere_info(
    cfg: ExperimentConfig,
    format: OutputFormat,
    workers: usize,
) -> Result<CommandOutput, CliError> {
    cfg.validate_scalars()?;
    let basis = build_generators(cfg.dim).map_err(|e| CliError::field("dim", e))?;
    let vec = match &cfg.bloch {
        Some(coords) => {
            BlochVector::new(cfg.dim, coords.clone()).map_err(|e| CliError::field("bloch", e))?
        }
        None => {
            let obs = parse_observable(&cfg).ok();
            parse_bloch(&cfg, &basis, obs.as_ref())?
        }
    };
    let min = candidate_min_eigenvalue(&vec, &basis)?;
    let scan = match cfg.scan {
        Some(0) => return Err(CliError::field("scan", "must be at least 1")),
        Some(k) => Some(crate::engine::with_workers(workers, || {
            scan_bona_fide(&basis, k, &RngStream::new(cfg.seed, STREAM_SCAN))
        })?),
        None => None,
    };
    let report = SphereReport {
        coords: vec.coords().to_vec(),
        norm: vec.norm(),
        bona_fide: min >= -EIGEN_TOL,
        min_eigenvalue: min,
        scan,
    };
    let text = match format {
        OutputFormat::Json => to_json_text(&envelope("sphere-info", &cfg, json!(report))),
        OutputFormat::Table => {
            let mut s = String::new();
            let _ = writeln!(s, "dim             {}", cfg.dim);
            let _ = writeln!(s, "norm            {:.12}", report.norm);
            let _ = writeln!(s, "min eigenvalue  {:.12}", report.min_eigenvalue);
            let _ = writeln!(s, "bona fide       {}", report.bona_fide);
            if let Some(scan) = &report.scan {
                let _ = writeln!(
                    s,
                    "scan            {}/{} unit vectors bona fide ({:.4})",
                    scan.bona_fide, scan.samples, scan.fraction
                );
            }
            s
        }
    };
    Ok(CommandOutput {
        text,
        exit_code: EXIT_OK,
    })
}

/// Resolve, validate and execute one CLI invocation.
pub fn execute(cli: &Cli) -> Result<CommandOutput, CliError> {
    let (args, name) = match &cli.command {
        Command::Born(a) => (a, "born"),
        Command::Measure(a) => (a, "measure"),
        Command::Trajectory(a) => (a, "trajectory"),
        Command::UniversalAverage(a) => (a, "universal-average"),
        Command::SphereInfo(a) => (a, "sphere-info"),
    };
    let cfg = ExperimentConfig::resolve(args)?;
    let format = args.format.unwrap_or(match name {
        "trajectory" => OutputFormat::Json,
        _ => OutputFormat::Table,
    });
    let output = match &cli.command {
        Command::SphereInfo(_) => cmd_sphere_info(cfg, format, args.workers)?,
        command => {
            let exp = Experiment::build(cfg)?;
            match command {
                Command::Born(_) => cmd_born(&exp, format)?,
                Command::Measure(_) => cmd_measure(&exp, format, args.workers)?,
                Command::Trajectory(_) => cmd_trajectory(&exp, format)?,
                Command::UniversalAverage(_) => cmd_universal_average(&exp, format, args.workers)?,
                Command::SphereInfo(_) => unreachable!(),
            }
        }
    };
    if let Some(path) = &args.out {
        std::fs::write(path, &output.text)?;
        return Ok(CommandOutput {
            text: String::new(),
            exit_code: output.exit_code,
        });
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_with(f: impl FnOnce(&mut ExperimentConfig)) -> Result<Experiment, CliError> {
        let mut cfg = ExperimentConfig::default();
        f(&mut cfg);
        Experiment::build(cfg)
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig {
            dim: 3,
            state: StateSpec::Bloch {
                bloch: vec![0.0; 8],
            },
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let err = exp_with(|c| c.dim = 1).err().unwrap();
        assert!(matches!(&err, CliError::Validation { field, .. } if field == "dim"));
        let err = exp_with(|c| c.state = StateSpec::Preset("bloch-angle:4".into()))
            .err()
            .unwrap();
        assert!(matches!(&err, CliError::Validation { field, .. } if field == "state"));
        let err = exp_with(|c| {
            c.dim = 3;
            c.observable = ObservableSpec::Preset("diag:1,1,-1".into());
        })
        .err()
        .unwrap();
        assert!(matches!(&err, CliError::Validation { field, .. } if field == "observable"));
        let err = exp_with(|c| c.density = "grid:2:1".into()).err().unwrap();
        assert!(matches!(&err, CliError::Validation { field, .. } if field == "density"));
        let err = exp_with(|c| {
            c.dim = 3;
            let mut v = vec![0.0; 8];
            v[7] = 1.0;
            c.state = StateSpec::Bloch { bloch: v };
        })
        .err()
        .unwrap();
        assert!(matches!(&err, CliError::Validation { field, .. } if field == "state"));
        assert_eq!(err.exit_code(), EXIT_VALIDATION);
    }

    #[test]
    fn explicit_matrices_are_accepted() {
        let exp = exp_with(|c| {
            c.state = StateSpec::Matrix {
                matrix: vec![vec![[0.5, 0.0], [0.5, 0.0]], vec![[0.5, 0.0], [0.5, 0.0]]],
            };
            c.observable = ObservableSpec::Matrix {
                matrix: vec![vec![[1.0, 0.0], [0.0, 0.0]], vec![[0.0, 0.0], [-1.0, 0.0]]],
            };
        })
        .unwrap();
        let coords = exp.initial.coords();
        assert!((coords[0] - 1.0).abs() < 1e-12);
        let report = born_report(&exp).unwrap();
        assert!((report.trace[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn born_report_for_equator_state() {
        let exp = exp_with(|c| c.state = StateSpec::Preset(format!("bloch-angle:{}", std::f64::consts::FRAC_PI_2)))
            .unwrap();
        let r = born_report(&exp).unwrap();
        for v in r.trace.iter().chain(&r.barycentric).chain(&r.measure_ratio) {
            assert!((v - 0.5).abs() < 1e-12);
        }
        assert!(r.max_abs_difference < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn eigenstate_report_is_one_hot() {
        let exp = exp_with(|c| {
            c.dim = 3;
            c.observable = ObservableSpec::Preset("spin-x".into());
            c.state = StateSpec::Preset("eigenstate:1".into());
        })
        .unwrap();
        let r = born_report(&exp).unwrap();
        assert!((r.trace[1] - 1.0).abs() < 1e-10);
        assert!(r.max_abs_difference < 1e-10);
    }

    #[test]
    fn table_rendering_aligns_columns() {
        let t = render_table(&["a", "long"], &[vec!["123".into(), "x".into()]]);
        assert_eq!(t, "  a  long\n123     x\n");
    }
}
