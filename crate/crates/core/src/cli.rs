//! Command-line front end: CSV ingestion, run configuration, the
//! `simulate`, `estimate` and `identify` commands, and JSON reports.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorKind, FitResult};
use crate::identification::{self, BinaryFullLaw, IdentificationReport};
use crate::model::{Design, ModelConfig, Var};
use crate::moments::InstrumentChoice;
use crate::simharness::{run_study, ScenarioKind, ScenarioSpec, SimulationReport};
use crate::solver::SolveOptions;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Column roles in an input CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    /// Covariate columns; `None` takes every column not otherwise assigned.
    pub covariates: Option<Vec<String>>,
    /// Instrument columns; `None` takes every column whose name starts with `z`.
    pub instruments: Option<Vec<String>>,
    pub indicator: String,
    pub outcome: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        Self { covariates: None, instruments: None, indicator: "r".into(), outcome: "y".into() }
    }
}

fn parse_number(raw: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        line,
        column: column.to_string(),
        message: format!("`{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, column: column.to_string(), message: format!("`{raw}` is not finite") });
    }
    Ok(v)
}

fn is_missing(raw: &str) -> bool {
    let t = raw.trim();
    t.is_empty() || t == "NA"
}

/// Reads a dataset from a CSV file with a header row.
pub fn load_csv(path: &Path, mapping: &ColumnMapping) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, mapping)
}

/// Parses CSV text; see [`load_csv`].
pub fn parse_csv(text: &str, mapping: &ColumnMapping) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, column: String::new(), message: e.to_string() })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in header")))
    };
    let r_col = find(&mapping.indicator)?;
    let y_col = find(&mapping.outcome)?;
    let instruments: Vec<String> = match &mapping.instruments {
        Some(v) => v.clone(),
        None => header
            .iter()
            .filter(|h| h.starts_with('z') && **h != mapping.indicator && **h != mapping.outcome)
            .cloned()
            .collect(),
    };
    let covariates: Vec<String> = match &mapping.covariates {
        Some(v) => v.clone(),
        None => header
            .iter()
            .filter(|h| !instruments.contains(h) && **h != mapping.indicator && **h != mapping.outcome)
            .cloned()
            .collect(),
    };
    let x_cols = covariates.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let z_cols = instruments.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut observations = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| Error::Parse { line, column: String::new(), message: e.to_string() })?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let x = x_cols
            .iter()
            .zip(&covariates)
            .map(|(&c, name)| parse_number(field(c), line, name))
            .collect::<Result<Vec<_>>>()?;
        let z = z_cols
            .iter()
            .zip(&instruments)
            .map(|(&c, name)| parse_number(field(c), line, name))
            .collect::<Result<Vec<_>>>()?;
        let r = parse_number(field(r_col), line, &mapping.indicator)?;
        let y_raw = field(y_col);
        let obs = match (r, is_missing(y_raw)) {
            (0.0, true) => Observation::missing(x, z),
            (1.0, false) => Observation::observed(x, z, parse_number(y_raw, line, &mapping.outcome)?),
            (r, _) if r != 0.0 && r != 1.0 => {
                return Err(Error::Parse {
                    line,
                    column: mapping.indicator.clone(),
                    message: format!("indicator must be 0 or 1, found `{}`", field(r_col)),
                })
            }
            (_, true) => {
                return Err(Error::Consistency { row: line, message: "r = 1 but the outcome is empty".into() })
            }
            (_, false) => {
                return Err(Error::Consistency { row: line, message: "r = 0 but the outcome is present".into() })
            }
        };
        observations.push(obs);
    }
    Dataset::new(observations, covariates, instruments)
}

/// Writes a dataset as CSV with header `covariates, instruments, r, y`.
pub fn save_csv(data: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, format_csv(data))?;
    Ok(())
}

/// Canonical CSV text of a dataset; missing outcomes are empty fields.
pub fn format_csv(data: &Dataset) -> String {
    let mut out = String::new();
    let header: Vec<&str> = data
        .covariate_names()
        .iter()
        .chain(data.instrument_names())
        .map(String::as_str)
        .chain(["r", "y"])
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for obs in data.observations() {
        let mut fields: Vec<String> = obs.x.iter().chain(&obs.z).map(|v| v.to_string()).collect();
        fields.push(if obs.r() { "1".into() } else { "0".into() });
        fields.push(obs.y.map(|y| y.to_string()).unwrap_or_default());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// How a working-model design is built from the available columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    /// Intercept and main effects.
    Main,
    /// All interactions of the columns.
    Saturated,
}

impl std::str::FromStr for DesignKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        <Self as ValueEnum>::from_str(s.trim(), true)
    }
}

fn build_design(kind: DesignKind, vars: &[Var]) -> Design {
    match kind {
        DesignKind::Main => Design::main_effects(vars),
        DesignKind::Saturated => Design::saturated(vars),
    }
}

/// Working models for `nx` covariates and `nz` instruments.
pub fn analysis_config(nx: usize, nz: usize, baseline: DesignKind, outcome: DesignKind, iv: DesignKind) -> ModelConfig {
    let xs: Vec<Var> = (0..nx).map(Var::X).collect();
    let zs: Vec<Var> = (0..nz).map(Var::Z).collect();
    let zx: Vec<Var> = zs.iter().chain(&xs).copied().collect();
    let xz: Vec<Var> = xs.iter().chain(&zs).copied().collect();
    let mut c = ModelConfig::main_effects(nx, nz);
    c.baseline = crate::model::BaselineMissingnessSpec::new(build_design(baseline, &zx));
    c.outcome = crate::model::CompleteCaseOutcomeSpec::new(build_design(outcome, &xz));
    c.iv = crate::model::IvDensitySpec::new((0..nz).map(|_| build_design(iv, &xs)).collect());
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Estimate,
    Identify,
}

/// Fully resolved settings of one invocation; embedded in every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub columns: ColumnMapping,
    pub estimators: Vec<EstimatorKind>,
    pub scenario: ScenarioKind,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub baseline_design: DesignKind,
    pub outcome_design: DesignKind,
    pub iv_design: DesignKind,
    /// `theta0, theta1, theta2, theta3, xi` of the law probed by `identify`.
    pub law: [f64; 5],
    pub pz: f64,
    pub rho0: f64,
    pub solver: SolveOptions,
}

impl RunConfig {
    fn defaults(command: Command) -> Self {
        Self {
            command,
            input: None,
            output: None,
            columns: ColumnMapping::default(),
            estimators: vec![
                EstimatorKind::Cc,
                EstimatorKind::MarIpw,
                EstimatorKind::IvIpw,
                EstimatorKind::IvOr,
                EstimatorKind::IvDr,
            ],
            scenario: ScenarioKind::CorrectBoth,
            n: 2000,
            reps: 500,
            seed: 1,
            baseline_design: DesignKind::Main,
            outcome_design: DesignKind::Main,
            iv_design: DesignKind::Main,
            law: [0.3, 0.6, 0.1, 0.7, -0.2],
            pz: 0.5,
            rho0: 0.3,
            solver: SolveOptions::default(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mnar-iv", version, about = "Outcome-mean estimation under nonignorable missingness with a shadow instrument")]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

#[derive(Debug, Subcommand)]
enum CliCommand {
    /// Monte Carlo study on the built-in generator.
    Simulate(CommonArgs),
    /// Fit estimators to a CSV dataset.
    Estimate(CommonArgs),
    /// Observational-equivalence constructions for a binary full law.
    Identify(CommonArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Flat `key = value` file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// JSON report destination.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Comma-separated list, e.g. `IV-IPW,IV-DR`, or `all`.
    #[arg(long)]
    estimators: Option<String>,
    /// `correct-both`, `misspec-propensity` or `misspec-outcome` (also `iii`, `i`, `ii`).
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, allow_hyphen_values = true)]
    zeta_start: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    bracket_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    bracket_hi: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Comma-separated covariate columns (default: all unassigned columns).
    #[arg(long)]
    covariates: Option<String>,
    /// Comma-separated instrument columns (default: columns starting with `z`).
    #[arg(long)]
    instruments: Option<String>,
    #[arg(long)]
    indicator: Option<String>,
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    baseline_design: Option<String>,
    #[arg(long)]
    outcome_design: Option<String>,
    #[arg(long)]
    iv_design: Option<String>,
    /// `theta0,theta1,theta2,theta3,xi` for `identify`.
    #[arg(long, allow_hyphen_values = true)]
    law: Option<String>,
    #[arg(long)]
    pz: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    rho0: Option<f64>,
    /// Print the JSON report to standard output instead of the table.
    #[arg(long)]
    json: bool,
}

/// Failure of a CLI run, mapped onto an exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(e) if e.is_numerical() => EXIT_NUMERICAL,
            CliError::Run(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

/// Parses a flat `key = value` document; `#` starts a comment.
pub fn parse_config_file(text: &str) -> std::result::Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

const CONFIG_KEYS: [&str; 21] = [
    "input",
    "output",
    "estimators",
    "scenario",
    "n",
    "reps",
    "seed",
    "zeta_start",
    "bracket_lo",
    "bracket_hi",
    "tol",
    "max_iter",
    "covariates",
    "instruments",
    "indicator",
    "outcome",
    "baseline_design",
    "outcome_design",
    "iv_design",
    "law",
    "pz",
];

fn parse_value<T: std::str::FromStr>(key: &str, raw: &str) -> std::result::Result<T, CliError> {
    raw.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value `{raw}` for `{key}`")))
}

fn parse_list(raw: &str) -> Vec<String> {
    raw.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn parse_estimators(raw: &str) -> std::result::Result<Vec<EstimatorKind>, CliError> {
    if raw.trim().eq_ignore_ascii_case("all") {
        return Ok(EstimatorKind::ALL.to_vec());
    }
    let list = parse_list(raw)
        .iter()
        .map(|s| s.parse::<EstimatorKind>().map_err(|e| CliError::Usage(e.to_string())))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if list.is_empty() {
        return Err(CliError::Usage("the estimator list is empty".into()));
    }
    Ok(list)
}

fn resolve(command: Command, args: CommonArgs) -> std::result::Result<(RunConfig, bool), CliError> {
    let file = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", p.display())))?;
            parse_config_file(&text)?
        }
        None => BTreeMap::new(),
    };
    for k in file.keys() {
        if !CONFIG_KEYS.contains(&k.as_str()) && k != "rho0" {
            return Err(CliError::Usage(format!("unknown config key `{k}`")));
        }
    }
    // a flag wins over the file entry of the same name
    let pick = |flag: Option<String>, key: &str| flag.or_else(|| file.get(key).cloned());
    let num = |flag: Option<String>, key: &str| pick(flag, key);

    let mut c = RunConfig::defaults(command);
    if let Some(v) = pick(args.input.map(|p| p.display().to_string()), "input") {
        c.input = Some(PathBuf::from(v));
    }
    if let Some(v) = pick(args.output.map(|p| p.display().to_string()), "output") {
        c.output = Some(PathBuf::from(v));
    }
    if let Some(v) = pick(args.estimators, "estimators") {
        c.estimators = parse_estimators(&v)?;
    }
    if let Some(v) = pick(args.scenario, "scenario") {
        c.scenario = v.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    }
    if let Some(v) = num(args.n.map(|v| v.to_string()), "n") {
        c.n = parse_value("n", &v)?;
    }
    if let Some(v) = num(args.reps.map(|v| v.to_string()), "reps") {
        c.reps = parse_value("reps", &v)?;
    }
    if let Some(v) = num(args.seed.map(|v| v.to_string()), "seed") {
        c.seed = parse_value("seed", &v)?;
    }
    if let Some(v) = num(args.zeta_start.map(|v| v.to_string()), "zeta_start") {
        c.solver.zeta_start = parse_value("zeta_start", &v)?;
    }
    if let Some(v) = num(args.bracket_lo.map(|v| v.to_string()), "bracket_lo") {
        c.solver.bracket.0 = parse_value("bracket_lo", &v)?;
    }
    if let Some(v) = num(args.bracket_hi.map(|v| v.to_string()), "bracket_hi") {
        c.solver.bracket.1 = parse_value("bracket_hi", &v)?;
    }
    if let Some(v) = num(args.tol.map(|v| v.to_string()), "tol") {
        c.solver.tol_residual = parse_value("tol", &v)?;
    }
    if let Some(v) = num(args.max_iter.map(|v| v.to_string()), "max_iter") {
        c.solver.max_iter = parse_value("max_iter", &v)?;
    }
    if let Some(v) = pick(args.covariates, "covariates") {
        c.columns.covariates = Some(parse_list(&v));
    }
    if let Some(v) = pick(args.instruments, "instruments") {
        c.columns.instruments = Some(parse_list(&v));
    }
    if let Some(v) = pick(args.indicator, "indicator") {
        c.columns.indicator = v;
    }
    if let Some(v) = pick(args.outcome, "outcome") {
        c.columns.outcome = v;
    }
    if let Some(v) = pick(args.baseline_design, "baseline_design") {
        c.baseline_design = parse_value::<DesignKind>("baseline_design", &v)?;
    }
    if let Some(v) = pick(args.outcome_design, "outcome_design") {
        c.outcome_design = parse_value::<DesignKind>("outcome_design", &v)?;
    }
    if let Some(v) = pick(args.iv_design, "iv_design") {
        c.iv_design = parse_value::<DesignKind>("iv_design", &v)?;
    }
    if let Some(v) = pick(args.law, "law") {
        let vals = parse_list(&v)
            .iter()
            .map(|s| parse_value::<f64>("law", s))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        c.law = vals
            .try_into()
            .map_err(|_| CliError::Usage("`law` takes five numbers: theta0,theta1,theta2,theta3,xi".into()))?;
    }
    if let Some(v) = num(args.pz.map(|v| v.to_string()), "pz") {
        c.pz = parse_value("pz", &v)?;
    }
    if let Some(v) = num(args.rho0.map(|v| v.to_string()), "rho0") {
        c.rho0 = parse_value("rho0", &v)?;
    }
    c.solver.seed = c.seed;
    c.solver.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((c, args.json))
}

/// One entry of an `estimate` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateEntry {
    pub estimator: EstimatorKind,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

/// Output of one run: the JSON report and its table rendering.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Value,
    pub table: String,
    pub exit_code: i32,
}

fn envelope(config: &RunConfig, results: Value, diagnostics: Value) -> Value {
    json!({
        "config": config,
        "results": results,
        "diagnostics": diagnostics,
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn fmt_ci(ci: Option<(f64, f64)>) -> String {
    ci.map_or_else(|| "-".to_string(), |(lo, hi)| format!("({lo:.3}, {hi:.3})"))
}

/// Table with columns estimator, phi, CI, zeta, CI, p-value.
pub fn render_estimates(entries: &[EstimateEntry]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<9} {:>8} {:>18} {:>8} {:>18} {:>8}",
        "estimator", "phi", "95% CI", "zeta", "95% CI", "p-value"
    );
    for e in entries {
        match &e.fit {
            Some(f) => {
                let zeta = f.zeta_hat.map_or("-".to_string(), |z| format!("{z:.3}"));
                let p = f.p_value_zeta.map_or("-".to_string(), |p| format!("{p:.4}"));
                let _ = writeln!(
                    s,
                    "{:<9} {:>8.3} {:>18} {:>8} {:>18} {:>8}",
                    e.estimator.name(),
                    f.phi_hat,
                    fmt_ci(Some(f.ci_phi)),
                    zeta,
                    fmt_ci(f.ci_zeta),
                    p
                );
            }
            None => {
                let _ = writeln!(s, "{:<9} failed: {}", e.estimator.name(), e.error.as_deref().unwrap_or(""));
            }
        }
    }
    s
}

/// Per-estimator summary table of a simulation report.
pub fn render_simulation(report: &SimulationReport) -> String {
    let mut s = String::new();
    let sc = &report.scenario;
    let _ = writeln!(s, "scenario {} n = {} replications = {}", sc.kind, sc.n, sc.replications);
    let _ = writeln!(
        s,
        "{:<9} {:<5} {:>8} {:>8} {:>8} {:>8} {:>8} {:>6}",
        "estimator", "param", "mean", "bias", "mc_sd", "mean_se", "coverage", "failed"
    );
    for e in &report.estimators {
        for (name, p) in [("phi", &e.phi), ("zeta", &e.zeta)] {
            if let Some(p) = p {
                let _ = writeln!(
                    s,
                    "{:<9} {:<5} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.3} {:>6}",
                    e.estimator.name(),
                    name,
                    p.mean,
                    p.bias,
                    p.mc_sd,
                    p.mean_se,
                    p.coverage,
                    e.n_failed
                );
            }
        }
    }
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn render_identification(r: &IdentificationReport) -> String {
    let mut s = String::new();
    let a = &r.saturated_input;
    let b = &r.equivalent;
    let _ = writeln!(
        s,
        "input      theta = ({:.2}, {:.2}, {:.2}, {:.2}), xi = {:.2}",
        a.theta[0], a.theta[1], a.theta[2], a.theta[3], a.xi
    );
    let _ = writeln!(
        s,
        "equivalent theta = ({:.2}, {:.2}, {:.2}, {:.2}), xi = {:.2}  (rho0 = {}, rho1 = {:.4})",
        b.theta[0], b.theta[1], b.theta[2], b.theta[3], b.xi, r.rho0, r.rho1
    );
    let _ = writeln!(s, "observed-law distance {:.3e}", r.observed_distance);
    let _ = writeln!(s, "no-interaction probe:");
    for p in &r.probe.points {
        let _ = writeln!(s, "  rho0 = {:>6.3}  violation = {:.3e}", p.rho0, p.violation);
    }
    let g = &r.grid_search;
    let _ = writeln!(
        s,
        "grid search over {} laws: min observed distance {:.3e}, {} pairs below {:.1e}",
        g.n_laws, g.min_distance, g.n_pairs_below, g.threshold
    );
    s
}

fn run_estimate(config: &RunConfig) -> std::result::Result<RunOutput, CliError> {
    let input = config
        .input
        .as_ref()
        .ok_or_else(|| CliError::Usage("`estimate` needs --input".into()))?;
    let data = load_csv(input, &config.columns)?;
    let model = analysis_config(
        data.n_covariates(),
        data.n_instruments(),
        config.baseline_design,
        config.outcome_design,
        config.iv_design,
    );
    model.validate(data.n_covariates(), data.n_instruments())?;
    let choice = InstrumentChoice::default_for(&model);
    let mut entries = Vec::new();
    let mut numerical = false;
    let mut data_error = false;
    for &kind in &config.estimators {
        match estimate(&data, &model, kind, &choice, &config.solver) {
            Ok(fit) => {
                numerical |= !fit.diagnostics.converged;
                entries.push(EstimateEntry { estimator: kind, fit: Some(fit), error: None });
            }
            Err(e) => {
                if e.is_numerical() {
                    numerical = true;
                } else {
                    data_error = true;
                }
                entries.push(EstimateEntry { estimator: kind, fit: None, error: Some(e.to_string()) });
            }
        }
    }
    let diagnostics = json!({
        "n": data.n(),
        "n_observed": data.n_observed(),
        "covariates": data.covariate_names(),
        "instruments": data.instrument_names(),
        "failed": entries.iter().filter(|e| e.fit.is_none()).map(|e| e.estimator).collect::<Vec<_>>(),
    });
    let exit_code = if data_error {
        EXIT_DATA
    } else if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_OK
    };
    Ok(RunOutput {
        report: envelope(config, serde_json::to_value(&entries).expect("serializable"), diagnostics),
        table: render_estimates(&entries),
        exit_code,
    })
}

fn run_simulate(config: &RunConfig) -> std::result::Result<RunOutput, CliError> {
    let spec = ScenarioSpec { kind: config.scenario, n: config.n, replications: config.reps, base_seed: config.seed };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let report = run_study(&spec, &config.estimators, &config.solver)?;
    let diagnostics = json!({
        "warnings": report.warnings,
        "failed": report.estimators.iter().map(|e| (e.estimator.name(), e.n_failed)).collect::<BTreeMap<_, _>>(),
    });
    Ok(RunOutput {
        table: render_simulation(&report),
        report: envelope(config, serde_json::to_value(&report).expect("serializable"), diagnostics),
        exit_code: EXIT_OK,
    })
}

fn run_identify(config: &RunConfig) -> std::result::Result<RunOutput, CliError> {
    let [t0, t1, t2, t3, xi] = config.law;
    let law = BinaryFullLaw::new([t0, t1, t2, t3], xi, config.pz).map_err(|e| CliError::Usage(e.to_string()))?;
    let report = identification::report(law, config.rho0)?;
    let diagnostics = json!({ "identified_without_interaction": report.probe.identified });
    Ok(RunOutput {
        table: render_identification(&report),
        report: envelope(config, serde_json::to_value(&report).expect("serializable"), diagnostics),
        exit_code: EXIT_OK,
    })
}

/// Executes a resolved configuration.
pub fn run(config: &RunConfig) -> std::result::Result<RunOutput, CliError> {
    match config.command {
        Command::Simulate => run_simulate(config),
        Command::Estimate => run_estimate(config),
        Command::Identify => run_identify(config),
    }
}

/// Parses `args`, runs, writes the report, and returns the exit code.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() { write!(stderr, "{rendered}") } else { write!(stdout, "{rendered}") };
            return code;
        }
    };
    let (command, args) = match cli.command {
        CliCommand::Simulate(a) => (Command::Simulate, a),
        CliCommand::Estimate(a) => (Command::Estimate, a),
        CliCommand::Identify(a) => (Command::Identify, a),
    };
    let outcome = resolve(command, args).and_then(|(config, json)| {
        let out = run(&config)?;
        Ok((config, json, out))
    });
    match outcome {
        Ok((config, json, out)) => {
            let text = serde_json::to_string_pretty(&out.report).expect("serializable");
            if let Some(path) = &config.output {
                if let Err(e) = fs::write(path, format!("{text}\n")) {
                    let _ = writeln!(stderr, "cannot write {}: {e}", path.display());
                    return EXIT_DATA;
                }
            }
            let _ = if json { writeln!(stdout, "{text}") } else { write!(stdout, "{}", out.table) };
            out.exit_code
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mapping() -> ColumnMapping {
        ColumnMapping::default()
    }

    #[test]
    fn three_row_example() {
        let d = parse_csv("x1,z,r,y\n1,0,1,1\n0,1,0,\n1,1,1,0\n", &mapping()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.observations()[1].y, None);
        assert_eq!(d.covariate_names(), ["x1"]);
        assert_eq!(d.instrument_names(), ["z"]);
    }

    #[test]
    fn observed_row_without_outcome_is_rejected() {
        let err = parse_csv("x1,z,r,y\n1,0,1,1\n0,1,1,\n", &mapping()).unwrap_err();
        assert!(matches!(err, Error::Consistency { row: 3, .. }), "{err}");
        let err = parse_csv("x1,z,r,y\n1,0,0,1\n", &mapping()).unwrap_err();
        assert!(matches!(err, Error::Consistency { row: 2, .. }));
    }

    #[test]
    fn na_counts_as_missing() {
        let d = parse_csv("x1,z,r,y\n1,0,0,NA\n1,0,1,0\n", &mapping()).unwrap();
        assert_eq!(d.observations()[0].y, None);
    }

    #[test]
    fn parse_and_schema_errors() {
        let err = parse_csv("x1,z,r,y\n1,abc,1,1\n", &mapping()).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, "z");
            }
            other => panic!("{other}"),
        }
        assert!(matches!(parse_csv("x1,z,r\n1,0,1\n", &mapping()), Err(Error::Schema(_))));
        let m = ColumnMapping { covariates: Some(vec!["w".into()]), ..mapping() };
        assert!(matches!(parse_csv("x1,z,r,y\n1,0,1,1\n", &m), Err(Error::Schema(_))));
    }

    #[test]
    fn canonical_text_round_trips() {
        let text = "x1,z,r,y\n1,0,1,1\n0,1,0,\n1,1,1,0\n";
        assert_eq!(format_csv(&parse_csv(text, &mapping()).unwrap()), text);
    }

    #[test]
    fn config_file_parsing() {
        let m = parse_config_file("# comment\nn = 300\nbracket-lo=-5 # trailing\n\n").unwrap();
        assert_eq!(m["n"], "300");
        assert_eq!(m["bracket_lo"], "-5");
        assert!(parse_config_file("no equals sign").is_err());
    }

    #[test]
    fn estimator_lists() {
        assert_eq!(parse_estimators("all").unwrap().len(), 6);
        assert_eq!(parse_estimators("IV-DR, cc").unwrap(), [EstimatorKind::IvDr, EstimatorKind::Cc]);
        assert!(parse_estimators("IV-XYZ").is_err());
        assert!(parse_estimators(" , ").is_err());
    }

    #[test]
    fn analysis_designs() {
        let c = analysis_config(2, 1, DesignKind::Main, DesignKind::Saturated, DesignKind::Saturated);
        assert_eq!(c.baseline.design.len(), 4);
        assert_eq!(c.outcome.design.len(), 8);
        assert_eq!(c.iv.designs[0].len(), 4);
    }
}
