//! Estimation pipelines: nuisance fits, estimator-specific solves, the mean
//! estimate and its sandwich variance.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::model::{expit, Design, IvDensitySpec, CompleteCaseOutcomeSpec, ModelConfig};
use crate::moments::{
    build_dr_system, build_ipw_system, build_or_system, build_stacked_system, mar_response_design, InstrumentChoice,
    MomentSystem, ParamBlock, ResponseModel, RowBlock, StackedKind,
};
use crate::solver::{
    condition_number, fd_jacobian, gmm_minimize, gmm_two_step_fit, solve_root, solve_root_fn, solve_scalar,
    SolveDiagnostics, SolveOptions, MAX_CONDITION,
};
use crate::stats::{grouped_sum, wald_interval, wald_p_value};

/// Coefficient max-norm beyond which a logistic MLE is treated as divergent.
const SEPARATION_NORM: f64 = 30.0;
/// Largest label residual at which every row counts as perfectly predicted.
const COMPLETE_SEPARATION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "CC")]
    Cc,
    #[serde(rename = "MAR-IPW")]
    MarIpw,
    #[serde(rename = "IV-IPW")]
    IvIpw,
    #[serde(rename = "IV-OR")]
    IvOr,
    #[serde(rename = "IV-DR")]
    IvDr,
    #[serde(rename = "IV-EFF")]
    IvEff,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Cc,
        EstimatorKind::MarIpw,
        EstimatorKind::IvIpw,
        EstimatorKind::IvOr,
        EstimatorKind::IvDr,
        EstimatorKind::IvEff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Cc => "CC",
            EstimatorKind::MarIpw => "MAR-IPW",
            EstimatorKind::IvIpw => "IV-IPW",
            EstimatorKind::IvOr => "IV-OR",
            EstimatorKind::IvDr => "IV-DR",
            EstimatorKind::IvEff => "IV-EFF",
        }
    }

    pub fn uses_instrument(self) -> bool {
        !matches!(self, EstimatorKind::Cc | EstimatorKind::MarIpw)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match key.as_str() {
            "cc" | "complete-case" => EstimatorKind::Cc,
            "mar-ipw" | "mar" => EstimatorKind::MarIpw,
            "iv-ipw" | "ipw" => EstimatorKind::IvIpw,
            "iv-or" | "or" => EstimatorKind::IvOr,
            "iv-dr" | "dr" => EstimatorKind::IvDr,
            "iv-eff" | "eff" => EstimatorKind::IvEff,
            _ => return Err(Error::InvalidInput(format!("unknown estimator `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimator: EstimatorKind,
    pub phi_hat: f64,
    pub zeta_hat: Option<f64>,
    /// Fitted nuisance slices keyed by block name (`xi`, `omega`, `theta`, `beta`).
    pub nuisance: BTreeMap<String, Vec<f64>>,
    pub param_names: Vec<String>,
    pub covariance: Vec<Vec<f64>>,
    pub se_phi: f64,
    pub se_zeta: Option<f64>,
    pub ci_phi: (f64, f64),
    pub ci_zeta: Option<(f64, f64)>,
    /// Two-sided Wald p-value for `zeta = 0`.
    pub p_value_zeta: Option<f64>,
    pub diagnostics: SolveDiagnostics,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl FitResult {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        let k = self.covariance.len();
        DMatrix::from_fn(k, k, |i, j| self.covariance[i][j])
    }
}

/// Logistic MLE of `response(obs)` on `design`, over rows where `response`
/// returns `Some`.
fn fit_logistic<F>(data: &Dataset, design: &Design, response: F, model: &str, opts: &SolveOptions) -> Result<Vec<f64>>
where
    F: Fn(&Observation) -> Option<f64> + Sync,
{
    let p = design.len();
    let used: usize = data
        .groups()
        .iter()
        .filter(|&&(i, _)| response(&data.observations()[i]).is_some())
        .map(|g| g.1)
        .sum();
    if used == 0 {
        return Err(Error::InsufficientData(format!("no rows available to fit {model}")));
    }
    let score = |beta: &[f64]| -> Result<Vec<f64>> {
        let mut s = grouped_sum(data.observations(), data.groups(), p, |obs, buf: &mut [f64]| {
            match response(obs) {
                Some(t) => {
                    let d = design.eval(&obs.x, &obs.z);
                    let resid = t - expit(d.iter().zip(beta).map(|(a, b)| a * b).sum());
                    for (o, v) in buf.iter_mut().zip(&d) {
                        *o = resid * v;
                    }
                }
                None => buf.fill(0.0),
            }
            Ok::<(), Error>(())
        })?;
        s.iter_mut().for_each(|v| *v /= used as f64);
        Ok(s)
    };
    // largest gap between a label and its fitted probability; near zero only
    // when every row is predicted perfectly
    let worst_residual = |beta: &[f64]| -> f64 {
        data.observations()
            .iter()
            .filter_map(|obs| {
                let t = response(obs)?;
                let lp = design.linear_predictor(beta, &obs.x, &obs.z);
                Some((t - expit(lp)).abs())
            })
            .fold(0.0, f64::max)
    };
    let separation = || Error::Separation { model: model.to_string() };
    let x0 = vec![0.0; p];
    match solve_root_fn(score, &x0, opts) {
        Ok((beta, _)) => {
            let norm = beta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if norm > SEPARATION_NORM || !(worst_residual(&beta) > COMPLETE_SEPARATION) {
                return Err(separation());
            }
            Ok(beta)
        }
        Err(Error::NoConvergence { best, residual, iterations }) => {
            let norm = best.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if norm > SEPARATION_NORM || !(worst_residual(&best) > COMPLETE_SEPARATION) {
                Err(separation())
            } else {
                Err(Error::NoConvergence { best, residual, iterations })
            }
        }
        Err(e) => Err(e),
    }
}

/// Logistic MLE of each instrument component on its covariate design.
pub fn fit_iv_density(data: &Dataset, spec: &IvDensitySpec, opts: &SolveOptions) -> Result<Vec<f64>> {
    data.require_binary_instruments()?;
    if spec.n_instruments() != data.n_instruments() {
        return Err(Error::InvalidInput("instrument law does not match the data".into()));
    }
    let mut xi = Vec::with_capacity(spec.n_params());
    for (k, design) in spec.designs.iter().enumerate() {
        let name = format!("instrument law of {}", data.instrument_names()[k]);
        xi.extend(fit_logistic(data, design, |o| Some(o.z[k]), &name, opts)?);
    }
    Ok(xi)
}

/// Logistic MLE of the outcome among complete cases.
pub fn fit_cc_outcome(data: &Dataset, spec: &CompleteCaseOutcomeSpec, opts: &SolveOptions) -> Result<Vec<f64>> {
    data.require_binary_outcome()?;
    fit_logistic(data, &spec.design, |o| o.y, "complete-case outcome model", opts)
}

/// Main-effects logistic model for the response indicator.
pub fn fit_response_model(data: &Dataset, opts: &SolveOptions) -> Result<ResponseModel> {
    let design = mar_response_design(data.n_covariates(), data.n_instruments());
    let beta = fit_logistic(data, &design, |o| Some(o.r_f64()), "response model", opts)?;
    Ok(ResponseModel { design, beta })
}

/// `(1/n) B^-1 Meat B^-T` for an exactly identified stacked system.
pub fn sandwich_variance(
    stacked: &MomentSystem,
    data: &Dataset,
    delta: &[f64],
    fd_step_scale: f64,
) -> Result<DMatrix<f64>> {
    let bread = bread(stacked, data, delta, fd_step_scale)?;
    let meat = meat(stacked, data, delta)?;
    let inv = invert_bread(&bread)?;
    let n = data.n() as f64;
    let v = &inv * meat * inv.transpose() / n;
    Ok(symmetrize(v))
}

/// Sandwich for a stacked system whose estimator block is over-identified
/// and was solved by GMM with weight `weight`: the estimator rows are
/// replaced by the linear combination `D' W m` with `D` the Jacobian of those
/// rows with respect to the estimator parameters.
pub fn gmm_sandwich_variance(
    stacked: &MomentSystem,
    data: &Dataset,
    delta: &[f64],
    est_rows: Range<usize>,
    est_params: Range<usize>,
    weight: &DMatrix<f64>,
    fd_step_scale: f64,
) -> Result<DMatrix<f64>> {
    let b = bread(stacked, data, delta, fd_step_scale)?;
    let s = meat(stacked, data, delta)?;
    let m = stacked.dim_moments();
    let p = stacked.dim_params();
    let d = b.view((est_rows.start, est_params.start), (est_rows.len(), est_params.len())).into_owned();
    let dtw = d.transpose() * weight;
    // selection matrix A (p x m)
    let mut a = DMatrix::<f64>::zeros(p, m);
    let mut prow = 0;
    for row in 0..m {
        if est_rows.contains(&row) {
            continue;
        }
        if prow == est_params.start {
            prow += est_params.len();
        }
        a[(prow, row)] = 1.0;
        prow += 1;
    }
    for i in 0..est_params.len() {
        for (j, row) in est_rows.clone().enumerate() {
            a[(est_params.start + i, row)] = dtw[(i, j)];
        }
    }
    let ab = &a * &b;
    let inv = invert_bread(&ab)?;
    let n = data.n() as f64;
    let v = &inv * (&a * s * a.transpose()) * inv.transpose() / n;
    Ok(symmetrize(v))
}

fn bread(stacked: &MomentSystem, data: &Dataset, delta: &[f64], step: f64) -> Result<DMatrix<f64>> {
    fd_jacobian(|p| stacked.mean(data, p), delta, step)
}

fn meat(stacked: &MomentSystem, data: &Dataset, delta: &[f64]) -> Result<DMatrix<f64>> {
    stacked.second_moment(data, delta)
}

fn invert_bread(b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let condition = condition_number(b);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularBread { condition });
    }
    b.clone()
        .try_inverse()
        .ok_or(Error::SingularBread { condition: f64::INFINITY })
}

fn symmetrize(v: DMatrix<f64>) -> DMatrix<f64> {
    (&v + v.transpose()) * 0.5
}

/// Estimator parameters returned by a fit, with how they were obtained.
#[derive(Debug, Clone)]
pub struct FittedModel {
    /// Working models with all fitted values written in.
    pub config: ModelConfig,
    pub diagnostics: SolveDiagnostics,
    /// Weight of the final GMM step when the estimator block was not solved
    /// as a root.
    pub weight: Option<DMatrix<f64>>,
    pub notes: Vec<String>,
}

/// Solves an estimator system: a root when exactly identified (falling back
/// to minimizing the squared norm when no root is found), two-step GMM
/// otherwise.
fn solve_estimator_system(
    sys: &MomentSystem,
    data: &Dataset,
    x0: &[f64],
    opts: &SolveOptions,
    notes: &mut Vec<String>,
) -> Result<(Vec<f64>, SolveDiagnostics, Option<DMatrix<f64>>)> {
    if sys.is_exactly_identified() {
        match solve_root(sys, data, x0, opts) {
            Ok((x, d)) => Ok((x, d, None)),
            Err(Error::NoConvergence { best, .. }) => {
                let identity = DMatrix::identity(sys.dim_moments(), sys.dim_moments());
                let (x, d) = gmm_minimize(&|p: &[f64]| sys.mean(data, p), &identity, &best, opts)?;
                notes.push("no exact root found; estimates minimize the squared moment norm".into());
                Ok((x, d, Some(identity)))
            }
            Err(e) => Err(e),
        }
    } else {
        let fit = gmm_two_step_fit(sys, data, x0, opts)?;
        if fit.diagnostics.identity_weight_fallback {
            notes.push("ill-conditioned GMM weight; identity weight used".into());
        }
        Ok((fit.params, fit.diagnostics, Some(fit.weight)))
    }
}

/// Solves the `h1` rows for `omega` with `zeta` held at `zeta`, as a warm start.
fn warm_start_omega(cfg: &mut ModelConfig, choice: &InstrumentChoice, data: &Dataset, zeta: f64, opts: &SolveOptions) {
    cfg.selection_bias.zeta = zeta;
    if choice.h1.dim != cfg.baseline.design.len() {
        return;
    }
    let Ok(sys) = MomentSystem::new(cfg.clone(), choice.clone(), None, vec![RowBlock::IpwBaseline], &[ParamBlock::Omega])
    else {
        return;
    };
    if let Ok((omega, _)) = solve_root(&sys, data, &cfg.baseline.omega, opts) {
        cfg.baseline.omega = omega;
    }
}

fn apply_estimates(cfg: &mut ModelConfig, sys: &MomentSystem, x: &[f64]) {
    if let Some(r) = sys.layout().range(ParamBlock::Omega) {
        cfg.baseline.omega.copy_from_slice(&x[r]);
    }
    if let Some(i) = sys.layout().index(ParamBlock::Zeta) {
        cfg.selection_bias.zeta = x[i];
    }
}

fn check_iv_data(data: &Dataset, config: &ModelConfig) -> Result<()> {
    if data.n_instruments() == 0 {
        return Err(Error::InvalidInput("instrument-based estimators need at least one instrument".into()));
    }
    config.validate(data.n_covariates(), data.n_instruments())?;
    data.require_binary_instruments()
}

/// Fits the IPW estimator parameters `(xi, omega, zeta)`.
pub fn fit_ipw_model(
    data: &Dataset,
    config: &ModelConfig,
    choice: &InstrumentChoice,
    opts: &SolveOptions,
) -> Result<FittedModel> {
    check_iv_data(data, config)?;
    let mut cfg = config.clone();
    cfg.iv.xi = fit_iv_density(data, &cfg.iv, opts)?;
    warm_start_omega(&mut cfg, choice, data, opts.zeta_start, opts);
    let sys = build_ipw_system(&cfg, choice)?;
    let mut notes = Vec::new();
    let (x, diagnostics, weight) = solve_estimator_system(&sys, data, &sys.current_params(), opts, &mut notes)?;
    apply_estimates(&mut cfg, &sys, &x);
    Ok(FittedModel { config: cfg, diagnostics, weight, notes })
}

/// Fits the OR estimator parameters `(xi, theta, zeta)`.
pub fn fit_or_model(
    data: &Dataset,
    config: &ModelConfig,
    choice: &InstrumentChoice,
    opts: &SolveOptions,
) -> Result<FittedModel> {
    check_iv_data(data, config)?;
    data.require_binary_outcome()?;
    let mut cfg = config.clone();
    cfg.iv.xi = fit_iv_density(data, &cfg.iv, opts)?;
    cfg.outcome.theta = fit_cc_outcome(data, &cfg.outcome, opts)?;
    cfg.selection_bias.zeta = opts.zeta_start;
    let sys = build_or_system(&cfg, choice)?;
    let mut notes = Vec::new();
    let (zeta, diagnostics, weight) = if sys.is_exactly_identified() {
        let scalar = solve_scalar(|z| Ok(sys.mean(data, &[z])?[0]), opts);
        match scalar {
            Ok(z) => {
                let residual = sys.mean(data, &[z])?[0].abs();
                let d = SolveDiagnostics {
                    converged: residual <= opts.tol_residual,
                    iterations: 0,
                    final_residual_norm: residual,
                    restarts_used: 0,
                    identity_weight_fallback: false,
                };
                (z, d, None)
            }
            Err(Error::NoSignChange { .. }) => {
                let (x, d, w) = solve_estimator_system(&sys, data, &[opts.zeta_start], opts, &mut notes)?;
                (x[0], d, w)
            }
            Err(e) => return Err(e),
        }
    } else {
        let (x, d, w) = solve_estimator_system(&sys, data, &[opts.zeta_start], opts, &mut notes)?;
        (x[0], d, w)
    };
    cfg.selection_bias.zeta = zeta;
    Ok(FittedModel { config: cfg, diagnostics, weight, notes })
}

/// Fits the DR estimator parameters `(xi, theta, omega, zeta)`.
pub fn fit_dr_model(
    data: &Dataset,
    config: &ModelConfig,
    choice: &InstrumentChoice,
    opts: &SolveOptions,
) -> Result<FittedModel> {
    check_iv_data(data, config)?;
    data.require_binary_outcome()?;
    let mut cfg = config.clone();
    cfg.iv.xi = fit_iv_density(data, &cfg.iv, opts)?;
    cfg.outcome.theta = fit_cc_outcome(data, &cfg.outcome, opts)?;
    warm_start_omega(&mut cfg, choice, data, opts.zeta_start, opts);
    let sys = build_dr_system(&cfg, choice)?;
    let mut notes = Vec::new();
    let (x, diagnostics, weight) = solve_estimator_system(&sys, data, &sys.current_params(), opts, &mut notes)?;
    apply_estimates(&mut cfg, &sys, &x);
    Ok(FittedModel { config: cfg, diagnostics, weight, notes })
}

/// Builds a result from a stacked system whose non-target parameters are
/// already in place: solves the target row for `phi` and attaches the
/// sandwich covariance.
#[allow(clippy::too_many_arguments)]
fn finish(
    kind: EstimatorKind,
    stacked: &MomentSystem,
    data: &Dataset,
    weight: Option<&DMatrix<f64>>,
    est: Option<(RowBlock, Range<usize>)>,
    diagnostics: SolveDiagnostics,
    notes: Vec<String>,
    opts: &SolveOptions,
) -> Result<FitResult> {
    let layout = stacked.layout();
    let phi_idx = layout.index(ParamBlock::Phi).expect("stacked systems carry phi");
    let mut delta = stacked.current_params();
    delta[phi_idx] = 0.0;
    let target_row = stacked.dim_moments() - 1;
    let mut phi_hat = stacked.mean(data, &delta)?[target_row];
    if kind == EstimatorKind::Cc {
        // R (Y - phi) has slope -P(R = 1) in phi
        phi_hat /= data.n_observed() as f64 / data.n() as f64;
    }
    delta[phi_idx] = phi_hat;

    let cov = match (weight, est) {
        (Some(w), Some((block, params))) => {
            let rows = estimator_rows(stacked, &block);
            gmm_sandwich_variance(stacked, data, &delta, rows, params, w, opts.fd_step_scale)?
        }
        _ => sandwich_variance(stacked, data, &delta, opts.fd_step_scale)?,
    };
    Ok(assemble(kind, stacked, data, &delta, &cov, diagnostics, notes))
}

/// Contiguous row range of the estimator's own equations, starting at `first`.
fn estimator_rows(stacked: &MomentSystem, first: &RowBlock) -> Range<usize> {
    let start = stacked.row_range(first).expect("block present").start;
    let end = match first {
        RowBlock::IpwBaseline => stacked
            .row_range(&RowBlock::IpwSelection)
            .or_else(|| stacked.row_range(&RowBlock::DrSelection))
            .map_or(start, |r| r.end),
        other => stacked.row_range(other).expect("block present").end,
    };
    start..end
}

fn assemble(
    kind: EstimatorKind,
    stacked: &MomentSystem,
    data: &Dataset,
    delta: &[f64],
    cov: &DMatrix<f64>,
    diagnostics: SolveDiagnostics,
    notes: Vec<String>,
) -> FitResult {
    let layout = stacked.layout();
    let phi_idx = layout.index(ParamBlock::Phi).expect("stacked systems carry phi");
    let phi_hat = delta[phi_idx];
    let se_phi = cov[(phi_idx, phi_idx)].max(0.0).sqrt();
    let zeta_idx = layout.index(ParamBlock::Zeta);
    let zeta_hat = zeta_idx.map(|i| delta[i]);
    let se_zeta = zeta_idx.map(|i| cov[(i, i)].max(0.0).sqrt());
    let mut nuisance = BTreeMap::new();
    for (block, range) in layout.slices() {
        if matches!(block, ParamBlock::Xi | ParamBlock::Omega | ParamBlock::Theta | ParamBlock::Beta) {
            nuisance.insert(block.name().to_string(), delta[range.clone()].to_vec());
        }
    }
    let k = cov.nrows();
    FitResult {
        estimator: kind,
        phi_hat,
        zeta_hat,
        nuisance,
        param_names: stacked.param_names(data.covariate_names(), data.instrument_names()),
        covariance: (0..k).map(|i| (0..k).map(|j| cov[(i, j)]).collect()).collect(),
        se_phi,
        se_zeta,
        ci_phi: wald_interval(phi_hat, se_phi),
        ci_zeta: zeta_hat.zip(se_zeta).map(|(z, s)| wald_interval(z, s)),
        p_value_zeta: zeta_hat.zip(se_zeta).map(|(z, s)| wald_p_value(z, s)),
        diagnostics,
        notes,
    }
}

fn converged_trivially() -> SolveDiagnostics {
    SolveDiagnostics {
        converged: true,
        ..Default::default()
    }
}

/// Fully observed data: every estimator reduces to the sample mean, and the
/// selection parameter is not identified.
fn fully_observed_fit(kind: EstimatorKind, data: &Dataset, config: &ModelConfig) -> Result<FitResult> {
    let choice = InstrumentChoice::default_for(config);
    let stacked = build_stacked_system(StackedKind::Mean, config, &choice, None)?;
    let notes = vec!["all outcomes observed: estimate is the sample mean; selection parameter not identified".into()];
    finish(kind, &stacked, data, None, None, converged_trivially(), notes, &SolveOptions::default())
}

/// Runs one estimator end to end.
pub fn estimate(
    data: &Dataset,
    config: &ModelConfig,
    kind: EstimatorKind,
    choice: &InstrumentChoice,
    opts: &SolveOptions,
) -> Result<FitResult> {
    opts.validate()?;
    config.validate(data.n_covariates(), data.n_instruments())?;
    if data.n_observed() == 0 {
        return Err(Error::InsufficientData("no observed outcomes".into()));
    }
    if data.fully_observed() {
        return fully_observed_fit(kind, data, config);
    }
    match kind {
        EstimatorKind::Cc => {
            let stacked = build_stacked_system(StackedKind::CompleteCase, config, choice, None)?;
            finish(kind, &stacked, data, None, None, converged_trivially(), Vec::new(), opts)
        }
        EstimatorKind::MarIpw => {
            let response = fit_response_model(data, opts)?;
            let stacked = build_stacked_system(StackedKind::MarIpw, config, choice, Some(response))?;
            finish(kind, &stacked, data, None, None, converged_trivially(), Vec::new(), opts)
        }
        EstimatorKind::IvIpw => {
            let fit = fit_ipw_model(data, config, choice, opts)?;
            let stacked = build_stacked_system(StackedKind::Ipw, &fit.config, choice, None)?;
            let params = stacked_est_params(&stacked, &[ParamBlock::Omega, ParamBlock::Zeta]);
            let est = Some((RowBlock::IpwBaseline, params));
            finish(kind, &stacked, data, fit.weight.as_ref(), est, fit.diagnostics, fit.notes, opts)
        }
        EstimatorKind::IvOr => {
            let fit = fit_or_model(data, config, choice, opts)?;
            let stacked = build_stacked_system(StackedKind::Or, &fit.config, choice, None)?;
            let params = stacked_est_params(&stacked, &[ParamBlock::Zeta]);
            let est = Some((RowBlock::OrSelection, params));
            finish(kind, &stacked, data, fit.weight.as_ref(), est, fit.diagnostics, fit.notes, opts)
        }
        EstimatorKind::IvDr => {
            let fit = fit_dr_model(data, config, choice, opts)?;
            let stacked = build_stacked_system(StackedKind::Dr, &fit.config, choice, None)?;
            let params = stacked_est_params(&stacked, &[ParamBlock::Omega, ParamBlock::Zeta]);
            let est = Some((RowBlock::IpwBaseline, params));
            finish(kind, &stacked, data, fit.weight.as_ref(), est, fit.diagnostics, fit.notes, opts)
        }
        EstimatorKind::IvEff => crate::efficiency::estimate_efficient(data, config, choice, opts),
    }
}

/// Union of the ranges of `blocks`, which must be adjacent in the layout.
fn stacked_est_params(stacked: &MomentSystem, blocks: &[ParamBlock]) -> Range<usize> {
    let ranges: Vec<Range<usize>> = blocks
        .iter()
        .map(|b| stacked.layout().range(*b).expect("block present"))
        .collect();
    ranges[0].start..ranges[ranges.len() - 1].end
}

/// IV-IPW with the selection parameter held fixed at `zeta`: `omega` solves
/// the `h1` rows alone and the instrument law is not used.
pub fn estimate_ipw_fixed_zeta(
    data: &Dataset,
    config: &ModelConfig,
    choice: &InstrumentChoice,
    zeta: f64,
    opts: &SolveOptions,
) -> Result<FitResult> {
    opts.validate()?;
    config.validate(data.n_covariates(), data.n_instruments())?;
    if data.n_observed() == 0 {
        return Err(Error::InsufficientData("no observed outcomes".into()));
    }
    let mut cfg = config.clone();
    cfg.selection_bias.zeta = zeta;
    let sys = MomentSystem::new(cfg.clone(), choice.clone(), None, vec![RowBlock::IpwBaseline], &[ParamBlock::Omega])?;
    let (omega, diagnostics) = solve_root(&sys, data, &cfg.baseline.omega, opts)?;
    cfg.baseline.omega = omega;
    let stacked = build_stacked_system(StackedKind::IpwFixedZeta, &cfg, choice, None)?;
    let mut fit = finish(
        EstimatorKind::IvIpw,
        &stacked,
        data,
        None,
        None,
        diagnostics,
        vec![format!("selection parameter fixed at {zeta}")],
        opts,
    )?;
    fit.zeta_hat = Some(zeta);
    Ok(fit)
}
