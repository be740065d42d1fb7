//! One-step locally efficient estimators for a binary outcome and a single
//! binary instrument.
//!
//! All conditional expectations given `X` are exact sums over the support of
//! `(Z, R, Y)` under the fitted working models; the covariate law is left
//! empirical.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::estimators::{fit_dr_model, EstimatorKind, FitResult};
use crate::model::ModelConfig;
use crate::moments::InstrumentChoice;
use crate::solver::SolveOptions;
use crate::stats::{grouped_sum, mean, wald_interval, wald_p_value};

/// Working models at the fitted intersection submodel.
#[derive(Debug, Clone)]
pub struct IntersectionModelFit {
    pub config: ModelConfig,
}

/// Exact conditional laws given one covariate value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellTable {
    /// P(Z = 1 | x)
    pub q1: f64,
    /// P(R = 1 | x, z), indexed by z
    pub pr1: [f64; 2],
    /// P(Y = 1 | R = 1, x, z)
    pub p_obs: [f64; 2],
    /// P(Y = 1 | R = 0, x, z)
    pub p_mis: [f64; 2],
    /// pi(x, y, z), indexed by [z][y]
    pub pi: [[f64; 2]; 2],
    /// E(Y | x)
    pub e_y: f64,
    /// E(Z | x)
    pub e_z: f64,
}

impl CellTable {
    /// Probability of each support point `(z, r, y)`, with `y = None` for
    /// `r = 0`.
    pub fn cells(&self) -> [(f64, f64, Option<f64>); 6] {
        let pz = |z: usize| if z == 1 { self.q1 } else { 1.0 - self.q1 };
        let mut out = [(0.0, 0.0, None); 6];
        let mut k = 0;
        for z in 0..2 {
            let zf = z as f64;
            let r1 = pz(z) * self.pr1[z];
            out[k] = (r1 * self.p_obs[z], zf, Some(1.0));
            out[k + 1] = (r1 * (1.0 - self.p_obs[z]), zf, Some(0.0));
            out[k + 2] = (pz(z) * (1.0 - self.pr1[z]), zf, None);
            k += 3;
        }
        out
    }

    /// `E[(Y - E(Y|x))(Z - E(Z|x)) | x, R = 0, Z = z]`.
    fn a(&self, z: f64) -> f64 {
        (z - self.e_z) * (self.p_mis[z as usize] - self.e_y)
    }

    /// The W statistic at one support point.
    pub fn w(&self, z: f64, y: Option<f64>) -> f64 {
        let a = self.a(z);
        match y {
            Some(y) => {
                let pi = self.pi[z as usize][y as usize];
                ((y - self.e_y) * (z - self.e_z) - (1.0 - pi) * a) / pi
            }
            None => a,
        }
    }
}

impl IntersectionModelFit {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.iv.n_instruments() != 1 {
            return Err(Error::InvalidInput(
                "the efficient estimator is implemented for a single binary instrument".into(),
            ));
        }
        Ok(Self { config })
    }

    /// Exact conditional laws at covariate value `x` and selection parameter `zeta`.
    pub fn table(&self, x: &[f64], zeta: f64) -> Result<CellTable> {
        let cfg = &self.config;
        let q1 = cfg.iv.component_prob_with(&cfg.iv.xi, 0, x);
        let mut pr1 = [0.0; 2];
        let mut p_obs = [0.0; 2];
        let mut p_mis = [0.0; 2];
        let mut pi = [[0.0; 2]; 2];
        for zi in 0..2 {
            let z = [zi as f64];
            p_obs[zi] = cfg.outcome.prob_with(&cfg.outcome.theta, x, &z);
            p_mis[zi] = cfg.tilted_prob_one_with(&cfg.outcome.theta, zeta, x, &z);
            for y in 0..2 {
                pi[zi][y] = cfg.propensity_with(&cfg.baseline.omega, zeta, x, y as f64, &z)?;
            }
            // complete-case law reweighted by 1 / pi renormalizes to the full law
            pr1[zi] = 1.0 / (p_obs[zi] / pi[zi][1] + (1.0 - p_obs[zi]) / pi[zi][0]);
        }
        let mut e_y = 0.0;
        for zi in 0..2 {
            let pz = if zi == 1 { q1 } else { 1.0 - q1 };
            e_y += pz * (pr1[zi] * p_obs[zi] + (1.0 - pr1[zi]) * p_mis[zi]);
        }
        Ok(CellTable { q1, pr1, p_obs, p_mis, pi, e_y, e_z: q1 })
    }

    /// Efficient-score coefficient `E[dW/dzeta | x] / E[W^2 | x]`, zero when
    /// `W` vanishes almost surely given `x`.
    fn score_coefficient(&self, x: &[f64], zeta: f64, h: f64) -> Result<f64> {
        let t = self.table(x, zeta)?;
        let tp = self.table(x, zeta + h)?;
        let tm = self.table(x, zeta - h)?;
        let mut ew2 = 0.0;
        let mut edw = 0.0;
        for (p, z, y) in t.cells() {
            let w = t.w(z, y);
            ew2 += p * w * w;
            edw += p * (tp.w(z, y) - tm.w(z, y)) / (2.0 * h);
        }
        Ok(if ew2 > 0.0 { edw / ew2 } else { 0.0 })
    }
}

fn check_support(data: &Dataset) -> Result<()> {
    data.require_binary_instruments()?;
    data.require_binary_outcome()?;
    if data.n_instruments() != 1 {
        return Err(Error::InvalidInput(
            "the efficient estimator is implemented for a single binary instrument".into(),
        ));
    }
    Ok(())
}

/// W evaluated at one observation.
pub fn compute_w(fit: &IntersectionModelFit, obs: &Observation, zeta: f64) -> Result<f64> {
    let t = fit.table(&obs.x, zeta)?;
    Ok(t.w(obs.z[0], obs.y))
}

/// Covariate values used as cache keys.
fn x_key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Per-observation efficient scores at `zeta`.
fn efficient_scores(data: &Dataset, fit: &IntersectionModelFit, zeta: f64, h: f64) -> Result<Vec<f64>> {
    let mut coef: HashMap<Vec<u64>, (f64, CellTable)> = HashMap::new();
    let mut out = Vec::with_capacity(data.n());
    for obs in data.observations() {
        let key = x_key(&obs.x);
        if !coef.contains_key(&key) {
            let c = fit.score_coefficient(&obs.x, zeta, h)?;
            let t = fit.table(&obs.x, zeta)?;
            coef.insert(key.clone(), (c, t));
        }
        let (c, t) = &coef[&key];
        out.push(c * t.w(obs.z[0], obs.y));
    }
    Ok(out)
}

fn mean_score(data: &Dataset, fit: &IntersectionModelFit, zeta: f64, h: f64) -> Result<f64> {
    let scores = efficient_scores(data, fit, zeta, h)?;
    let total = grouped_sum(&scores, data.groups(), 1, |s, buf: &mut [f64]| {
        buf[0] = *s;
        Ok::<(), Error>(())
    })?;
    Ok(total[0] / data.n() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneStep {
    pub zeta: f64,
    pub mean_score: f64,
    pub derivative: f64,
    /// Plug-in influence values `-ES_i / derivative`, evaluated at the
    /// updated `zeta`.
    pub influence: Vec<f64>,
}

/// One Newton step from `zeta_dr` along the mean efficient score.
pub fn one_step_zeta(data: &Dataset, fit: &IntersectionModelFit, zeta_dr: f64, opts: &SolveOptions) -> Result<OneStep> {
    check_support(data)?;
    let inner = |z: f64| opts.fd_step_scale * z.abs().max(1.0);
    let s0 = mean_score(data, fit, zeta_dr, inner(zeta_dr))?;
    let outer = f64::EPSILON.powf(0.25) * zeta_dr.abs().max(1.0);
    let sp = mean_score(data, fit, zeta_dr + outer, inner(zeta_dr + outer))?;
    let sm = mean_score(data, fit, zeta_dr - outer, inner(zeta_dr - outer))?;
    let derivative = (sp - sm) / (2.0 * outer);
    let zeta = if s0 == 0.0 {
        zeta_dr
    } else {
        if !(derivative.abs() >= 1e-12) {
            return Err(Error::SingularUpdate { derivative });
        }
        zeta_dr - s0 / derivative
    };
    let influence = if derivative.abs() >= 1e-12 {
        efficient_scores(data, fit, zeta, inner(zeta))?
            .into_iter()
            .map(|s| -s / derivative)
            .collect()
    } else {
        vec![0.0; data.n()]
    };
    Ok(OneStep { zeta, mean_score: s0, derivative, influence })
}

/// How `E[. | X]` is evaluated in the projection term of the efficient
/// mean estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConditionalMode {
    /// Exact sums under the fitted working models.
    Model,
    /// Sample averages within each distinct covariate value.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficientPhi {
    pub phi: f64,
    pub variance: f64,
    /// `G_i - E[G W | X_i] / E[W^2 | X_i] * W_i`
    pub summand: Vec<f64>,
    pub w: Vec<f64>,
}

/// `G^DR(u = Y)` for one observation, in the same arithmetic as the DR target row.
fn g_dr_value(cfg: &ModelConfig, obs: &Observation, zeta: f64) -> Result<f64> {
    let m0 = cfg.tilted_prob_one_with(&cfg.outcome.theta, zeta, &obs.x, &obs.z);
    Ok(match obs.y {
        Some(y) => {
            let w = 1.0 / cfg.propensity_with(&cfg.baseline.omega, zeta, &obs.x, y, &obs.z)?;
            w * (y - m0) + m0
        }
        None => m0,
    })
}

/// Mean estimator `P_n[G - E[G W | X] / E[W^2 | X] W]` at `zeta`.
pub fn efficient_phi(data: &Dataset, fit: &IntersectionModelFit, zeta: f64, mode: ConditionalMode) -> Result<EfficientPhi> {
    check_support(data)?;
    let cfg = &fit.config;
    let mut g = Vec::with_capacity(data.n());
    let mut w = Vec::with_capacity(data.n());
    let mut tables: HashMap<Vec<u64>, CellTable> = HashMap::new();
    for obs in data.observations() {
        let key = x_key(&obs.x);
        if !tables.contains_key(&key) {
            tables.insert(key.clone(), fit.table(&obs.x, zeta)?);
        }
        g.push(g_dr_value(cfg, obs, zeta)?);
        w.push(tables[&key].w(obs.z[0], obs.y));
    }

    let mut coef: HashMap<Vec<u64>, f64> = HashMap::new();
    match mode {
        ConditionalMode::Model => {
            for (key, t) in &tables {
                let x: Vec<f64> = key.iter().map(|b| f64::from_bits(*b)).collect();
                let mut egw = 0.0;
                let mut ew2 = 0.0;
                for (p, z, y) in t.cells() {
                    let wv = t.w(z, y);
                    let obs = Observation { x: x.clone(), z: vec![z], y };
                    egw += p * g_dr_value(cfg, &obs, zeta)? * wv;
                    ew2 += p * wv * wv;
                }
                coef.insert(key.clone(), if ew2 > 0.0 { egw / ew2 } else { 0.0 });
            }
        }
        ConditionalMode::Empirical => {
            let mut sums: HashMap<Vec<u64>, (f64, f64)> = HashMap::new();
            for (i, obs) in data.observations().iter().enumerate() {
                let e = sums.entry(x_key(&obs.x)).or_insert((0.0, 0.0));
                e.0 += g[i] * w[i];
                e.1 += w[i] * w[i];
            }
            for (key, (gw, w2)) in sums {
                coef.insert(key, if w2 > 0.0 { gw / w2 } else { 0.0 });
            }
        }
    }

    let summand: Vec<f64> = data
        .observations()
        .iter()
        .enumerate()
        .map(|(i, obs)| g[i] - coef[&x_key(&obs.x)] * w[i])
        .collect();
    // same grouping and order as the DR target mean, so W = 0 reproduces it
    let total = grouped_sum(&summand, data.groups(), 1, |s, buf: &mut [f64]| {
        buf[0] = *s;
        Ok::<(), Error>(())
    })?;
    let n = data.n() as f64;
    let phi = total[0] / n;
    let variance = crate::stats::sample_variance(&summand) / n;
    Ok(EfficientPhi { phi, variance, summand, w })
}

/// IV-EFF pipeline: DR fit, one-step update of `zeta`, efficient mean.
pub fn estimate_efficient(
    data: &Dataset,
    config: &ModelConfig,
    choice: &InstrumentChoice,
    opts: &SolveOptions,
) -> Result<FitResult> {
    check_support(data)?;
    let dr = fit_dr_model(data, config, choice, opts)?;
    let zeta_dr = dr.config.selection_bias.zeta;
    let fit = IntersectionModelFit::new(dr.config.clone())?;
    let step = one_step_zeta(data, &fit, zeta_dr, opts)?;
    let eff = efficient_phi(data, &fit, step.zeta, ConditionalMode::Model)?;

    // the summand alone treats zeta as known; carry its influence through
    // the derivative of the mean estimator
    let h = opts.fd_step_scale * step.zeta.abs().max(1.0);
    let dphi = (efficient_phi(data, &fit, step.zeta + h, ConditionalMode::Model)?.phi
        - efficient_phi(data, &fit, step.zeta - h, ConditionalMode::Model)?.phi)
        / (2.0 * h);
    let phi_influence: Vec<f64> = eff
        .summand
        .iter()
        .zip(&step.influence)
        .map(|(s, z)| s + dphi * z)
        .collect();

    let n = data.n() as f64;
    let var_zeta = crate::stats::sample_variance(&step.influence) / n;
    let var_phi = crate::stats::sample_variance(&phi_influence) / n;
    let (mz, mp) = (mean(&step.influence), mean(&phi_influence));
    let cov = step
        .influence
        .iter()
        .zip(&phi_influence)
        .map(|(a, b)| (a - mz) * (b - mp))
        .sum::<f64>()
        / (n - 1.0)
        / n;
    let se_zeta = var_zeta.max(0.0).sqrt();
    let se_phi = var_phi.max(0.0).sqrt();

    let mut nuisance = std::collections::BTreeMap::new();
    nuisance.insert("xi".to_string(), dr.config.iv.xi.clone());
    nuisance.insert("omega".to_string(), dr.config.baseline.omega.clone());
    nuisance.insert("theta".to_string(), dr.config.outcome.theta.clone());
    let mut notes = dr.notes;
    notes.push(format!("one-step update from DR estimate zeta = {zeta_dr:.6}; plug-in variances"));
    Ok(FitResult {
        estimator: EstimatorKind::IvEff,
        phi_hat: eff.phi,
        zeta_hat: Some(step.zeta),
        nuisance,
        param_names: vec!["zeta".into(), "phi".into()],
        covariance: vec![vec![var_zeta, cov], vec![cov, var_phi]],
        se_phi,
        se_zeta: Some(se_zeta),
        ci_phi: wald_interval(eff.phi, se_phi),
        ci_zeta: Some(wald_interval(step.zeta, se_zeta)),
        p_value_zeta: Some(wald_p_value(step.zeta, se_zeta)),
        diagnostics: dr.diagnostics,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BaselineMissingnessSpec, CompleteCaseOutcomeSpec, Design, IvDensitySpec, SelectionBiasSpec, Var};

    fn config() -> ModelConfig {
        let mut c = ModelConfig::new(
            SelectionBiasSpec::linear(0.9),
            BaselineMissingnessSpec::new(Design::main_effects(&[Var::Z(0), Var::X(0)])),
            CompleteCaseOutcomeSpec::new(Design::main_effects(&[Var::X(0), Var::Z(0)])),
            IvDensitySpec::new(vec![Design::main_effects(&[Var::X(0)])]),
        );
        c.baseline.omega = vec![-0.3, 1.1, 0.4];
        c.outcome.theta = vec![0.2, -0.5, 0.3];
        c.iv.xi = vec![0.1, -0.6];
        c
    }

    #[test]
    fn cell_probabilities_sum_to_one() {
        let fit = IntersectionModelFit::new(config()).unwrap();
        for x in [0.0, 1.0] {
            let t = fit.table(&[x], 0.9).unwrap();
            let s: f64 = t.cells().iter().map(|c| c.0).sum();
            assert!((s - 1.0).abs() < 1e-14);
            assert!(t.cells().iter().all(|c| (0.0..=1.0).contains(&c.0)));
        }
    }

    #[test]
    fn table_matches_brute_force_full_law() {
        // rebuild P(z, r, y | x) from the full law f(y | x, z) pi(x, y, z)
        let cfg = config();
        let fit = IntersectionModelFit::new(cfg.clone()).unwrap();
        let x = [1.0];
        let zeta = 0.9;
        let t = fit.table(&x, zeta).unwrap();
        for zi in 0..2 {
            let z = [zi as f64];
            let p = cfg.outcome.prob_with(&cfg.outcome.theta, &x, &z);
            let pi1 = cfg.propensity_with(&cfg.baseline.omega, zeta, &x, 1.0, &z).unwrap();
            let pi0 = cfg.propensity_with(&cfg.baseline.omega, zeta, &x, 0.0, &z).unwrap();
            // full law of Y given (x, z) is proportional to f(y | R = 1) / pi(y)
            let f1 = p / pi1;
            let f0 = (1.0 - p) / pi0;
            let fy1 = f1 / (f1 + f0);
            let pr1 = fy1 * pi1 + (1.0 - fy1) * pi0;
            assert!((t.pr1[zi] - pr1).abs() < 1e-12);
            let mis1 = fy1 * (1.0 - pi1) / (1.0 - pr1);
            assert!((t.p_mis[zi] - mis1).abs() < 1e-12);
            let obs1 = fy1 * pi1 / pr1;
            assert!((t.p_obs[zi] - obs1).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_instrument_gives_zero_w() {
        let mut cfg = config();
        cfg.iv = IvDensitySpec::new(vec![Design::intercept_only()]);
        cfg.iv.xi = vec![f64::INFINITY];
        let fit = IntersectionModelFit::new(cfg).unwrap();
        for (x, y) in [(0.0, Some(1.0)), (1.0, Some(0.0)), (1.0, None)] {
            let obs = Observation { x: vec![x], z: vec![1.0], y };
            assert_eq!(compute_w(&fit, &obs, 0.4).unwrap(), 0.0);
        }
    }
}
