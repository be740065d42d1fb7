//! Monte Carlo study: data generator, analysis scenarios and replication loop.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorKind};
use crate::model::{
    expit, BaselineMissingnessSpec, CompleteCaseOutcomeSpec, Design, IvDensitySpec, ModelConfig, SelectionBiasSpec,
    Var,
};
use crate::moments::InstrumentChoice;
use crate::solver::SolveOptions;
use crate::stats::{mean, quantile, sample_sd};

/// E(Y) under the generator, by exact summation over (x1, x2).
pub const TRUE_PHI: f64 = 0.768772070423771;
pub const TRUE_ZETA: f64 = 1.8;

/// Share of failed replicates above which a report carries a warning.
const FAILURE_WARNING_SHARE: f64 = 0.02;

/// One fully observed draw before the outcome is blanked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullRow {
    pub x1: f64,
    pub x2: f64,
    pub z: f64,
    pub y: f64,
    pub r: f64,
}

fn bernoulli(rng: &mut ChaCha8Rng, p: f64) -> f64 {
    if rng.gen::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

/// Draws `n` rows column by column in the order X1, X2, Z, Y, R.
pub fn generate_full(n: usize, seed: u64) -> Vec<FullRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x1: Vec<f64> = (0..n).map(|_| bernoulli(&mut rng, 0.4)).collect();
    let x2: Vec<f64> = (0..n).map(|_| bernoulli(&mut rng, 0.6)).collect();
    let z: Vec<f64> = (0..n)
        .map(|i| bernoulli(&mut rng, expit(0.4 + 0.9 * x1[i] - 0.7 * x2[i] - 0.8 * x1[i] * x2[i])))
        .collect();
    let y: Vec<f64> = (0..n)
        .map(|i| bernoulli(&mut rng, expit(1.0 - 1.2 * x1[i] + 1.5 * x2[i])))
        .collect();
    let r: Vec<f64> = (0..n)
        .map(|i| bernoulli(&mut rng, expit(-1.5 + 2.5 * z[i] + 0.8 * x1[i] - 1.2 * x2[i] + 1.8 * y[i])))
        .collect();
    (0..n)
        .map(|i| FullRow { x1: x1[i], x2: x2[i], z: z[i], y: y[i], r: r[i] })
        .collect()
}

/// Simulated dataset with columns `x1, x2` (covariates) and `z` (instrument).
pub fn generate_dataset(n: usize, seed: u64) -> Dataset {
    let obs = generate_full(n, seed)
        .into_iter()
        .map(|row| {
            let (x, z) = (vec![row.x1, row.x2], vec![row.z]);
            if row.r == 1.0 {
                Observation::observed(x, z, row.y)
            } else {
                Observation::missing(x, z)
            }
        })
        .collect();
    Dataset::new(obs, vec!["x1".into(), "x2".into()], vec!["z".into()]).expect("generator output is well formed")
}

/// Working models at the generator's true parameter values.
pub fn generator_config() -> ModelConfig {
    let mut c = ModelConfig::new(
        SelectionBiasSpec::linear(TRUE_ZETA),
        BaselineMissingnessSpec::new(Design::main_effects(&[Var::Z(0), Var::X(0), Var::X(1)])),
        CompleteCaseOutcomeSpec::new(Design::saturated(&[Var::X(0), Var::X(1), Var::Z(0)])),
        IvDensitySpec::new(vec![Design::saturated(&[Var::X(0), Var::X(1)])]),
    );
    c.baseline.omega = vec![-1.5, 2.5, 0.8, -1.2];
    c.iv.xi = vec![0.4, 0.9, -0.7, -0.8];
    c.outcome.theta = true_complete_case_theta(&c);
    c
}

/// Saturated complete-case coefficients implied by the generator, from the
/// exact cell probabilities P(Y = 1 | R = 1, x1, x2, z).
fn true_complete_case_theta(c: &ModelConfig) -> Vec<f64> {
    let cell = |x1: f64, x2: f64, z: f64| {
        let py = expit(1.0 - 1.2 * x1 + 1.5 * x2);
        let pr1 = c
            .propensity_with(&c.baseline.omega, TRUE_ZETA, &[x1, x2], 1.0, &[z])
            .expect("positive");
        let pr0 = c
            .propensity_with(&c.baseline.omega, TRUE_ZETA, &[x1, x2], 0.0, &[z])
            .expect("positive");
        let p = py * pr1 / (py * pr1 + (1.0 - py) * pr0);
        (p / (1.0 - p)).ln()
    };
    // saturated coefficients from cell log-odds by inclusion-exclusion
    let l = |a, b, c| cell(a, b, c);
    let t0 = l(0., 0., 0.);
    let t1 = l(1., 0., 0.) - t0;
    let t2 = l(0., 1., 0.) - t0;
    let t3 = l(0., 0., 1.) - t0;
    let t12 = l(1., 1., 0.) - t0 - t1 - t2;
    let t13 = l(1., 0., 1.) - t0 - t1 - t3;
    let t23 = l(0., 1., 1.) - t0 - t2 - t3;
    let t123 = l(1., 1., 1.) - t0 - t1 - t2 - t3 - t12 - t13 - t23;
    vec![t0, t1, t2, t3, t12, t13, t23, t123]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// Working propensity design `(1, X1, Z, X1 Z)`.
    MisspecPropensity,
    /// Working outcome design `(1, X1)`.
    MisspecOutcome,
    CorrectBoth,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::MisspecPropensity => "misspec-propensity",
            ScenarioKind::MisspecOutcome => "misspec-outcome",
            ScenarioKind::CorrectBoth => "correct-both",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "i" | "1" | "misspec-propensity" => ScenarioKind::MisspecPropensity,
            "ii" | "2" | "misspec-outcome" => ScenarioKind::MisspecOutcome,
            "iii" | "3" | "correct-both" | "correct" => ScenarioKind::CorrectBoth,
            _ => return Err(Error::InvalidInput(format!("unknown scenario `{s}`"))),
        })
    }
}

/// Analysis working models for a scenario, all coefficients zero.
pub fn scenario_config(kind: ScenarioKind) -> ModelConfig {
    let correct_baseline = Design::main_effects(&[Var::Z(0), Var::X(0), Var::X(1)]);
    let saturated_outcome = Design::saturated(&[Var::X(0), Var::X(1), Var::Z(0)]);
    let (baseline, outcome) = match kind {
        ScenarioKind::CorrectBoth => (correct_baseline, saturated_outcome),
        ScenarioKind::MisspecPropensity => (Design::saturated(&[Var::X(0), Var::Z(0)]), saturated_outcome),
        ScenarioKind::MisspecOutcome => (correct_baseline, Design::main_effects(&[Var::X(0)])),
    };
    ModelConfig::new(
        SelectionBiasSpec::linear(0.0),
        BaselineMissingnessSpec::new(baseline),
        CompleteCaseOutcomeSpec::new(outcome),
        IvDensitySpec::new(vec![Design::saturated(&[Var::X(0), Var::X(1)])]),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    pub replications: usize,
    pub base_seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(Error::InvalidInput("scenario sample size must be at least 100".into()));
        }
        if self.replications < 1 {
            return Err(Error::InvalidInput("at least one replication is required".into()));
        }
        Ok(())
    }
}

/// One estimator's output on one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateEstimate {
    pub phi: f64,
    pub se_phi: f64,
    pub zeta: Option<f64>,
    pub se_zeta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub mc_sd: f64,
    pub mean_se: f64,
    pub coverage: f64,
    pub n_used: usize,
    /// 25%, 50% and 75% quantiles of the estimates.
    pub quartiles: [f64; 3],
}

impl ParamSummary {
    fn from_pairs(truth: f64, pairs: &[(f64, f64)]) -> Option<Self> {
        if pairs.is_empty() {
            return None;
        }
        let est: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ses: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let covered = pairs
            .iter()
            .filter(|(e, s)| (e - truth).abs() <= crate::stats::Z_975 * s)
            .count();
        let m = mean(&est);
        Some(Self {
            truth,
            mean: m,
            bias: m - truth,
            mc_sd: sample_sd(&est),
            mean_se: mean(&ses),
            coverage: covered as f64 / pairs.len() as f64,
            n_used: pairs.len(),
            quartiles: [quantile(&est, 0.25), quantile(&est, 0.5), quantile(&est, 0.75)],
        })
    }

    /// Monte Carlo standard error of the mean estimate.
    pub fn mc_se(&self) -> f64 {
        self.mc_sd / (self.n_used as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub phi: Option<ParamSummary>,
    pub zeta: Option<ParamSummary>,
    pub n_failed: usize,
    /// Per-replicate results, `None` where the estimator failed.
    pub replicates: Vec<Option<ReplicateEstimate>>,
    /// Distinct failure messages with their counts.
    pub failures: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario: ScenarioSpec,
    pub true_phi: f64,
    pub true_zeta: f64,
    pub estimators: Vec<EstimatorSummary>,
    pub warnings: Vec<String>,
}

impl SimulationReport {
    pub fn summary(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|s| s.estimator == kind)
    }
}

type Outcome = std::result::Result<ReplicateEstimate, String>;

fn run_one(data: &Dataset, config: &ModelConfig, choice: &InstrumentChoice, kind: EstimatorKind, opts: &SolveOptions) -> Outcome {
    match estimate(data, config, kind, choice, opts) {
        Ok(fit) if fit.diagnostics.converged => Ok(ReplicateEstimate {
            phi: fit.phi_hat,
            se_phi: fit.se_phi,
            zeta: fit.zeta_hat,
            se_zeta: fit.se_zeta,
        }),
        Ok(_) => Err("solver did not converge".to_string()),
        Err(e) => Err(e.to_string()),
    }
}

/// Runs every requested estimator on `replications` simulated datasets,
/// replicate `r` using seed `base_seed + r`.
pub fn run_study(scenario: &ScenarioSpec, estimators: &[EstimatorKind], opts: &SolveOptions) -> Result<SimulationReport> {
    scenario.validate()?;
    if estimators.is_empty() {
        return Err(Error::InvalidInput("no estimators requested".into()));
    }
    let config = scenario_config(scenario.kind);
    let choice = InstrumentChoice::default_for(&config);
    let results: Vec<Vec<Outcome>> = (0..scenario.replications)
        .into_par_iter()
        .map(|r| {
            let data = generate_dataset(scenario.n, scenario.base_seed.wrapping_add(r as u64));
            estimators
                .iter()
                .map(|&k| run_one(&data, &config, &choice, k, opts))
                .collect()
        })
        .collect();

    let mut summaries = Vec::with_capacity(estimators.len());
    let mut warnings = Vec::new();
    for (e, &kind) in estimators.iter().enumerate() {
        let outcomes: Vec<&Outcome> = results.iter().map(|row| &row[e]).collect();
        let replicates: Vec<Option<ReplicateEstimate>> = outcomes.iter().map(|o| o.as_ref().ok().copied()).collect();
        let ok: Vec<ReplicateEstimate> = replicates.iter().flatten().copied().collect();
        let n_failed = replicates.len() - ok.len();
        let mut failures: Vec<(String, usize)> = Vec::new();
        for msg in outcomes.iter().filter_map(|o| o.as_ref().err()) {
            match failures.iter_mut().find(|(m, _)| m == msg) {
                Some(entry) => entry.1 += 1,
                None => failures.push((msg.clone(), 1)),
            }
        }
        if n_failed as f64 > FAILURE_WARNING_SHARE * scenario.replications as f64 {
            warnings.push(format!(
                "{kind}: {n_failed} of {} replicates failed and were excluded",
                scenario.replications
            ));
        }
        let phi_pairs: Vec<(f64, f64)> = ok.iter().map(|r| (r.phi, r.se_phi)).collect();
        let zeta_pairs: Vec<(f64, f64)> = ok.iter().filter_map(|r| r.zeta.zip(r.se_zeta)).collect();
        summaries.push(EstimatorSummary {
            estimator: kind,
            phi: ParamSummary::from_pairs(TRUE_PHI, &phi_pairs),
            zeta: ParamSummary::from_pairs(TRUE_ZETA, &zeta_pairs),
            n_failed,
            replicates,
            failures,
        });
    }
    Ok(SimulationReport {
        scenario: scenario.clone(),
        true_phi: TRUE_PHI,
        true_zeta: TRUE_ZETA,
        estimators: summaries,
        warnings,
    })
}
