//! Parametric pieces of the selection-model factorization.
//!
//! The joint law of `(R, Y, Z)` given `X` is assembled from four working
//! models: the selection-bias function `eta(x, y, z; zeta)` (log odds ratio of
//! response between outcome level `y` and level 0), the baseline response
//! log-odds `lambda(x, z; omega)` at `Y = 0`, the complete-case outcome law
//! `f(y | R = 1, x, z; theta)` and the instrument law `q(z | x; xi)`.
//! Every evaluation here is a pure function of the configuration and inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default lower bound on the extended propensity score.
pub const DEFAULT_POSITIVITY_FLOOR: f64 = 1e-6;

/// Logistic function, evaluated without overflow for large |t|.
#[inline]
pub fn expit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A variable referenced by a design term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Var {
    X(usize),
    Z(usize),
}

impl Var {
    #[inline]
    fn value(self, x: &[f64], z: &[f64]) -> f64 {
        match self {
            Var::X(i) => x[i],
            Var::Z(i) => z[i],
        }
    }
}

/// Product of variables; the empty product is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Term(pub Vec<Var>);

impl Term {
    pub fn intercept() -> Self {
        Term(Vec::new())
    }

    pub fn x(i: usize) -> Self {
        Term(vec![Var::X(i)])
    }

    pub fn z(i: usize) -> Self {
        Term(vec![Var::Z(i)])
    }

    pub fn product(vars: &[Var]) -> Self {
        Term(vars.to_vec())
    }

    #[inline]
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        self.0.iter().map(|v| v.value(x, z)).product()
    }

    pub fn uses_instruments(&self) -> bool {
        self.0.iter().any(|v| matches!(v, Var::Z(_)))
    }

    pub fn label(&self, covariates: &[String], instruments: &[String]) -> String {
        if self.0.is_empty() {
            return "(Intercept)".to_string();
        }
        let name = |v: &Var| match *v {
            Var::X(i) => covariates.get(i).cloned().unwrap_or_else(|| format!("x{}", i + 1)),
            Var::Z(i) => instruments.get(i).cloned().unwrap_or_else(|| format!("z{}", i + 1)),
        };
        self.0.iter().map(name).collect::<Vec<_>>().join(":")
    }

    fn max_indices(&self) -> (Option<usize>, Option<usize>) {
        let mut mx = None;
        let mut mz = None;
        for v in &self.0 {
            match *v {
                Var::X(i) => mx = Some(mx.map_or(i, |m: usize| m.max(i))),
                Var::Z(i) => mz = Some(mz.map_or(i, |m: usize| m.max(i))),
            }
        }
        (mx, mz)
    }
}

/// An explicit list of design terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub terms: Vec<Term>,
}

impl Design {
    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn intercept_only() -> Self {
        Self::new(vec![Term::intercept()])
    }

    /// Intercept followed by one main effect per variable, in the given order.
    pub fn main_effects(vars: &[Var]) -> Self {
        let mut terms = vec![Term::intercept()];
        terms.extend(vars.iter().map(|&v| Term(vec![v])));
        Self::new(terms)
    }

    /// All products of subsets of `vars`: intercept, main effects, then
    /// two-way, three-way, ... interactions, each level in lexicographic
    /// order of the given variable order.
    pub fn saturated(vars: &[Var]) -> Self {
        let k = vars.len();
        let mut terms = vec![Term::intercept()];
        for size in 1..=k {
            let mut idx: Vec<usize> = (0..size).collect();
            loop {
                terms.push(Term(idx.iter().map(|&i| vars[i]).collect()));
                // next combination
                let mut i = size;
                while i > 0 && idx[i - 1] == k - size + i - 1 {
                    i -= 1;
                }
                if i == 0 {
                    break;
                }
                idx[i - 1] += 1;
                for j in i..size {
                    idx[j] = idx[j - 1] + 1;
                }
            }
        }
        Self::new(terms)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        self.terms.iter().map(|t| t.eval(x, z)).collect()
    }

    #[inline]
    pub fn linear_predictor(&self, coef: &[f64], x: &[f64], z: &[f64]) -> f64 {
        self.terms
            .iter()
            .zip(coef)
            .map(|(t, c)| c * t.eval(x, z))
            .sum()
    }

    pub fn uses_instruments(&self) -> bool {
        self.terms.iter().any(Term::uses_instruments)
    }

    pub fn labels(&self, covariates: &[String], instruments: &[String]) -> Vec<String> {
        self.terms
            .iter()
            .map(|t| t.label(covariates, instruments))
            .collect()
    }

    /// Checks that the design only references existing columns.
    pub fn check_columns(&self, nx: usize, nz: usize) -> Result<()> {
        for t in &self.terms {
            let (mx, mz) = t.max_indices();
            if mx.is_some_and(|i| i >= nx) || mz.is_some_and(|i| i >= nz) {
                return Err(Error::InvalidInput(format!(
                    "design term {:?} references a column outside {nx} covariates / {nz} instruments",
                    t.0
                )));
            }
        }
        Ok(())
    }

    /// Replaces `X(a)` by `X(map[a])` in every term.
    pub fn remap_covariates(&self, map: &[usize]) -> Self {
        Self::new(
            self.terms
                .iter()
                .map(|t| {
                    Term(
                        t.0.iter()
                            .map(|v| match *v {
                                Var::X(i) => Var::X(map[i]),
                                other => other,
                            })
                            .collect(),
                    )
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionBiasForm {
    /// `eta(x, y, z) = zeta * y`.
    LinearInY,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionBiasSpec {
    pub form: SelectionBiasForm,
    pub zeta: f64,
}

impl SelectionBiasSpec {
    pub fn linear(zeta: f64) -> Self {
        Self {
            form: SelectionBiasForm::LinearInY,
            zeta,
        }
    }

    #[inline]
    pub fn eval_with(&self, zeta: f64, _x: &[f64], y: f64, _z: &[f64]) -> f64 {
        match self.form {
            SelectionBiasForm::LinearInY => zeta * y,
        }
    }

    pub fn eval(&self, x: &[f64], y: f64, z: &[f64]) -> f64 {
        self.eval_with(self.zeta, x, y, z)
    }
}

impl Default for SelectionBiasSpec {
    fn default() -> Self {
        Self::linear(0.0)
    }
}

/// Baseline log-odds of response at `Y = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMissingnessSpec {
    pub design: Design,
    pub omega: Vec<f64>,
}

impl BaselineMissingnessSpec {
    /// Design with all coefficients zero.
    pub fn new(design: Design) -> Self {
        let omega = vec![0.0; design.len()];
        Self { design, omega }
    }

    #[inline]
    pub fn lambda_with(&self, omega: &[f64], x: &[f64], z: &[f64]) -> f64 {
        self.design.linear_predictor(omega, x, z)
    }

    pub fn lambda(&self, x: &[f64], z: &[f64]) -> f64 {
        self.lambda_with(&self.omega, x, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeFamily {
    BernoulliLogit,
}

/// Outcome law among complete cases, `f(y | R = 1, x, z; theta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteCaseOutcomeSpec {
    pub design: Design,
    pub theta: Vec<f64>,
    pub family: OutcomeFamily,
}

impl CompleteCaseOutcomeSpec {
    pub fn new(design: Design) -> Self {
        let theta = vec![0.0; design.len()];
        Self {
            design,
            theta,
            family: OutcomeFamily::BernoulliLogit,
        }
    }

    /// P(Y = 1 | R = 1, x, z) under coefficients `theta`.
    #[inline]
    pub fn prob_with(&self, theta: &[f64], x: &[f64], z: &[f64]) -> f64 {
        match self.family {
            OutcomeFamily::BernoulliLogit => expit(self.design.linear_predictor(theta, x, z)),
        }
    }

    pub fn prob(&self, x: &[f64], z: &[f64]) -> f64 {
        self.prob_with(&self.theta, x, z)
    }
}

/// Instrument law given covariates: one logistic component per binary
/// instrument, conditionally independent given `x`. Coefficients of all
/// components are stored back to back in `xi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IvDensitySpec {
    pub designs: Vec<Design>,
    pub xi: Vec<f64>,
}

impl IvDensitySpec {
    pub fn new(designs: Vec<Design>) -> Self {
        let len = designs.iter().map(Design::len).sum();
        Self {
            designs,
            xi: vec![0.0; len],
        }
    }

    pub fn n_instruments(&self) -> usize {
        self.designs.len()
    }

    pub fn n_params(&self) -> usize {
        self.designs.iter().map(Design::len).sum()
    }

    /// Range of `xi` belonging to instrument `k`.
    pub fn component_range(&self, k: usize) -> std::ops::Range<usize> {
        let start: usize = self.designs[..k].iter().map(Design::len).sum();
        start..start + self.designs[k].len()
    }

    /// P(Z_k = 1 | x).
    #[inline]
    pub fn component_prob_with(&self, xi: &[f64], k: usize, x: &[f64]) -> f64 {
        let range = self.component_range(k);
        expit(self.designs[k].linear_predictor(&xi[range], x, &[]))
    }

    /// Joint probability of the binary instrument vector `z` given `x`.
    pub fn prob_with(&self, xi: &[f64], x: &[f64], z: &[f64]) -> f64 {
        (0..self.n_instruments())
            .map(|k| {
                let p = self.component_prob_with(xi, k, x);
                if z[k] == 1.0 {
                    p
                } else {
                    1.0 - p
                }
            })
            .product()
    }

    /// E[f(Z) | x] by exact enumeration of the binary instrument support.
    pub fn expect_with<F>(&self, xi: &[f64], x: &[f64], mut f: F) -> Vec<f64>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let k = self.n_instruments();
        let probs: Vec<f64> = (0..k).map(|j| self.component_prob_with(xi, j, x)).collect();
        let mut acc: Vec<f64> = Vec::new();
        let mut z = vec![0.0; k];
        for mask in 0..(1usize << k) {
            let mut w = 1.0;
            for j in 0..k {
                let on = (mask >> j) & 1 == 1;
                z[j] = if on { 1.0 } else { 0.0 };
                w *= if on { probs[j] } else { 1.0 - probs[j] };
            }
            let v = f(&z);
            if acc.is_empty() {
                acc = vec![0.0; v.len()];
            }
            for (a, b) in acc.iter_mut().zip(&v) {
                *a += w * b;
            }
        }
        acc
    }
}

/// Complete working-model configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub selection_bias: SelectionBiasSpec,
    pub baseline: BaselineMissingnessSpec,
    pub outcome: CompleteCaseOutcomeSpec,
    pub iv: IvDensitySpec,
    pub positivity_floor: f64,
}

impl ModelConfig {
    pub fn new(
        selection_bias: SelectionBiasSpec,
        baseline: BaselineMissingnessSpec,
        outcome: CompleteCaseOutcomeSpec,
        iv: IvDensitySpec,
    ) -> Self {
        Self {
            selection_bias,
            baseline,
            outcome,
            iv,
            positivity_floor: DEFAULT_POSITIVITY_FLOOR,
        }
    }

    /// Default analysis designs for a dataset with `nx` covariates and `nz`
    /// instruments: main effects everywhere, baseline terms ordered
    /// `(1, z.., x..)`, outcome terms `(1, x.., z..)`, instrument terms `(1, x..)`.
    pub fn main_effects(nx: usize, nz: usize) -> Self {
        let zs: Vec<Var> = (0..nz).map(Var::Z).collect();
        let xs: Vec<Var> = (0..nx).map(Var::X).collect();
        let baseline_vars: Vec<Var> = zs.iter().chain(&xs).copied().collect();
        let outcome_vars: Vec<Var> = xs.iter().chain(&zs).copied().collect();
        Self::new(
            SelectionBiasSpec::default(),
            BaselineMissingnessSpec::new(Design::main_effects(&baseline_vars)),
            CompleteCaseOutcomeSpec::new(Design::main_effects(&outcome_vars)),
            IvDensitySpec::new(vec![Design::main_effects(&xs); nz]),
        )
    }

    pub fn validate(&self, nx: usize, nz: usize) -> Result<()> {
        if self.baseline.omega.len() != self.baseline.design.len() {
            return Err(Error::InvalidInput("omega length does not match baseline design".into()));
        }
        if self.outcome.theta.len() != self.outcome.design.len() {
            return Err(Error::InvalidInput("theta length does not match outcome design".into()));
        }
        if self.iv.xi.len() != self.iv.n_params() {
            return Err(Error::InvalidInput("xi length does not match instrument designs".into()));
        }
        if self.iv.n_instruments() != nz {
            return Err(Error::InvalidInput(format!(
                "instrument law has {} components but data has {nz} instruments",
                self.iv.n_instruments()
            )));
        }
        if self.iv.designs.iter().any(Design::uses_instruments) {
            return Err(Error::InvalidInput("instrument designs may only use covariates".into()));
        }
        if !(self.positivity_floor > 0.0) {
            return Err(Error::InvalidInput("positivity floor must be positive".into()));
        }
        self.baseline.design.check_columns(nx, nz)?;
        self.outcome.design.check_columns(nx, nz)?;
        for d in &self.iv.designs {
            d.check_columns(nx, nz)?;
        }
        Ok(())
    }

    /// Extended propensity `pi(x, y, z) = expit(lambda + eta)` under explicit
    /// `(omega, zeta)`.
    #[inline]
    pub fn propensity_with(&self, omega: &[f64], zeta: f64, x: &[f64], y: f64, z: &[f64]) -> Result<f64> {
        let t = self.baseline.lambda_with(omega, x, z) + self.selection_bias.eval_with(zeta, x, y, z);
        let pi = expit(t);
        if pi < self.positivity_floor || !pi.is_finite() {
            return Err(Error::PositivityViolation {
                value: pi,
                floor: self.positivity_floor,
            });
        }
        Ok(pi)
    }

    /// P(Y = 1 | R = 0, x, z) by exponential tilting of the complete-case law.
    #[inline]
    pub fn tilted_prob_one_with(&self, theta: &[f64], zeta: f64, x: &[f64], z: &[f64]) -> f64 {
        // tilting shifts the complete-case log odds by -(eta(1) - eta(0))
        let lp = self.outcome.design.linear_predictor(theta, x, z);
        let shift = self.selection_bias.eval_with(zeta, x, 1.0, z) - self.selection_bias.eval_with(zeta, x, 0.0, z);
        expit(lp - shift)
    }

    /// E[f(x, Y) | R = 0, x, z] under the tilted law.
    pub fn missing_expectation_with<F>(&self, theta: &[f64], zeta: f64, x: &[f64], z: &[f64], f: F) -> Vec<f64>
    where
        F: Fn(&[f64], f64) -> Vec<f64>,
    {
        let p1 = self.tilted_prob_one_with(theta, zeta, x, z);
        let f1 = f(x, 1.0);
        let f0 = f(x, 0.0);
        f1.iter().zip(&f0).map(|(a, b)| p1 * a + (1.0 - p1) * b).collect()
    }
}

/// Tilted probability of `Y = 1` given complete-case probability `p` and tilt
/// weights `t1 = exp(-eta(y=1))`, `t0 = exp(-eta(y=0))`.
#[inline]
pub fn tilted_probability(p: f64, t1: f64, t0: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let a = p * t1;
    a / (a + (1.0 - p) * t0)
}

pub fn eval_selection_bias(spec: &SelectionBiasSpec, x: &[f64], y: f64, z: &[f64]) -> f64 {
    spec.eval(x, y, z)
}

pub fn eval_extended_propensity(config: &ModelConfig, x: &[f64], y: f64, z: &[f64]) -> Result<f64> {
    config.propensity_with(&config.baseline.omega, config.selection_bias.zeta, x, y, z)
}

/// P(Y = y_query | R = 0, x, z) for the binary outcome family.
pub fn eval_tilted_outcome(config: &ModelConfig, x: &[f64], z: &[f64], y_query: f64) -> f64 {
    let p1 = config.tilted_prob_one_with(&config.outcome.theta, config.selection_bias.zeta, x, z);
    if y_query == 1.0 {
        p1
    } else {
        1.0 - p1
    }
}

/// E(Y | R = 0, x, z).
pub fn eval_conditional_mean_missing(config: &ModelConfig, x: &[f64], z: &[f64]) -> f64 {
    config.tilted_prob_one_with(&config.outcome.theta, config.selection_bias.zeta, x, z)
}

pub fn eval_iv_probability(config: &ModelConfig, x: &[f64], z: &[f64]) -> f64 {
    config.iv.prob_with(&config.iv.xi, x, z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// The extended propensity used by the simulation generator:
    /// baseline (1, z, x1, x2) with coefficients (-1.5, 2.5, 0.8, -1.2).
    fn generator_config(zeta: f64) -> ModelConfig {
        let mut c = ModelConfig::new(
            SelectionBiasSpec::linear(zeta),
            BaselineMissingnessSpec::new(Design::main_effects(&[Var::Z(0), Var::X(0), Var::X(1)])),
            CompleteCaseOutcomeSpec::new(Design::intercept_only()),
            IvDensitySpec::new(vec![Design::saturated(&[Var::X(0), Var::X(1)])]),
        );
        c.baseline.omega = vec![-1.5, 2.5, 0.8, -1.2];
        c.iv.xi = vec![0.4, 0.9, -0.7, -0.8];
        c
    }

    #[test]
    fn expit_values() {
        assert_eq!(expit(0.0), 0.5);
        assert!((expit(3.6) - 0.973404).abs() < 2e-6);
        assert!((expit(-2.7) - 0.062973).abs() < 5e-7);
        assert!(expit(-800.0) >= 0.0 && expit(800.0) <= 1.0);
    }

    #[test]
    fn selection_bias_examples() {
        let s = SelectionBiasSpec::linear(1.8);
        assert_eq!(eval_selection_bias(&s, &[], 1.0, &[]), 1.8);
        assert_eq!(eval_selection_bias(&s, &[], 0.0, &[]), 0.0);
        assert_eq!(eval_selection_bias(&SelectionBiasSpec::linear(0.0), &[], 7.3, &[]), 0.0);
    }

    #[test]
    fn extended_propensity_examples() {
        let c = generator_config(1.8);
        let p = eval_extended_propensity(&c, &[1.0, 0.0], 1.0, &[1.0]).unwrap();
        assert!((p - 0.973404).abs() < 2e-6);
        let p = eval_extended_propensity(&c, &[0.0, 1.0], 0.0, &[0.0]).unwrap();
        assert!((p - 0.062973).abs() < 5e-7);
    }

    #[test]
    fn positivity_violation_is_an_error() {
        let mut c = generator_config(0.0);
        c.baseline.omega = vec![-30.0, 0.0, 0.0, 0.0];
        let err = eval_extended_propensity(&c, &[0.0, 0.0], 0.0, &[0.0]).unwrap_err();
        assert!(matches!(err, Error::PositivityViolation { .. }));
    }

    #[test]
    fn tilted_outcome_examples() {
        let mut c = generator_config(2f64.ln());
        // intercept-only outcome with theta = 0 gives p = 0.5
        let p1 = eval_tilted_outcome(&c, &[0.0, 0.0], &[0.0], 1.0);
        assert!((p1 - 1.0 / 3.0).abs() < 1e-15);
        assert!((eval_conditional_mean_missing(&c, &[0.0, 0.0], &[0.0]) - 1.0 / 3.0).abs() < 1e-15);

        c.selection_bias.zeta = 0.0;
        c.outcome.theta = vec![logit(0.731)];
        assert!((eval_conditional_mean_missing(&c, &[1.0, 1.0], &[1.0]) - 0.731).abs() < 1e-12);

        assert_eq!(tilted_probability(1.0, 0.2, 1.0), 1.0);
        assert_eq!(tilted_probability(0.0, 0.2, 1.0), 0.0);
        c.selection_bias.zeta = 3.0;
        c.outcome.theta = vec![f64::INFINITY];
        assert_eq!(eval_conditional_mean_missing(&c, &[0.0, 0.0], &[1.0]), 1.0);
        c.outcome.theta = vec![f64::NEG_INFINITY];
        assert_eq!(eval_conditional_mean_missing(&c, &[0.0, 0.0], &[1.0]), 0.0);
    }

    #[test]
    fn iv_probability_examples() {
        let c = generator_config(0.0);
        let p = eval_iv_probability(&c, &[1.0, 1.0], &[1.0]);
        assert!((p - 0.450166).abs() < 5e-7);

        let mut single = ModelConfig::main_effects(2, 1);
        single.iv.xi = vec![0.0; 3];
        assert_eq!(eval_iv_probability(&single, &[0.3, 1.0], &[0.0]), 0.5);
        assert_eq!(eval_iv_probability(&single, &[0.3, 1.0], &[1.0]), 0.5);

        let two = ModelConfig::main_effects(1, 2);
        for z in [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]] {
            assert_eq!(eval_iv_probability(&two, &[2.0], &z), 0.25);
        }
    }

    #[test]
    fn saturated_design_order() {
        let d = Design::saturated(&[Var::X(0), Var::X(1), Var::Z(0)]);
        let names = d.labels(&["x1".into(), "x2".into()], &["z".into()]);
        assert_eq!(
            names,
            ["(Intercept)", "x1", "x2", "z", "x1:x2", "x1:z", "x2:z", "x1:x2:z"]
        );
    }

    #[test]
    fn iv_expectation_enumerates_support() {
        let c = generator_config(0.0);
        let e = c.iv.expect_with(&c.iv.xi, &[1.0, 0.0], |z| vec![z[0], 1.0]);
        assert!((e[0] - expit(1.3)).abs() < 1e-15);
        assert!((e[1] - 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn propensity_in_unit_interval(
            om in proptest::collection::vec(-5.0f64..5.0, 4),
            zeta in -5.0f64..5.0,
            x1 in 0u8..2, x2 in 0u8..2, z in 0u8..2, y in 0u8..2,
        ) {
            let mut c = generator_config(zeta);
            c.baseline.omega = om;
            c.positivity_floor = 1e-300;
            let p = eval_extended_propensity(&c, &[x1 as f64, x2 as f64], y as f64, &[z as f64]).unwrap();
            prop_assert!(p > 0.0 && p < 1.0);
        }

        #[test]
        fn tilted_law_sums_to_one(theta in -6.0f64..6.0, zeta in -6.0f64..6.0) {
            let mut c = generator_config(zeta);
            c.outcome.theta = vec![theta];
            let s = eval_tilted_outcome(&c, &[0.0, 0.0], &[1.0], 0.0)
                + eval_tilted_outcome(&c, &[0.0, 0.0], &[1.0], 1.0);
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn zero_tilt_removes_outcome_dependence(
            om in proptest::collection::vec(-3.0f64..3.0, 4), y in -10.0f64..10.0,
        ) {
            let mut c = generator_config(0.0);
            c.baseline.omega = om;
            let a = eval_extended_propensity(&c, &[1.0, 0.0], y, &[1.0]).unwrap();
            let b = eval_extended_propensity(&c, &[1.0, 0.0], 0.0, &[1.0]).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn eta_vanishes_at_zero(zeta in -100.0f64..100.0) {
            prop_assert_eq!(SelectionBiasSpec::linear(zeta).eval(&[], 0.0, &[]), 0.0);
        }

        #[test]
        fn propensity_monotone_in_zeta(zeta in -3.0f64..3.0, y in 0.1f64..3.0) {
            let h = 1e-4;
            let mut lo = generator_config(zeta - h);
            lo.positivity_floor = 1e-300;
            let mut hi = lo.clone();
            hi.selection_bias.zeta = zeta + h;
            let x = [0.0, 1.0];
            let z = [0.0];
            let up = eval_extended_propensity(&hi, &x, y, &z).unwrap() - eval_extended_propensity(&lo, &x, y, &z).unwrap();
            prop_assert!(up > 0.0);
            let down = eval_extended_propensity(&hi, &x, -y, &z).unwrap() - eval_extended_propensity(&lo, &x, -y, &z).unwrap();
            prop_assert!(down < 0.0);
        }
    }
}
