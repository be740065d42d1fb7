//! Identification probes for a binary outcome and binary instrument without
//! covariates.
//!
//! With `logit P(R = 1 | z, y) = t0 + t1 z + t2 y + t3 z y` and
//! `P(Y = 1) = exp(xi)`, the saturated response model admits distinct
//! parameter values with the same observed-data law. Dropping the `z y`
//! interaction removes them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::expit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryFullLaw {
    pub theta: [f64; 4],
    /// log P(Y = 1)
    pub xi: f64,
    /// P(Z = 1)
    pub pz: f64,
}

impl BinaryFullLaw {
    pub fn new(theta: [f64; 4], xi: f64, pz: f64) -> Result<Self> {
        let law = Self { theta, xi, pz };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi < 0.0) {
            return Err(Error::OutOfParameterSpace(format!("P(Y = 1) = exp({}) must be below 1", self.xi)));
        }
        if !(self.pz > 0.0 && self.pz < 1.0) {
            return Err(Error::OutOfParameterSpace(format!("P(Z = 1) = {} must lie in (0, 1)", self.pz)));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::OutOfParameterSpace("response coefficients must be finite".into()));
        }
        Ok(())
    }

    pub fn p_response(&self, z: f64, y: f64) -> f64 {
        let [t0, t1, t2, t3] = self.theta;
        expit(t0 + t1 * z + t2 * y + t3 * z * y)
    }

    pub fn p_y(&self, y: f64) -> f64 {
        let p1 = self.xi.exp();
        if y == 1.0 {
            p1
        } else {
            1.0 - p1
        }
    }

    pub fn p_z(&self, z: f64) -> f64 {
        if z == 1.0 {
            self.pz
        } else {
            1.0 - self.pz
        }
    }
}

/// Observable cells: `P(z, y, R = 1)` and `P(z, R = 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedLaw {
    /// indexed by [z][y]
    pub observed: [[f64; 2]; 2],
    /// indexed by z
    pub missing: [f64; 2],
}

impl ObservedLaw {
    pub fn cells(&self) -> [f64; 6] {
        [
            self.observed[0][0],
            self.observed[0][1],
            self.observed[1][0],
            self.observed[1][1],
            self.missing[0],
            self.missing[1],
        ]
    }

    /// Largest cellwise absolute difference.
    pub fn distance(&self, other: &ObservedLaw) -> f64 {
        self.cells()
            .iter()
            .zip(other.cells())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

pub fn observed_law(full: &BinaryFullLaw) -> ObservedLaw {
    let mut observed = [[0.0; 2]; 2];
    let mut missing = [0.0; 2];
    for z in 0..2 {
        for y in 0..2 {
            let (zf, yf) = (z as f64, y as f64);
            let joint = full.p_z(zf) * full.p_y(yf);
            let pr = full.p_response(zf, yf);
            observed[z][y] = joint * pr;
            missing[z] += joint * (1.0 - pr);
        }
    }
    ObservedLaw { observed, missing }
}

/// `rho1` such that `P(y; xi~) / P(y; xi) = exp(rho0 + rho1 y)`.
pub fn rho1(xi: f64, rho0: f64) -> Result<f64> {
    let arg = (-rho0 - xi).exp() + (xi.exp() - 1.0) / xi.exp();
    if !(arg > 0.0) {
        return Err(Error::OutOfParameterSpace(format!(
            "rho0 = {rho0} leaves no valid outcome law (log argument {arg})"
        )));
    }
    Ok(arg.ln())
}

/// Observationally equivalent law obtained by tilting the outcome law by
/// `exp(rho0 + rho1 y)` and compensating in the response model.
pub fn construct_equivalent_law(full: &BinaryFullLaw, rho0: f64) -> Result<BinaryFullLaw> {
    full.validate()?;
    let r1 = rho1(full.xi, rho0)?;
    let [t0, t1, t2, t3] = full.theta;
    let alpha = |s: f64, shift: f64| 1.0 + s.exp() - (s - shift).exp();
    let a0 = alpha(t0, rho0);
    let a1 = alpha(t0 + t1, rho0);
    let a2 = alpha(t0 + t2, rho0 + r1);
    let a3 = alpha(t0 + t1 + t2 + t3, rho0 + r1);
    for (i, a) in [a0, a1, a2, a3].iter().enumerate() {
        if !(*a > 0.0) {
            return Err(Error::OutOfParameterSpace(format!("alpha{i} = {a} is not positive")));
        }
    }
    let theta = [
        t0 - rho0 - a0.ln(),
        t1 + a0.ln() - a1.ln(),
        t2 - r1 + a0.ln() - a2.ln(),
        t3 + a1.ln() + a2.ln() - a0.ln() - a3.ln(),
    ];
    let xi = full.xi + rho0 + r1;
    if !(xi < 0.0) {
        return Err(Error::OutOfParameterSpace(format!("tilted outcome law has log P(Y = 1) = {xi}")));
    }
    Ok(BinaryFullLaw { theta, xi, pz: full.pz })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub rho0: f64,
    pub rho1: Option<f64>,
    /// `|exp(rho0 + rho1) - exp(t2 + rho0) / (exp(t2 + rho0) + 1 - exp(rho0))|`
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub law: BinaryFullLaw,
    pub points: Vec<ProbePoint>,
    /// True when every nonzero `rho0` violates the no-interaction constraint
    /// by more than 1e-10.
    pub identified: bool,
}

/// For each `rho0`, measures how far the tilted law is from keeping the
/// response model free of a `z y` interaction.
pub fn probe_no_interaction_identifiability(full: &BinaryFullLaw, grid: &[f64]) -> Result<ProbeReport> {
    full.validate()?;
    if full.theta[3] != 0.0 {
        return Err(Error::InvalidInput("the probe requires a law without z-y interaction".into()));
    }
    let t2 = full.theta[2];
    let points: Vec<ProbePoint> = grid
        .iter()
        .map(|&rho0| {
            // exp(rho0 + rho1) computed directly, without the logarithm
            let lhs = (-full.xi).exp() + rho0.exp() - (rho0 - full.xi).exp();
            let e = (t2 + rho0).exp();
            let rhs = e / (e + 1.0 - rho0.exp());
            ProbePoint {
                rho0,
                rho1: rho1(full.xi, rho0).ok(),
                violation: (lhs - rhs).abs(),
            }
        })
        .collect();
    let identified = points
        .iter()
        .filter(|p| p.rho0 != 0.0)
        .all(|p| p.violation > 1e-10);
    Ok(ProbeReport {
        law: *full,
        points,
        identified,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchReport {
    pub n_laws: usize,
    pub threshold: f64,
    /// Smallest observed-law distance between two distinct grid laws; exact
    /// when below the sweep window, infinite when no pair falls inside it.
    pub min_distance: f64,
    pub closest_pair: Option<(BinaryFullLaw, BinaryFullLaw)>,
    pub n_pairs_below: usize,
    /// Whether laws with no instrument effect on response were included.
    pub includes_irrelevant_instrument: bool,
}

/// Width of the sort-and-sweep window of the grid search.
const SWEEP_WINDOW: f64 = 1e-4;

/// Inclusive grid from `lo` to `hi` with spacing `step`.
pub fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

/// Searches a grid of no-interaction laws for pairs with nearly identical
/// observed laws.
///
/// Laws with `t1 = 0` make the instrument irrelevant to response; they are
/// skipped unless `include_irrelevant` is set.
pub fn no_interaction_grid_search(
    theta_grid: &[f64],
    xi_grid: &[f64],
    pz: f64,
    threshold: f64,
    include_irrelevant: bool,
) -> GridSearchReport {
    let mut laws = Vec::new();
    for &t0 in theta_grid {
        for &t1 in theta_grid {
            if !include_irrelevant && t1 == 0.0 {
                continue;
            }
            for &t2 in theta_grid {
                for &xi in xi_grid {
                    laws.push(BinaryFullLaw { theta: [t0, t1, t2, 0.0], xi, pz });
                }
            }
        }
    }
    let mut obs: Vec<(ObservedLaw, usize)> = laws.iter().map(observed_law).zip(0..).collect();
    obs.sort_by(|a, b| a.0.missing[0].total_cmp(&b.0.missing[0]));

    // sort-and-sweep on one coordinate: a pair within distance d is within d
    // in that coordinate too, so only a short window needs to be compared
    let window = threshold.max(SWEEP_WINDOW);
    let sweep = |i: usize| -> (f64, Option<(usize, usize)>, usize) {
        let mut best = f64::INFINITY;
        let mut pair = None;
        let mut below = 0;
        for j in i + 1..obs.len() {
            if obs[j].0.missing[0] - obs[i].0.missing[0] > window {
                break;
            }
            let d = obs[i].0.distance(&obs[j].0);
            if d < best {
                best = d;
                pair = Some((obs[i].1, obs[j].1));
            }
            if d < threshold {
                below += 1;
            }
        }
        (best, pair, below)
    };
    let results: Vec<_> = (0..obs.len()).into_par_iter().map(sweep).collect();
    let mut min_distance = f64::INFINITY;
    let mut closest = None;
    let mut n_pairs_below = 0;
    for (d, pair, below) in results {
        n_pairs_below += below;
        if d < min_distance {
            min_distance = d;
            closest = pair;
        }
    }
    GridSearchReport {
        n_laws: laws.len(),
        threshold,
        min_distance,
        closest_pair: closest.map(|(a, b)| (laws[a], laws[b])),
        n_pairs_below,
        includes_irrelevant_instrument: include_irrelevant,
    }
}

/// Everything the `identify` command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationReport {
    pub saturated_input: BinaryFullLaw,
    pub rho0: f64,
    pub rho1: f64,
    pub equivalent: BinaryFullLaw,
    pub observed_distance: f64,
    pub probe: ProbeReport,
    pub grid_search: GridSearchReport,
}

/// Default probe grid of nonzero tilts.
pub const DEFAULT_RHO_GRID: [f64; 6] = [-0.3, -0.1, -0.05, 0.05, 0.1, 0.3];

/// Equivalent-law construction for `input` at tilt `rho0`, the probe on the
/// same law with the `Z x Y` interaction removed, and the default grid search.
pub fn report(input: BinaryFullLaw, rho0: f64) -> Result<IdentificationReport> {
    let equivalent = construct_equivalent_law(&input, rho0)?;
    let observed_distance = observed_law(&input).distance(&observed_law(&equivalent));
    let mut theta = input.theta;
    theta[3] = 0.0;
    let no_int = BinaryFullLaw::new(theta, input.xi, input.pz)?;
    let probe = probe_no_interaction_identifiability(&no_int, &DEFAULT_RHO_GRID)?;
    let grid_search = no_interaction_grid_search(&grid(-2.0, 2.0, 0.25), &default_xi_grid(), 0.5, 1e-6, false);
    Ok(IdentificationReport {
        saturated_input: input,
        rho0,
        rho1: rho1(input.xi, rho0)?,
        equivalent,
        observed_distance,
        probe,
        grid_search,
    })
}

pub fn default_report() -> Result<IdentificationReport> {
    report(BinaryFullLaw::new([0.3, 0.6, 0.1, 0.7], -0.2, 0.5)?, 0.3)
}

/// `xi` values from -2 to -0.25 in steps of 0.25, plus -0.05.
pub fn default_xi_grid() -> Vec<f64> {
    let mut g = grid(-2.0, -0.25, 0.25);
    g.push(-0.05);
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_law() {
        let law = BinaryFullLaw::new([0.0; 4], 0.5f64.ln(), 0.5).unwrap();
        let o = observed_law(&law);
        for z in 0..2 {
            for y in 0..2 {
                assert!((o.observed[z][y] - 0.125).abs() < 1e-15);
            }
            assert!((o.missing[z] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn worked_example() {
        let law = BinaryFullLaw::new([0.3, 0.6, 0.1, 0.7], -0.2, 0.5).unwrap();
        let r1 = rho1(law.xi, 0.3).unwrap();
        assert!((r1 - -0.38).abs() < 0.005);
        let eq = construct_equivalent_law(&law, 0.3).unwrap();
        let expect = [-0.3, 0.41, 0.91, 1.37];
        for (a, b) in eq.theta.iter().zip(expect) {
            assert!((a - b).abs() < 0.005, "{a} vs {b}");
        }
        assert!((eq.xi - -0.28).abs() < 0.005);
        assert!(observed_law(&law).distance(&observed_law(&eq)) < 1e-10);
    }

    #[test]
    fn zero_tilt_is_identity() {
        let law = BinaryFullLaw::new([0.3, 0.6, 0.1, 0.7], -0.2, 0.5).unwrap();
        let eq = construct_equivalent_law(&law, 1e-12).unwrap();
        for (a, b) in eq.theta.iter().zip(law.theta) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((eq.xi - law.xi).abs() < 1e-10);
    }

    #[test]
    fn large_tilt_leaves_parameter_space() {
        let law = BinaryFullLaw::new([0.3, 0.6, 0.1, 0.7], -0.2, 0.5).unwrap();
        assert!(matches!(construct_equivalent_law(&law, 3.0), Err(Error::OutOfParameterSpace(_))));
    }

    #[test]
    fn probe_reports_violations() {
        let law = BinaryFullLaw::new([0.3, 0.6, 0.1, 0.0], -0.2, 0.5).unwrap();
        let mut g = DEFAULT_RHO_GRID.to_vec();
        g.push(0.0);
        let rep = probe_no_interaction_identifiability(&law, &g).unwrap();
        assert!(rep.identified);
        for p in &rep.points {
            if p.rho0 == 0.0 {
                assert!(p.violation < 1e-14);
            } else {
                assert!(p.violation > 0.0);
            }
        }
    }

    #[test]
    fn grid_helper() {
        let g = grid(-2.0, 2.0, 0.25);
        assert_eq!(g.len(), 17);
        assert_eq!(g[8], 0.0);
        assert_eq!(default_xi_grid().len(), 9);
    }

    proptest! {
        #[test]
        fn observed_law_sums_to_one(
            t in proptest::array::uniform4(-3.0f64..3.0), xi in -4.0f64..-0.01, pz in 0.01f64..0.99,
        ) {
            let o = observed_law(&BinaryFullLaw::new(t, xi, pz).unwrap());
            prop_assert!((o.cells().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(o.cells().iter().all(|c| *c >= 0.0));
        }

        #[test]
        fn equivalent_laws_match_observed(
            t in proptest::array::uniform4(-2.0f64..2.0), xi in -2.0f64..-0.1, pz in 0.1f64..0.9,
            rho0 in -0.5f64..0.5,
        ) {
            prop_assume!(rho0.abs() > 1e-3);
            let law = BinaryFullLaw::new(t, xi, pz).unwrap();
            if let Ok(eq) = construct_equivalent_law(&law, rho0) {
                prop_assert!(observed_law(&law).distance(&observed_law(&eq)) < 1e-10);
                prop_assert!(eq.xi != law.xi);
            }
        }
    }
}
