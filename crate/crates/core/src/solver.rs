//! Root finding, GMM minimization and finite-difference Jacobians.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::moments::MomentSystem;

/// Condition number above which a matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    /// Max-norm tolerance on the averaged moments.
    pub tol_residual: f64,
    pub max_iter: usize,
    pub fd_step_scale: f64,
    pub bracket: (f64, f64),
    /// Randomized restarts after a stall.
    pub retries: usize,
    /// Seed of the restart perturbations.
    pub seed: u64,
    /// Largest Newton step allowed in any coordinate.
    pub max_step: f64,
    /// Starting value for the selection-bias parameter.
    pub zeta_start: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_residual: 1e-9,
            max_iter: 200,
            fd_step_scale: f64::EPSILON.cbrt(),
            bracket: (-10.0, 10.0),
            retries: 5,
            seed: 0,
            max_step: 2.0,
            zeta_start: 0.0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_residual > 0.0) {
            return Err(Error::InvalidInput("tolerance must be positive".into()));
        }
        if !(self.bracket.0 < self.bracket.1) {
            return Err(Error::InvalidInput("bracket requires lo < hi".into()));
        }
        if !(self.fd_step_scale > 0.0) || !(self.max_step > 0.0) {
            return Err(Error::InvalidInput("step sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub final_residual_norm: f64,
    pub restarts_used: usize,
    /// Set when a GMM weight matrix was ill-conditioned and replaced by the identity.
    #[serde(default)]
    pub identity_weight_fallback: bool,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Central-difference Jacobian with step `step_scale * max(1, |x_i|)`.
pub fn fd_jacobian<F>(f: F, x: &[f64], step_scale: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut xp = x.to_vec();
    let mut jac: Option<DMatrix<f64>> = None;
    for i in 0..x.len() {
        let h = step_scale * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        let j = jac.get_or_insert_with(|| DMatrix::zeros(fp.len(), x.len()));
        for (k, (a, b)) in fp.iter().zip(&fm).enumerate() {
            let d = (a - b) / (2.0 * h);
            if !d.is_finite() {
                return Err(Error::NonFiniteEvaluation);
            }
            j[(k, i)] = d;
        }
    }
    match jac {
        Some(j) => Ok(j),
        None => {
            let m = f(x)?.len();
            Ok(DMatrix::zeros(m, 0))
        }
    }
}

/// Ratio of extreme singular values; infinite for a singular matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `system.mean(data, x) = 0` for an exactly identified system.
pub fn solve_root(
    system: &MomentSystem,
    data: &Dataset,
    x0: &[f64],
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveDiagnostics)> {
    if !system.is_exactly_identified() {
        return Err(Error::InvalidInput(format!(
            "solve_root needs an exactly identified system ({} moments, {} parameters)",
            system.dim_moments(),
            system.dim_params()
        )));
    }
    solve_root_fn(|x| system.mean(data, x), x0, opts)
}

/// Damped Newton with backtracking on the squared residual norm and
/// randomized restarts around `x0`.
pub fn solve_root_fn<F>(f: F, x0: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, SolveDiagnostics)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    opts.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut total_iter = 0;

    for attempt in 0..=opts.retries {
        let start: Vec<f64> = if attempt == 0 {
            x0.to_vec()
        } else {
            x0.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect()
        };
        let (x, norm, iters, ok) = newton_attempt(&f, start, opts);
        total_iter += iters;
        if ok {
            return Ok((
                x,
                SolveDiagnostics {
                    converged: true,
                    iterations: total_iter,
                    final_residual_norm: norm,
                    restarts_used: attempt,
                    identity_weight_fallback: false,
                },
            ));
        }
        if norm.is_finite() && best.as_ref().is_none_or(|(_, b)| norm < *b) {
            best = Some((x, norm));
        }
    }
    let (best, residual) = best.unwrap_or_else(|| (x0.to_vec(), f64::INFINITY));
    Err(Error::NoConvergence {
        best,
        residual,
        iterations: total_iter,
    })
}

/// One Newton run; returns (last iterate, its residual max-norm, iterations, converged).
fn newton_attempt<F>(f: &F, mut x: Vec<f64>, opts: &SolveOptions) -> (Vec<f64>, f64, usize, bool)
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut fx = match f(&x) {
        Ok(v) if v.iter().all(|t| t.is_finite()) => v,
        _ => return (x, f64::INFINITY, 0, false),
    };
    let mut norm = max_norm(&fx);
    for iter in 0..opts.max_iter {
        if norm <= opts.tol_residual {
            return (x, norm, iter, true);
        }
        let jac = match fd_jacobian(f, &x, opts.fd_step_scale) {
            Ok(j) => j,
            Err(_) => return (x, norm, iter, false),
        };
        let rhs = -DVector::from_column_slice(&fx);
        let step = match jac.lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => return (x, norm, iter, false),
        };
        let mut step: Vec<f64> = step.iter().copied().collect();
        let big = max_norm(&step);
        if big > opts.max_step {
            let s = opts.max_step / big;
            step.iter_mut().for_each(|v| *v *= s);
        }
        let merit = sq_norm(&fx);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, d)| a + t * d).collect();
            if let Ok(ft) = f(&trial) {
                if ft.iter().all(|v| v.is_finite()) && sq_norm(&ft) <= (1.0 - 1e-4 * t) * merit {
                    x = trial;
                    fx = ft;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return (x, norm, iter + 1, norm <= opts.tol_residual);
        }
        norm = max_norm(&fx);
    }
    (x, norm, opts.max_iter, norm <= opts.tol_residual)
}

/// Scalar root by bracketing: scan the bracket for a sign change, widening it
/// up to tenfold, then refine with an Illinois / bisection hybrid.
pub fn solve_scalar<F>(f: F, opts: &SolveOptions) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    opts.validate()?;
    let (lo0, hi0) = opts.bracket;
    let center = 0.5 * (lo0 + hi0);
    let half = 0.5 * (hi0 - lo0);
    const GRID: usize = 64;
    let mut searched: Option<(f64, f64)> = None;
    for factor in [1.0, 2.0, 4.0, 8.0, 10.0] {
        let (lo, hi) = (center - factor * half, center + factor * half);
        let mut prev: Option<(f64, f64)> = None;
        for i in 0..=GRID {
            let t = lo + (hi - lo) * i as f64 / GRID as f64;
            let ft = match f(t) {
                Ok(v) if v.is_finite() => v,
                _ => continue,
            };
            if ft == 0.0 {
                return Ok(t);
            }
            if let Some((a, fa)) = prev {
                if fa.signum() != ft.signum() {
                    return refine(&f, a, fa, t, ft, opts);
                }
            }
            prev = Some((t, ft));
        }
        searched = Some((lo, hi));
    }
    let (lo, hi) = searched.unwrap_or((lo0, hi0));
    Err(Error::NoSignChange { lo, hi })
}

fn refine<F>(f: &F, mut a: f64, mut fa: f64, mut b: f64, mut fb: f64, opts: &SolveOptions) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let mut side = 0i8;
    for _ in 0..(opts.max_iter.max(100)) {
        let mut c = (a * fb - b * fa) / (fb - fa);
        if !c.is_finite() || c <= a.min(b) || c >= a.max(b) {
            c = 0.5 * (a + b);
        }
        let fc = f(c)?;
        if !fc.is_finite() {
            return Err(Error::NonFiniteEvaluation);
        }
        if fc.abs() <= opts.tol_residual || (b - a).abs() <= 1e-15 * (1.0 + c.abs()) {
            return Ok(c);
        }
        if fc.signum() == fb.signum() {
            b = c;
            fb = fc;
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            fa = fc;
            if side == 1 {
                fb *= 0.5;
            }
            side = 1;
        }
    }
    Ok(0.5 * (a + b))
}

/// Result of a GMM fit, including the weight used in the final step.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub params: Vec<f64>,
    pub weight: DMatrix<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Two-step GMM: identity weight, then the inverse of the second-moment
/// matrix of the rows at the first-step solution.
pub fn gmm_two_step(
    system: &MomentSystem,
    data: &Dataset,
    x0: &[f64],
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveDiagnostics)> {
    let fit = gmm_two_step_fit(system, data, x0, opts)?;
    Ok((fit.params, fit.diagnostics))
}

pub fn gmm_two_step_fit(system: &MomentSystem, data: &Dataset, x0: &[f64], opts: &SolveOptions) -> Result<GmmFit> {
    gmm_two_step_fn(
        |x| system.mean(data, x),
        |x| system.second_moment(data, x),
        x0,
        opts,
    )
}

/// Two-step GMM on an averaged moment function `mean` whose uncentered
/// second-moment matrix is `second_moment`.
pub fn gmm_two_step_fn<F, G>(mean: F, second_moment: G, x0: &[f64], opts: &SolveOptions) -> Result<GmmFit>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    G: Fn(&[f64]) -> Result<DMatrix<f64>>,
{
    opts.validate()?;
    let m = mean(x0)?.len();
    if m < x0.len() {
        return Err(Error::InvalidInput("GMM needs at least as many moments as parameters".into()));
    }
    let identity = DMatrix::identity(m, m);
    let (x1, d1) = gmm_minimize(&mean, &identity, x0, opts)?;
    let s = second_moment(&x1)?;
    let (weight, fallback) = match inverse_weight(&s) {
        Some(w) => (w, false),
        None => (identity.clone(), true),
    };
    if fallback {
        return Ok(GmmFit {
            params: x1,
            weight,
            diagnostics: SolveDiagnostics {
                identity_weight_fallback: true,
                ..d1
            },
        });
    }
    let (x2, d2) = gmm_minimize(&mean, &weight, &x1, opts)?;
    Ok(GmmFit {
        params: x2,
        weight,
        diagnostics: SolveDiagnostics {
            iterations: d1.iterations + d2.iterations,
            restarts_used: d1.restarts_used + d2.restarts_used,
            ..d2
        },
    })
}

/// Inverse of a symmetric positive definite matrix, `None` when its
/// condition number exceeds [`MAX_CONDITION`].
fn inverse_weight(s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = s.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 0.0) || max / min > MAX_CONDITION {
        return None;
    }
    let inv_vals = eig.eigenvalues.map(|v| 1.0 / v);
    let w = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    Some((&w + w.transpose()) * 0.5)
}

/// Minimizes `mbar' W mbar` by damped Gauss-Newton with randomized restarts.
pub fn gmm_minimize<F>(mean: &F, weight: &DMatrix<f64>, x0: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, SolveDiagnostics)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Vec<f64>, f64, f64)> = None;
    let mut total_iter = 0;
    for attempt in 0..=opts.retries {
        let start: Vec<f64> = if attempt == 0 {
            x0.to_vec()
        } else {
            x0.iter().map(|v| v + rng.gen_range(-1.0..1.0)).collect()
        };
        let (x, q, grad, iters, ok) = gauss_newton_attempt(mean, weight, start, opts);
        total_iter += iters;
        if ok {
            return Ok((
                x,
                SolveDiagnostics {
                    converged: true,
                    iterations: total_iter,
                    final_residual_norm: grad,
                    restarts_used: attempt,
                    identity_weight_fallback: false,
                },
            ));
        }
        if q.is_finite() && best.as_ref().is_none_or(|(_, bq, _)| q < *bq) {
            best = Some((x, q, grad));
        }
    }
    let (best, _, grad) = best.unwrap_or_else(|| (x0.to_vec(), f64::INFINITY, f64::INFINITY));
    Err(Error::NoConvergence {
        best,
        residual: grad,
        iterations: total_iter,
    })
}

fn quad(m: &[f64], w: &DMatrix<f64>) -> f64 {
    let v = DVector::from_column_slice(m);
    (v.transpose() * w * &v)[(0, 0)]
}

/// Returns (iterate, objective, gradient max-norm, iterations, converged).
fn gauss_newton_attempt<F>(
    mean: &F,
    w: &DMatrix<f64>,
    mut x: Vec<f64>,
    opts: &SolveOptions,
) -> (Vec<f64>, f64, f64, usize, bool)
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut mx = match mean(&x) {
        Ok(v) if v.iter().all(|t| t.is_finite()) => v,
        _ => return (x, f64::INFINITY, f64::INFINITY, 0, false),
    };
    let mut q = quad(&mx, w);
    let mut grad_norm = f64::INFINITY;
    for iter in 0..opts.max_iter {
        let jac = match fd_jacobian(mean, &x, opts.fd_step_scale) {
            Ok(j) => j,
            Err(_) => return (x, q, grad_norm, iter, false),
        };
        let mv = DVector::from_column_slice(&mx);
        let jtw = jac.transpose() * w;
        let grad = &jtw * &mv;
        grad_norm = grad.amax();
        if grad_norm <= opts.tol_residual || q <= opts.tol_residual * opts.tol_residual {
            return (x, q, grad_norm, iter, true);
        }
        let h = &jtw * &jac;
        let step = match h.clone().cholesky() {
            Some(c) => c.solve(&(-&grad)),
            None => match h.lu().solve(&(-&grad)) {
                Some(s) => s,
                None => return (x, q, grad_norm, iter, false),
            },
        };
        if step.iter().any(|v| !v.is_finite()) {
            return (x, q, grad_norm, iter, false);
        }
        let mut step: Vec<f64> = step.iter().copied().collect();
        let big = max_norm(&step);
        if big > opts.max_step {
            let s = opts.max_step / big;
            step.iter_mut().for_each(|v| *v *= s);
        }
        let slope: f64 = grad.iter().zip(&step).map(|(g, d)| g * d).sum();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(a, d)| a + t * d).collect();
            if let Ok(mt) = mean(&trial) {
                if mt.iter().all(|v| v.is_finite()) {
                    let qt = quad(&mt, w);
                    if qt <= q + 1e-4 * t * 2.0 * slope.min(0.0) {
                        x = trial;
                        mx = mt;
                        q = qt;
                        accepted = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // no further decrease is possible at this precision
            let tiny = max_norm(&step) <= 1e-8 * (1.0 + max_norm(&x));
            return (x, q, grad_norm, iter + 1, tiny);
        }
    }
    (x, q, grad_norm, opts.max_iter, false)
}
