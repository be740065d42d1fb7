//! Per-observation estimating functions.
//!
//! A [`MomentSystem`] is an ordered list of row blocks evaluated against a
//! parameter vector whose free slices are described by a [`Layout`]. Blocks
//! that are not free read their values from the stored [`ModelConfig`], so
//! the same machinery serves the estimator-only systems (nuisance fixed at
//! their fitted values) and the stacked systems used for the sandwich.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation};
use crate::error::{Error, Result};
use crate::model::{expit, Design, ModelConfig};
use crate::stats::grouped_sum;

pub type XzFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type XyFn = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

/// A vector-valued function of `(x, z)` with known output dimension.
#[derive(Clone)]
pub struct XzFeature {
    pub dim: usize,
    pub f: XzFn,
}

/// A vector-valued function of `(x, y)` with known output dimension.
#[derive(Clone)]
pub struct XyFeature {
    pub dim: usize,
    pub f: XyFn,
}

impl XzFeature {
    pub fn new(dim: usize, f: impl Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { dim, f: Arc::new(f) }
    }

    pub fn design(design: &Design) -> Self {
        let d = design.clone();
        Self::new(design.len(), move |x, z| d.eval(x, z))
    }

    pub fn instruments(nz: usize) -> Self {
        Self::new(nz, |_, z| z.to_vec())
    }

    #[inline]
    pub fn eval(&self, x: &[f64], z: &[f64]) -> Vec<f64> {
        (self.f)(x, z)
    }
}

impl XyFeature {
    pub fn new(dim: usize, f: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { dim, f: Arc::new(f) }
    }

    pub fn outcome() -> Self {
        Self::new(1, |_, y| vec![y])
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: f64) -> Vec<f64> {
        (self.f)(x, y)
    }
}

impl fmt::Debug for XzFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "XzFeature(dim = {})", self.dim)
    }
}

impl fmt::Debug for XyFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "XyFeature(dim = {})", self.dim)
    }
}

/// User-chosen functions entering the IPW, OR and DR estimating equations.
#[derive(Debug, Clone)]
pub struct InstrumentChoice {
    pub h1: XzFeature,
    pub g: XyFeature,
    pub h2: XzFeature,
    pub q1: XzFeature,
    pub q2: XyFeature,
    pub u: XyFeature,
    pub v: XzFeature,
}

impl InstrumentChoice {
    /// `h1` = the baseline propensity design, `g = q2 = u = Y`,
    /// `h2 = q1 = v` = the instrument vector.
    pub fn default_for(config: &ModelConfig) -> Self {
        let nz = config.iv.n_instruments();
        Self {
            h1: XzFeature::design(&config.baseline.design),
            g: XyFeature::outcome(),
            h2: XzFeature::instruments(nz),
            q1: XzFeature::instruments(nz),
            q2: XyFeature::outcome(),
            u: XyFeature::outcome(),
            v: XzFeature::instruments(nz),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamBlock {
    Xi,
    Omega,
    Zeta,
    Theta,
    Beta,
    Phi,
}

impl ParamBlock {
    pub fn name(self) -> &'static str {
        match self {
            ParamBlock::Xi => "xi",
            ParamBlock::Omega => "omega",
            ParamBlock::Zeta => "zeta",
            ParamBlock::Theta => "theta",
            ParamBlock::Beta => "beta",
            ParamBlock::Phi => "phi",
        }
    }
}

/// Named slices of a parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Layout {
    slices: Vec<(ParamBlock, Range<usize>)>,
}

impl Layout {
    pub fn push(&mut self, block: ParamBlock, len: usize) {
        let start = self.len();
        self.slices.push((block, start..start + len));
    }

    pub fn len(&self) -> usize {
        self.slices.last().map_or(0, |(_, r)| r.end)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, block: ParamBlock) -> Option<Range<usize>> {
        self.slices
            .iter()
            .find(|(b, _)| *b == block)
            .map(|(_, r)| r.clone())
    }

    pub fn index(&self, block: ParamBlock) -> Option<usize> {
        self.range(block).map(|r| r.start)
    }

    pub fn slices(&self) -> &[(ParamBlock, Range<usize>)] {
        &self.slices
    }
}

/// Form of the target row `m(O; phi)` whose root is the mean estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetKind {
    /// `R Y / pi - phi`
    Ipw,
    /// `R Y + (1 - R) E(Y | R = 0, X, Z) - phi`
    Or,
    /// `G^DR(u = Y) - phi`
    Dr,
    /// `R (Y - phi)`
    CompleteCase,
    /// `R Y / expit(design . beta) - phi`
    MarIpw,
    /// `Y - phi`, for fully observed data.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RowBlock {
    /// Logistic score of the instrument law.
    IvScore,
    /// Logistic score of the complete-case outcome law.
    OutcomeScore,
    /// Logistic score of a response model that ignores the outcome.
    MarScore,
    /// `(R / pi - 1) h1(X, Z)`
    IpwBaseline,
    /// `(R / pi) g(X, Y) (x) {h2 - E(h2 | X)}`
    IpwSelection,
    /// `{q1 - E(q1 | X)} (x) {(1 - R) E(q2 | R = 0, X, Z) + R q2}`
    OrSelection,
    /// `{v - E(v | X)} (x) G^DR(u)`
    DrSelection,
    Target(TargetKind),
}

impl RowBlock {
    fn tag(&self) -> &'static str {
        match self {
            RowBlock::IvScore => "iv_score",
            RowBlock::OutcomeScore => "outcome_score",
            RowBlock::MarScore => "response_score",
            RowBlock::IpwBaseline => "ipw_h1",
            RowBlock::IpwSelection => "ipw_selection",
            RowBlock::OrSelection => "or_selection",
            RowBlock::DrSelection => "dr_selection",
            RowBlock::Target(_) => "target",
        }
    }
}

/// Parameters of a response model without outcome dependence, used by the
/// MAR comparator.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseModel {
    pub design: Design,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MomentSystem {
    config: ModelConfig,
    choice: InstrumentChoice,
    response: Option<ResponseModel>,
    phi: f64,
    rows: Vec<RowBlock>,
    row_ranges: Vec<Range<usize>>,
    layout: Layout,
    dim_moments: usize,
    scale: f64,
}

/// Parameter values after substituting the free slices.
struct Bound {
    config: ModelConfig,
    beta: Vec<f64>,
    phi: f64,
}

impl MomentSystem {
    pub fn new(
        config: ModelConfig,
        choice: InstrumentChoice,
        response: Option<ResponseModel>,
        rows: Vec<RowBlock>,
        free: &[ParamBlock],
    ) -> Result<Self> {
        let mut layout = Layout::default();
        for &block in free {
            let len = match block {
                ParamBlock::Xi => config.iv.n_params(),
                ParamBlock::Omega => config.baseline.design.len(),
                ParamBlock::Zeta | ParamBlock::Phi => 1,
                ParamBlock::Theta => config.outcome.design.len(),
                ParamBlock::Beta => response
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("beta block requires a response model".into()))?
                    .design
                    .len(),
            };
            layout.push(block, len);
        }
        let mut row_ranges = Vec::with_capacity(rows.len());
        let mut start = 0;
        for block in &rows {
            let len = match block {
                RowBlock::IvScore => config.iv.n_params(),
                RowBlock::OutcomeScore => config.outcome.design.len(),
                RowBlock::MarScore => response
                    .as_ref()
                    .ok_or_else(|| Error::InvalidInput("response score requires a response model".into()))?
                    .design
                    .len(),
                RowBlock::IpwBaseline => choice.h1.dim,
                RowBlock::IpwSelection => choice.g.dim * choice.h2.dim,
                RowBlock::OrSelection => choice.q1.dim * choice.q2.dim,
                RowBlock::DrSelection => choice.v.dim * choice.u.dim,
                RowBlock::Target(_) => 1,
            };
            row_ranges.push(start..start + len);
            start += len;
        }
        if start < layout.len() {
            return Err(Error::InvalidInput(format!(
                "moment system has {start} rows but {} free parameters",
                layout.len()
            )));
        }
        Ok(Self {
            config,
            choice,
            response,
            phi: 0.0,
            rows,
            row_ranges,
            layout,
            dim_moments: start,
            scale: 1.0,
        })
    }

    pub fn dim_params(&self) -> usize {
        self.layout.len()
    }

    pub fn dim_moments(&self) -> usize {
        self.dim_moments
    }

    pub fn is_exactly_identified(&self) -> bool {
        self.dim_moments == self.dim_params()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn choice(&self) -> &InstrumentChoice {
        &self.choice
    }

    pub fn rows(&self) -> &[RowBlock] {
        &self.rows
    }

    /// Row indices occupied by `block`.
    pub fn row_range(&self, block: &RowBlock) -> Option<Range<usize>> {
        self.rows
            .iter()
            .position(|b| b == block)
            .map(|i| self.row_ranges[i].clone())
    }

    /// Returns the same system with every row multiplied by `factor`.
    pub fn scaled(mut self, factor: f64) -> Self {
        self.scale *= factor;
        self
    }

    /// Parameter vector holding the current values of all free blocks.
    pub fn current_params(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_params()];
        for (block, range) in self.layout.slices() {
            let src: Vec<f64> = match block {
                ParamBlock::Xi => self.config.iv.xi.clone(),
                ParamBlock::Omega => self.config.baseline.omega.clone(),
                ParamBlock::Zeta => vec![self.config.selection_bias.zeta],
                ParamBlock::Theta => self.config.outcome.theta.clone(),
                ParamBlock::Beta => self.response.as_ref().map(|r| r.beta.clone()).unwrap_or_default(),
                ParamBlock::Phi => vec![self.phi],
            };
            out[range.clone()].copy_from_slice(&src);
        }
        out
    }

    pub fn param_names(&self, covariates: &[String], instruments: &[String]) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim_params());
        for (block, _) in self.layout.slices() {
            let labels: Vec<String> = match block {
                ParamBlock::Xi => self
                    .config
                    .iv
                    .designs
                    .iter()
                    .enumerate()
                    .flat_map(|(k, d)| {
                        let zname = instruments.get(k).cloned().unwrap_or_else(|| format!("z{}", k + 1));
                        d.labels(covariates, instruments)
                            .into_iter()
                            .map(move |l| format!("{zname}|{l}"))
                    })
                    .collect(),
                ParamBlock::Omega => self.config.baseline.design.labels(covariates, instruments),
                ParamBlock::Theta => self.config.outcome.design.labels(covariates, instruments),
                ParamBlock::Beta => self
                    .response
                    .as_ref()
                    .map(|r| r.design.labels(covariates, instruments))
                    .unwrap_or_default(),
                ParamBlock::Zeta | ParamBlock::Phi => {
                    names.push(block.name().to_string());
                    continue;
                }
            };
            names.extend(labels.into_iter().map(|l| format!("{}[{l}]", block.name())));
        }
        names
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.dim_moments);
        for (block, range) in self.rows.iter().zip(&self.row_ranges) {
            if range.len() == 1 {
                out.push(block.tag().to_string());
            } else {
                out.extend((0..range.len()).map(|i| format!("{}[{i}]", block.tag())));
            }
        }
        out
    }

    fn bind(&self, params: &[f64]) -> Result<Bound> {
        if params.len() != self.dim_params() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.dim_params(),
                params.len()
            )));
        }
        let mut config = self.config.clone();
        let mut beta = self.response.as_ref().map(|r| r.beta.clone()).unwrap_or_default();
        let mut phi = self.phi;
        for (block, range) in self.layout.slices() {
            let v = &params[range.clone()];
            match block {
                ParamBlock::Xi => config.iv.xi.copy_from_slice(v),
                ParamBlock::Omega => config.baseline.omega.copy_from_slice(v),
                ParamBlock::Zeta => config.selection_bias.zeta = v[0],
                ParamBlock::Theta => config.outcome.theta.copy_from_slice(v),
                ParamBlock::Beta => beta.copy_from_slice(v),
                ParamBlock::Phi => phi = v[0],
            }
        }
        Ok(Bound { config, beta, phi })
    }

    /// Evaluates all moment rows for one observation.
    pub fn eval_row(&self, params: &[f64], obs: &Observation) -> Result<Vec<f64>> {
        let bound = self.bind(params)?;
        let mut out = vec![0.0; self.dim_moments];
        self.eval_into(&bound, obs, &mut out)?;
        Ok(out)
    }

    /// Sample average of the moment rows.
    pub fn mean(&self, data: &Dataset, params: &[f64]) -> Result<Vec<f64>> {
        let bound = self.bind(params)?;
        let mut total = grouped_sum(data.observations(), data.groups(), self.dim_moments, |obs, buf| {
            self.eval_into(&bound, obs, buf)
        })?;
        let n = data.n() as f64;
        for t in &mut total {
            *t /= n;
        }
        Ok(total)
    }

    /// Uncentered second-moment matrix of the per-row moments, `(1/n) sum g g'`.
    pub fn second_moment(&self, data: &Dataset, params: &[f64]) -> Result<DMatrix<f64>> {
        let bound = self.bind(params)?;
        let d = self.dim_moments;
        let mut s = DMatrix::zeros(d, d);
        let mut buf = vec![0.0; d];
        for &(i, count) in data.groups() {
            self.eval_into(&bound, &data.observations()[i], &mut buf)?;
            let c = count as f64;
            for a in 0..d {
                for b in 0..d {
                    s[(a, b)] += c * buf[a] * buf[b];
                }
            }
        }
        Ok(s / data.n() as f64)
    }

    /// n x dim_moments matrix of per-row moments.
    pub fn rows_matrix(&self, data: &Dataset, params: &[f64]) -> Result<DMatrix<f64>> {
        let bound = self.bind(params)?;
        let mut m = DMatrix::zeros(data.n(), self.dim_moments);
        let mut buf = vec![0.0; self.dim_moments];
        for (i, obs) in data.observations().iter().enumerate() {
            self.eval_into(&bound, obs, &mut buf)?;
            for (j, v) in buf.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    fn eval_into(&self, b: &Bound, obs: &Observation, out: &mut [f64]) -> Result<()> {
        let cfg = &b.config;
        let (x, z) = (&obs.x[..], &obs.z[..]);
        let r = obs.r();
        let y = obs.y_or_zero();
        let omega = &cfg.baseline.omega;
        let zeta = cfg.selection_bias.zeta;
        let theta = &cfg.outcome.theta;

        // R / pi, with pi only evaluated on observed rows
        let mut weight: Option<f64> = None;
        let mut ipw_weight = || -> Result<f64> {
            if let Some(w) = weight {
                return Ok(w);
            }
            let w = if r { 1.0 / cfg.propensity_with(omega, zeta, x, y, z)? } else { 0.0 };
            weight = Some(w);
            Ok(w)
        };

        for (block, range) in self.rows.iter().zip(&self.row_ranges) {
            let dst = &mut out[range.clone()];
            match block {
                RowBlock::IvScore => {
                    let mut k = 0;
                    for (j, design) in cfg.iv.designs.iter().enumerate() {
                        let p = cfg.iv.component_prob_with(&cfg.iv.xi, j, x);
                        let resid = z[j] - p;
                        for term in &design.terms {
                            dst[k] = resid * term.eval(x, &[]);
                            k += 1;
                        }
                    }
                }
                RowBlock::OutcomeScore => {
                    if r {
                        let p = cfg.outcome.prob_with(theta, x, z);
                        for (d, term) in dst.iter_mut().zip(&cfg.outcome.design.terms) {
                            *d = (y - p) * term.eval(x, z);
                        }
                    } else {
                        dst.fill(0.0);
                    }
                }
                RowBlock::MarScore => {
                    let design = &self.response.as_ref().expect("checked in new").design;
                    let p = expit(design.linear_predictor(&b.beta, x, z));
                    let resid = obs.r_f64() - p;
                    for (d, term) in dst.iter_mut().zip(&design.terms) {
                        *d = resid * term.eval(x, z);
                    }
                }
                RowBlock::IpwBaseline => {
                    let w = ipw_weight()?;
                    let h1 = self.choice.h1.eval(x, z);
                    for (d, h) in dst.iter_mut().zip(&h1) {
                        *d = (w - 1.0) * h;
                    }
                }
                RowBlock::IpwSelection => {
                    if r {
                        let w = ipw_weight()?;
                        let g = self.choice.g.eval(x, y);
                        let c = centered(cfg, &self.choice.h2, x, z);
                        outer_into(dst, &g, &c, w);
                    } else {
                        dst.fill(0.0);
                    }
                }
                RowBlock::OrSelection => {
                    let c = centered(cfg, &self.choice.q1, x, z);
                    let s = if r {
                        self.choice.q2.eval(x, y)
                    } else {
                        let q2 = &self.choice.q2;
                        cfg.missing_expectation_with(theta, zeta, x, z, |x, y| q2.eval(x, y))
                    };
                    outer_into(dst, &c, &s, 1.0);
                }
                RowBlock::DrSelection => {
                    let c = centered(cfg, &self.choice.v, x, z);
                    let w = ipw_weight()?;
                    let u = &self.choice.u;
                    let m0 = cfg.missing_expectation_with(theta, zeta, x, z, |x, y| u.eval(x, y));
                    let g: Vec<f64> = if r {
                        let uy = u.eval(x, y);
                        uy.iter().zip(&m0).map(|(a, m)| w * (a - m) + m).collect()
                    } else {
                        m0
                    };
                    outer_into(dst, &c, &g, 1.0);
                }
                RowBlock::Target(kind) => {
                    let value = match kind {
                        TargetKind::Ipw => ipw_weight()? * y,
                        TargetKind::Or => {
                            if r {
                                y
                            } else {
                                cfg.tilted_prob_one_with(theta, zeta, x, z)
                            }
                        }
                        TargetKind::Dr => {
                            let m0 = cfg.tilted_prob_one_with(theta, zeta, x, z);
                            if r {
                                ipw_weight()? * (y - m0) + m0
                            } else {
                                m0
                            }
                        }
                        TargetKind::CompleteCase => {
                            dst[0] = if r { (y - b.phi) * self.scale } else { 0.0 };
                            continue;
                        }
                        TargetKind::MarIpw => {
                            if r {
                                let design = &self.response.as_ref().ok_or_else(|| {
                                    Error::InvalidInput("MAR target requires a response model".into())
                                })?;
                                let p = expit(design.design.linear_predictor(&b.beta, x, z));
                                if p < cfg.positivity_floor {
                                    return Err(Error::PositivityViolation {
                                        value: p,
                                        floor: cfg.positivity_floor,
                                    });
                                }
                                y / p
                            } else {
                                0.0
                            }
                        }
                        TargetKind::Mean => y,
                    };
                    dst[0] = value - b.phi;
                }
            }
            if self.scale != 1.0 {
                for d in dst.iter_mut() {
                    *d *= self.scale;
                }
            }
        }
        Ok(())
    }
}

/// `f(x, z) - E[f(x, Z) | x]` under the instrument law.
fn centered(cfg: &ModelConfig, f: &XzFeature, x: &[f64], z: &[f64]) -> Vec<f64> {
    let e = cfg.iv.expect_with(&cfg.iv.xi, x, |zz| f.eval(x, zz));
    f.eval(x, z).iter().zip(&e).map(|(a, b)| a - b).collect()
}

/// Row-major outer product `scale * a (x) b` written into `dst`.
fn outer_into(dst: &mut [f64], a: &[f64], b: &[f64], scale: f64) {
    let mut k = 0;
    for ai in a {
        for bj in b {
            dst[k] = scale * ai * bj;
            k += 1;
        }
    }
}

/// `G^DR = (R / pi) {u - E(u | R = 0, X, Z)} + E(u | R = 0, X, Z)`.
pub fn eval_g_dr(
    config: &ModelConfig,
    u: &XyFeature,
    obs: &Observation,
    zeta: f64,
    omega: &[f64],
    theta: &[f64],
) -> Result<Vec<f64>> {
    let (x, z) = (&obs.x[..], &obs.z[..]);
    let m0 = config.missing_expectation_with(theta, zeta, x, z, |x, y| u.eval(x, y));
    match obs.y {
        None => Ok(m0),
        Some(y) => {
            let pi = config.propensity_with(omega, zeta, x, y, z)?;
            let uy = u.eval(x, y);
            let w = 1.0 / pi;
            Ok(uy.iter().zip(&m0).map(|(a, m)| w * (a - m) + m).collect())
        }
    }
}

/// IPW system in `(omega, zeta)` with the instrument law fixed at `config.iv.xi`.
pub fn build_ipw_system(config: &ModelConfig, choice: &InstrumentChoice) -> Result<MomentSystem> {
    MomentSystem::new(
        config.clone(),
        choice.clone(),
        None,
        vec![RowBlock::IpwBaseline, RowBlock::IpwSelection],
        &[ParamBlock::Omega, ParamBlock::Zeta],
    )
}

/// OR system in `zeta` with the instrument and complete-case outcome laws fixed.
pub fn build_or_system(config: &ModelConfig, choice: &InstrumentChoice) -> Result<MomentSystem> {
    MomentSystem::new(
        config.clone(),
        choice.clone(),
        None,
        vec![RowBlock::OrSelection],
        &[ParamBlock::Zeta],
    )
}

/// DR system in `(omega, zeta)`: the `h1` rows stacked with the `G^DR` rows.
pub fn build_dr_system(config: &ModelConfig, choice: &InstrumentChoice) -> Result<MomentSystem> {
    MomentSystem::new(
        config.clone(),
        choice.clone(),
        None,
        vec![RowBlock::IpwBaseline, RowBlock::DrSelection],
        &[ParamBlock::Omega, ParamBlock::Zeta],
    )
}

/// Main-effects response model on `(x, z)` used by the MAR comparator.
pub fn mar_response_design(nx: usize, nz: usize) -> Design {
    use crate::model::Var;
    let vars: Vec<Var> = (0..nx).map(Var::X).chain((0..nz).map(Var::Z)).collect();
    Design::main_effects(&vars)
}

/// Which stacked system to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StackedKind {
    Ipw,
    Or,
    Dr,
    CompleteCase,
    MarIpw,
    /// IPW with `zeta` held at its configured value.
    IpwFixedZeta,
    /// Plain mean of a fully observed outcome.
    Mean,
}

/// Full system over nuisance, estimator and target parameters.
pub fn build_stacked_system(
    kind: StackedKind,
    config: &ModelConfig,
    choice: &InstrumentChoice,
    response: Option<ResponseModel>,
) -> Result<MomentSystem> {
    use ParamBlock as P;
    use RowBlock as B;
    let (rows, free): (Vec<RowBlock>, Vec<ParamBlock>) = match kind {
        StackedKind::Ipw => (
            vec![B::IvScore, B::IpwBaseline, B::IpwSelection, B::Target(TargetKind::Ipw)],
            vec![P::Xi, P::Omega, P::Zeta, P::Phi],
        ),
        StackedKind::Or => (
            vec![B::IvScore, B::OutcomeScore, B::OrSelection, B::Target(TargetKind::Or)],
            vec![P::Xi, P::Theta, P::Zeta, P::Phi],
        ),
        StackedKind::Dr => (
            vec![
                B::IvScore,
                B::IpwBaseline,
                B::DrSelection,
                B::OutcomeScore,
                B::Target(TargetKind::Dr),
            ],
            vec![P::Xi, P::Omega, P::Zeta, P::Theta, P::Phi],
        ),
        StackedKind::CompleteCase => (vec![B::Target(TargetKind::CompleteCase)], vec![P::Phi]),
        StackedKind::MarIpw => (
            vec![B::MarScore, B::Target(TargetKind::MarIpw)],
            vec![P::Beta, P::Phi],
        ),
        StackedKind::IpwFixedZeta => (
            vec![B::IpwBaseline, B::Target(TargetKind::Ipw)],
            vec![P::Omega, P::Phi],
        ),
        StackedKind::Mean => (vec![B::Target(TargetKind::Mean)], vec![P::Phi]),
    };
    MomentSystem::new(config.clone(), choice.clone(), response, rows, &free)
}
