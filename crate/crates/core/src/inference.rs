//! Posterior mode of `theta`, its curvature, credible intervals and a grid
//! exploration of the approximate marginal posterior.
//!
//! Optimization runs on unconstrained coordinates
//! `u = (log tau2, logit zeta~, logit eta~, beta)`, where `zeta~` and `eta~`
//! are rescaled to the unit interval over their supports. The maximized
//! function is the log-posterior density of `theta` itself, so the mode is
//! the natural-scale mode; the Jacobian of the map only enters the grid
//! weights.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::RwLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::graph::CarStructure;
use crate::mode::{find_mode, la1_log_marginal, ModeOptions, ModeResult};
use crate::model::{linear_predictor, CountPanel, CovariateDesign, Field, LatentField, ModelParams};
use crate::prior::{PriorSpec, ScalarPrior};
use crate::xla::{corrections, invert_hessian_blocks};

/// Approximation used for `log p(Z | theta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    La1,
    Xla,
    XlaNo6,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::La1 => "la1",
            Method::Xla => "xla",
            Method::XlaNo6 => "xla-no6",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "la1" => Ok(Method::La1),
            "xla" => Ok(Method::Xla),
            "xla-no6" => Ok(Method::XlaNo6),
            _ => Err(Error::Config(format!("unknown method '{s}' (expected la1, xla or xla-no6)"))),
        }
    }
}

/// Data, design and priors of one inference problem.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'a> {
    pub panel: &'a CountPanel,
    pub design: &'a CovariateDesign,
    pub car: &'a CarStructure,
    pub priors: &'a PriorSpec,
    /// When false the prior density is dropped and the mode is a
    /// (approximate) maximum-likelihood estimate.
    pub include_priors: bool,
}

impl<'a> Problem<'a> {
    pub fn new(
        panel: &'a CountPanel,
        design: &'a CovariateDesign,
        car: &'a CarStructure,
        priors: &'a PriorSpec,
    ) -> Result<Self> {
        design.check_panel(panel)?;
        if car.n_locations() != panel.n_locations() {
            return Err(Error::Dimension(format!(
                "graph has {} locations, panel has {}",
                car.n_locations(),
                panel.n_locations()
            )));
        }
        Ok(Self {
            panel,
            design,
            car,
            priors,
            include_priors: true,
        })
    }

    pub fn likelihood_only(mut self) -> Self {
        self.include_priors = false;
        self
    }

    pub fn mode(&self, params: &ModelParams, start: Option<&LatentField>) -> Result<ModeResult> {
        let alpha = linear_predictor(self.design, &params.beta)?;
        find_mode(self.panel, params, &alpha, self.car, start, ModeOptions::default())
    }

    /// Approximate log-posterior (up to a constant) from a mode at `params`.
    pub fn log_posterior_at(&self, params: &ModelParams, mode: &ModeResult, method: Method) -> Result<f64> {
        let mut v = la1_log_marginal(mode, self.car, params)?;
        if method != Method::La1 {
            v += corrections(mode, self.panel, params)?.total(method == Method::Xla);
        }
        if self.include_priors {
            v += self.priors.log_density(params, self.car);
        }
        Ok(v)
    }

    pub fn log_posterior(&self, params: &ModelParams, method: Method) -> Result<f64> {
        let mode = self.mode(params, None)?;
        self.log_posterior_at(params, &mode, method)
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Map between `theta` and the unconstrained coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    /// Support of zeta, or `None` when the graph has no edges and zeta is
    /// held at 0.
    zeta: Option<(f64, f64)>,
    eta: (f64, f64),
    beta_names: Vec<String>,
}

impl Transform {
    pub fn new(car: &CarStructure, priors: &PriorSpec, design: &CovariateDesign) -> Self {
        let s = priors.zeta_support(car);
        let zeta = (s.lower.is_finite() && s.upper.is_finite()).then_some((s.lower, s.upper));
        let eta = match priors.eta {
            ScalarPrior::Uniform { lower, upper } => (lower.max(0.0), upper.min(1.0)),
            _ => (0.0, 1.0),
        };
        Self {
            zeta,
            eta,
            beta_names: design.names().to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        2 + usize::from(self.zeta.is_some()) + self.beta_names.len()
    }

    fn eta_index(&self) -> usize {
        1 + usize::from(self.zeta.is_some())
    }

    /// Coordinate names in the order of `u`.
    pub fn names(&self) -> Vec<String> {
        let mut v = vec!["tau2".to_string()];
        if self.zeta.is_some() {
            v.push("zeta".into());
        }
        v.push("eta".into());
        v.extend(self.beta_names.iter().map(|b| format!("beta_{b}")));
        v
    }

    pub fn to_unconstrained(&self, params: &ModelParams) -> Result<Vec<f64>> {
        let inside = |x: f64, (lo, hi): (f64, f64), what: &str| {
            if x > lo && x < hi {
                Ok(logit((x - lo) / (hi - lo)))
            } else {
                Err(Error::Inadmissible(format!(
                    "{what} = {x} must lie strictly inside ({lo}, {hi}) for optimization"
                )))
            }
        };
        if !(params.tau2 > 0.0) {
            return Err(Error::Inadmissible(format!("tau2 = {} must be positive", params.tau2)));
        }
        if params.beta.len() != self.beta_names.len() {
            return Err(Error::Dimension(format!(
                "beta has {} entries, design has {}",
                params.beta.len(),
                self.beta_names.len()
            )));
        }
        let mut u = vec![params.tau2.ln()];
        if let Some(s) = self.zeta {
            u.push(inside(params.zeta, s, "zeta")?);
        }
        u.push(inside(params.eta, self.eta, "eta")?);
        u.extend_from_slice(&params.beta);
        Ok(u)
    }

    pub fn to_params(&self, u: &[f64]) -> ModelParams {
        let scale = |x: f64, (lo, hi): (f64, f64)| lo + (hi - lo) * sigmoid(x);
        let zeta = self.zeta.map_or(0.0, |s| scale(u[1], s));
        let k = self.eta_index();
        ModelParams {
            eta: scale(u[k], self.eta),
            zeta,
            tau2: u[0].exp(),
            beta: u[k + 1..].to_vec(),
        }
    }

    /// `log |d theta / d u|`.
    pub fn log_jacobian(&self, u: &[f64]) -> f64 {
        let bounded = |x: f64, (lo, hi): (f64, f64)| {
            let s = sigmoid(x);
            ((hi - lo) * s * (1.0 - s)).ln()
        };
        let mut lj = u[0];
        if let Some(s) = self.zeta {
            lj += bounded(u[1], s);
        }
        lj + bounded(u[self.eta_index()], self.eta)
    }

    /// Natural-scale value of coordinate `j` at `x` (the maps act
    /// coordinate-wise and are increasing).
    pub fn coordinate_value(&self, j: usize, x: f64) -> f64 {
        let scale = |s: (f64, f64)| s.0 + (s.1 - s.0) * sigmoid(x);
        match (j, self.zeta) {
            (0, _) => x.exp(),
            (1, Some(s)) => scale(s),
            _ if j == self.eta_index() => scale(self.eta),
            _ => x,
        }
    }
}

/// A twice-differentiable objective on unconstrained coordinates.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn value(&self, u: &[f64]) -> Result<f64>;

    /// Called with each accepted iterate before its derivatives are taken;
    /// lets expensive objectives warm-start nearby evaluations.
    fn recenter(&self, _u: &[f64]) -> Result<()> {
        Ok(())
    }

    /// Log-Jacobian of the map from `u` to the natural parameters.
    fn log_jacobian(&self, _u: &[f64]) -> f64 {
        0.0
    }
}

/// Log-posterior of a [`Problem`] under a [`Method`] in transformed
/// coordinates.
pub struct PosteriorObjective<'a> {
    pub problem: Problem<'a>,
    pub method: Method,
    pub transform: Transform,
    center: RwLock<Option<LatentField>>,
}

impl<'a> PosteriorObjective<'a> {
    pub fn new(problem: Problem<'a>, method: Method) -> Self {
        let transform = Transform::new(problem.car, problem.priors, problem.design);
        Self {
            problem,
            method,
            transform,
            center: RwLock::new(None),
        }
    }
}

impl Objective for PosteriorObjective<'_> {
    fn dim(&self) -> usize {
        self.transform.dim()
    }

    fn value(&self, u: &[f64]) -> Result<f64> {
        let params = self.transform.to_params(u);
        if params.validate(self.problem.car).is_err() || !params.tau2.is_finite() || params.tau2 <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let center = self.center.read().expect("center lock");
        let mode = self.problem.mode(&params, center.as_ref())?;
        self.problem.log_posterior_at(&params, &mode, self.method)
    }

    fn recenter(&self, u: &[f64]) -> Result<()> {
        let params = self.transform.to_params(u);
        let start = self.center.read().expect("center lock").clone();
        let mode = self.problem.mode(&params, start.as_ref())?;
        *self.center.write().expect("center lock") = Some(mode.mu_star);
        Ok(())
    }

    fn log_jacobian(&self, u: &[f64]) -> f64 {
        self.transform.log_jacobian(u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Convergence threshold on the max-norm of the gradient.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Finite-difference step relative to `max(1, |u_j|)`.
    pub rel_step: f64,
    /// Largest change of any coordinate in one step.
    pub max_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-5,
            max_iter: 50,
            rel_step: 1e-4,
            max_step: 2.0,
        }
    }
}

/// Central-difference gradient and Hessian at `u` (value `f0`), using
/// `2 d^2` evaluations.
pub fn fd_gradient_hessian(
    obj: &dyn Objective,
    u: &[f64],
    f0: f64,
    rel_step: f64,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let d = u.len();
    let h: Vec<f64> = u.iter().map(|x| rel_step * x.abs().max(1.0)).collect();
    let mut shifts: Vec<Vec<(usize, f64)>> = Vec::with_capacity(2 * d * d);
    for i in 0..d {
        shifts.push(vec![(i, h[i])]);
        shifts.push(vec![(i, -h[i])]);
    }
    for i in 0..d {
        for j in 0..i {
            for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                shifts.push(vec![(i, si * h[i]), (j, sj * h[j])]);
            }
        }
    }
    let values = shifts
        .par_iter()
        .map(|s| {
            let mut x = u.to_vec();
            for &(k, dk) in s {
                x[k] += dk;
            }
            obj.value(&x)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut grad = vec![0.0; d];
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let (fp, fm) = (values[2 * i], values[2 * i + 1]);
        grad[i] = (fp - fm) / (2.0 * h[i]);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    }
    let mut k = 2 * d;
    for i in 0..d {
        for j in 0..i {
            let (pp, pm, mp, mm) = (values[k], values[k + 1], values[k + 2], values[k + 3]);
            k += 4;
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    if grad.iter().chain(hess.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite finite-difference derivative near the iterate".into()));
    }
    Ok((grad, hess))
}

/// Output of [`maximize`].
#[derive(Debug, Clone)]
pub struct Optimum {
    pub u: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub iterations: usize,
    /// Steps taken along the gradient because the Hessian was not
    /// negative definite.
    pub fallback_steps: usize,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton-Raphson ascent with finite-difference derivatives, backtracking
/// and a steepest-ascent fallback.
pub fn maximize(obj: &dyn Objective, start: &[f64], opts: NewtonOptions) -> Result<Optimum> {
    let mut u = start.to_vec();
    obj.recenter(&u)?;
    let mut f = obj.value(&u)?;
    if !f.is_finite() {
        return Err(Error::Inadmissible("starting point has zero posterior density".into()));
    }
    let mut trace = Vec::new();
    let mut fallback_steps = 0;
    for iter in 1..=opts.max_iter {
        let (grad, hess) = fd_gradient_hessian(obj, &u, f, opts.rel_step)?;
        let gnorm = max_abs(&grad);
        trace.push(gnorm);
        if gnorm < opts.grad_tol {
            return Ok(Optimum {
                u,
                value: f,
                gradient: grad,
                hessian: hess,
                iterations: iter - 1,
                fallback_steps,
            });
        }
        let g = DVector::from_column_slice(&grad);
        let newton = (-&hess).cholesky().map(|c| c.solve(&g));
        let mut candidates = Vec::with_capacity(2);
        if let Some(d) = newton {
            candidates.push((d, false));
        }
        candidates.push((&g / gnorm.max(1.0), true));

        let mut moved = false;
        for (mut d, is_fallback) in candidates {
            let size = d.amax();
            if size > opts.max_step {
                d *= opts.max_step / size;
            }
            let mut t = 1.0;
            for _ in 0..40 {
                let trial: Vec<f64> = u.iter().zip(d.iter()).map(|(a, b)| a + t * b).collect();
                let ft = obj.value(&trial).unwrap_or(f64::NEG_INFINITY);
                if ft > f {
                    u = trial;
                    f = ft;
                    moved = true;
                    break;
                }
                t *= 0.5;
            }
            if moved {
                fallback_steps += usize::from(is_fallback);
                break;
            }
        }
        if !moved {
            break;
        }
        obj.recenter(&u)?;
    }
    Err(Error::NonConvergence {
        what: "posterior mode search",
        iterations: trace.len(),
        trace,
    })
}

/// A marginal credible interval for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

/// One evaluated point of the exploration grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub u: Vec<f64>,
    /// Integer lattice position along the scaled Hessian eigendirections.
    pub index: Vec<i32>,
    pub log_posterior: f64,
    /// Normalized weight `exp(log_posterior + log_jacobian)` over the kept
    /// points.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    /// Spacing in posterior standard deviations.
    pub spacing: f64,
    /// Points more than this many nats below the mode are dropped.
    pub cutoff: f64,
    pub max_points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            spacing: 0.75,
            cutoff: 6.0,
            max_points: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exploration {
    pub points: Vec<GridPoint>,
    /// True if `max_points` stopped the search before the cutoff did.
    pub truncated: bool,
    pub evaluations: usize,
}

/// Flood-fill over the lattice `u_hat + V diag(spacing / sqrt(lambda)) k`,
/// where `V, lambda` are the eigenpairs of `-hessian`, keeping every point
/// within `cutoff` of `value_hat`.
pub fn explore(
    obj: &dyn Objective,
    u_hat: &[f64],
    value_hat: f64,
    hessian: &DMatrix<f64>,
    spec: GridSpec,
) -> Result<Exploration> {
    let d = u_hat.len();
    let eig = SymmetricEigen::new(-hessian.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite(
            "negative Hessian of the log-posterior at the mode".into(),
        ));
    }
    let axes: Vec<DVector<f64>> = (0..d)
        .map(|j| eig.eigenvectors.column(j) * (spec.spacing / eig.eigenvalues[j].sqrt()))
        .collect();
    let locate = |k: &[i32]| -> Vec<f64> {
        let mut u = u_hat.to_vec();
        for (axis, &kj) in axes.iter().zip(k) {
            for (x, a) in u.iter_mut().zip(axis.iter()) {
                *x += f64::from(kj) * a;
            }
        }
        u
    };

    let origin = vec![0i32; d];
    let mut seen: HashSet<Vec<i32>> = HashSet::from([origin.clone()]);
    let mut frontier: VecDeque<Vec<i32>> = VecDeque::from([origin]);
    let mut kept: Vec<(Vec<i32>, Vec<f64>, f64)> = Vec::new();
    let mut evaluations = 0;
    let mut truncated = false;
    while !frontier.is_empty() {
        let room = spec.max_points.saturating_sub(evaluations);
        if room == 0 {
            truncated = true;
            break;
        }
        let wave: Vec<Vec<i32>> = frontier.drain(..frontier.len().min(room)).collect();
        let values = wave
            .par_iter()
            .map(|k| {
                let u = locate(k);
                obj.value(&u).map(|v| (u, v))
            })
            .collect::<Result<Vec<_>>>()?;
        evaluations += wave.len();
        for (k, (u, v)) in wave.into_iter().zip(values) {
            if !(v >= value_hat - spec.cutoff) {
                continue;
            }
            for j in 0..d {
                for s in [-1, 1] {
                    let mut n = k.clone();
                    n[j] += s;
                    if seen.insert(n.clone()) {
                        frontier.push_back(n);
                    }
                }
            }
            kept.push((k, u, v));
        }
    }
    kept.sort_by(|a, b| a.0.cmp(&b.0));
    let log_w: Vec<f64> = kept.iter().map(|(_, u, v)| v + obj.log_jacobian(u)).collect();
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|l| (l - top).exp()).sum();
    let points = kept
        .into_iter()
        .zip(&log_w)
        .map(|((index, u, v), lw)| GridPoint {
            u,
            index,
            log_posterior: v,
            weight: (lw - top).exp() / total,
        })
        .collect();
    Ok(Exploration {
        points,
        truncated,
        evaluations,
    })
}

/// Result of [`maximize_posterior`], optionally augmented by
/// [`explore_grid`].
#[derive(Debug, Clone)]
pub struct PosteriorFit {
    pub method: Method,
    pub theta_hat: ModelParams,
    pub transform: Transform,
    pub u_hat: Vec<f64>,
    pub log_posterior: f64,
    /// Finite-difference Hessian of the log-posterior in the transformed
    /// coordinates.
    pub hessian: DMatrix<f64>,
    pub gradient: Vec<f64>,
    /// 95% intervals; empty when the Hessian is not negative definite.
    pub intervals: Vec<Interval>,
    pub grid: Vec<GridPoint>,
    pub grid_truncated: bool,
    pub iterations: usize,
    pub fallback_steps: usize,
    pub include_priors: bool,
}

impl PosteriorFit {
    pub fn names(&self) -> Vec<String> {
        self.transform.names()
    }

    /// Posterior parameter draws represented by the grid, with weights.
    pub fn grid_params(&self) -> Vec<(ModelParams, f64)> {
        self.grid
            .iter()
            .map(|p| (self.transform.to_params(&p.u), p.weight))
            .collect()
    }
}

/// Starting point used when none is supplied.
pub fn default_start(problem: &Problem<'_>) -> ModelParams {
    let panel = problem.panel;
    let mean = if panel.n_cells() > 0 {
        panel.counts().iter().map(|&z| f64::from(z)).sum::<f64>() / panel.n_cells() as f64
    } else {
        1.0
    };
    let transform = Transform::new(problem.car, problem.priors, problem.design);
    let eta = 0.3f64.clamp(transform.eta.0 + 1e-3, transform.eta.1 - 1e-3);
    let zeta = match transform.zeta {
        Some((lo, hi)) if lo < 0.0 && hi > 0.0 => 0.0,
        Some((lo, hi)) => 0.5 * (lo + hi),
        None => 0.0,
    };
    let tau2 = 0.5;
    let mut beta = vec![0.0; problem.design.p()];
    beta[0] = (mean + 0.1).ln() + (1.0 - eta).ln() - tau2 / 2.0;
    ModelParams { eta, zeta, tau2, beta }
}

/// Locate the posterior mode of `theta` under `method` and attach 95%
/// intervals.
pub fn maximize_posterior(
    problem: &Problem<'_>,
    method: Method,
    start: Option<&ModelParams>,
    opts: NewtonOptions,
) -> Result<PosteriorFit> {
    let obj = PosteriorObjective::new(*problem, method);
    let start = start.cloned().unwrap_or_else(|| default_start(problem));
    start.validate(problem.car)?;
    let u0 = obj.transform.to_unconstrained(&start)?;
    let opt = maximize(&obj, &u0, opts)?;
    let mut fit = PosteriorFit {
        method,
        theta_hat: obj.transform.to_params(&opt.u),
        transform: obj.transform.clone(),
        u_hat: opt.u,
        log_posterior: opt.value,
        hessian: opt.hessian,
        gradient: opt.gradient,
        intervals: Vec::new(),
        grid: Vec::new(),
        grid_truncated: false,
        iterations: opt.iterations,
        fallback_steps: opt.fallback_steps,
        include_priors: problem.include_priors,
    };
    fit.intervals = credible_intervals(&fit, 0.95).unwrap_or_default();
    Ok(fit)
}

/// Gaussian intervals in the transformed coordinates, mapped back
/// endpoint-wise.
pub fn credible_intervals(fit: &PosteriorFit, level: f64) -> Result<Vec<Interval>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!("credible level {level} not in (0, 1)")));
    }
    let cov = (-&fit.hessian)
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("posterior covariance (negative Hessian)".into()))?
        .inverse();
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    Ok(fit
        .names()
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let sd = cov[(j, j)].max(0.0).sqrt();
            let u = fit.u_hat[j];
            Interval {
                name,
                estimate: fit.transform.coordinate_value(j, u),
                lower: fit.transform.coordinate_value(j, u - z * sd),
                upper: fit.transform.coordinate_value(j, u + z * sd),
            }
        })
        .collect())
}

/// Evaluate the posterior over the exploration grid around the mode.
pub fn explore_grid(fit: &PosteriorFit, problem: &Problem<'_>, spec: GridSpec) -> Result<PosteriorFit> {
    let obj = PosteriorObjective::new(*problem, fit.method);
    obj.recenter(&fit.u_hat)?;
    let ex = explore(&obj, &fit.u_hat, fit.log_posterior, &fit.hessian, spec)?;
    let mut out = fit.clone();
    out.grid = ex.points;
    out.grid_truncated = ex.truncated;
    Ok(out)
}

/// Per-cell moments of the latent field under the mixture of Gaussian
/// approximations over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentMoments {
    pub mean: Field,
    pub variance: Field,
}

/// Mixture moments `sum w mu*` and `sum w (g^ii + mu*^2) - mean^2`.
pub fn latent_marginal(fit: &PosteriorFit, problem: &Problem<'_>) -> Result<LatentMoments> {
    if fit.grid.is_empty() {
        return Err(Error::Config("latent marginals need an explored grid".into()));
    }
    let (n, t_len) = (problem.panel.n_locations(), problem.panel.n_times());
    let parts = fit
        .grid_params()
        .par_iter()
        .map(|(params, w)| {
            let mode = problem.mode(params, None)?;
            let inv = invert_hessian_blocks(&mode)?;
            Ok((mode.mu_star, inv.diagonal_field(), *w))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = Field::zeros(n, t_len);
    let mut second = Field::zeros(n, t_len);
    for (mu, var, w) in &parts {
        for k in 0..mean.as_slice().len() {
            let m = mu.as_slice()[k];
            mean.as_mut_slice()[k] += w * m;
            second.as_mut_slice()[k] += w * (var.as_slice()[k] + m * m);
        }
    }
    let variance = Field::from_fn(n, t_len, |i, t| (second.get(i, t) - mean.get(i, t).powi(2)).max(0.0));
    Ok(LatentMoments { mean, variance })
}
