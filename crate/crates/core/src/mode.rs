//! Gaussian approximation to the latent field given data and parameters.
//!
//! The negative log integrand `g` splits into independent weekly blocks,
//! so the mode is found block by block: each block runs damped Newton
//! iterations `(Q + diag k(mu)) mu_new = f(mu) + Q alpha`, where `k` and
//! `f` are the per-cell Taylor coefficients of the log-likelihood. The
//! Cholesky factor of each block Hessian is kept for the determinant and
//! for later inversion.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::cell::Cell;
use crate::error::{Error, Result};
use crate::graph::{CarPrecision, CarStructure};
use crate::model::{g_block, linear_predictor, CountPanel, CovariateDesign, Field, LatentField, ModelParams};
use crate::prior::PriorSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeOptions {
    /// Convergence threshold on the max-norm of the Newton update.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ModeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// Mode of one weekly block with its Hessian factor.
#[derive(Debug, Clone)]
pub struct BlockMode {
    pub mu: Vec<f64>,
    /// Curvature `k(mu*)` of each cell, the diagonal of `W`.
    pub w: Vec<f64>,
    /// Cholesky factor of `Q + diag(w)`.
    pub factor: Cholesky<f64, Dyn>,
    pub logdet_hessian: f64,
    pub g: f64,
    pub iterations: usize,
}

impl BlockMode {
    pub fn hessian(&self) -> DMatrix<f64> {
        let l = self.factor.l();
        &l * l.transpose()
    }
}

/// Result of [`find_mode`].
#[derive(Debug, Clone)]
pub struct ModeResult {
    pub mu_star: LatentField,
    pub w: Field,
    pub blocks: Vec<BlockMode>,
    pub logdet_hessian: f64,
    pub g_at_mode: f64,
    pub converged: bool,
    /// Largest iteration count over the blocks.
    pub iterations: usize,
}

impl ModeResult {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Dense block Hessian `Q + diag(k(mu*))` of week `t`.
    pub fn hessian_block(&self, t: usize) -> DMatrix<f64> {
        self.blocks[t].hessian()
    }
}

/// Starting point `log(Z + 0.5)` pulled half-way toward `alpha`.
pub fn default_start(panel: &CountPanel, alpha: &Field) -> LatentField {
    Field::from_fn(panel.n_locations(), panel.n_times(), |i, t| {
        0.5 * ((f64::from(panel.count(i, t)) + 0.5).ln() + alpha.get(i, t))
    })
}

fn grad_and_curvature(
    cells: &[Cell],
    mu: &[f64],
    alpha: &[f64],
    q: &CarPrecision<'_>,
) -> (Vec<f64>, Vec<f64>) {
    let centered: Vec<f64> = mu.iter().zip(alpha).map(|(a, b)| a - b).collect();
    let mut grad = q.mul(&centered);
    let mut curv = vec![0.0; mu.len()];
    for (i, cell) in cells.iter().enumerate() {
        let (d1, d2) = cell.gradient_curvature(mu[i]);
        grad[i] += d1;
        curv[i] = d2;
    }
    (grad, curv)
}

fn block_hessian(q_dense: &DMatrix<f64>, curv: &[f64], clip: bool) -> DMatrix<f64> {
    let mut h = q_dense.clone();
    for (i, &k) in curv.iter().enumerate() {
        h[(i, i)] += if clip { k.max(0.0) } else { k };
    }
    h
}

#[allow(clippy::too_many_arguments)]
fn mode_block(
    t: usize,
    panel: &CountPanel,
    eta: f64,
    q: &CarPrecision<'_>,
    q_dense: &DMatrix<f64>,
    alpha: &[f64],
    start: &[f64],
    opts: ModeOptions,
) -> Result<BlockMode> {
    let cells: Vec<Cell> = panel.block_cells(t, eta).collect();
    let objective = |mu: &[f64]| g_block(t, mu, panel, eta, q, alpha);
    let mut mu = start.to_vec();
    let mut g_cur = objective(&mu);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let (grad, curv) = grad_and_curvature(&cells, &mu, alpha, q);
        // Indefinite curvature can occur where eta * Z_prev dominates the
        // intensity; fall back to the clipped (Fisher-like) curvature.
        let factor = block_hessian(q_dense, &curv, false)
            .cholesky()
            .or_else(|| block_hessian(q_dense, &curv, true).cholesky())
            .ok_or_else(|| Error::NotPositiveDefinite(format!("mode block {t}")))?;
        let step = factor.solve(&DVector::from_vec(grad));
        let size = step.amax();
        trace.push(size);
        if !size.is_finite() {
            break;
        }
        if size < opts.tol {
            for (m, s) in mu.iter_mut().zip(step.iter()) {
                *m -= s;
            }
            converged = true;
            break;
        }
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = mu.iter().zip(step.iter()).map(|(m, s)| m - scale * s).collect();
            let g_trial = objective(&trial);
            if g_trial <= g_cur + 1e-12 * g_cur.abs() {
                mu = trial;
                g_cur = g_trial;
                break;
            }
            scale *= 0.5;
            if scale < 1e-12 {
                return Err(Error::NonConvergence {
                    what: "latent mode step-halving",
                    iterations,
                    trace,
                });
            }
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "latent mode",
            iterations,
            trace,
        });
    }

    let (_, w) = grad_and_curvature(&cells, &mu, alpha, q);
    let factor = block_hessian(q_dense, &w, false).cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite(format!("Hessian of week {} at the mode", t + 1))
    })?;
    let logdet_hessian = 2.0 * factor.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let g = objective(&mu);
    Ok(BlockMode {
        mu,
        w,
        factor,
        logdet_hessian,
        g,
        iterations,
    })
}

/// Locate the mode of the Gaussian approximation, week by week.
pub fn find_mode(
    panel: &CountPanel,
    params: &ModelParams,
    alpha: &Field,
    car: &CarStructure,
    start: Option<&LatentField>,
    opts: ModeOptions,
) -> Result<ModeResult> {
    params.validate(car)?;
    let (n, t_len) = (panel.n_locations(), panel.n_times());
    if alpha.n_locations() != n || alpha.n_times() != t_len || car.n_locations() != n {
        return Err(Error::Dimension(format!(
            "panel {n} x {t_len}, alpha {} x {}, graph {}",
            alpha.n_locations(),
            alpha.n_times(),
            car.n_locations()
        )));
    }
    let default;
    let start = match start {
        Some(s) if s.n_locations() == n && s.n_times() == t_len => s,
        Some(_) => return Err(Error::Dimension("start field shape".into())),
        None => {
            default = default_start(panel, alpha);
            &default
        }
    };
    let q = car.precision_block(params.zeta, params.tau2)?;
    let q_dense = q.to_dense();
    let blocks: Vec<BlockMode> = (0..t_len)
        .into_par_iter()
        .map(|t| {
            mode_block(
                t,
                panel,
                params.eta,
                &q,
                &q_dense,
                alpha.block(t),
                start.block(t),
                opts,
            )
        })
        .collect::<Result<_>>()?;

    let mut mu_star = Field::zeros(n, t_len);
    let mut w = Field::zeros(n, t_len);
    for (t, b) in blocks.iter().enumerate() {
        mu_star.block_mut(t).copy_from_slice(&b.mu);
        w.block_mut(t).copy_from_slice(&b.w);
    }
    Ok(ModeResult {
        mu_star,
        w,
        logdet_hessian: blocks.iter().map(|b| b.logdet_hessian).sum(),
        g_at_mode: blocks.iter().map(|b| b.g).sum(),
        iterations: blocks.iter().map(|b| b.iterations).max().unwrap_or(0),
        converged: true,
        blocks,
    })
}

/// First-order Laplace approximation of `log p(Z | theta)` (without the
/// `sum log z!` constant): `1/2 log|Q| - g(mu*) - 1/2 log|Q + W|`.
pub fn la1_log_marginal(mode: &ModeResult, car: &CarStructure, params: &ModelParams) -> Result<f64> {
    let logdet_q = car.logdet_precision(params.zeta, params.tau2, mode.n_blocks())?;
    Ok(0.5 * logdet_q - mode.g_at_mode - 0.5 * mode.logdet_hessian)
}

/// Unnormalized first-order Laplace log-posterior of `theta`.
pub fn la1_log_posterior(
    panel: &CountPanel,
    params: &ModelParams,
    design: &CovariateDesign,
    car: &CarStructure,
    priors: &PriorSpec,
) -> Result<f64> {
    design.check_panel(panel)?;
    let alpha = linear_predictor(design, &params.beta)?;
    let mode = find_mode(panel, params, &alpha, car, None, ModeOptions::default())?;
    Ok(la1_log_marginal(&mode, car, params)? + priors.log_density(params, car))
}
