//! Reference sampler over `(theta, Y)`.
//!
//! Each iteration updates every week's latent block with a preconditioned
//! Langevin (MALA) proposal, then moves `theta` twice with adaptive random
//! walks in the unconstrained coordinates of
//! [`Transform`](crate::inference::Transform): once with `Y` held fixed and
//! once with the whitened field `L'(Y_t - alpha_t)` held fixed, where
//! `Q = L L'`. The second move lets `tau2`, `zeta` and `beta` travel
//! without dragging the latent field through a narrow conditional.
//!
//! The first half of the iterations is warm-up: step sizes, the latent
//! preconditioner and the `theta` proposal covariance adapt there and are
//! frozen afterwards.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::diagnostics::{DevianceAccumulator, EffectiveParameters};
use crate::error::{Error, Result};
use crate::graph::{CarPrecision, CarStructure};
use crate::inference::{default_start, Problem, Transform};
use crate::mode::{find_mode, ModeOptions};
use crate::model::{g_block, g_block_gradient, g_value, linear_predictor, Field, LatentField, ModelParams};
use crate::rng::{self, derive_seed, Rng};

/// `log p(Z, Y, theta)` up to `sum log z!`; `-inf` for inadmissible
/// `theta`.
pub fn log_joint(problem: &Problem<'_>, params: &ModelParams, y: &LatentField) -> Result<f64> {
    if params.validate(problem.car).is_err() || params.beta.len() != problem.design.p() {
        return Ok(f64::NEG_INFINITY);
    }
    let lp = problem.priors.log_density(params, problem.car);
    if !lp.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    let alpha = linear_predictor(problem.design, &params.beta)?;
    let g = g_value(y, problem.panel, params, &alpha, problem.car)?;
    Ok(log_joint_from(problem, params, g, lp))
}

fn log_joint_from(problem: &Problem<'_>, params: &ModelParams, g: f64, log_prior: f64) -> f64 {
    let (n, t_len) = (problem.panel.n_locations(), problem.panel.n_times());
    let logdet = problem
        .car
        .logdet_precision(params.zeta, params.tau2, t_len)
        .unwrap_or(f64::NAN);
    -g + 0.5 * logdet - 0.5 * (n * t_len) as f64 * (2.0 * PI).ln() + log_prior
}

/// Metropolis log acceptance ratio of a symmetric move `from -> to`.
pub fn rw_log_ratio(log_target_from: f64, log_target_to: f64) -> f64 {
    log_target_to - log_target_from
}

/// Log density (up to a constant) of the preconditioned Langevin proposal
/// `to ~ N(from + eps^2/2 M grad, eps^2 M)` with diagonal `M`.
pub fn mala_log_proposal(from: &[f64], grad_from: &[f64], to: &[f64], mass: &[f64], eps: f64) -> f64 {
    let e2 = eps * eps;
    from.iter()
        .zip(grad_from)
        .zip(to)
        .zip(mass)
        .map(|(((x, g), y), m)| {
            let d = y - x - 0.5 * e2 * m * g;
            -d * d / (2.0 * e2 * m)
        })
        .sum()
}

fn block_log_target(problem: &Problem<'_>, t: usize, y: &[f64], eta: f64, q: &CarPrecision<'_>, alpha: &[f64]) -> f64 {
    -g_block(t, y, problem.panel, eta, q, alpha)
}

fn block_gradient(problem: &Problem<'_>, t: usize, y: &[f64], eta: f64, q: &CarPrecision<'_>, alpha: &[f64]) -> Vec<f64> {
    let mut g = g_block_gradient(t, y, problem.panel, eta, q, alpha);
    g.iter_mut().for_each(|v| *v = -*v);
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McmcOptions {
    pub n_chains: usize,
    /// Iterations per chain, including the warm-up half.
    pub n_iter: usize,
    pub seed: u64,
    /// A change of the log joint density larger than this in one
    /// transition is counted as a divergence.
    pub divergence_threshold: f64,
    /// Every `deviance_thin`-th post-warm-up state enters the deviance
    /// accumulator.
    pub deviance_thin: usize,
}

impl Default for McmcOptions {
    fn default() -> Self {
        Self {
            n_chains: 3,
            n_iter: 4000,
            seed: 0,
            divergence_threshold: 1e3,
            deviance_thin: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Acceptance {
    pub latent: f64,
    pub theta_centered: f64,
    pub theta_whitened: f64,
}

/// Post-warm-up output of one chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Draws in unconstrained coordinates, one row per iteration.
    pub u_draws: Vec<Vec<f64>>,
    pub log_joint: Vec<f64>,
    pub acceptance: Acceptance,
    pub divergences: usize,
    pub latent_step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostics {
    pub names: Vec<String>,
    /// Split R-hat per parameter, reported as at least 1.
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    pub divergences: usize,
    pub acceptance: Vec<Acceptance>,
}

/// Summary of one parameter's posterior draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// 2.5% and 97.5% empirical quantiles.
    pub lower: f64,
    pub upper: f64,
    pub mcse: f64,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Debug, Clone)]
pub struct McmcRun {
    pub transform: Transform,
    pub chains: Vec<ChainOutput>,
    pub diagnostics: ChainDiagnostics,
    pub deviance: Option<EffectiveParameters>,
}

impl McmcRun {
    pub fn names(&self) -> Vec<String> {
        self.transform.names()
    }

    /// Natural-scale draws of coordinate `j`, chain by chain.
    pub fn chain_values(&self, j: usize) -> Vec<Vec<f64>> {
        self.chains
            .iter()
            .map(|c| c.u_draws.iter().map(|u| self.transform.coordinate_value(j, u[j])).collect())
            .collect()
    }

    /// All draws as parameter sets, chains concatenated.
    pub fn theta_draws(&self) -> Vec<ModelParams> {
        self.chains
            .iter()
            .flat_map(|c| c.u_draws.iter().map(|u| self.transform.to_params(u)))
            .collect()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.iter().map(|c| c.u_draws.len()).sum()
    }

    pub fn summary(&self) -> Result<Vec<ParamSummary>> {
        let by_param: Vec<Vec<Vec<f64>>> = (0..self.transform.dim()).map(|j| self.chain_values(j)).collect();
        posterior_summary(&self.names(), &by_param)
    }
}

struct ChainState {
    u: Vec<f64>,
    params: ModelParams,
    alpha: Field,
    y: Field,
    log_prior: f64,
    log_joint: f64,
}

struct Chain<'p, 'a> {
    problem: &'p Problem<'a>,
    transform: &'p Transform,
    opts: McmcOptions,
    seed: u64,
    rng: Rng,
}

fn cholesky_lower(car: &CarStructure, params: &ModelParams) -> Result<DMatrix<f64>> {
    let q = car.precision_block(params.zeta, params.tau2)?.to_dense();
    q.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite("CAR precision in the sampler".into()))
}

impl Chain<'_, '_> {
    fn state(&self, u: Vec<f64>, y: Field) -> Result<Option<ChainState>> {
        let params = self.transform.to_params(&u);
        if params.validate(self.problem.car).is_err() {
            return Ok(None);
        }
        let log_prior = self.problem.priors.log_density(&params, self.problem.car);
        if !log_prior.is_finite() {
            return Ok(None);
        }
        let alpha = linear_predictor(self.problem.design, &params.beta)?;
        let g = g_value(&y, self.problem.panel, &params, &alpha, self.problem.car)?;
        let log_joint = log_joint_from(self.problem, &params, g, log_prior);
        Ok(log_joint.is_finite().then_some(ChainState {
            u,
            params,
            alpha,
            y,
            log_prior,
            log_joint,
        }))
    }

    fn refresh(&self, s: &mut ChainState) -> Result<()> {
        let g = g_value(&s.y, self.problem.panel, &s.params, &s.alpha, self.problem.car)?;
        s.log_joint = log_joint_from(self.problem, &s.params, g, s.log_prior);
        Ok(())
    }

    /// One MALA step per week; returns the number of accepted blocks.
    fn update_latent(&self, s: &mut ChainState, mass: &Field, eps: f64, iter: usize) -> Result<usize> {
        let problem = self.problem;
        let q = problem.car.precision_block(s.params.zeta, s.params.tau2)?;
        let eta = s.params.eta;
        let t_len = problem.panel.n_times();
        let seed = self.seed;
        let moves: Vec<Option<Vec<f64>>> = (0..t_len)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::stream(derive_seed(seed, &[1, iter as u64, t as u64]), 0);
                let (y, a, m) = (s.y.block(t), s.alpha.block(t), mass.block(t));
                let grad = block_gradient(problem, t, y, eta, &q, a);
                let prop: Vec<f64> = y
                    .iter()
                    .zip(&grad)
                    .zip(m)
                    .map(|((yi, gi), mi)| yi + 0.5 * eps * eps * mi * gi + eps * mi.sqrt() * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let grad_prop = block_gradient(problem, t, &prop, eta, &q, a);
                let log_r = block_log_target(problem, t, &prop, eta, &q, a) - block_log_target(problem, t, y, eta, &q, a)
                    + mala_log_proposal(&prop, &grad_prop, y, m, eps)
                    - mala_log_proposal(y, &grad, &prop, m, eps);
                let accept = log_r.is_finite() && rng.random::<f64>().ln() < log_r;
                accept.then_some(prop)
            })
            .collect();
        let mut accepted = 0;
        for (t, m) in moves.into_iter().enumerate() {
            if let Some(v) = m {
                s.y.block_mut(t).copy_from_slice(&v);
                accepted += 1;
            }
        }
        self.refresh(s)?;
        Ok(accepted)
    }

    fn propose_u(&mut self, s: &ChainState, chol: &DMatrix<f64>, scale: f64) -> Vec<f64> {
        let d = s.u.len();
        let xi = DVector::from_iterator(d, (0..d).map(|_| self.rng.sample::<f64, _>(StandardNormal)));
        let step = chol * xi * scale;
        s.u.iter().zip(step.iter()).map(|(a, b)| a + b).collect()
    }

    fn accept(&mut self, log_r: f64) -> bool {
        log_r.is_finite() && self.rng.random::<f64>().ln() < log_r
    }

    fn move_centered(&mut self, s: &mut ChainState, chol: &DMatrix<f64>, scale: f64) -> Result<bool> {
        let u = self.propose_u(s, chol, scale);
        let Some(prop) = self.state(u, s.y.clone())? else {
            return Ok(false);
        };
        let log_r = rw_log_ratio(s.log_joint, prop.log_joint) + self.transform.log_jacobian(&prop.u)
            - self.transform.log_jacobian(&s.u);
        if self.accept(log_r) {
            *s = prop;
            return Ok(true);
        }
        Ok(false)
    }

    fn move_whitened(&mut self, s: &mut ChainState, chol: &DMatrix<f64>, scale: f64) -> Result<bool> {
        let u = self.propose_u(s, chol, scale);
        let params = self.transform.to_params(&u);
        if params.validate(self.problem.car).is_err() {
            return Ok(false);
        }
        let (n, t_len) = (self.problem.panel.n_locations(), self.problem.panel.n_times());
        let l_cur = cholesky_lower(self.problem.car, &s.params)?;
        let l_new = cholesky_lower(self.problem.car, &params)?;
        let alpha = linear_predictor(self.problem.design, &params.beta)?;
        let mut y = Field::zeros(n, t_len);
        for t in 0..t_len {
            let centered = DVector::from_iterator(n, s.y.block(t).iter().zip(s.alpha.block(t)).map(|(a, b)| a - b));
            let white = l_cur.tr_mul(&centered);
            let x = l_new
                .tr_solve_lower_triangular(&white)
                .ok_or_else(|| Error::NotPositiveDefinite("whitened proposal".into()))?;
            for (k, v) in y.block_mut(t).iter_mut().enumerate() {
                *v = alpha.block(t)[k] + x[k];
            }
        }
        let Some(prop) = self.state(u, y)? else {
            return Ok(false);
        };
        let car = self.problem.car;
        let log_jac_y = 0.5
            * (car.logdet_precision(s.params.zeta, s.params.tau2, t_len)?
                - car.logdet_precision(params.zeta, params.tau2, t_len)?);
        let log_r = rw_log_ratio(s.log_joint, prop.log_joint) + log_jac_y + self.transform.log_jacobian(&prop.u)
            - self.transform.log_jacobian(&s.u);
        if self.accept(log_r) {
            *s = prop;
            return Ok(true);
        }
        Ok(false)
    }

    fn run(mut self, start: &ModelParams) -> Result<(ChainOutput, DevianceAccumulator)> {
        let problem = self.problem;
        let (n, t_len) = (problem.panel.n_locations(), problem.panel.n_times());
        let d = self.transform.dim();
        let warmup = self.opts.n_iter / 2;

        // dispersed start around the supplied point
        let mut u0 = self.transform.to_unconstrained(start)?;
        for x in u0.iter_mut() {
            *x += 0.5 * self.rng.sample::<f64, _>(StandardNormal);
        }
        let start_params = self.transform.to_params(&u0);
        let alpha0 = linear_predictor(problem.design, &start_params.beta)?;
        let (y0, w0) = match find_mode(problem.panel, &start_params, &alpha0, problem.car, None, ModeOptions::default()) {
            Ok(m) => (m.mu_star, m.w),
            Err(_) => (alpha0.clone(), Field::zeros(n, t_len)),
        };
        let mut s = self
            .state(u0, y0)?
            .ok_or_else(|| Error::Inadmissible("sampler start has zero density".into()))?;
        let qd = 1.0 / s.params.tau2;
        let mut mass = Field::from_fn(n, t_len, |i, t| 1.0 / (qd + w0.get(i, t)));

        let mut eps = 1.0f64;
        let mut log_scale = [0.0f64; 2];
        let mut cov = DMatrix::from_diagonal_element(d, d, 0.01);
        let mut chol = cov.clone().cholesky().expect("diagonal covariance").l();
        let mut u_hist: Vec<Vec<f64>> = Vec::new();
        let mut y_mean = Field::zeros(n, t_len);
        let mut y_m2 = Field::zeros(n, t_len);
        let mut y_count = 0usize;
        let windows = [warmup / 4, warmup / 2, 3 * warmup / 4];

        let mut out = ChainOutput {
            u_draws: Vec::with_capacity(self.opts.n_iter - warmup),
            log_joint: Vec::with_capacity(self.opts.n_iter - warmup),
            acceptance: Acceptance::default(),
            divergences: 0,
            latent_step: eps,
        };
        let mut deviance = DevianceAccumulator::new(n, t_len);
        let mut acc = [0usize; 3];

        for iter in 0..self.opts.n_iter {
            let before = s.log_joint;
            let lat = if t_len > 0 { self.update_latent(&mut s, &mass, eps, iter)? } else { 0 };
            let base = 2.38 / (d as f64).sqrt();
            let c_ok = self.move_centered(&mut s, &chol, base * log_scale[0].exp())?;
            let w_ok = if t_len > 0 {
                self.move_whitened(&mut s, &chol, base * log_scale[1].exp())?
            } else {
                false
            };
            if (s.log_joint - before).abs() > self.opts.divergence_threshold && iter >= warmup {
                out.divergences += 1;
            }

            if iter < warmup {
                let gain = (iter as f64 + 10.0).powf(-0.6);
                if t_len > 0 {
                    let rate = lat as f64 / t_len as f64;
                    eps = (eps.ln() + gain * (rate - 0.574)).exp().clamp(1e-4, 5.0);
                }
                log_scale[0] += gain * (f64::from(u8::from(c_ok)) - 0.3);
                log_scale[1] += gain * (f64::from(u8::from(w_ok)) - 0.3);
                if iter >= warmup / 10 {
                    u_hist.push(s.u.clone());
                }
                if u_hist.len() >= 2 * d + 20 && iter % 50 == 0 {
                    cov = sample_covariance(&u_hist);
                    for k in 0..d {
                        cov[(k, k)] += 1e-8;
                    }
                    if let Some(c) = cov.clone().cholesky() {
                        chol = c.l();
                    }
                }
                // latent preconditioner from the running variance per window
                y_count += 1;
                for k in 0..n * t_len {
                    let v = s.y.as_slice()[k];
                    let delta = v - y_mean.as_slice()[k];
                    y_mean.as_mut_slice()[k] += delta / y_count as f64;
                    y_m2.as_mut_slice()[k] += delta * (v - y_mean.as_slice()[k]);
                }
                if windows.contains(&iter) && y_count > 10 {
                    for k in 0..n * t_len {
                        let var = y_m2.as_slice()[k] / (y_count - 1) as f64;
                        if var.is_finite() && var > 1e-8 {
                            mass.as_mut_slice()[k] = var;
                        }
                    }
                    y_count = 0;
                    y_mean = Field::zeros(n, t_len);
                    y_m2 = Field::zeros(n, t_len);
                }
            } else {
                acc[0] += lat;
                acc[1] += usize::from(c_ok);
                acc[2] += usize::from(w_ok);
                out.u_draws.push(s.u.clone());
                out.log_joint.push(s.log_joint);
                if (iter - warmup) % self.opts.deviance_thin.max(1) == 0 && t_len > 0 {
                    deviance.add_latent(problem.panel, &s.y, s.params.eta);
                }
            }
        }
        let kept = (self.opts.n_iter - warmup).max(1) as f64;
        out.acceptance = Acceptance {
            latent: if t_len > 0 { acc[0] as f64 / (kept * t_len as f64) } else { 0.0 },
            theta_centered: acc[1] as f64 / kept,
            theta_whitened: acc[2] as f64 / kept,
        };
        out.latent_step = eps;
        Ok((out, deviance))
    }
}

fn sample_covariance(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let d = rows[0].len();
    let m = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (a, b) in mean.iter_mut().zip(r) {
            *a += b / m;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            for j in 0..=i {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]) / (m - 1.0);
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov
}

/// Run `n_chains` independent chains from dispersed starts around `start`
/// (or the default start).
pub fn run_chains(problem: &Problem<'_>, start: Option<&ModelParams>, opts: McmcOptions) -> Result<McmcRun> {
    if opts.n_chains < 2 {
        return Err(Error::Config(format!("need at least 2 chains for R-hat, got {}", opts.n_chains)));
    }
    if opts.n_iter < 4 {
        return Err(Error::Config(format!("need at least 4 iterations, got {}", opts.n_iter)));
    }
    let transform = Transform::new(problem.car, problem.priors, problem.design);
    let start = start.cloned().unwrap_or_else(|| default_start(problem));
    start.validate(problem.car)?;
    let results = (0..opts.n_chains)
        .into_par_iter()
        .map(|c| {
            let seed = derive_seed(opts.seed, &[0x6d63_6d63, c as u64]);
            Chain {
                problem,
                transform: &transform,
                opts,
                seed,
                rng: rng::stream(seed, 0),
            }
            .run(&start)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut chains = Vec::with_capacity(results.len());
    let mut deviance = DevianceAccumulator::new(problem.panel.n_locations(), problem.panel.n_times());
    for (chain, dev) in results {
        chains.push(chain);
        deviance.merge(&dev);
    }
    let names = transform.names();
    let mut rhat = Vec::with_capacity(names.len());
    let mut ess = Vec::with_capacity(names.len());
    let run = McmcRun {
        transform,
        chains,
        diagnostics: ChainDiagnostics {
            names: names.clone(),
            rhat: Vec::new(),
            ess: Vec::new(),
            divergences: 0,
            acceptance: Vec::new(),
        },
        deviance: None,
    };
    for j in 0..names.len() {
        let values = run.chain_values(j);
        rhat.push(split_rhat(&values));
        ess.push(effective_sample_size(&values));
    }
    let deviance = if deviance.count() > 0 {
        Some(deviance.finish(problem.panel))
    } else {
        None
    };
    let diagnostics = ChainDiagnostics {
        names,
        rhat,
        ess,
        divergences: run.chains.iter().map(|c| c.divergences).sum(),
        acceptance: run.chains.iter().map(|c| c.acceptance).collect(),
    };
    Ok(McmcRun {
        diagnostics,
        deviance,
        ..run
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = if x.len() > 1 {
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Potential scale reduction over chains split in halves, at least 1.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .filter(|h| h.len() >= 2)
        .collect();
    if halves.len() < 2 {
        return f64::NAN;
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0) as f64;
    let stats: Vec<(f64, f64)> = halves.iter().map(|h| mean_var(h)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / stats.len() as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let b = n * mean_var(&means).1;
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt().max(1.0)
}

/// Effective sample size over chains using Geyer's initial monotone
/// sequence on the combined autocorrelation.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(&c[..n])).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m as f64;
    let means: Vec<f64> = stats.iter().map(|s| s.0).collect();
    let b = if m > 1 { n as f64 * mean_var(&means).1 } else { 0.0 };
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    if !(var_plus > 0.0) {
        return (m * n) as f64;
    }
    let autocov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&stats)
            .map(|(c, (mu, _))| (0..n - lag).map(|k| (c[k] - mu) * (c[k + lag] - mu)).sum::<f64>() / nf)
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| 1.0 - (w - autocov(lag)) / var_plus;
    let mut tau = -1.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let p = rho(2 * k) + rho(2 * k + 1);
        if p < 0.0 {
            break;
        }
        let p = p.min(prev);
        tau += 2.0 * p;
        prev = p;
        k += 1;
    }
    (m * n) as f64 / tau.max(1.0 / (m * n) as f64)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Means, standard deviations and 95% quantile intervals, with R-hat and
/// effective sample sizes over the supplied chains. `draws[j][c]` holds
/// the draws of parameter `j` in chain `c`.
pub fn posterior_summary(names: &[String], draws: &[Vec<Vec<f64>>]) -> Result<Vec<ParamSummary>> {
    names
        .iter()
        .zip(draws)
        .map(|(name, chains)| {
            let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
            if all.is_empty() {
                return Err(Error::InsufficientDraws { got: 0, need: 1 });
            }
            let (mean, var) = mean_var(&all);
            all.sort_by(f64::total_cmp);
            let sd = var.sqrt();
            let ess = effective_sample_size(chains);
            let mcse = if sd == 0.0 { 0.0 } else { sd / ess.sqrt() };
            Ok(ParamSummary {
                name: name.clone(),
                mean,
                sd,
                lower: quantile(&all, 0.025),
                upper: quantile(&all, 0.975),
                mcse,
                rhat: split_rhat(chains),
                ess,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_torus_lattice;
    use crate::model::{simulate, CovariateDesign, SimulationSpec};
    use crate::prior::PriorSpec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rhat_and_ess_on_iid_chains() {
        let mut r = rng::stream(4, 0);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2000).map(|_| r.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let rh = split_rhat(&chains);
        assert!((1.0..1.01).contains(&rh), "{rh}");
        let ess = effective_sample_size(&chains);
        assert!(ess > 5000.0 && ess < 11000.0, "{ess}");

        let mut shifted = chains.clone();
        for x in shifted[0].iter_mut() {
            *x += 3.0;
        }
        assert!(split_rhat(&shifted) > 1.2);
    }

    #[test]
    fn ess_shrinks_with_autocorrelation() {
        let mut r = rng::stream(5, 0);
        let chains: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let mut x = 0.0;
                (0..5000)
                    .map(|_| {
                        x = 0.9 * x + r.sample::<f64, _>(StandardNormal);
                        x
                    })
                    .collect()
            })
            .collect();
        // AR(1) with phi = .9 has ESS / N = (1 - phi) / (1 + phi)
        let ess = effective_sample_size(&chains);
        let expect = 15000.0 * 0.1 / 1.9;
        assert!((ess / expect - 1.0).abs() < 0.3, "{ess} vs {expect}");
    }

    #[test]
    fn summary_of_constant_and_gaussian_draws() {
        let names = vec!["a".to_string(), "b".to_string()];
        let mut r = rng::stream(6, 0);
        let g: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..5000).map(|_| 2.0 + 0.5 * r.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let s = posterior_summary(&names, &[vec![vec![1.5; 100], vec![1.5; 100]], g]).unwrap();
        assert_eq!((s[0].sd, s[0].lower, s[0].upper, s[0].rhat), (0.0, 1.5, 1.5, 1.0));
        assert_abs_diff_eq!(s[1].mean, 2.0, epsilon = 4.0 * s[1].mcse);
        assert_abs_diff_eq!(s[1].sd, 0.5, epsilon = 0.02);
        assert!(posterior_summary(&names[..1], &[vec![vec![]]]).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&x, 0.0), 1.0);
        assert_eq!(quantile(&x, 1.0), 4.0);
        assert_abs_diff_eq!(quantile(&x, 0.5), 2.5);
    }

    #[test]
    fn mala_proposal_density_is_gaussian() {
        let from = [0.1, -0.3];
        let grad = [1.0, 2.0];
        let mass = [0.5, 2.0];
        let eps = 0.7;
        let mean: Vec<f64> = (0..2).map(|k| from[k] + 0.5 * eps * eps * mass[k] * grad[k]).collect();
        assert_abs_diff_eq!(mala_log_proposal(&from, &grad, &mean, &mass, eps), 0.0);
        let to = [mean[0] + eps * mass[0].sqrt(), mean[1]];
        assert_abs_diff_eq!(mala_log_proposal(&from, &grad, &to, &mass, eps), -0.5, epsilon = 1e-14);
    }

    #[test]
    fn chains_are_deterministic() {
        let car = CarStructure::new(build_torus_lattice(3, 3).unwrap());
        let design = CovariateDesign::intercept_only(9, 6);
        let truth = ModelParams::intercept_only(0.3, 0.1, 0.5, 0.5);
        let (panel, _) = simulate(&car, &truth, &design, SimulationSpec::new(2)).unwrap();
        let priors = PriorSpec::default();
        let problem = Problem::new(&panel, &design, &car, &priors).unwrap();
        let opts = McmcOptions {
            n_chains: 2,
            n_iter: 200,
            seed: 9,
            ..McmcOptions::default()
        };
        let a = run_chains(&problem, None, opts).unwrap();
        let b = run_chains(&problem, None, opts).unwrap();
        assert_eq!(a.chains[1].u_draws, b.chains[1].u_draws);
        assert_ne!(a.chains[0].u_draws, a.chains[1].u_draws);
        assert_eq!(a.n_draws(), 200);
        let mut r = rng::stream(1, 1);
        let lj = a.chains[0].log_joint[r.random_range(0..100)];
        assert!(lj.is_finite());
    }
}
