//! Model checks and simulation studies: the implied spatial correlation of
//! counts, randomized PIT residuals, the effective number of parameters
//! and the relative-bias study harness.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{DiscreteCDF, Poisson};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::graph::{build_torus_lattice, CarStructure};
use crate::inference::{maximize_posterior, Method, NewtonOptions, PosteriorFit, Problem};
use crate::mcmc::{run_chains, McmcOptions};
use crate::model::{linear_predictor, simulate, CountPanel, CovariateDesign, Field, LatentField, ModelParams, SimulationSpec};
use crate::prior::PriorSpec;
use crate::quadrature::GaussHermite;
use crate::rng::{self, derive_seed};

/// Stationary correlation between `Z(s_i, t)` and `Z(s_j, t)` under an
/// intercept-only mean `alpha = beta[0]`.
///
/// With `Sigma = tau2 (I - zeta N)^{-1}`, `m_i = exp(alpha + Sigma_ii/2)`
/// and `V_i = m_i^2 (exp(Sigma_ii) - 1) + m_i / (1 - eta)`, the
/// correlation is `m_i m_j (exp(Sigma_ij) - 1) / sqrt(V_i V_j)`. On regular
/// graphs (equal `Sigma_ii`) this is
/// `(e^{S_ii + S_ij} - e^{S_ii}) / (e^{2 S_ii} - e^{S_ii} + e^{-alpha} e^{S_ii/2} / (1 - eta))`.
pub fn spatial_correlation(params: &ModelParams, car: &CarStructure, i: usize, j: usize) -> Result<f64> {
    let n = car.n_locations();
    if i >= n || j >= n {
        return Err(Error::Dimension(format!("locations ({i}, {j}) outside a graph of {n}")));
    }
    Ok(correlation_matrix(params, car)?[(i, j)])
}

/// All pairwise correlations of [`spatial_correlation`].
pub fn correlation_matrix(params: &ModelParams, car: &CarStructure) -> Result<DMatrix<f64>> {
    params.validate(car)?;
    let sigma = car.covariance_dense(params.zeta, params.tau2)?;
    let alpha = params.beta[0];
    let n = sigma.nrows();
    let m: Vec<f64> = (0..n).map(|i| (alpha + 0.5 * sigma[(i, i)]).exp()).collect();
    let v: Vec<f64> = (0..n)
        .map(|i| m[i] * m[i] * sigma[(i, i)].exp_m1() + m[i] / (1.0 - params.eta))
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| m[i] * m[j] * sigma[(i, j)].exp_m1() / (v[i] * v[j]).sqrt()))
}

/// Randomized PIT residuals, one per cell, in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    pub u: Field,
}

impl ResidualField {
    /// Mean residual of each location over weeks.
    pub fn by_location(&self) -> Vec<f64> {
        let (n, t_len) = (self.u.n_locations(), self.u.n_times());
        (0..n)
            .map(|i| (0..t_len).map(|t| self.u.get(i, t)).sum::<f64>() / t_len.max(1) as f64)
            .collect()
    }

    pub fn pooled(&self) -> &[f64] {
        self.u.as_slice()
    }
}

pub const MIN_PIT_DRAWS: usize = 50;
const PIT_NODES: usize = 24;

/// Randomized PIT residuals.
///
/// For each parameter draw the predictive CDF of a cell given the previous
/// week's count is the Poisson CDF mixed over the latent value's
/// distribution `Y(s_i, t) ~ N(alpha_it, Sigma_ii)`, computed by
/// Gauss-Hermite quadrature. Averaging over the draws gives `F`, and the
/// residual is uniform on `(F(z - 1), F(z))`.
pub fn pit_residuals(
    panel: &CountPanel,
    design: &CovariateDesign,
    car: &CarStructure,
    draws: &[ModelParams],
    seed: u64,
) -> Result<ResidualField> {
    if draws.len() < MIN_PIT_DRAWS {
        return Err(Error::InsufficientDraws {
            got: draws.len(),
            need: MIN_PIT_DRAWS,
        });
    }
    design.check_panel(panel)?;
    let (n, t_len) = (panel.n_locations(), panel.n_times());
    let gh = GaussHermite::new(PIT_NODES);
    let per_draw = draws
        .par_iter()
        .map(|params| {
            params.validate(car)?;
            let alpha = linear_predictor(design, &params.beta)?;
            let sigma = car.covariance_dense(params.zeta, params.tau2)?;
            let mut lo = Field::zeros(n, t_len);
            let mut hi = Field::zeros(n, t_len);
            for t in 0..t_len {
                for i in 0..n {
                    let z = panel.count(i, t);
                    let c = params.eta * f64::from(panel.previous(i, t));
                    let cdf = |k: u32, y: f64| Poisson::new(y.exp() + c).map_or(1.0, |p| p.cdf(u64::from(k)));
                    let var = sigma[(i, i)];
                    hi.set(i, t, gh.normal_expectation(alpha.get(i, t), var, |y| cdf(z, y)));
                    if z > 0 {
                        lo.set(i, t, gh.normal_expectation(alpha.get(i, t), var, |y| cdf(z - 1, y)));
                    }
                }
            }
            Ok((lo, hi))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = draws.len() as f64;
    let mut rng = rng::stream(seed, 0x7069_74);
    let u = Field::from_time_major(
        n,
        t_len,
        (0..n * t_len)
            .map(|c| {
                let lo: f64 = per_draw.iter().map(|(l, _)| l.as_slice()[c]).sum::<f64>() / k;
                let hi: f64 = per_draw.iter().map(|(_, h)| h.as_slice()[c]).sum::<f64>() / k;
                let v: f64 = rng.random();
                (lo + v * (hi - lo).max(0.0)).clamp(f64::EPSILON, 1.0 - f64::EPSILON)
            })
            .collect(),
    )?;
    Ok(ResidualField { u })
}

/// Draw `n` parameter sets from the weighted exploration grid of a fit.
pub fn draws_from_grid(fit: &PosteriorFit, n: usize, seed: u64) -> Result<Vec<ModelParams>> {
    draws_from_weighted(&fit.grid_params(), n, seed)
}

/// Draw `n` parameter sets with replacement in proportion to the weights.
pub fn draws_from_weighted(points: &[(ModelParams, f64)], n: usize, seed: u64) -> Result<Vec<ModelParams>> {
    if points.is_empty() {
        return Err(Error::Config("no weighted parameter sets to draw from".into()));
    }
    let index = WeightedIndex::new(points.iter().map(|(_, w)| *w))
        .map_err(|e| Error::Domain(format!("grid weights: {e}")))?;
    let mut rng = rng::stream(seed, 0x6772_6964);
    Ok((0..n).map(|_| points[index.sample(&mut rng)].0.clone()).collect())
}

/// Kolmogorov-Smirnov test of uniformity on `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test against the uniform distribution, with the
/// asymptotic Kolmogorov distribution and Stephens' small-sample
/// adjustment.
pub fn ks_uniform(values: &[f64]) -> KsTest {
    let mut x = values.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let d = x
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let v = v.clamp(0.0, 1.0);
            ((k as f64 + 1.0) / n - v).max(v - k as f64 / n)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for k in 1..=200 {
        let kf = f64::from(k);
        let term = 2.0 * (-2.0 * kf * kf * lambda * lambda).exp();
        p += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    KsTest {
        statistic: d,
        p_value: if lambda < 0.2 { 1.0 } else { p.clamp(0.0, 1.0) },
    }
}

/// Running sums for the deviance-based effective number of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DevianceAccumulator {
    lambda_sum: Field,
    deviance_sum: f64,
    count: usize,
}

/// `pD = mean deviance - deviance at the posterior mean intensity`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveParameters {
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
    pub pd: f64,
    pub n_observations: usize,
    /// Observations per effective parameter.
    pub ratio: f64,
    pub draws: usize,
}

/// `-2 log p(Z | lambda)`, including `log z!`.
pub fn poisson_deviance(panel: &CountPanel, lambda: &Field) -> f64 {
    let mut d = 0.0;
    for t in 0..panel.n_times() {
        for i in 0..panel.n_locations() {
            let z = f64::from(panel.count(i, t));
            let l = lambda.get(i, t);
            let ll = if z > 0.0 { z * l.ln() } else { 0.0 } - l - ln_gamma(z + 1.0);
            d -= 2.0 * ll;
        }
    }
    d
}

impl DevianceAccumulator {
    pub fn new(n_locations: usize, n_times: usize) -> Self {
        Self {
            lambda_sum: Field::zeros(n_locations, n_times),
            deviance_sum: 0.0,
            count: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn add_intensity(&mut self, panel: &CountPanel, lambda: &Field) {
        self.deviance_sum += poisson_deviance(panel, lambda);
        for (s, l) in self.lambda_sum.as_mut_slice().iter_mut().zip(lambda.as_slice()) {
            *s += l;
        }
        self.count += 1;
    }

    pub fn add_latent(&mut self, panel: &CountPanel, y: &LatentField, eta: f64) {
        let lambda = Field::from_fn(panel.n_locations(), panel.n_times(), |i, t| {
            y.get(i, t).exp() + eta * f64::from(panel.previous(i, t))
        });
        self.add_intensity(panel, &lambda);
    }

    pub fn merge(&mut self, other: &DevianceAccumulator) {
        self.deviance_sum += other.deviance_sum;
        for (s, l) in self.lambda_sum.as_mut_slice().iter_mut().zip(other.lambda_sum.as_slice()) {
            *s += l;
        }
        self.count += other.count;
    }

    pub fn finish(&self, panel: &CountPanel) -> EffectiveParameters {
        let k = self.count.max(1) as f64;
        let mean_lambda = Field::from_fn(panel.n_locations(), panel.n_times(), |i, t| self.lambda_sum.get(i, t) / k);
        let mean_deviance = self.deviance_sum / k;
        let deviance_at_mean = poisson_deviance(panel, &mean_lambda);
        let pd = mean_deviance - deviance_at_mean;
        EffectiveParameters {
            mean_deviance,
            deviance_at_mean,
            pd,
            n_observations: panel.n_cells(),
            ratio: panel.n_cells() as f64 / pd,
            draws: self.count,
        }
    }
}

/// Effective number of parameters under a Laplace fit: `theta` is drawn
/// from the grid and `Y` from the Gaussian approximation at each draw.
pub fn effective_parameters(fit: &PosteriorFit, problem: &Problem<'_>, n_draws: usize, seed: u64) -> Result<EffectiveParameters> {
    if n_draws < MIN_PIT_DRAWS {
        return Err(Error::InsufficientDraws {
            got: n_draws,
            need: MIN_PIT_DRAWS,
        });
    }
    let thetas = draws_from_grid(fit, n_draws, seed)?;
    let (n, t_len) = (problem.panel.n_locations(), problem.panel.n_times());
    let parts = thetas
        .par_iter()
        .enumerate()
        .map(|(k, params)| {
            let mode = problem.mode(params, None)?;
            let mut rng = rng::stream(derive_seed(seed, &[k as u64]), 1);
            let mut y = Field::zeros(n, t_len);
            for (t, b) in mode.blocks.iter().enumerate() {
                let xi = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
                let x = b
                    .factor
                    .l()
                    .tr_solve_lower_triangular(&xi)
                    .ok_or_else(|| Error::NotPositiveDefinite("Gaussian approximation".into()))?;
                for (i, v) in y.block_mut(t).iter_mut().enumerate() {
                    *v = b.mu[i] + x[i];
                }
            }
            let mut acc = DevianceAccumulator::new(n, t_len);
            acc.add_latent(problem.panel, &y, params.eta);
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = DevianceAccumulator::new(n, t_len);
    for p in &parts {
        total.merge(p);
    }
    Ok(total.finish(problem.panel))
}

/// Estimation procedure compared by [`bias_study`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StudyMethod {
    Laplace(Method),
    Mcmc,
}

impl StudyMethod {
    /// Rank by cost of fitting, cheapest first.
    pub fn cost_rank(self) -> u8 {
        match self {
            StudyMethod::Laplace(Method::La1) => 0,
            StudyMethod::Laplace(Method::XlaNo6) => 1,
            StudyMethod::Laplace(Method::Xla) => 2,
            StudyMethod::Mcmc => 3,
        }
    }
}

impl fmt::Display for StudyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StudyMethod::Laplace(m) => write!(f, "{m}"),
            StudyMethod::Mcmc => f.write_str("mcmc"),
        }
    }
}

impl FromStr for StudyMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "mcmc" {
            Ok(StudyMethod::Mcmc)
        } else {
            s.parse().map(StudyMethod::Laplace)
        }
    }
}

/// Threshold on `|relative bias|` above which bias counts as substantial.
pub const SUBSTANTIAL_BIAS: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct BiasStudyConfig {
    /// `(eta, tau2)` pairs.
    pub cells: Vec<(f64, f64)>,
    pub replicates: usize,
    pub rows: usize,
    pub cols: usize,
    pub n_times: usize,
    pub zeta: f64,
    pub beta0: f64,
    pub methods: Vec<StudyMethod>,
    pub seed: u64,
    pub mcmc: McmcOptions,
}

impl Default for BiasStudyConfig {
    fn default() -> Self {
        Self {
            cells: vec![(0.1, 0.4), (0.4, 0.6), (0.7, 1.0)],
            replicates: 20,
            rows: 10,
            cols: 10,
            n_times: 100,
            zeta: 0.245,
            beta0: 0.0,
            methods: vec![StudyMethod::Laplace(Method::La1), StudyMethod::Laplace(Method::Xla)],
            seed: 1,
            mcmc: McmcOptions::default(),
        }
    }
}

/// One fit in a bias study.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub cell: usize,
    pub replicate: usize,
    pub method: StudyMethod,
    /// Posterior mode (Laplace) or posterior mean (MCMC).
    pub estimate: Option<ModelParams>,
    pub seconds: f64,
    pub error: Option<String>,
}

/// Aggregate over the replicates of one cell and method.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub eta: f64,
    pub tau2: f64,
    pub method: StudyMethod,
    pub fits: usize,
    pub failures: usize,
    pub mean_tau2: f64,
    pub rel_bias_tau2: f64,
    /// `None` when the true `eta` is 0.
    pub rel_bias_eta: Option<f64>,
    pub mean_seconds: f64,
}

impl CellSummary {
    /// True if no tracked relative bias exceeds [`SUBSTANTIAL_BIAS`].
    pub fn adequate(&self) -> bool {
        self.fits > 0
            && self.rel_bias_tau2.abs() <= SUBSTANTIAL_BIAS
            && self.rel_bias_eta.is_none_or(|b| b.abs() <= SUBSTANTIAL_BIAS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasStudyReport {
    pub config: BiasStudyConfig,
    pub replicates: Vec<ReplicateResult>,
    pub summaries: Vec<CellSummary>,
    /// Cheapest adequate method per cell, `None` if none is adequate.
    pub preferred: Vec<((f64, f64), Option<StudyMethod>)>,
}

impl BiasStudyReport {
    pub fn summary(&self, cell: usize, method: StudyMethod) -> Option<&CellSummary> {
        let (eta, tau2) = self.config.cells[cell];
        self.summaries
            .iter()
            .find(|s| s.method == method && s.eta == eta && s.tau2 == tau2)
    }
}

fn fit_one(problem: &Problem<'_>, method: StudyMethod, mcmc: McmcOptions, seed: u64) -> Result<ModelParams> {
    match method {
        StudyMethod::Laplace(m) => Ok(maximize_posterior(problem, m, None, NewtonOptions::default())?.theta_hat),
        StudyMethod::Mcmc => {
            let run = run_chains(problem, None, McmcOptions { seed, ..mcmc })?;
            let mut params = run.transform.to_params(&vec![0.0; run.transform.dim()]);
            let mut b = 0;
            for s in run.summary()? {
                match s.name.as_str() {
                    "tau2" => params.tau2 = s.mean,
                    "zeta" => params.zeta = s.mean,
                    "eta" => params.eta = s.mean,
                    _ => {
                        params.beta[b] = s.mean;
                        b += 1;
                    }
                }
            }
            Ok(params)
        }
    }
}

/// Simulate each cell `replicates` times on a torus and fit every method to
/// the same data.
pub fn bias_study(config: &BiasStudyConfig) -> Result<BiasStudyReport> {
    if config.cells.is_empty() || config.replicates == 0 || config.methods.is_empty() {
        return Err(Error::Config("bias study needs cells, replicates and methods".into()));
    }
    let car = CarStructure::new(build_torus_lattice(config.rows, config.cols)?);
    let n = car.n_locations();
    let design = CovariateDesign::intercept_only(n, config.n_times);
    let priors = PriorSpec::default();
    for &(eta, tau2) in &config.cells {
        ModelParams::intercept_only(eta, config.zeta, tau2, config.beta0).validate(&car)?;
    }
    let jobs: Vec<(usize, usize)> = (0..config.cells.len())
        .flat_map(|c| (0..config.replicates).map(move |r| (c, r)))
        .collect();
    let results: Vec<Vec<ReplicateResult>> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let (eta, tau2) = config.cells[c];
            let truth = ModelParams::intercept_only(eta, config.zeta, tau2, config.beta0);
            let seed = derive_seed(config.seed, &[c as u64, r as u64]);
            let data = simulate(&car, &truth, &design, SimulationSpec::new(seed));
            config
                .methods
                .iter()
                .map(|&method| {
                    let start = Instant::now();
                    let outcome = match &data {
                        Ok((panel, _)) => Problem::new(panel, &design, &car, &priors)
                            .and_then(|problem| fit_one(&problem, method, config.mcmc, derive_seed(seed, &[7]))),
                        Err(e) => Err(Error::Domain(format!("simulation failed: {e}"))),
                    };
                    let seconds = start.elapsed().as_secs_f64();
                    let (estimate, error) = match outcome {
                        Ok(p) => (Some(p), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    ReplicateResult {
                        cell: c,
                        replicate: r,
                        method,
                        estimate,
                        seconds,
                        error,
                    }
                })
                .collect()
        })
        .collect();
    let replicates: Vec<ReplicateResult> = results.into_iter().flatten().collect();

    let mut summaries = Vec::new();
    let mut preferred = Vec::new();
    for (c, &(eta, tau2)) in config.cells.iter().enumerate() {
        let mut cell_summaries = Vec::new();
        for &method in &config.methods {
            let rows: Vec<&ReplicateResult> = replicates.iter().filter(|r| r.cell == c && r.method == method).collect();
            let ok: Vec<&ModelParams> = rows.iter().filter_map(|r| r.estimate.as_ref()).collect();
            let k = ok.len() as f64;
            let mean_tau2 = ok.iter().map(|p| p.tau2).sum::<f64>() / k;
            let mean_eta = ok.iter().map(|p| p.eta).sum::<f64>() / k;
            cell_summaries.push(CellSummary {
                eta,
                tau2,
                method,
                fits: ok.len(),
                failures: rows.len() - ok.len(),
                mean_tau2,
                rel_bias_tau2: (mean_tau2 - tau2) / tau2,
                rel_bias_eta: (eta > 0.0).then(|| (mean_eta - eta) / eta),
                mean_seconds: rows.iter().map(|r| r.seconds).sum::<f64>() / rows.len().max(1) as f64,
            });
        }
        let best = cell_summaries
            .iter()
            .filter(|s| s.adequate())
            .min_by_key(|s| s.method.cost_rank())
            .map(|s| s.method);
        preferred.push(((eta, tau2), best));
        summaries.extend(cell_summaries);
    }
    Ok(BiasStudyReport {
        config: config.clone(),
        replicates,
        summaries,
        preferred,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SpatialGraph;
    use approx::assert_abs_diff_eq;

    #[test]
    fn correlation_vanishes_without_spatial_dependence() {
        let car = CarStructure::new(build_torus_lattice(4, 4).unwrap());
        let c = correlation_matrix(&ModelParams::intercept_only(0.3, 0.0, 0.5, 0.2), &car).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                if i != j {
                    assert_abs_diff_eq!(c[(i, j)], 0.0);
                }
            }
            assert!(c[(i, i)] > 0.0 && c[(i, i)] < 1.0);
        }
    }

    #[test]
    fn correlation_matches_regular_graph_formula() {
        let car = CarStructure::new(build_torus_lattice(5, 5).unwrap());
        let p = ModelParams::intercept_only(0.2, 0.2, 0.7, -0.3);
        let sigma = car.covariance_dense(0.2, 0.7).unwrap();
        let (sii, sij) = (sigma[(0, 0)], sigma[(0, 1)]);
        let alpha: f64 = -0.3;
        let expect = ((sii + sij).exp() - sii.exp())
            / ((2.0 * sii).exp() - sii.exp() + (-alpha).exp() / (1.0 - 0.2) * (sii / 2.0).exp());
        assert_abs_diff_eq!(spatial_correlation(&p, &car, 0, 1).unwrap(), expect, epsilon = 1e-14);
        assert_abs_diff_eq!(
            spatial_correlation(&p, &car, 1, 0).unwrap(),
            spatial_correlation(&p, &car, 0, 1).unwrap(),
            epsilon = 1e-15
        );
        assert!(spatial_correlation(&p, &car, 0, 25).is_err());
    }

    #[test]
    fn ks_detects_non_uniformity() {
        let mut r = rng::stream(3, 0);
        let u: Vec<f64> = (0..2000).map(|_| r.random::<f64>()).collect();
        assert!(ks_uniform(&u).p_value > 0.01);
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&sq).p_value < 1e-6);
        // the statistic of an evenly spread sample is 1 / (2n)
        let even: Vec<f64> = (0..100).map(|k| (k as f64 + 0.5) / 100.0).collect();
        assert_abs_diff_eq!(ks_uniform(&even).statistic, 0.005, epsilon = 1e-15);
    }

    #[test]
    fn pit_needs_enough_draws() {
        let car = CarStructure::new(SpatialGraph::from_edges(2, &[(0, 1)]).unwrap());
        let panel = CountPanel::new(2, vec![0, 1], vec![1, 2]).unwrap();
        let design = CovariateDesign::intercept_only(2, 1);
        let draws = vec![ModelParams::intercept_only(0.2, 0.1, 0.5, 0.0); 10];
        assert!(matches!(
            pit_residuals(&panel, &design, &car, &draws, 1),
            Err(Error::InsufficientDraws { got: 10, need: 50 })
        ));
    }

    #[test]
    fn deviance_of_fixed_intensity_has_no_effective_parameters() {
        let panel = CountPanel::new(2, vec![0, 0], vec![1, 4, 0, 2]).unwrap();
        let lambda = Field::constant(2, 2, 1.5);
        let mut acc = DevianceAccumulator::new(2, 2);
        for _ in 0..5 {
            acc.add_intensity(&panel, &lambda);
        }
        let e = acc.finish(&panel);
        assert_abs_diff_eq!(e.pd, 0.0, epsilon = 1e-12);
        assert_eq!(e.draws, 5);
    }

    #[test]
    fn study_method_parsing() {
        assert_eq!("mcmc".parse::<StudyMethod>().unwrap(), StudyMethod::Mcmc);
        assert_eq!("xla".parse::<StudyMethod>().unwrap(), StudyMethod::Laplace(Method::Xla));
        assert!("nuts".parse::<StudyMethod>().is_err());
        assert_eq!(StudyMethod::Laplace(Method::XlaNo6).to_string(), "xla-no6");
    }
}
