//! Model parameters, data containers, the joint log-density kernel and the
//! forward simulator.
//!
//! All space-time arrays are stored time-major: the block for week `t`
//! (0-based, i.e. observation week `t + 1`) is contiguous, which matches
//! the factorization of both the latent prior and the likelihood over
//! weeks.

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::cell::Cell;
use crate::error::{Error, Result};
use crate::graph::CarStructure;
use crate::rng;

/// Parameters `theta = (eta, zeta, tau2, beta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Self-excitation weight in `[0, 1)`.
    pub eta: f64,
    /// Spatial dependence, inside the graph's admissible interval.
    pub zeta: f64,
    /// Conditional variance of the CAR field.
    pub tau2: f64,
    /// Large-scale coefficients; the first entry is the intercept.
    pub beta: Vec<f64>,
}

impl ModelParams {
    pub fn intercept_only(eta: f64, zeta: f64, tau2: f64, beta0: f64) -> Self {
        Self {
            eta,
            zeta,
            tau2,
            beta: vec![beta0],
        }
    }

    pub fn validate(&self, car: &CarStructure) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::Inadmissible(format!("eta = {} not in [0, 1)", self.eta)));
        }
        if !(self.tau2 > 0.0 && self.tau2.is_finite()) {
            return Err(Error::Inadmissible(format!("tau2 = {} must be positive", self.tau2)));
        }
        if self.beta.is_empty() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Inadmissible(format!("beta = {:?}", self.beta)));
        }
        car.check_zeta(self.zeta)
    }
}

/// A real-valued field over locations x weeks.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    n_locations: usize,
    n_times: usize,
    values: Vec<f64>,
}

/// Latent log-intensity field `Y(s_i, t)`.
pub type LatentField = Field;

impl Field {
    pub fn zeros(n_locations: usize, n_times: usize) -> Self {
        Self::constant(n_locations, n_times, 0.0)
    }

    pub fn constant(n_locations: usize, n_times: usize, value: f64) -> Self {
        Self {
            n_locations,
            n_times,
            values: vec![value; n_locations * n_times],
        }
    }

    /// From time-major values (`values[t * n_locations + i]`).
    pub fn from_time_major(n_locations: usize, n_times: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_locations * n_times {
            return Err(Error::Dimension(format!(
                "{} values for a {n_locations} x {n_times} field",
                values.len()
            )));
        }
        Ok(Self {
            n_locations,
            n_times,
            values,
        })
    }

    pub fn from_fn(n_locations: usize, n_times: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_locations * n_times);
        for t in 0..n_times {
            for i in 0..n_locations {
                values.push(f(i, t));
            }
        }
        Self {
            n_locations,
            n_times,
            values,
        }
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.values[t * self.n_locations + i]
    }

    pub fn set(&mut self, i: usize, t: usize, v: f64) {
        self.values[t * self.n_locations + i] = v;
    }

    pub fn block(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_locations..(t + 1) * self.n_locations]
    }

    pub fn block_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.n_locations..(t + 1) * self.n_locations]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn same_shape(&self, n: usize, t: usize, what: &str) -> Result<()> {
        if self.n_locations == n && self.n_times == t {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what} is {} x {}, expected {n} x {t}",
                self.n_locations, self.n_times
            )))
        }
    }
}

/// Observed counts `Z(s_i, t)` for weeks `1..=T` plus the week-0 history.
#[derive(Debug, Clone, PartialEq)]
pub struct CountPanel {
    n_locations: usize,
    n_times: usize,
    counts: Vec<u32>,
    initial: Vec<u32>,
}

impl CountPanel {
    /// `counts` time-major for weeks `1..=T`; `initial` is week 0.
    pub fn new(n_locations: usize, initial: Vec<u32>, counts: Vec<u32>) -> Result<Self> {
        if initial.len() != n_locations {
            return Err(Error::Dimension(format!(
                "{} initial counts for {n_locations} locations",
                initial.len()
            )));
        }
        if n_locations == 0 && !counts.is_empty() {
            return Err(Error::Dimension("counts given for zero locations".into()));
        }
        if n_locations > 0 && counts.len() % n_locations != 0 {
            return Err(Error::Dimension(format!(
                "{} counts is not a multiple of {n_locations} locations",
                counts.len()
            )));
        }
        let n_times = if n_locations == 0 {
            0
        } else {
            counts.len() / n_locations
        };
        Ok(Self {
            n_locations,
            n_times,
            counts,
            initial,
        })
    }

    /// Panel with no observed weeks (prior-only inference).
    pub fn empty(n_locations: usize) -> Self {
        Self {
            n_locations,
            n_times: 0,
            counts: Vec::new(),
            initial: vec![0; n_locations],
        }
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    pub fn n_cells(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, i: usize, t: usize) -> u32 {
        self.counts[t * self.n_locations + i]
    }

    /// Count in the week before `t` (the history for `t = 0`).
    pub fn previous(&self, i: usize, t: usize) -> u32 {
        if t == 0 {
            self.initial[i]
        } else {
            self.count(i, t - 1)
        }
    }

    pub fn block(&self, t: usize) -> &[u32] {
        &self.counts[t * self.n_locations..(t + 1) * self.n_locations]
    }

    pub fn previous_block(&self, t: usize) -> &[u32] {
        if t == 0 {
            &self.initial
        } else {
            self.block(t - 1)
        }
    }

    pub fn initial_counts(&self) -> &[u32] {
        &self.initial
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn cell(&self, i: usize, t: usize, eta: f64) -> Cell {
        Cell::new(self.count(i, t), self.previous(i, t), eta)
    }

    /// Cells of week `t`.
    pub fn block_cells(&self, t: usize, eta: f64) -> impl Iterator<Item = Cell> + '_ {
        self.block(t)
            .iter()
            .zip(self.previous_block(t))
            .map(move |(&z, &zp)| Cell::new(z, zp, eta))
    }

    /// Same panel with locations renamed by `perm` (location `i` becomes
    /// `perm[i]`).
    pub fn relabel(&self, perm: &[usize]) -> Self {
        let n = self.n_locations;
        let mut counts = vec![0; self.counts.len()];
        let mut initial = vec![0; n];
        for i in 0..n {
            initial[perm[i]] = self.initial[i];
            for t in 0..self.n_times {
                counts[t * n + perm[i]] = self.count(i, t);
            }
        }
        Self {
            counts,
            initial,
            ..self.clone()
        }
    }
}

/// Covariates `x_k(s_i, t)` for weeks `1..=T`; column 0 is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateDesign {
    n_locations: usize,
    n_times: usize,
    names: Vec<String>,
    /// `values[(t * n + i) * p + k]`
    values: Vec<f64>,
}

impl CovariateDesign {
    pub fn intercept_only(n_locations: usize, n_times: usize) -> Self {
        Self {
            n_locations,
            n_times,
            names: vec!["intercept".into()],
            values: vec![1.0; n_locations * n_times],
        }
    }

    /// Design with an intercept plus the named covariates; `value(i, t, k)`
    /// supplies covariate `k` (0-based, excluding the intercept).
    pub fn from_fn(
        n_locations: usize,
        n_times: usize,
        names: Vec<String>,
        value: impl Fn(usize, usize, usize) -> f64,
    ) -> Self {
        let p = names.len() + 1;
        let mut values = Vec::with_capacity(n_locations * n_times * p);
        for t in 0..n_times {
            for i in 0..n_locations {
                values.push(1.0);
                for k in 0..p - 1 {
                    values.push(value(i, t, k));
                }
            }
        }
        let mut all = vec!["intercept".to_string()];
        all.extend(names);
        Self {
            n_locations,
            n_times,
            names: all,
            values,
        }
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn n_times(&self) -> usize {
        self.n_times
    }

    /// Number of columns including the intercept.
    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn value(&self, i: usize, t: usize, k: usize) -> f64 {
        self.values[(t * self.n_locations + i) * self.p() + k]
    }

    pub fn check_panel(&self, panel: &CountPanel) -> Result<()> {
        if self.n_locations == panel.n_locations() && self.n_times == panel.n_times() {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "design is {} x {}, panel is {} x {}",
                self.n_locations,
                self.n_times,
                panel.n_locations(),
                panel.n_times()
            )))
        }
    }

    /// Center and scale the named covariate to mean 0, variance 1 over all
    /// cells. Returns the `(mean, sd)` used.
    pub fn standardize(&mut self, name: &str) -> Result<(f64, f64)> {
        let k = self
            .names
            .iter()
            .position(|n| n == name)
            .filter(|&k| k > 0)
            .ok_or_else(|| Error::Config(format!("no covariate named {name:?}")))?;
        let p = self.p();
        let col: Vec<f64> = self.values.iter().skip(k).step_by(p).copied().collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 0.0) {
            return Err(Error::Domain(format!("covariate {name:?} is constant")));
        }
        for v in self.values.iter_mut().skip(k).step_by(p) {
            *v = (*v - mean) / sd;
        }
        Ok((mean, sd))
    }

    pub fn relabel(&self, perm: &[usize]) -> Self {
        let (n, p) = (self.n_locations, self.p());
        let mut values = vec![0.0; self.values.len()];
        for t in 0..self.n_times {
            for i in 0..n {
                let src = (t * n + i) * p;
                let dst = (t * n + perm[i]) * p;
                values[dst..dst + p].copy_from_slice(&self.values[src..src + p]);
            }
        }
        Self {
            values,
            ..self.clone()
        }
    }
}

/// `alpha(s_i, t) = sum_k beta_k x_k(s_i, t)`.
pub fn linear_predictor(design: &CovariateDesign, beta: &[f64]) -> Result<Field> {
    let p = design.p();
    if beta.len() != p {
        return Err(Error::Dimension(format!(
            "beta has {} entries, design has {p} columns",
            beta.len()
        )));
    }
    let values = design
        .values
        .chunks_exact(p)
        .map(|x| x.iter().zip(beta).map(|(a, b)| a * b).sum())
        .collect();
    Ok(Field {
        n_locations: design.n_locations,
        n_times: design.n_times,
        values,
    })
}

/// `lambda(s_i, t) = exp(Y(s_i, t)) + eta Z(s_i, t - 1)`.
pub fn intensity(y: &LatentField, panel: &CountPanel, eta: f64) -> Result<Field> {
    y.same_shape(panel.n_locations(), panel.n_times(), "latent field")?;
    Ok(Field::from_fn(panel.n_locations(), panel.n_times(), |i, t| {
        y.get(i, t).exp() + eta * f64::from(panel.previous(i, t))
    }))
}

/// Contribution of week `t` to `g`.
pub fn g_block(
    t: usize,
    y: &[f64],
    panel: &CountPanel,
    eta: f64,
    q: &crate::graph::CarPrecision<'_>,
    alpha: &[f64],
) -> f64 {
    let centered: Vec<f64> = y.iter().zip(alpha).map(|(a, b)| a - b).collect();
    let data: f64 = panel
        .block_cells(t, eta)
        .zip(y)
        .map(|(cell, &yi)| cell.neg_loglik(yi))
        .sum();
    0.5 * q.quad_form(&centered) + data
}

/// Gradient of [`g_block`] with respect to the week's latent values.
pub fn g_block_gradient(
    t: usize,
    y: &[f64],
    panel: &CountPanel,
    eta: f64,
    q: &crate::graph::CarPrecision<'_>,
    alpha: &[f64],
) -> Vec<f64> {
    let centered: Vec<f64> = y.iter().zip(alpha).map(|(a, b)| a - b).collect();
    let qx = q.mul(&centered);
    panel
        .block_cells(t, eta)
        .zip(y)
        .zip(qx)
        .map(|((cell, &yi), qi)| qi + cell.derivative(yi, 1))
        .collect()
}

/// Gradient of [`g_value`] in `Y`.
pub fn g_gradient(
    y: &LatentField,
    panel: &CountPanel,
    params: &ModelParams,
    alpha: &Field,
    car: &CarStructure,
) -> Result<Field> {
    let (n, t_len) = (panel.n_locations(), panel.n_times());
    y.same_shape(n, t_len, "latent field")?;
    alpha.same_shape(n, t_len, "alpha")?;
    let q = car.precision_block(params.zeta, params.tau2)?;
    let mut out = Field::zeros(n, t_len);
    for t in 0..t_len {
        let g = g_block_gradient(t, y.block(t), panel, params.eta, &q, alpha.block(t));
        out.block_mut(t).copy_from_slice(&g);
    }
    Ok(out)
}

/// Negative log integrand
/// `g(Y) = 1/2 (Y - alpha)' Sigma^{-1} (Y - alpha) + sum_{i,t} h_{i,t}(Y(s_i, t))`
/// where `h` is the cell negative log-likelihood without `log z!`.
pub fn g_value(
    y: &LatentField,
    panel: &CountPanel,
    params: &ModelParams,
    alpha: &Field,
    car: &CarStructure,
) -> Result<f64> {
    let (n, t_len) = (panel.n_locations(), panel.n_times());
    y.same_shape(n, t_len, "latent field")?;
    alpha.same_shape(n, t_len, "alpha")?;
    if car.n_locations() != n {
        return Err(Error::Dimension(format!(
            "graph has {} locations, panel has {n}",
            car.n_locations()
        )));
    }
    let q = car.precision_block(params.zeta, params.tau2)?;
    Ok((0..t_len)
        .map(|t| g_block(t, y.block(t), panel, params.eta, &q, alpha.block(t)))
        .sum())
}

/// Settings for [`simulate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSpec {
    pub seed: u64,
    /// Weeks simulated and discarded before week 0 of the output.
    pub burn_in: usize,
}

impl SimulationSpec {
    pub const DEFAULT_BURN_IN: usize = 50;

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            burn_in: Self::DEFAULT_BURN_IN,
        }
    }
}

/// Forward simulation for the weeks covered by `design`.
///
/// Week-0 history starts from `Z ~ Pois(exp(alpha))` using the first
/// week's covariates; `burn_in` further weeks are simulated with those
/// covariates and discarded, the last of them becoming the history of the
/// returned panel.
pub fn simulate(
    car: &CarStructure,
    params: &ModelParams,
    design: &CovariateDesign,
    spec: SimulationSpec,
) -> Result<(CountPanel, LatentField)> {
    params.validate(car)?;
    let n = car.n_locations();
    if design.n_locations() != n {
        return Err(Error::Dimension(format!(
            "design has {} locations, graph has {n}",
            design.n_locations()
        )));
    }
    let t_len = design.n_times();
    let alpha = linear_predictor(design, &params.beta)?;
    let first_alpha: Vec<f64> = if t_len > 0 {
        alpha.block(0).to_vec()
    } else {
        vec![params.beta[0]; n]
    };

    let q = car.precision_block(params.zeta, params.tau2)?.to_dense();
    let chol = q
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("CAR precision in simulation".into()))?;
    let l = chol.l();

    let mut rng = rng::stream(spec.seed, 0);
    let draw_poisson = |rng: &mut rng::Rng, mean: f64| -> Result<u32> {
        if mean <= 0.0 {
            return Ok(0);
        }
        let d = Poisson::new(mean)
            .map_err(|_| Error::Domain(format!("Poisson mean {mean} out of range")))?;
        let v: f64 = d.sample(rng);
        if v > f64::from(u32::MAX) {
            return Err(Error::Domain(format!("simulated count {v} overflows")));
        }
        Ok(v as u32)
    };
    let draw_latent = |rng: &mut rng::Rng, mean: &[f64]| -> Vec<f64> {
        let w = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let x = l.tr_solve_lower_triangular(&w).expect("triangular factor is nonsingular");
        mean.iter().zip(x.iter()).map(|(m, v)| m + v).collect()
    };

    let mut prev: Vec<u32> = first_alpha
        .iter()
        .map(|a| draw_poisson(&mut rng, a.exp()))
        .collect::<Result<_>>()?;
    for _ in 0..spec.burn_in {
        let y = draw_latent(&mut rng, &first_alpha);
        prev = y
            .iter()
            .zip(&prev)
            .map(|(yi, &zp)| draw_poisson(&mut rng, yi.exp() + params.eta * f64::from(zp)))
            .collect::<Result<_>>()?;
    }

    let initial = prev.clone();
    let mut counts = Vec::with_capacity(n * t_len);
    let mut latent = Vec::with_capacity(n * t_len);
    for t in 0..t_len {
        let y = draw_latent(&mut rng, alpha.block(t));
        let z: Vec<u32> = y
            .iter()
            .zip(&prev)
            .map(|(yi, &zp)| draw_poisson(&mut rng, yi.exp() + params.eta * f64::from(zp)))
            .collect::<Result<_>>()?;
        counts.extend_from_slice(&z);
        latent.extend_from_slice(&y);
        prev = z;
    }
    Ok((
        CountPanel::new(n, initial, counts)?,
        Field::from_time_major(n, t_len, latent)?,
    ))
}
