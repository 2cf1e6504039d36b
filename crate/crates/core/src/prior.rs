//! Prior densities on the model parameters.

use std::f64::consts::PI;

use crate::graph::{CarStructure, ZetaBounds};
use crate::model::ModelParams;

/// A proper univariate density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarPrior {
    Uniform { lower: f64, upper: f64 },
    HalfCauchy { scale: f64 },
    Gaussian { mean: f64, variance: f64 },
}

impl ScalarPrior {
    pub fn log_density(&self, x: f64) -> f64 {
        match *self {
            ScalarPrior::Uniform { lower, upper } => {
                if x > lower && x < upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            ScalarPrior::HalfCauchy { scale } => {
                if x > 0.0 {
                    (2.0 / (PI * scale)).ln() - (x / scale).powi(2).ln_1p()
                } else {
                    f64::NEG_INFINITY
                }
            }
            ScalarPrior::Gaussian { mean, variance } => {
                -0.5 * (2.0 * PI * variance).ln() - 0.5 * (x - mean).powi(2) / variance
            }
        }
    }
}

/// Prior for zeta: either uniform over the graph's admissible interval or
/// an explicit density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZetaPrior {
    UniformAdmissible,
    Explicit(ScalarPrior),
}

/// Independent priors on `tau` (the conditional standard deviation),
/// `zeta`, `eta` and each coefficient of `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub tau: ScalarPrior,
    pub zeta: ZetaPrior,
    pub eta: ScalarPrior,
    pub beta: ScalarPrior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            tau: ScalarPrior::HalfCauchy { scale: 5.0 },
            zeta: ZetaPrior::UniformAdmissible,
            eta: ScalarPrior::Uniform {
                lower: 0.0,
                upper: 1.0,
            },
            beta: ScalarPrior::Gaussian {
                mean: 0.0,
                variance: 1000.0,
            },
        }
    }
}

impl PriorSpec {
    /// Interval on which the zeta prior and the admissible range overlap.
    pub fn zeta_support(&self, car: &CarStructure) -> ZetaBounds {
        let b = car.zeta_bounds();
        match self.zeta {
            ZetaPrior::UniformAdmissible => b,
            ZetaPrior::Explicit(ScalarPrior::Uniform { lower, upper }) => b.intersect(lower, upper),
            ZetaPrior::Explicit(_) => b,
        }
    }

    /// Joint log prior density of `theta` with `tau2` as the variance
    /// coordinate (the density of `tau` carries the Jacobian
    /// `d tau / d tau2 = 1 / (2 tau)`).
    pub fn log_density(&self, params: &ModelParams, car: &CarStructure) -> f64 {
        if !(params.tau2 > 0.0) {
            return f64::NEG_INFINITY;
        }
        let tau = params.tau2.sqrt();
        let mut lp = self.tau.log_density(tau) - (2.0 * tau).ln();
        lp += match self.zeta {
            ZetaPrior::UniformAdmissible => {
                let b = car.zeta_bounds();
                if !b.contains(params.zeta) {
                    f64::NEG_INFINITY
                } else if b.lower.is_finite() && b.upper.is_finite() {
                    -(b.upper - b.lower).ln()
                } else {
                    0.0
                }
            }
            ZetaPrior::Explicit(p) => p.log_density(params.zeta),
        };
        lp += self.eta.log_density(params.eta);
        lp + params.beta.iter().map(|&b| self.beta.log_density(b)).sum::<f64>()
    }
}
