//! Inference for self-exciting Poisson CAR models of spatio-temporal
//! count data.
//!
//! Counts `Z(s_i, t)` on a lattice are Poisson with intensity
//! `exp(Y(s_i, t)) + eta Z(s_i, t - 1)`, where each week's latent field
//! `Y_t` is a CAR Gaussian field with mean `alpha_t = X_t beta` and
//! precision `(I - zeta N) / tau2`. The crate provides simulation,
//! first-order and extended Laplace approximations of the marginal
//! posterior of `theta = (eta, zeta, tau2, beta)`, an MCMC sampler used as
//! a reference, and model diagnostics.

pub mod cell;
pub mod error;
pub mod diagnostics;
pub mod graph;
pub mod inference;
pub mod io;
pub mod mcmc;
pub mod mode;
pub mod model;
pub mod prior;
pub mod quadrature;
pub mod rng;
pub mod xla;

pub use error::{Error, Result};
pub use graph::{build_torus_lattice, load_graph, CarStructure, SpatialGraph};
pub use model::{CountPanel, CovariateDesign, Field, LatentField, ModelParams};
pub use prior::PriorSpec;
