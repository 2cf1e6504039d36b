//! Higher-order corrections to the Laplace approximation.
//!
//! For an integral `int exp(-g(Y)) dY` whose non-quadratic part is a sum of
//! univariate cell terms, the only non-zero third and higher derivatives of
//! `g` at the mode are the pure ones `g_iii`, `g_iiii`, `g_vi`. With `g^{ij}`
//! the entries of the inverse Hessian, the corrected log-integral is
//!
//! ```text
//! log M = LA(1) - 1/8  sum_i g_iiii (g^{ii})^2
//!               - 1/48 sum_i g_vi   (g^{ii})^3
//!               + 1/72 sum_{i,j} g_iii g_jjj (6 (g^{ij})^3 + 9 g^{ii} g^{jj} g^{ij})
//! ```
//!
//! where the pair sum runs over all ordered pairs of cells within a week
//! (the inverse Hessian is block diagonal over weeks).

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::CarStructure;
use crate::mode::{find_mode, la1_log_marginal, ModeOptions, ModeResult};
use crate::model::{linear_predictor, CountPanel, CovariateDesign, Field, ModelParams};
use crate::prior::PriorSpec;

/// Pure third, fourth and sixth derivatives of `g` at the mode.
#[derive(Debug, Clone)]
pub struct DerivativeField {
    pub g3: Field,
    pub g4: Field,
    pub g6: Field,
}

pub fn g_derivatives(mode: &ModeResult, panel: &CountPanel, params: &ModelParams) -> DerivativeField {
    let mu = &mode.mu_star;
    let (n, t_len) = (mu.n_locations(), mu.n_times());
    let at = |order: u8| {
        Field::from_fn(n, t_len, |i, t| panel.cell(i, t, params.eta).derivative(mu.get(i, t), order))
    };
    DerivativeField {
        g3: at(3),
        g4: at(4),
        g6: at(6),
    }
}

/// Per-week dense inverses of the block Hessians.
#[derive(Debug, Clone)]
pub struct HessianInverseBlocks {
    blocks: Vec<DMatrix<f64>>,
}

impl HessianInverseBlocks {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, t: usize) -> &DMatrix<f64> {
        &self.blocks[t]
    }

    pub fn diag(&self, i: usize, t: usize) -> f64 {
        self.blocks[t][(i, i)]
    }

    /// `g^{ij}` for cells `(i, t)` and `(j, s)`; zero across weeks.
    pub fn entry(&self, i: usize, t: usize, j: usize, s: usize) -> f64 {
        if t == s {
            self.blocks[t][(i, j)]
        } else {
            0.0
        }
    }

    /// Diagonal `g^{ii}` as a field.
    pub fn diagonal_field(&self) -> Field {
        let n = self.blocks.first().map_or(0, DMatrix::nrows);
        Field::from_fn(n, self.blocks.len(), |i, t| self.blocks[t][(i, i)])
    }
}

pub fn invert_hessian_blocks(mode: &ModeResult) -> Result<HessianInverseBlocks> {
    let blocks = mode
        .blocks
        .par_iter()
        .map(|b| b.factor.inverse())
        .collect::<Vec<_>>();
    for (t, inv) in blocks.iter().enumerate() {
        if (0..inv.nrows()).any(|i| !(inv[(i, i)] > 0.0)) {
            return Err(Error::NotPositiveDefinite(format!("inverse Hessian of week {}", t + 1)));
        }
    }
    Ok(HessianInverseBlocks { blocks })
}

/// The three correction terms added to the first-order approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corrections {
    /// `-1/8 sum g_iiii (g^{ii})^2`
    pub fourth: f64,
    /// `-1/48 sum g_vi (g^{ii})^3`
    pub sixth: f64,
    /// Third-derivative pair term.
    pub pair: f64,
}

impl Corrections {
    pub fn total(&self, include_sixth: bool) -> f64 {
        self.fourth + self.pair + if include_sixth { self.sixth } else { 0.0 }
    }
}

/// Correction terms for one week from the block inverse and the
/// derivatives of its cells.
pub fn block_corrections(inv: &DMatrix<f64>, g3: &[f64], g4: &[f64], g6: &[f64]) -> Corrections {
    let n = g3.len();
    let mut fourth = 0.0;
    let mut sixth = 0.0;
    let mut pair = 0.0;
    for i in 0..n {
        let gii = inv[(i, i)];
        fourth -= g4[i] * gii * gii / 8.0;
        sixth -= g6[i] * gii * gii * gii / 48.0;
        let mut row = 0.0;
        for j in 0..i {
            let gij = inv[(i, j)];
            let gjj = inv[(j, j)];
            row += g3[j] * (6.0 * gij * gij * gij + 9.0 * gii * gjj * gij);
        }
        // off-diagonal ordered pairs (i, j) and (j, i) contribute equally
        pair += g3[i] * (2.0 * row + g3[i] * 15.0 * gii * gii * gii);
    }
    Corrections {
        fourth,
        sixth,
        pair: pair / 72.0,
    }
}

pub fn corrections(mode: &ModeResult, panel: &CountPanel, params: &ModelParams) -> Result<Corrections> {
    let inv = invert_hessian_blocks(mode)?;
    let d = g_derivatives(mode, panel, params);
    Ok(corrections_with(&inv, &d))
}

pub fn corrections_with(inv: &HessianInverseBlocks, d: &DerivativeField) -> Corrections {
    let per_block: Vec<Corrections> = (0..inv.n_blocks())
        .into_par_iter()
        .map(|t| block_corrections(inv.block(t), d.g3.block(t), d.g4.block(t), d.g6.block(t)))
        .collect();
    per_block.iter().fold(
        Corrections {
            fourth: 0.0,
            sixth: 0.0,
            pair: 0.0,
        },
        |acc, c| Corrections {
            fourth: acc.fourth + c.fourth,
            sixth: acc.sixth + c.sixth,
            pair: acc.pair + c.pair,
        },
    )
}

/// Extended Laplace log-marginal of the data, from a converged mode.
pub fn xla_log_marginal(
    mode: &ModeResult,
    panel: &CountPanel,
    params: &ModelParams,
    car: &CarStructure,
    include_sixth: bool,
) -> Result<f64> {
    let c = corrections(mode, panel, params)?;
    Ok(la1_log_marginal(mode, car, params)? + c.total(include_sixth))
}

/// Unnormalized extended Laplace log-posterior of `theta`.
pub fn xla_log_posterior(
    panel: &CountPanel,
    params: &ModelParams,
    design: &CovariateDesign,
    car: &CarStructure,
    priors: &PriorSpec,
    include_sixth: bool,
) -> Result<f64> {
    design.check_panel(panel)?;
    let alpha = linear_predictor(design, &params.beta)?;
    let mode = find_mode(panel, params, &alpha, car, None, ModeOptions::default())?;
    Ok(xla_log_marginal(&mode, panel, params, car, include_sixth)? + priors.log_density(params, car))
}
