//! Reference computations shared by the integration tests. Nothing here
//! calls into the library's numerical code: derivatives come from finite
//! differences, integrals from adaptive Gauss-Kronrod quadrature, and
//! Gauss-Hermite rules from the Golub-Welsch eigenvalue method.
#![allow(dead_code)]

pub mod dd;

use dd::Dd;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use secar::{CarStructure, CountPanel, Field, ModelParams};

/// Fornberg's recursion: weights for derivatives `0..=m` at `x0` from
/// values at `xs`.
pub fn fornberg_weights(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] *= c4 / c3;
        }
        c1 = c2;
    }
    c
}

/// Central finite difference of the given order on `2 * half + 1` points
/// spaced `h` apart.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, order: usize, h: f64, half: usize) -> f64 {
    let offsets: Vec<f64> = (0..=2 * half).map(|k| (k as f64 - half as f64) * h).collect();
    let w = fornberg_weights(0.0, &offsets, order);
    offsets.iter().zip(&w[order]).map(|(o, wk)| wk * f(x + o)).sum()
}

/// Finite-difference derivative extrapolated from steps `h` and `h / 2`
/// assuming the leading error term of the stencil.
pub fn derivative(f: impl Fn(f64) -> f64 + Copy, x: f64, order: usize, h: f64, half: usize) -> f64 {
    let a = central_difference(f, x, order, h, half);
    let b = central_difference(f, x, order, h / 2.0, half);
    let p = (2 * half + 1 - order) as i32;
    let p = p + p % 2;
    let r = 2f64.powi(p);
    (r * b - a) / (r - 1.0)
}

/// Central difference of the given order evaluated entirely in
/// double-double arithmetic, on `2 * half + 1` points spaced `h` apart
/// (`h` a power of two keeps every abscissa exact).
pub fn dd_derivative(f: impl Fn(Dd) -> Dd, x: f64, order: usize, h: f64, half: usize) -> f64 {
    let n = 2 * half + 1;
    let xs: Vec<Dd> = (0..n).map(|k| Dd::new(k as f64 - half as f64)).collect();
    // Fornberg's recursion on the integer stencil, in double-double
    let zero = Dd::new(0.0);
    let mut c = vec![vec![zero; n]; order + 1];
    c[0][0] = Dd::new(1.0);
    let mut c1 = Dd::new(1.0);
    let mut c4 = xs[0];
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = Dd::new(1.0);
        let c5 = c4;
        c4 = xs[i];
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 = c2 * c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (Dd::new(k as f64) * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -(c1 * c5 * c[0][i - 1]) / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - Dd::new(k as f64) * c[k - 1][j]) / c3;
            }
            c[0][j] = c[0][j] * c4 / c3;
        }
        c1 = c2;
    }
    let mut sum = zero;
    for (k, w) in c[order].iter().enumerate() {
        let at = Dd::new(x) + Dd::new((k as f64 - half as f64) * h);
        sum = sum + *w * f(at);
    }
    (sum / Dd::new(h.powi(order as i32))).to_f64()
}

/// Cell negative log-likelihood in double-double.
pub fn cell_h_dd(y: Dd, z: f64, c: f64) -> Dd {
    let u = y.exp();
    Dd::new(c) + u - Dd::new(z) * (u + Dd::new(c)).ln()
}

const GK_X: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const GK_WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * GK_WK[7];
    let mut g = fc * GK_WG[3];
    for i in 0..7 {
        let s = f(c - r * GK_X[i]) + f(c + r * GK_X[i]);
        k += GK_WK[i] * s;
        if i % 2 == 1 {
            g += GK_WG[i / 2] * s;
        }
    }
    (k * r, ((k - g) * r).abs())
}

/// Adaptive Gauss-Kronrod (7/15) integral over `[a, b]`, with error
/// roughly `rel_tol` times the integral of `|f|`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, err) = gk15(f, a, b);
        // stop at the roundoff floor as well as at the requested tolerance
        if err <= tol.max(50.0 * f64::EPSILON * v.abs()) || !err.is_finite() || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        rec(f, a, m, tol, depth - 1) + rec(f, m, b, tol, depth - 1)
    }
    let pieces = 64;
    let w = (b - a) / pieces as f64;
    let piece = |k: usize| (a + k as f64 * w, a + (k + 1) as f64 * w);
    let coarse: f64 = (0..pieces)
        .map(|k| {
            let (lo, hi) = piece(k);
            gk15(&f, lo, hi).0.abs()
        })
        .sum();
    let tol = rel_tol * coarse.max(f64::MIN_POSITIVE) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let (lo, hi) = piece(k);
            rec(&f, lo, hi, tol, 20)
        })
        .sum()
}

/// `log int exp(log_f(y)) dy` for a unimodal integrand peaked near `center`
/// with rough width `scale`.
pub fn log_integral(log_f: impl Fn(f64) -> f64, center: f64, scale: f64) -> f64 {
    // recentre on the peak for numerical range
    let peak = (-400..=400)
        .map(|k| center + k as f64 * scale / 20.0)
        .map(|y| (y, log_f(y)))
        .fold((center, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let top = peak.1;
    let v = integrate(|y| (log_f(y) - top).exp(), peak.0 - 40.0 * scale, peak.0 + 40.0 * scale, 1e-13);
    top + v.ln()
}

/// Nodes and weights of the `n`-point Gauss-Hermite rule for the weight
/// `exp(-x^2)`, from the eigen-decomposition of the Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(n, n);
    for i in 1..n {
        let b = (i as f64 / 2.0).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v * v)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Independently coded cell negative log-likelihood `c + e^y - z log(e^y + c)`.
pub fn cell_h(y: f64, z: f64, c: f64) -> f64 {
    c + y.exp() - z * (y.exp() + c).ln()
}

/// The logarithmic part `log(e^y + c)` alone, with bounded derivatives.
pub fn cell_log_lambda(y: f64, c: f64) -> f64 {
    (y.exp() + c).ln()
}

/// Exact log marginal `log int N(y; alpha, tau2) exp(-h(y)) dy` of one
/// cell, without the `log z!` constant.
pub fn single_cell_log_marginal(z: f64, c: f64, alpha: f64, tau2: f64) -> f64 {
    let log_f = |y: f64| {
        -0.5 * (2.0 * std::f64::consts::PI * tau2).ln() - 0.5 * (y - alpha).powi(2) / tau2 - cell_h(y, z, c)
    };
    let start = 0.5 * ((z + 0.5).ln() + alpha);
    log_integral(log_f, start, tau2.sqrt().min(1.0))
}

pub fn dense_precision(car: &CarStructure, zeta: f64, tau2: f64) -> DMatrix<f64> {
    let n = car.n_locations();
    let mut q = DMatrix::identity(n, n);
    for i in 0..n {
        for &j in car.graph().neighbors(i) {
            q[(i, j)] = -zeta;
        }
    }
    q / tau2
}

/// `log p(Z, Y | theta)` without the `log z!` terms, from dense algebra.
pub fn dense_log_likelihood(car: &CarStructure, panel: &CountPanel, params: &ModelParams, alpha: &Field, y: &Field) -> f64 {
    let n = car.n_locations();
    let q = dense_precision(car, params.zeta, params.tau2);
    let logdet: f64 = 2.0 * q.clone().cholesky().unwrap().l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let mut total = 0.0;
    for t in 0..panel.n_times() {
        let r = DVector::from_iterator(n, (0..n).map(|i| y.get(i, t) - alpha.get(i, t)));
        total += 0.5 * logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (r.transpose() * &q * &r)[(0, 0)];
        for i in 0..n {
            let lambda = y.get(i, t).exp() + params.eta * f64::from(panel.previous(i, t));
            total += f64::from(panel.count(i, t)) * lambda.ln() - lambda;
        }
    }
    total
}
