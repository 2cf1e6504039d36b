//! Per-cell data term and its derivatives in the latent value.
//!
//! For a cell with count `z`, previous count `z_prev` and self-excitation
//! `eta`, write `c = eta * z_prev` and `lambda(y) = exp(y) + c`. The
//! negative log-likelihood (without the `log z!` constant) is
//!
//! ```text
//! h(y) = c + exp(y) - z log(exp(y) + c)
//! ```
//!
//! With `p = exp(y) / lambda(y)` the share of intensity coming from the
//! latent field, `dp/dy = p (1 - p)`, so `p` is a logistic function of `y`
//! and every derivative of `h` has the form `exp(y) - z s_m(p)`, where
//! `s_m` is the m-th derivative of the logistic function written as a
//! polynomial in `p` and `q = 1 - p`.

/// One observation cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub z: f64,
    /// `eta * z_prev`, the self-excitation offset of the intensity.
    pub offset: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Cell {
    pub fn new(z: u32, z_prev: u32, eta: f64) -> Self {
        Self {
            z: f64::from(z),
            offset: eta * f64::from(z_prev),
        }
    }

    /// `log(exp(y) + c)`, evaluated without overflow.
    pub fn log_intensity(&self, y: f64) -> f64 {
        if self.offset <= 0.0 {
            return y;
        }
        let lc = self.offset.ln();
        let (hi, lo) = if y > lc { (y, lc) } else { (lc, y) };
        hi + (lo - hi).exp().ln_1p()
    }

    /// `h(y)`, the negative log-likelihood of the cell up to `log z!`.
    pub fn neg_loglik(&self, y: f64) -> f64 {
        let log_term = if self.z > 0.0 {
            self.z * self.log_intensity(y)
        } else {
            0.0
        };
        self.offset + y.exp() - log_term
    }

    /// `(p, 1 - p)` with `p = exp(y) / (exp(y) + c)`.
    fn shares(&self, y: f64) -> (f64, f64) {
        if self.offset <= 0.0 {
            return (1.0, 0.0);
        }
        let t = self.offset.ln() - y;
        (sigmoid(-t), sigmoid(t))
    }

    /// m-th derivative of the logistic share, `m` in `1..=5`.
    fn share_derivative(p: f64, q: f64, m: u8) -> f64 {
        let s = p * q;
        match m {
            1 => s,
            2 => s * (q - p),
            3 => s * (1.0 - 6.0 * s),
            4 => s * (q - p) * (1.0 - 12.0 * s),
            5 => s * (1.0 - 30.0 * s + 120.0 * s * s),
            _ => unreachable!("share derivative of order {m}"),
        }
    }

    /// `d^order h / dy^order` for `order` in `1..=6`.
    pub fn derivative(&self, y: f64, order: u8) -> f64 {
        assert!((1..=6).contains(&order), "derivative order {order} not in 1..=6");
        let u = y.exp();
        if self.z == 0.0 {
            return u;
        }
        let (p, q) = self.shares(y);
        let s = if order == 1 {
            p
        } else {
            Self::share_derivative(p, q, order - 1)
        };
        u - self.z * s
    }

    /// First and second derivative together.
    pub fn gradient_curvature(&self, y: f64) -> (f64, f64) {
        let u = y.exp();
        if self.z == 0.0 {
            return (u, u);
        }
        let (p, q) = self.shares(y);
        (u - self.z * p, u - self.z * p * q)
    }
}

/// Taylor coefficients of the cell log-likelihood about `mu`: the
/// log-likelihood is approximated by `f y - k y^2 / 2` up to a constant, so
/// `k = h''(mu)` and `f = k mu - h'(mu)`.
pub fn taylor_coeffs(mu: f64, z: u32, z_prev: u32, eta: f64) -> (f64, f64) {
    let (d1, d2) = Cell::new(z, z_prev, eta).gradient_curvature(mu);
    (d2 * mu - d1, d2)
}
