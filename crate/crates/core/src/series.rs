//! Truncated Taylor series in log-moneyness and an order-by-order solver for
//! the implicit equation `f(m, P(m)) = g(m)` that defines the implied
//! volatility of a normalized call price.
//!
//! With `f(m, y) = Φ(m/(y√T) + y√T/2) − e^{−m} Φ(m/(y√T) − y√T/2)` (the
//! Black–Scholes call divided by the spot), the coefficient of `m^k` in
//! `f(m, P(m))` depends on `p_k` only through `f_y(0, P0) p_k`, so each
//! Taylor coefficient follows from the lower ones by one division.

use crate::normal;

/// Coefficients `c_0..c_n` of `Σ c_k m^k`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Series(pub Vec<f64>);

impl Series {
    pub fn constant(c: f64, len: usize) -> Self {
        let mut v = vec![0.0; len];
        v[0] = c;
        Self(v)
    }

    /// `a + b m`.
    pub fn linear(a: f64, b: f64, len: usize) -> Self {
        let mut v = Self::constant(a, len);
        if len > 1 {
            v.0[1] = b;
        }
        v
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn add(&self, o: &Self) -> Self {
        Self(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self(self.0.iter().zip(&o.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self(self.0.iter().map(|a| a * c).collect())
    }

    pub fn mul(&self, o: &Self) -> Self {
        let n = self.len().min(o.len());
        Self((0..n).map(|k| (0..=k).map(|j| self.0[j] * o.0[k - j]).sum()).collect())
    }

    pub fn recip(&self) -> Self {
        let n = self.len();
        let a0 = self.0[0];
        let mut b = vec![0.0; n];
        b[0] = 1.0 / a0;
        for k in 1..n {
            let s: f64 = (1..=k).map(|j| self.0[j] * b[k - j]).sum();
            b[k] = -s / a0;
        }
        Self(b)
    }

    pub fn exp(&self) -> Self {
        let n = self.len();
        let mut b = vec![0.0; n];
        b[0] = self.0[0].exp();
        for k in 1..n {
            let s: f64 = (1..=k).map(|j| j as f64 * self.0[j] * b[k - j]).sum();
            b[k] = s / k as f64;
        }
        Self(b)
    }

    /// `Φ(u(m))`, from `dΦ(u)/dm = φ(u) u'` and
    /// `φ(u) = φ(u_0) exp(−(u² − u_0²)/2)`.
    pub fn norm_cdf(&self) -> Self {
        let n = self.len();
        let u0 = self.0[0];
        let mut w = self.mul(self).scale(-0.5);
        w.0[0] = 0.0;
        let pdf = w.exp().scale(normal::pdf(u0));
        let mut c = vec![0.0; n];
        c[0] = normal::cdf(u0);
        for k in 1..n {
            let s: f64 = (1..=k).map(|j| j as f64 * self.0[j] * pdf.0[k - j]).sum();
            c[k] = s / k as f64;
        }
        Self(c)
    }

    /// Derivatives `c_k k!`.
    pub fn derivatives(&self) -> Vec<f64> {
        let mut fact = 1.0;
        self.0
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k > 0 {
                    fact *= k as f64;
                }
                c * fact
            })
            .collect()
    }
}

/// `f(m, y(m))` truncated to `y.len()` terms.
pub(crate) fn normalized_call(y: &Series, sqrt_t: f64) -> Series {
    let n = y.len();
    let m = Series::linear(0.0, 1.0, n);
    let a = m.mul(&y.recip()).scale(1.0 / sqrt_t);
    let b = y.scale(0.5 * sqrt_t);
    let discount = Series::linear(0.0, -1.0, n).exp();
    a.add(&b).norm_cdf().sub(&discount.mul(&a.sub(&b).norm_cdf()))
}

/// Normalized mixture call price with node volatilities `etas`.
#[cfg(test)]
pub(crate) fn g_parameter(weights: &[f64], etas: &[f64], sqrt_t: f64, len: usize) -> Series {
    let discount = Series::linear(0.0, -1.0, len).exp();
    let mut total = Series::constant(0.0, len);
    for (&w, &eta) in weights.iter().zip(etas) {
        let s = eta * sqrt_t;
        let d1 = Series::linear(0.5 * s, 1.0 / s, len).norm_cdf();
        let d2 = Series::linear(-0.5 * s, 1.0 / s, len).norm_cdf();
        total = total.add(&d1.sub(&discount.mul(&d2)).scale(w));
    }
    total
}

/// Normalized spot-mixture call price with `β_n = log(θ_n/S0)` and base vol `eta`.
pub(crate) fn g_spot(weights: &[f64], betas: &[f64], eta: f64, sqrt_t: f64, len: usize) -> Series {
    let discount = Series::linear(0.0, -1.0, len).exp();
    let s = eta * sqrt_t;
    let mut total = Series::constant(0.0, len);
    for (&w, &beta) in weights.iter().zip(betas) {
        let d1 = Series::linear(beta / s + 0.5 * s, 1.0 / s, len).norm_cdf();
        let d2 = Series::linear(beta / s - 0.5 * s, 1.0 / s, len).norm_cdf();
        total = total.add(&d1.scale(beta.exp()).sub(&discount.mul(&d2)).scale(w));
    }
    total
}

/// Taylor coefficients of `P` with `f(m, P(m)) = g(m)` and `P(0) = p0`.
pub(crate) fn solve_implicit(g: &Series, sqrt_t: f64, p0: f64) -> Series {
    let n = g.len();
    let f_y = sqrt_t * normal::pdf(0.5 * p0 * sqrt_t);
    let mut p = Series::constant(p0, n);
    for k in 1..n {
        let trial = Series(p.0[..=k].to_vec());
        let f = normalized_call(&trial, sqrt_t);
        p.0[k] = (g.0[k] - f.0[k]) / f_y;
    }
    p
}
