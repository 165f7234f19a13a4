//! Gaussian quadrature rules for randomizer distributions, built from their
//! moment sequences with the Golub–Welsch procedure.
//!
//! Given moments `μ_0..μ_{2N}` the Gram (Hankel) matrix `M_ij = μ_{i+j}` is
//! factored as `M = RᵀR`. The three-term recurrence coefficients of the
//! orthonormal polynomials follow from the entries of `R`:
//!
//! ```text
//! α_j = r_{j,j+1}/r_{j,j} − r_{j−1,j}/r_{j−1,j−1}      j = 1..N
//! β_j = (r_{j+1,j+1}/r_{j,j})²                        j = 1..N−1
//! ```
//!
//! The nodes are the eigenvalues of the Jacobi matrix `J = tridiag(√β, α, √β)`
//! and each weight is the squared first component of the matching unit
//! eigenvector.

mod tridiag;

pub use tridiag::{symmetric_tridiagonal_eigen, TridiagEigen};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest number of quadrature points accepted by [`quadrature_for`].
pub const MAX_POINTS: usize = 10;

/// Relative pivot threshold below which the Cholesky factorization of the
/// Gram matrix is declared numerically singular.
pub const PIVOT_TOLERANCE: f64 = 1e-13;

const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Distribution of the randomizing variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    /// `log ϑ ~ N(μ, ν²)`.
    LogNormal { mu: f64, nu: f64 },
    /// Shape `k`, scale `θ`.
    Gamma { k: f64, theta: f64 },
    /// `log ϑ ~ N(log S0 − ν²/2, ν²)`, so that `E[ϑ] = S0`.
    SpotLogNormal { s0: f64, nu: f64 },
    /// Explicit `(weight, node)` pairs.
    Discrete { points: Vec<(f64, f64)> },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::LogNormal { mu, nu } => {
                finite("mu", mu)?;
                non_negative("nu", nu)
            }
            Self::Gamma { k, theta } => {
                positive("k", k)?;
                positive("theta", theta)
            }
            Self::SpotLogNormal { s0, nu } => {
                positive("s0", s0)?;
                non_negative("nu", nu)
            }
            Self::Discrete { ref points } => {
                if points.is_empty() {
                    return Err(invalid("discrete distribution needs at least one point"));
                }
                let mut total = 0.0;
                for (i, &(w, x)) in points.iter().enumerate() {
                    if !(w >= 0.0) || !x.is_finite() {
                        return Err(invalid(format!("discrete point {i} = ({w}, {x}) is invalid")));
                    }
                    if i > 0 && x <= points[i - 1].1 {
                        return Err(invalid("discrete nodes must be strictly increasing"));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                    return Err(invalid(format!("discrete weights sum to {total}, not 1")));
                }
                Ok(())
            }
        }
    }

    /// Whether the distribution is a point mass.
    pub fn is_degenerate(&self) -> bool {
        match self {
            Self::LogNormal { nu, .. } | Self::SpotLogNormal { nu, .. } => *nu == 0.0,
            Self::Gamma { .. } => false,
            Self::Discrete { points } => points.len() == 1,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::LogNormal { mu, nu } => (mu + 0.5 * nu * nu).exp(),
            Self::Gamma { k, theta } => k * theta,
            Self::SpotLogNormal { s0, .. } => s0,
            Self::Discrete { ref points } => points.iter().map(|&(w, x)| w * x).sum(),
        }
    }

    /// Closed-form variance.
    pub fn variance(&self) -> f64 {
        match *self {
            Self::LogNormal { mu, nu } => {
                let v = nu * nu;
                v.exp_m1() * (2.0 * mu + v).exp()
            }
            Self::Gamma { k, theta } => k * theta * theta,
            Self::SpotLogNormal { s0, nu } => s0 * s0 * (nu * nu).exp_m1(),
            Self::Discrete { ref points } => {
                let mean = self.mean();
                points.iter().map(|&(w, x)| w * (x - mean) * (x - mean)).sum()
            }
        }
    }
}

fn finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { name, value })
    }
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { name, value })
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<()> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { name, value })
    }
}

/// Raw moments `μ_0..μ_n` of a distribution, with `μ_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSequence {
    values: Vec<f64>,
}

impl MomentSequence {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        match values.first() {
            Some(&m0) if (m0 - 1.0).abs() <= WEIGHT_SUM_TOLERANCE => {}
            _ => return Err(invalid("moment sequence must start with μ_0 = 1")),
        }
        if let Some(order) = values.iter().position(|m| !m.is_finite()) {
            return Err(Error::MomentOverflow { order });
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Highest moment order held.
    pub fn order(&self) -> usize {
        self.values.len() - 1
    }
}

/// Moments `μ_0..μ_order` of `spec`.
pub fn moments(spec: &DistributionSpec, order: usize) -> Result<MomentSequence> {
    spec.validate()?;
    let values: Vec<f64> = match *spec {
        DistributionSpec::LogNormal { mu, nu } => lognormal_moments(mu, nu, order),
        DistributionSpec::SpotLogNormal { s0, nu } => {
            lognormal_moments(s0.ln() - 0.5 * nu * nu, nu, order)
        }
        DistributionSpec::Gamma { k, theta } => {
            let mut out = Vec::with_capacity(order + 1);
            let mut m = 1.0;
            out.push(m);
            for i in 0..order {
                // θ^{i+1} Γ(k+i+1)/Γ(k) = θ (k + i) · μ_i
                m *= theta * (k + i as f64);
                out.push(m);
            }
            out
        }
        DistributionSpec::Discrete { ref points } => (0..=order)
            .map(|i| points.iter().map(|&(w, x)| w * x.powi(i as i32)).sum())
            .collect(),
    };
    if let Some(order) = values.iter().position(|m| !m.is_finite()) {
        return Err(Error::MomentOverflow { order });
    }
    MomentSequence::new(values)
}

fn lognormal_moments(mu: f64, nu: f64, order: usize) -> Vec<f64> {
    (0..=order)
        .map(|i| {
            let i = i as f64;
            (i * mu + 0.5 * i * i * nu * nu).exp()
        })
        .collect()
}

/// Gauss quadrature weights and nodes; a discrete probability distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RuleRepr", into = "RuleRepr")]
pub struct QuadratureRule {
    weights: Vec<f64>,
    nodes: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RuleRepr {
    weights: Vec<f64>,
    nodes: Vec<f64>,
}

impl TryFrom<RuleRepr> for QuadratureRule {
    type Error = Error;
    fn try_from(r: RuleRepr) -> Result<Self> {
        Self::new(r.weights, r.nodes)
    }
}

impl From<QuadratureRule> for RuleRepr {
    fn from(r: QuadratureRule) -> Self {
        Self { weights: r.weights, nodes: r.nodes }
    }
}

impl QuadratureRule {
    pub fn new(weights: Vec<f64>, nodes: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != nodes.len() {
            return Err(invalid("quadrature rule needs equally many (≥ 1) weights and nodes"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("quadrature weights must be non-negative"));
        }
        if nodes.iter().any(|x| !x.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("quadrature nodes must be finite and strictly increasing"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(invalid(format!("quadrature weights sum to {total}, not 1")));
        }
        Ok(Self { weights, nodes })
    }

    /// One-node rule at `x`.
    pub fn point(x: f64) -> Self {
        Self { weights: vec![1.0], nodes: vec![x] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(λ_n, θ_n)` pairs.
    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.weights.iter().copied().zip(self.nodes.iter().copied())
    }

    /// `Σ λ_n θ_n^i`.
    pub fn moment(&self, i: u32) -> f64 {
        self.pairs().map(|(w, x)| w * x.powi(i as i32)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    /// Expectation of `f` under the discrete distribution.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.pairs().map(|(w, x)| w * f(x)).sum()
    }

    /// Multiplies every node by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            weights: self.weights.clone(),
            nodes: self.nodes.iter().map(|x| x * factor).collect(),
        }
    }
}

/// Intermediate matrices of the Golub–Welsch construction.
#[derive(Debug, Clone)]
pub struct QuadratureWorkspace {
    /// Scale applied to the variable before factoring (`μ_i / c^i`).
    pub scale: f64,
    /// Gram matrix of the scaled moments, `(N+1) × (N+1)`, row-major.
    pub gram: Vec<Vec<f64>>,
    /// Upper-triangular Cholesky factor with `gram = RᵀR`.
    pub cholesky: Vec<Vec<f64>>,
    /// Recurrence coefficients `α_1..α_N` (scaled variable).
    pub alpha: Vec<f64>,
    /// Recurrence coefficients `β_1..β_{N−1}` (scaled variable).
    pub beta: Vec<f64>,
}

impl QuadratureWorkspace {
    /// Jacobi matrix as `(diagonal, off-diagonal)`.
    pub fn jacobi(&self) -> (Vec<f64>, Vec<f64>) {
        (self.alpha.clone(), self.beta.iter().map(|b| b.sqrt()).collect())
    }
}

/// Golub–Welsch rule with `n_q` points from a moment sequence.
pub fn golub_welsch(moments: &MomentSequence, n_q: usize) -> Result<QuadratureRule> {
    golub_welsch_with_workspace(moments, n_q).map(|(rule, _)| rule)
}

/// Same as [`golub_welsch`], also returning the intermediate matrices.
pub fn golub_welsch_with_workspace(
    moments: &MomentSequence,
    n_q: usize,
) -> Result<(QuadratureRule, QuadratureWorkspace)> {
    if n_q == 0 {
        return Err(invalid("at least one quadrature point is required"));
    }
    if moments.order() < 2 * n_q {
        return Err(invalid(format!(
            "{n_q} quadrature points need moments up to order {}, got {}",
            2 * n_q,
            moments.order()
        )));
    }
    let mu = moments.values();

    // Rescale the variable so the Gram matrix entries stay O(1); the rule of
    // c·X is the rule of X with nodes multiplied by c.
    let scale = if mu[2] > 0.0 { mu[2].sqrt() } else { 1.0 };
    let scaled: Vec<f64> = mu[..=2 * n_q]
        .iter()
        .enumerate()
        .map(|(i, m)| m / scale.powi(i as i32))
        .collect();

    let n = n_q + 1;
    let gram: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| scaled[i + j]).collect()).collect();
    let max_diag = (0..n).map(|i| gram[i][i]).fold(0.0, f64::max);

    let mut r = vec![vec![0.0; n]; n];
    for i in 0..n {
        let pivot = gram[i][i] - (0..i).map(|k| r[k][i] * r[k][i]).sum::<f64>();
        // The last pivot only measures whether the distribution has more than
        // N support points; it may vanish (e.g. an N-point discrete law).
        let last = i == n - 1;
        if (!last && pivot < PIVOT_TOLERANCE * max_diag) || (last && pivot < -PIVOT_TOLERANCE * max_diag) {
            return Err(Error::Cholesky { row: i, pivot });
        }
        let rii = pivot.max(0.0).sqrt();
        r[i][i] = rii;
        for j in i + 1..n {
            let s = gram[i][j] - (0..i).map(|k| r[k][i] * r[k][j]).sum::<f64>();
            r[i][j] = s / rii;
        }
    }

    let alpha: Vec<f64> = (0..n_q)
        .map(|j| {
            let prev = if j == 0 { 0.0 } else { r[j - 1][j] / r[j - 1][j - 1] };
            r[j][j + 1] / r[j][j] - prev
        })
        .collect();
    let beta: Vec<f64> = (0..n_q.saturating_sub(1))
        .map(|j| {
            let q = r[j + 1][j + 1] / r[j][j];
            q * q
        })
        .collect();

    let workspace = QuadratureWorkspace { scale, gram, cholesky: r, alpha, beta };
    let (diag, off) = workspace.jacobi();
    let eig = symmetric_tridiagonal_eigen(&diag, &off)?;

    let mut weights: Vec<f64> = eig.vectors.iter().map(|v| v[0] * v[0]).collect();
    let total: f64 = weights.iter().sum();
    // Orthonormal eigenvectors make this a rounding-level correction.
    weights.iter_mut().for_each(|w| *w /= total);
    let nodes: Vec<f64> = eig.values.iter().map(|x| x * scale).collect();
    let rule = QuadratureRule::new(weights, nodes)?;
    Ok((rule, workspace))
}

/// Quadrature rule with `n_q` points for a randomizer distribution.
///
/// Point masses collapse to a one-node rule at the mean whatever `n_q`;
/// explicit discrete distributions pass through unchanged.
pub fn quadrature_for(spec: &DistributionSpec, n_q: usize) -> Result<QuadratureRule> {
    spec.validate()?;
    if n_q == 0 {
        return Err(invalid("at least one quadrature point is required"));
    }
    if let DistributionSpec::Discrete { points } = spec {
        let (w, x) = points.iter().copied().unzip();
        return QuadratureRule::new(w, x);
    }
    if n_q > MAX_POINTS {
        return Err(invalid(format!("at most {MAX_POINTS} quadrature points are supported, got {n_q}")));
    }
    if spec.is_degenerate() {
        return Ok(QuadratureRule::point(spec.mean()));
    }
    if n_q == 1 {
        return Ok(QuadratureRule::point(spec.mean()));
    }
    let m = moments(spec, 2 * n_q)?;
    golub_welsch(&m, n_q)
}
