//! Base implied-volatility parametrizations (flat and SABR/Hagan) and the
//! slice parameter vector that optionally randomizes one of their inputs.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pricing::{MarketContext, OptionKey};
use crate::quadrature::{DistributionSpec, QuadratureRule};

/// Constant volatility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatParams {
    pub sigma: f64,
}

/// Hagan et al. SABR implied-volatility parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SabrParams {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    /// Volatility of volatility.
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BaseParams {
    Flat(FlatParams),
    Sabr(SabrParams),
}

impl BaseParams {
    pub fn flat(sigma: f64) -> Self {
        Self::Flat(FlatParams { sigma })
    }

    pub fn sabr(alpha: f64, beta: f64, rho: f64, gamma: f64) -> Self {
        Self::Sabr(SabrParams { alpha, beta, rho, gamma })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Flat(FlatParams { sigma }) => check(sigma >= 0.0, "sigma", sigma),
            Self::Sabr(SabrParams { alpha, beta, rho, gamma }) => {
                check(alpha >= 0.0, "alpha", alpha)?;
                check((0.0..=1.0).contains(&beta), "beta", beta)?;
                check(rho > -1.0 && rho < 1.0, "rho", rho)?;
                check(gamma >= 0.0, "gamma", gamma)
            }
        }
    }

    /// Copy with the randomized parameter set to `value`.
    pub fn with_parameter(&self, target: RandomTarget, value: f64) -> Result<Self> {
        let out = match (*self, target) {
            (Self::Flat(_), RandomTarget::Sigma) => Self::Flat(FlatParams { sigma: value }),
            (Self::Sabr(p), RandomTarget::Gamma) => Self::Sabr(SabrParams { gamma: value, ..p }),
            (_, RandomTarget::Spot) => *self,
            _ => return Err(incompatible(self, target)),
        };
        out.validate()?;
        Ok(out)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Flat(_) => "flat",
            Self::Sabr(_) => "sabr",
        }
    }
}

fn check(ok: bool, name: &'static str, value: f64) -> Result<()> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { name, value })
    }
}

fn incompatible(base: &BaseParams, target: RandomTarget) -> Error {
    invalid(format!("cannot randomize {target:?} of a {} parametrization", base.name()))
}

/// Which input is replaced by a random variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomTarget {
    /// Flat volatility σ.
    Sigma,
    /// SABR volatility of volatility γ.
    Gamma,
    /// Spot price S0.
    Spot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Randomizer {
    pub target: RandomTarget,
    pub dist: DistributionSpec,
    pub n_q: usize,
    /// Rescale off-centre explicit spot rules so that their mean equals S0.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub recenter: bool,
}

/// Base parameters plus an optional randomizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceParams {
    #[serde(flatten)]
    pub base: BaseParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomizer: Option<Randomizer>,
}

impl SliceParams {
    pub fn plain(base: BaseParams) -> Self {
        Self { base, randomizer: None }
    }

    pub fn randomized(base: BaseParams, target: RandomTarget, dist: DistributionSpec, n_q: usize) -> Self {
        Self { base, randomizer: Some(Randomizer { target, dist, n_q, recenter: false }) }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if let Some(r) = &self.randomizer {
            if r.n_q == 0 {
                return Err(invalid("n_q must be at least 1"));
            }
            r.dist.validate()?;
            match (&self.base, r.target) {
                (BaseParams::Flat(_), RandomTarget::Sigma)
                | (BaseParams::Sabr(_), RandomTarget::Gamma)
                | (_, RandomTarget::Spot) => {}
                _ => return Err(incompatible(&self.base, r.target)),
            }
        }
        Ok(())
    }
}

/// Implied volatility of the base parametrization.
pub fn eval_vol(base: &BaseParams, ctx: &MarketContext, key: &OptionKey) -> f64 {
    match *base {
        BaseParams::Flat(FlatParams { sigma }) => sigma,
        BaseParams::Sabr(p) => hagan(&p, ctx.forward(key.expiry), key.strike, ctx.tau(key.expiry)),
    }
}

/// Hagan's lognormal SABR volatility with forward `f`, strike `k`, time `tau`.
pub fn hagan(p: &SabrParams, f: f64, k: f64, tau: f64) -> f64 {
    let SabrParams { alpha, beta, rho, gamma } = *p;
    if alpha == 0.0 {
        return 0.0;
    }
    let omb = 1.0 - beta;
    let fk = (f * k).powf(0.5 * omb);
    let l = (f / k).ln();
    let l2 = l * l;
    let denom = fk * (1.0 + omb * omb / 24.0 * l2 + omb.powi(4) / 1920.0 * l2 * l2);
    let z = gamma / alpha * fk * l;
    let corr = 1.0
        + (omb * omb / 24.0 * alpha * alpha / (fk * fk)
            + 0.25 * rho * beta * gamma * alpha / fk
            + (2.0 - 3.0 * rho * rho) / 24.0 * gamma * gamma)
            * tau;
    alpha / denom * z_over_x(z, rho) * corr
}

/// `z / x(z)` with `x(z) = log((√(1 − 2ρz + z²) + z − ρ)/(1 − ρ))`.
pub fn z_over_x(z: f64, rho: f64) -> f64 {
    if z.abs() < 1e-6 {
        return 1.0 - 0.5 * rho * z + (2.0 - 3.0 * rho * rho) / 12.0 * z * z;
    }
    let root = (1.0 - 2.0 * rho * z + z * z).sqrt();
    // Rationalize when √(·) and z − ρ nearly cancel.
    let num = if z - rho >= 0.0 { root + z - rho } else { (1.0 - rho * rho) / (root - z + rho) };
    z / (num / (1.0 - rho)).ln()
}

/// Volatilities `η_n` of the base parametrization with the randomized
/// parameter set to each node of `rule`. For spot randomization the single
/// base volatility at the true spot is repeated for every node.
pub fn eval_vol_at_nodes(
    slice: &SliceParams,
    ctx: &MarketContext,
    key: &OptionKey,
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    let target = slice.randomizer.as_ref().map(|r| r.target);
    match target {
        None | Some(RandomTarget::Spot) => Ok(vec![eval_vol(&slice.base, ctx, key); rule.len()]),
        Some(target) => rule
            .nodes()
            .iter()
            .map(|&theta| {
                let p = slice.base.with_parameter(target, theta)?;
                Ok(eval_vol(&p, ctx, key))
            })
            .collect(),
    }
}
