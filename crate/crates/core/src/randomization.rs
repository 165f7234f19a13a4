//! Discretized randomized pricing surfaces.
//!
//! A randomized slice prices an option as the quadrature mixture of
//! Black–Scholes prices: `Σ λ_n BS(η_n)` when a model parameter is random,
//! `Σ λ_n BS(S0 := θ_n, η)` when the spot is random.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::expansion;
use crate::parametrization::{eval_vol, eval_vol_at_nodes, BaseParams, RandomTarget, SliceParams};
use crate::pricing::{
    bs_price, implied_vol_brent_with, log_moneyness, BrentOptions, MarketContext, OptionKey, OptionKind,
};
use crate::quadrature::{quadrature_for, QuadratureRule};

/// Relative tolerance on the mean of a spot rule.
pub const SPOT_CENTER_TOLERANCE: f64 = 1e-8;

/// Smallest strike grid accepted by [`RandomizedSlice::density`].
pub const MIN_DENSITY_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomizationKind {
    Parameter,
    Spot,
}

/// How implied volatilities are obtained from a randomized slice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum IvEngine {
    /// Taylor polynomial in log-moneyness of the given order.
    Expansion(usize),
    /// Brent inversion of the randomized price.
    #[default]
    RootFind,
}

impl FromStr for IvEngine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "brent" || s == "rootfind" {
            return Ok(Self::RootFind);
        }
        if let Some(order) = s.strip_prefix("expansion:") {
            let order = order.parse().map_err(|_| invalid(format!("bad expansion order in `{s}`")))?;
            return Ok(Self::Expansion(order));
        }
        Err(invalid(format!("unknown engine `{s}` (expected `brent` or `expansion:N`)")))
    }
}

impl fmt::Display for IvEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RootFind => f.write_str("brent"),
            Self::Expansion(n) => write!(f, "expansion:{n}"),
        }
    }
}

impl Serialize for IvEngine {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for IvEngine {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Settings for implied-volatility evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvOptions {
    /// Expansions are trusted only for `|m| ≤ m_max`.
    pub m_max: f64,
    pub brent: BrentOptions,
}

impl Default for IvOptions {
    fn default() -> Self {
        Self { m_max: 0.5, brent: BrentOptions::default() }
    }
}

/// An implied volatility and whether the expansion guard forced a fallback
/// to root finding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IvPoint {
    pub vol: f64,
    pub fallback: bool,
}

/// Slice parameters with their quadrature rule, bound to a market.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedSlice {
    slice: SliceParams,
    rule: QuadratureRule,
    ctx: MarketContext,
}

impl RandomizedSlice {
    /// Builds the quadrature rule of the slice's randomizer. A slice without
    /// randomizer becomes a one-node mixture.
    pub fn new(slice: SliceParams, ctx: MarketContext) -> Result<Self> {
        slice.validate()?;
        let rule = match &slice.randomizer {
            Some(r) => quadrature_for(&r.dist, r.n_q)?,
            None => QuadratureRule::point(match slice.base {
                BaseParams::Flat(p) => p.sigma,
                BaseParams::Sabr(p) => p.gamma,
            }),
        };
        Self::with_rule(slice, rule, ctx)
    }

    /// Uses an explicit rule in place of the randomizer's own.
    pub fn with_rule(slice: SliceParams, mut rule: QuadratureRule, ctx: MarketContext) -> Result<Self> {
        slice.validate()?;
        ctx.validate()?;
        match &slice.randomizer {
            Some(r) if r.target == RandomTarget::Spot => {
                if let Some(&x) = rule.nodes().iter().find(|&&x| x <= 0.0) {
                    return Err(Error::Domain { name: "spot node", value: x });
                }
                let mean = rule.mean();
                if ((mean - ctx.spot) / ctx.spot).abs() > SPOT_CENTER_TOLERANCE {
                    if !r.recenter {
                        return Err(invalid(format!(
                            "spot rule has mean {mean}, expected the spot {}; set `recenter` to rescale it",
                            ctx.spot
                        )));
                    }
                    rule = rule.scaled(ctx.spot / mean);
                }
            }
            Some(r) => {
                for &theta in rule.nodes() {
                    slice.base.with_parameter(r.target, theta)?;
                }
            }
            None => {}
        }
        Ok(Self { slice, rule, ctx })
    }

    pub fn params(&self) -> &SliceParams {
        &self.slice
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn ctx(&self) -> &MarketContext {
        &self.ctx
    }

    pub fn kind(&self) -> RandomizationKind {
        match &self.slice.randomizer {
            Some(r) if r.target == RandomTarget::Spot => RandomizationKind::Spot,
            _ => RandomizationKind::Parameter,
        }
    }

    /// Base volatility at the true spot.
    pub fn base_vol(&self, key: &OptionKey) -> f64 {
        eval_vol(&self.slice.base, &self.ctx, key)
    }

    /// Node volatilities `η_n` at `key`.
    pub fn node_vols(&self, key: &OptionKey) -> Result<Vec<f64>> {
        eval_vol_at_nodes(&self.slice, &self.ctx, key, &self.rule)
    }

    /// Mixture price of the option.
    pub fn price(&self, key: &OptionKey) -> Result<f64> {
        key.validate(&self.ctx)?;
        match self.kind() {
            RandomizationKind::Parameter => {
                let etas = self.node_vols(key)?;
                Ok(self.rule.weights().iter().zip(&etas).map(|(w, &eta)| w * bs_price(&self.ctx, key, eta)).sum())
            }
            RandomizationKind::Spot => {
                let eta = self.base_vol(key);
                Ok(self.rule.pairs().map(|(w, theta)| w * bs_price(&self.ctx.with_spot(theta), key, eta)).sum())
            }
        }
    }

    /// Implied volatility with the default guard.
    pub fn iv(&self, key: &OptionKey, engine: IvEngine) -> Result<f64> {
        self.iv_with(key, engine, &IvOptions::default(), None).map(|p| p.vol)
    }

    /// Implied volatility. With an expansion engine, points with
    /// `|m| > m_max` or a nonpositive polynomial value are re-solved by
    /// Brent and flagged. `hint` warm-starts the root finder.
    pub fn iv_with(&self, key: &OptionKey, engine: IvEngine, opts: &IvOptions, hint: Option<f64>) -> Result<IvPoint> {
        match engine {
            IvEngine::RootFind => Ok(IvPoint { vol: self.iv_brent(key, hint, opts.brent)?, fallback: false }),
            IvEngine::Expansion(order) => {
                let m = log_moneyness(&self.ctx, key);
                let terms = expansion::expand(self, key, order)?;
                if m.abs() <= opts.m_max {
                    match expansion::eval_expansion(&terms, m) {
                        Ok(vol) => return Ok(IvPoint { vol, fallback: false }),
                        Err(Error::ExpansionGuard { .. }) => {}
                        Err(e) => return Err(e),
                    }
                }
                Ok(IvPoint { vol: self.iv_brent(key, hint, opts.brent)?, fallback: true })
            }
        }
    }

    /// Brent inversion of the out-of-the-money mixture price.
    pub fn iv_brent(&self, key: &OptionKey, hint: Option<f64>, opts: BrentOptions) -> Result<f64> {
        let otm = key.otm(&self.ctx);
        let price = self.price(&otm)?;
        implied_vol_brent_with(&self.ctx, &otm, price, hint, opts)
    }

    /// Risk-neutral density `e^{rτ} ∂²C/∂K²` by three-point differences on
    /// `grid`, reported at the interior grid points.
    pub fn density(&self, expiry: f64, grid: &[f64]) -> Result<DensityCurve> {
        if grid.len() < MIN_DENSITY_POINTS {
            return Err(invalid(format!(
                "density grid has {} points, at least {MIN_DENSITY_POINTS} are required",
                grid.len()
            )));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] <= 0.0 {
            return Err(invalid("density grid must be positive and strictly increasing"));
        }
        let f = self.ctx.forward(expiry);
        if grid[0] > 0.3 * f || grid[grid.len() - 1] < 3.0 * f {
            return Err(invalid(format!(
                "density grid [{}, {}] must span [0.3F, 3F] = [{}, {}]",
                grid[0],
                grid[grid.len() - 1],
                0.3 * f,
                3.0 * f
            )));
        }
        let growth = 1.0 / self.ctx.discount(expiry);
        let price = |k: f64, kind: OptionKind| self.price(&OptionKey { expiry, strike: k, kind });
        let mut strikes = Vec::with_capacity(grid.len() - 2);
        let mut density = Vec::with_capacity(grid.len() - 2);
        for i in 1..grid.len() - 1 {
            // Whole stencil on one option type; puts below the forward.
            let kind = if grid[i] < f { OptionKind::Put } else { OptionKind::Call };
            let (v0, v1, v2) = (price(grid[i - 1], kind)?, price(grid[i], kind)?, price(grid[i + 1], kind)?);
            let (hm, hp) = (grid[i] - grid[i - 1], grid[i + 1] - grid[i]);
            let second = 2.0 * ((v2 - v1) / hp - (v1 - v0) / hm) / (hm + hp);
            strikes.push(grid[i]);
            density.push(growth * second);
        }
        let mut mass = 0.0;
        let mut mean = 0.0;
        for i in 1..strikes.len() {
            let h = strikes[i] - strikes[i - 1];
            mass += 0.5 * h * (density[i] + density[i - 1]);
            mean += 0.5 * h * (strikes[i] * density[i] + strikes[i - 1] * density[i - 1]);
        }
        Ok(DensityCurve { strikes, density, mass, mean })
    }
}

/// Free-function form of [`RandomizedSlice::price`].
pub fn randomized_price(rs: &RandomizedSlice, key: &OptionKey) -> Result<f64> {
    rs.price(key)
}

/// Free-function form of [`RandomizedSlice::iv`].
pub fn randomized_iv(rs: &RandomizedSlice, key: &OptionKey, engine: IvEngine) -> Result<f64> {
    rs.iv(key, engine)
}

/// Discretized risk-neutral density with integration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityCurve {
    pub strikes: Vec<f64>,
    pub density: Vec<f64>,
    /// Trapezoidal integral of the density.
    pub mass: f64,
    /// Trapezoidal integral of `x · density`.
    pub mean: f64,
}

impl DensityCurve {
    /// Writes `strike,density` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["strike", "density"])?;
        for (k, p) in self.strikes.iter().zip(&self.density) {
            w.write_record([k.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Indices of strict local maxima above `floor · max(density)`.
    pub fn local_maxima(&self, floor: f64) -> Vec<usize> {
        let top = self.density.iter().copied().fold(f64::MIN, f64::max);
        let d = &self.density;
        (1..d.len().saturating_sub(1))
            .filter(|&i| d[i] > floor * top && d[i] > d[i - 1] && d[i] >= d[i + 1])
            .collect()
    }
}
