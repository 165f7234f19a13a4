//! Grid-based checks of static no-arbitrage conditions and total-variance
//! interpolation between expiry slices.

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::pricing::{MarketContext, OptionKey};
use crate::randomization::{IvEngine, RandomizedSlice};

/// Relative tolerance, in units of spot, for price-based checks.
pub const PRICE_TOLERANCE: f64 = 1e-10;
/// Absolute tolerance on total implied variance between slices.
pub const VARIANCE_TOLERANCE: f64 = 1e-10;
/// Strikes in the default grid.
pub const DEFAULT_GRID_POINTS: usize = 201;
/// Smallest strike grid accepted by [`check_butterfly`].
pub const MIN_GRID_POINTS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ButterflyKind {
    /// Call prices not convex in strike.
    Convexity,
    /// Call prices increasing in strike.
    Monotonicity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ButterflyViolation {
    pub expiry: f64,
    pub strike: f64,
    pub kind: ButterflyKind,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalendarViolation {
    pub strike: f64,
    pub t_i: f64,
    pub t_j: f64,
    /// Excess of the earlier slice's total variance over the later one's.
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundSide {
    /// Below `(S0 − K e^{−rτ})⁺`.
    Lower,
    /// Above `S0`.
    Upper,
    /// Far-strike price not vanishing.
    LargeStrike,
    /// Short-expiry price away from intrinsic value.
    ShortExpiry,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundViolation {
    pub expiry: f64,
    pub strike: f64,
    pub side: BoundSide,
}

/// Findings of one or more checks; `passed` holds when nothing was flagged.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ArbReport {
    pub butterfly_violations: Vec<ButterflyViolation>,
    pub calendar_violations: Vec<CalendarViolation>,
    pub bound_violations: Vec<BoundViolation>,
    pub passed: bool,
}

impl ArbReport {
    /// A report with nothing flagged.
    pub fn new() -> Self {
        Self::default().finish()
    }

    fn finish(mut self) -> Self {
        self.passed = self.butterfly_violations.is_empty()
            && self.calendar_violations.is_empty()
            && self.bound_violations.is_empty();
        self
    }

    /// Union of two reports.
    pub fn merge(mut self, other: ArbReport) -> Self {
        self.butterfly_violations.extend(other.butterfly_violations);
        self.calendar_violations.extend(other.calendar_violations);
        self.bound_violations.extend(other.bound_violations);
        self.finish()
    }
}

/// `n` points, geometrically spaced from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi / lo).ln() / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|i| lo * (step * i as f64).exp()).collect();
    out[n - 1] = hi;
    out
}

/// 201 strikes log-spaced over `[0.3F, 3F]`.
pub fn default_grid(ctx: &MarketContext, expiry: f64) -> Vec<f64> {
    let f = ctx.forward(expiry);
    log_spaced(0.3 * f, 3.0 * f, DEFAULT_GRID_POINTS)
}

/// Convexity, monotonicity and bound checks on call prices `call(K)` along
/// `strikes`, plus the large-strike limit `C(10F) < 10⁻⁴ S0`.
pub fn check_butterfly(
    call: impl Fn(f64) -> Result<f64>,
    ctx: &MarketContext,
    expiry: f64,
    strikes: &[f64],
) -> Result<ArbReport> {
    if strikes.len() < MIN_GRID_POINTS {
        return Err(invalid(format!("butterfly check needs at least {MIN_GRID_POINTS} strikes")));
    }
    if strikes.windows(2).any(|w| w[1] <= w[0]) || strikes[0] <= 0.0 {
        return Err(invalid("strike grid must be positive and strictly increasing"));
    }
    let tol = PRICE_TOLERANCE * ctx.spot;
    let prices = strikes.iter().map(|&k| call(k)).collect::<Result<Vec<f64>>>()?;
    let mut report = ArbReport::default();

    for (i, (&k, &v)) in strikes.iter().zip(&prices).enumerate() {
        let (lower, upper) = crate::pricing::price_bounds(ctx, &OptionKey::call(expiry, k));
        if v < lower - tol {
            report.bound_violations.push(BoundViolation { expiry, strike: k, side: BoundSide::Lower });
        }
        if v > upper + tol {
            report.bound_violations.push(BoundViolation { expiry, strike: k, side: BoundSide::Upper });
        }
        if i > 0 && v - prices[i - 1] > tol {
            report.butterfly_violations.push(ButterflyViolation {
                expiry,
                strike: k,
                kind: ButterflyKind::Monotonicity,
                magnitude: v - prices[i - 1],
            });
        }
        if i > 0 && i + 1 < strikes.len() {
            let (hm, hp) = (k - strikes[i - 1], strikes[i + 1] - k);
            let slope_change = (prices[i + 1] - v) / hp - (v - prices[i - 1]) / hm;
            // Price of a butterfly whose payoff peaks at the mean spacing.
            let fly = 0.5 * (hm + hp) * slope_change;
            if fly < -tol {
                report.butterfly_violations.push(ButterflyViolation {
                    expiry,
                    strike: k,
                    kind: ButterflyKind::Convexity,
                    magnitude: -fly,
                });
            }
        }
    }

    let far = 10.0 * ctx.forward(expiry);
    if call(far)? >= 1e-4 * ctx.spot {
        report.bound_violations.push(BoundViolation { expiry, strike: far, side: BoundSide::LargeStrike });
    }
    Ok(report.finish())
}

/// Butterfly check of a randomized slice at one expiry.
pub fn check_butterfly_slice(rs: &RandomizedSlice, expiry: f64, strikes: &[f64]) -> Result<ArbReport> {
    check_butterfly(|k| rs.price(&OptionKey::call(expiry, k)), rs.ctx(), expiry, strikes)
}

/// Short-expiry limit: at `T = t0 + 10⁻⁴` every call price must lie within
/// `10⁻² S0` of its intrinsic value `(S0 − K)⁺`.
pub fn check_expiry_limit(
    call: impl Fn(f64, f64) -> Result<f64>,
    ctx: &MarketContext,
    strikes: &[f64],
) -> Result<ArbReport> {
    let expiry = ctx.t0 + 1e-4;
    let mut report = ArbReport::default();
    for &k in strikes {
        let v = call(expiry, k)?;
        if (v - (ctx.spot - k).max(0.0)).abs() >= 1e-2 * ctx.spot {
            report.bound_violations.push(BoundViolation { expiry, strike: k, side: BoundSide::ShortExpiry });
        }
    }
    Ok(report.finish())
}

/// Expiry slices with strictly increasing expiries, read through one engine.
#[derive(Debug, Clone)]
pub struct SliceSet {
    slices: Vec<(f64, RandomizedSlice)>,
    engine: IvEngine,
}

impl SliceSet {
    pub fn new(mut slices: Vec<(f64, RandomizedSlice)>, engine: IvEngine) -> Result<Self> {
        if slices.is_empty() {
            return Err(invalid("a slice set needs at least one slice"));
        }
        slices.sort_by(|a, b| a.0.total_cmp(&b.0));
        if slices.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("slice expiries must be distinct"));
        }
        Ok(Self { slices, engine })
    }

    pub fn expiries(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.0).collect()
    }

    pub fn slices(&self) -> &[(f64, RandomizedSlice)] {
        &self.slices
    }

    pub fn ctx(&self) -> &MarketContext {
        self.slices[0].1.ctx()
    }

    /// Implied volatility of slice `i` at strike `k`.
    pub fn slice_vol(&self, i: usize, k: f64) -> Result<f64> {
        let (t, rs) = &self.slices[i];
        rs.iv(&OptionKey::call(*t, k), self.engine)
    }

    /// Total-variance interpolated volatility at `(expiry, k)`.
    pub fn vol(&self, expiry: f64, k: f64) -> Result<f64> {
        interp_total_variance_fn(&self.expiries(), self.ctx().t0, expiry, |i| self.slice_vol(i, k))
    }
}

/// Calendar check across the slices of `set` at every strike.
pub fn check_calendar(set: &SliceSet, strikes: &[f64]) -> Result<ArbReport> {
    if set.slices.len() < 2 {
        return Err(invalid("calendar check needs at least two slices"));
    }
    let expiries = set.expiries();
    check_calendar_fn(&expiries, set.ctx().t0, strikes, |i, k| set.slice_vol(i, k))
}

/// Calendar check of `vol(i, K)` at expiries `expiries[i]`: total implied
/// variance must not decrease between adjacent expiries.
pub fn check_calendar_fn(
    expiries: &[f64],
    t0: f64,
    strikes: &[f64],
    vol: impl Fn(usize, f64) -> Result<f64>,
) -> Result<ArbReport> {
    let mut report = ArbReport::default();
    for &k in strikes {
        let mut prev: Option<f64> = None;
        for (i, &t) in expiries.iter().enumerate() {
            let s = vol(i, k)?;
            let w = s * s * (t - t0);
            if let Some(pw) = prev {
                if pw > w + VARIANCE_TOLERANCE {
                    report.calendar_violations.push(CalendarViolation {
                        strike: k,
                        t_i: expiries[i - 1],
                        t_j: t,
                        magnitude: pw - w,
                    });
                }
            }
            prev = Some(w);
        }
    }
    Ok(report.finish())
}

/// Volatility at `expiry` from linear interpolation in total implied variance
/// between the bracketing slices; extrapolation is refused.
pub fn interp_total_variance(set: &SliceSet, expiry: f64, k: f64) -> Result<f64> {
    set.vol(expiry, k)
}

/// Interpolation over `expiries` with slice volatilities from `vol(i)`.
pub fn interp_total_variance_fn(
    expiries: &[f64],
    t0: f64,
    expiry: f64,
    vol: impl Fn(usize) -> Result<f64>,
) -> Result<f64> {
    let (first, last) = (expiries[0], expiries[expiries.len() - 1]);
    if !(expiry >= first && expiry <= last) {
        return Err(invalid(format!("expiry {expiry} outside the slice range [{first}, {last}]; no extrapolation")));
    }
    if let Some(i) = expiries.iter().position(|&t| t == expiry) {
        return vol(i);
    }
    let j = expiries.iter().position(|&t| t > expiry).expect("expiry inside range");
    let i = j - 1;
    let (ti, tj) = (expiries[i], expiries[j]);
    let a = (expiry - ti) / (tj - ti);
    let (si, sj) = (vol(i)?, vol(j)?);
    let (wi, wj) = (si * si * (ti - t0), sj * sj * (tj - t0));
    if wi > wj + VARIANCE_TOLERANCE {
        return Err(invalid(format!("total variance decreases between T = {ti} and T = {tj}")));
    }
    Ok((((1.0 - a) * wi + a * wj) / (expiry - t0)).sqrt())
}
