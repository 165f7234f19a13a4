//! Black–Scholes pricing and the Brent implied-volatility solver.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::normal;

/// Market state shared by every option on one underlying.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketContext {
    pub spot: f64,
    /// Continuously compounded risk-free rate.
    pub rate: f64,
    /// Reference time in years.
    #[serde(default)]
    pub t0: f64,
}

impl MarketContext {
    pub fn new(spot: f64, rate: f64) -> Result<Self> {
        let ctx = Self { spot, rate, t0: 0.0 };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spot > 0.0 && self.spot.is_finite()) {
            return Err(Error::Domain { name: "spot", value: self.spot });
        }
        if !self.rate.is_finite() || !self.t0.is_finite() {
            return Err(invalid("rate and t0 must be finite"));
        }
        Ok(())
    }

    /// Same market with a different spot.
    pub fn with_spot(&self, spot: f64) -> Self {
        Self { spot, ..*self }
    }

    /// Time to expiry `T − t0`.
    pub fn tau(&self, expiry: f64) -> f64 {
        expiry - self.t0
    }

    pub fn forward(&self, expiry: f64) -> f64 {
        self.spot * (self.rate * self.tau(expiry)).exp()
    }

    pub fn discount(&self, expiry: f64) -> f64 {
        (-self.rate * self.tau(expiry)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptionKind {
    #[serde(alias = "C", alias = "call")]
    Call,
    #[serde(alias = "P", alias = "put")]
    Put,
}

impl std::str::FromStr for OptionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "C" | "c" | "call" | "Call" | "CALL" => Ok(Self::Call),
            "P" | "p" | "put" | "Put" | "PUT" => Ok(Self::Put),
            other => Err(invalid(format!("unknown option type `{other}`"))),
        }
    }
}

/// Expiry (years), strike and option type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptionKey {
    pub expiry: f64,
    pub strike: f64,
    pub kind: OptionKind,
}

impl OptionKey {
    pub fn call(expiry: f64, strike: f64) -> Self {
        Self { expiry, strike, kind: OptionKind::Call }
    }

    pub fn put(expiry: f64, strike: f64) -> Self {
        Self { expiry, strike, kind: OptionKind::Put }
    }

    pub fn with_kind(self, kind: OptionKind) -> Self {
        Self { kind, ..self }
    }

    pub fn validate(&self, ctx: &MarketContext) -> Result<()> {
        if !(self.strike > 0.0 && self.strike.is_finite()) {
            return Err(Error::Domain { name: "strike", value: self.strike });
        }
        if !(self.expiry > ctx.t0 && self.expiry.is_finite()) {
            return Err(Error::Domain { name: "expiry", value: self.expiry });
        }
        Ok(())
    }

    /// Out-of-the-money type for this strike: call at or above the forward.
    pub fn otm(self, ctx: &MarketContext) -> Self {
        let kind = if self.strike >= ctx.forward(self.expiry) { OptionKind::Call } else { OptionKind::Put };
        self.with_kind(kind)
    }
}

/// `m = log(S0/K) + r(T − t0)`; zero at the forward.
pub fn log_moneyness(ctx: &MarketContext, key: &OptionKey) -> f64 {
    (ctx.spot / key.strike).ln() + ctx.rate * ctx.tau(key.expiry)
}

/// Black–Scholes price. Zero volatility or time gives discounted intrinsic value.
pub fn bs_price(ctx: &MarketContext, key: &OptionKey, sigma: f64) -> f64 {
    let tau = ctx.tau(key.expiry).max(0.0);
    let df_k = key.strike * (-ctx.rate * tau).exp();
    let s = ctx.spot;
    let sd = sigma * tau.sqrt();
    if !(sd > 0.0) {
        return match key.kind {
            OptionKind::Call => (s - df_k).max(0.0),
            OptionKind::Put => (df_k - s).max(0.0),
        };
    }
    let d1 = (s / df_k).ln() / sd + 0.5 * sd;
    let d2 = d1 - sd;
    match key.kind {
        OptionKind::Call => s * normal::cdf(d1) - df_k * normal::cdf(d2),
        OptionKind::Put => df_k * normal::cdf(-d2) - s * normal::cdf(-d1),
    }
}

/// Black–Scholes vega `∂V/∂σ`.
pub fn bs_vega(ctx: &MarketContext, key: &OptionKey, sigma: f64) -> f64 {
    let tau = ctx.tau(key.expiry).max(0.0);
    let sd = sigma * tau.sqrt();
    if !(sd > 0.0) {
        return 0.0;
    }
    let df_k = key.strike * (-ctx.rate * tau).exp();
    let d1 = (ctx.spot / df_k).ln() / sd + 0.5 * sd;
    ctx.spot * normal::pdf(d1) * tau.sqrt()
}

/// Static no-arbitrage price bounds `(lower, upper)` for the option type.
pub fn price_bounds(ctx: &MarketContext, key: &OptionKey) -> (f64, f64) {
    let df_k = key.strike * ctx.discount(key.expiry);
    match key.kind {
        OptionKind::Call => ((ctx.spot - df_k).max(0.0), ctx.spot),
        OptionKind::Put => ((df_k - ctx.spot).max(0.0), df_k),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrentOptions {
    /// Relative tolerance on successive volatility iterates.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for BrentOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, max_iter: 200 }
    }
}

impl BrentOptions {
    /// Near machine precision; used where the solver serves as a reference.
    pub fn tight() -> Self {
        Self { rel_tol: 1e-15, max_iter: 400 }
    }
}

const BRACKET_LOW: f64 = 1e-9;
const BRACKET_HIGH: f64 = 5.0;
const BRACKET_DOUBLINGS: usize = 3;

/// Implied volatility by Brent's method with default options.
pub fn implied_vol_brent(ctx: &MarketContext, key: &OptionKey, price: f64) -> Result<f64> {
    implied_vol_brent_with(ctx, key, price, None, BrentOptions::default())
}

/// Implied volatility by Brent's method. `hint`, typically the solution at a
/// neighbouring strike, narrows the initial bracket.
pub fn implied_vol_brent_with(
    ctx: &MarketContext,
    key: &OptionKey,
    price: f64,
    hint: Option<f64>,
    opts: BrentOptions,
) -> Result<f64> {
    let (lower, upper) = price_bounds(ctx, key);
    if !(price > lower && price < upper) {
        return Err(Error::NoImpliedVol { price, lower, upper });
    }
    let f = |s: f64| bs_price(ctx, key, s) - price;
    let (a, b, fa, fb) = bracket(&f, hint)?;
    brent(&f, a, b, fa, fb, opts)
}

fn bracket(f: &impl Fn(f64) -> f64, hint: Option<f64>) -> Result<(f64, f64, f64, f64)> {
    let max_high = BRACKET_HIGH * (1u32 << BRACKET_DOUBLINGS) as f64;
    if let Some(h) = hint.filter(|h| h.is_finite() && *h > 0.0) {
        let (mut lo, mut hi) = (0.9 * h, 1.1 * h);
        let (mut flo, mut fhi) = (f(lo), f(hi));
        for _ in 0..8 {
            if flo <= 0.0 && fhi >= 0.0 {
                return Ok((lo, hi, flo, fhi));
            }
            if flo > 0.0 {
                lo *= 0.5;
                flo = f(lo);
            }
            if fhi < 0.0 && hi < max_high {
                hi = (2.0 * hi).min(max_high);
                fhi = f(hi);
            }
        }
        // Fall through to the default bracket.
    }
    let mut lo = BRACKET_LOW;
    let mut flo = f(lo);
    if flo > 0.0 {
        // Price just above intrinsic; the bracket must reach down to zero vol.
        lo = 0.0;
        flo = f(lo);
    }
    let mut hi = BRACKET_HIGH;
    let mut fhi = f(hi);
    let mut doublings = 0;
    while fhi < 0.0 && doublings < BRACKET_DOUBLINGS {
        hi *= 2.0;
        fhi = f(hi);
        doublings += 1;
    }
    if flo > 0.0 || fhi < 0.0 {
        return Err(Error::RootNoConvergence { iterations: 0 });
    }
    Ok((lo, hi, flo, fhi))
}

/// Brent's root finder on a sign-changing bracket `[a, b]`.
pub(crate) fn brent(
    f: &impl Fn(f64) -> f64,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    opts: BrentOptions,
) -> Result<f64> {
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..opts.max_iter {
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * opts.rel_tol * b.abs();
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(xm) };
        fb = f(b);
    }
    Err(Error::RootNoConvergence { iterations: opts.max_iter })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn ctx(r: f64) -> MarketContext {
        MarketContext { spot: 100.0, rate: r, t0: 0.0 }
    }

    #[test]
    fn atm_call_reference() {
        // Closed form: 100 (Φ(0.1) − Φ(−0.1)).
        let oracle = 100.0 * (normal::cdf(0.1) - normal::cdf(-0.1));
        let v = bs_price(&ctx(0.0), &OptionKey::call(1.0, 100.0), 0.2);
        assert_abs_diff_eq!(v, oracle, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 7.9656, epsilon = 1e-4);
    }

    #[test]
    fn zero_vol_is_intrinsic() {
        assert_eq!(bs_price(&ctx(0.0), &OptionKey::call(1.0, 90.0), 0.0), 10.0);
        assert_eq!(bs_price(&ctx(0.0), &OptionKey::put(1.0, 90.0), 0.0), 0.0);
        let c = ctx(0.05);
        let v = bs_price(&c, &OptionKey::put(2.0, 120.0), 0.0);
        assert_abs_diff_eq!(v, 120.0 * (-0.1f64).exp() - 100.0, epsilon = 1e-12);
    }

    #[test]
    fn moneyness() {
        assert_eq!(log_moneyness(&ctx(0.0), &OptionKey::call(1.0, 100.0)), 0.0);
        assert_abs_diff_eq!(log_moneyness(&ctx(0.02), &OptionKey::call(2.0, 100.0)), 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(log_moneyness(&ctx(0.0), &OptionKey::call(1.0, 80.0)), 1.25f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn round_trip() {
        let c = ctx(0.01);
        let key = OptionKey::call(0.75, 110.0);
        let p = bs_price(&c, &key, 0.2);
        assert_abs_diff_eq!(implied_vol_brent(&c, &key, p).unwrap(), 0.2, epsilon = 1e-7);
        let tight = implied_vol_brent_with(&c, &key, p, None, BrentOptions::tight()).unwrap();
        assert_abs_diff_eq!(tight, 0.2, epsilon = 1e-13);
    }

    #[test]
    fn upper_bound_has_no_vol() {
        let c = ctx(0.0);
        let err = implied_vol_brent(&c, &OptionKey::call(1.0, 100.0), 100.0).unwrap_err();
        assert!(matches!(err, Error::NoImpliedVol { .. }));
        assert!(implied_vol_brent(&c, &OptionKey::call(1.0, 90.0), 9.0).is_err());
    }

    #[test]
    fn deep_otm_matches_bisection() {
        let c = ctx(0.0);
        let key = OptionKey::call(0.1, 200.0);
        let vol = implied_vol_brent(&c, &key, 1e-6).unwrap();
        // Independent bisection on the same price function.
        let (mut lo, mut hi) = (1e-6, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if bs_price(&c, &key, mid) < 1e-6 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!(vol > 0.0);
        assert_relative_eq!(vol, 0.5 * (lo + hi), max_relative = 1e-7);
    }

    #[test]
    fn warm_start_agrees() {
        let c = ctx(0.03);
        let key = OptionKey::put(0.5, 95.0);
        let p = bs_price(&c, &key, 0.35);
        for hint in [0.01, 0.3, 0.36, 2.0, 30.0] {
            let v = implied_vol_brent_with(&c, &key, p, Some(hint), BrentOptions::default()).unwrap();
            assert_abs_diff_eq!(v, 0.35, epsilon = 1e-7);
        }
    }

    #[test]
    fn large_vol_needs_bracket_expansion() {
        let c = ctx(0.0);
        let key = OptionKey::call(0.01, 100.0);
        let p = bs_price(&c, &key, 8.0);
        assert_abs_diff_eq!(implied_vol_brent(&c, &key, p).unwrap(), 8.0, epsilon = 1e-6);
    }

    #[test]
    fn option_kind_parsing() {
        assert_eq!("C".parse::<OptionKind>().unwrap(), OptionKind::Call);
        assert_eq!("put".parse::<OptionKind>().unwrap(), OptionKind::Put);
        assert!("X".parse::<OptionKind>().is_err());
    }

    proptest! {
        #[test]
        fn put_call_parity(k in 50.0f64..200.0, t in 0.05f64..3.0, r in -0.02f64..0.08, s in 0.0f64..2.0) {
            let c = ctx(r);
            let call = bs_price(&c, &OptionKey::call(t, k), s);
            let put = bs_price(&c, &OptionKey::put(t, k), s);
            prop_assert!((call - put - (100.0 - k * (-r * t).exp())).abs() < 1e-10);
        }

        #[test]
        fn price_nondecreasing_in_vol(k in 50.0f64..200.0, t in 0.05f64..3.0) {
            let c = ctx(0.01);
            let key = OptionKey::call(t, k);
            let mut prev = bs_price(&c, &key, 0.0);
            for i in 1..=60 {
                let v = bs_price(&c, &key, i as f64 * 0.05);
                prop_assert!(v >= prev - 1e-12);
                prev = v;
            }
        }

        #[test]
        fn brent_inverts_price(sigma in 0.01f64..3.0, k in 70.0f64..140.0, t in 0.1f64..2.0) {
            let c = ctx(0.01);
            let key = OptionKey::call(t, k).otm(&c);
            let p = bs_price(&c, &key, sigma);
            let (lo, hi) = price_bounds(&c, &key);
            prop_assume!(p > lo + 1e-12 && p < hi - 1e-12);
            let v = implied_vol_brent(&c, &key, p).unwrap();
            prop_assert!((v - sigma).abs() < 1e-7, "{} vs {}", v, sigma);
        }

        #[test]
        fn call_convex_decreasing_in_strike(sigma in 0.05f64..1.0, t in 0.05f64..2.0) {
            let c = ctx(0.02);
            let prices: Vec<f64> = (0..100).map(|i| bs_price(&c, &OptionKey::call(t, 50.0 + i as f64), sigma)).collect();
            for w in prices.windows(3) {
                prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-10 * 100.0);
                prop_assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }
}
