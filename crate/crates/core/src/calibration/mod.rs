//! Slice-wise least-squares calibration of plain and randomized
//! parametrizations to implied-volatility quotes.
//!
//! Free parameters are mapped to unconstrained coordinates (log for positive
//! quantities, scaled `tanh` for `ρ` and `β`) and the sum of squared
//! volatility errors is minimized by Nelder–Mead from several deterministic
//! starting points.

pub mod simplex;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::parametrization::{BaseParams, RandomTarget, SliceParams};
use crate::pricing::{BrentOptions, MarketContext, OptionKey, OptionKind};
use crate::quadrature::DistributionSpec;
use crate::randomization::{IvEngine, IvOptions, RandomizedSlice};

use simplex::{minimize, SimplexOptions};

/// Objective value assigned to parameter sets the model cannot evaluate.
const PENALTY: f64 = 1e10;
/// Bound on `|ρ|` enforced by the transform.
pub const RHO_BOUND: f64 = 0.999;
/// Shape parameter of the near-degenerate Gamma law used to start a
/// randomized fit from the plain optimum.
const DEGENERATE_SHAPE: f64 = 1e12;
/// Dispersion of near-degenerate lognormal randomizers, for the same purpose.
const DEGENERATE_NU: f64 = 1e-6;

/// One implied-volatility quote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub expiry: f64,
    pub strike: f64,
    pub iv: f64,
    pub kind: OptionKind,
    #[serde(default)]
    pub open_interest: u64,
}

/// Quotes on one underlying.
#[derive(Debug, Clone, PartialEq)]
pub struct QuoteSet {
    pub quotes: Vec<Quote>,
    pub ctx: MarketContext,
}

impl QuoteSet {
    pub fn new(quotes: Vec<Quote>, ctx: MarketContext) -> Result<Self> {
        ctx.validate()?;
        for q in &quotes {
            if !(q.iv > 0.0 && q.iv.is_finite()) {
                return Err(Error::Domain { name: "iv", value: q.iv });
            }
            OptionKey { expiry: q.expiry, strike: q.strike, kind: q.kind }.validate(&ctx)?;
        }
        Ok(Self { quotes, ctx })
    }

    pub fn len(&self) -> usize {
        self.quotes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quotes.is_empty()
    }

    /// Distinct expiries in increasing order.
    pub fn expiries(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.quotes.iter().map(|q| q.expiry).collect();
        t.sort_by(f64::total_cmp);
        t.dedup();
        t
    }

    /// Quotes of one expiry.
    pub fn slice(&self, expiry: f64) -> QuoteSet {
        Self { quotes: self.quotes.iter().filter(|q| q.expiry == expiry).copied().collect(), ctx: self.ctx }
    }

    pub fn keys(&self) -> Vec<OptionKey> {
        self.quotes.iter().map(|q| OptionKey { expiry: q.expiry, strike: q.strike, kind: q.kind }).collect()
    }
}

/// Keeps one quote per `(T, K)`: the larger open interest, ties going to the
/// out-of-the-money side. Output is sorted by expiry, then strike.
pub fn select_liquid(raw: &QuoteSet) -> QuoteSet {
    let mut best: BTreeMap<(u64, u64), Quote> = BTreeMap::new();
    for q in &raw.quotes {
        // Positive floats order like their bit patterns.
        let key = (q.expiry.to_bits(), q.strike.to_bits());
        let otm = OptionKey { expiry: q.expiry, strike: q.strike, kind: q.kind }.otm(&raw.ctx).kind;
        match best.get(&key) {
            Some(cur) if cur.open_interest > q.open_interest => {}
            Some(cur) if cur.open_interest == q.open_interest && (cur.kind == otm || q.kind != otm) => {}
            _ => {
                best.insert(key, *q);
            }
        }
    }
    QuoteSet { quotes: best.into_values().collect(), ctx: raw.ctx }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Flat,
    Sabr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomizerKind {
    None,
    /// Lognormal flat volatility.
    SigmaLognormal,
    /// Gamma-distributed SABR vol-of-vol.
    GammaGamma,
    /// Lognormal spot centred at S0.
    SpotLognormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub model: ModelKind,
    pub randomizer: RandomizerKind,
    pub n_q: usize,
    /// Parameters held at fixed values. Names that are not parameters of the
    /// configured model are ignored.
    pub fixed: BTreeMap<String, f64>,
    pub engine: IvEngine,
    /// Evaluation budget per start.
    pub max_evals: usize,
    pub starts: usize,
    /// Also start the randomized fit from the fitted plain model.
    pub seed_from_plain: bool,
    /// Relative tolerance of the implied-volatility root finder.
    pub iv_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Sabr,
            randomizer: RandomizerKind::GammaGamma,
            n_q: 2,
            fixed: BTreeMap::from([("beta".to_string(), 0.9)]),
            engine: IvEngine::RootFind,
            max_evals: 2000,
            starts: 8,
            seed_from_plain: true,
            iv_tolerance: 1e-13,
        }
    }
}

impl FitConfig {
    /// Parameter names of the configured model, in canonical order.
    pub fn parameter_names(&self) -> Result<Vec<&'static str>> {
        use ModelKind::*;
        use RandomizerKind::*;
        Ok(match (self.model, self.randomizer) {
            (Flat, None) => vec!["sigma"],
            (Flat, SigmaLognormal) => vec!["mu", "nu"],
            (Flat, SpotLognormal) => vec!["sigma", "nu"],
            (Sabr, None) => vec!["alpha", "beta", "rho", "gamma"],
            (Sabr, GammaGamma) => vec!["alpha", "beta", "rho", "k", "theta"],
            (Sabr, SpotLognormal) => vec!["alpha", "beta", "rho", "gamma", "nu"],
            (m, r) => return Err(invalid(format!("randomizer {r:?} does not apply to model {m:?}"))),
        })
    }

    fn plain(&self) -> Self {
        Self { randomizer: RandomizerKind::None, seed_from_plain: false, ..self.clone() }
    }

    fn iv_options(&self) -> IvOptions {
        IvOptions { brent: BrentOptions { rel_tol: self.iv_tolerance, ..BrentOptions::default() }, ..IvOptions::default() }
    }

    /// Slice parameters from named values.
    pub fn build(&self, values: &BTreeMap<&str, f64>, ctx: &MarketContext) -> Result<SliceParams> {
        let get = |name: &str| values.get(name).copied().ok_or_else(|| invalid(format!("missing parameter `{name}`")));
        let sabr = |gamma: f64| -> Result<BaseParams> { Ok(BaseParams::sabr(get("alpha")?, get("beta")?, get("rho")?, gamma)) };
        let n_q = self.n_q;
        let slice = match (self.model, self.randomizer) {
            (ModelKind::Flat, RandomizerKind::None) => SliceParams::plain(BaseParams::flat(get("sigma")?)),
            (ModelKind::Sabr, RandomizerKind::None) => SliceParams::plain(sabr(get("gamma")?)?),
            (ModelKind::Flat, RandomizerKind::SigmaLognormal) => {
                let (mu, nu) = (get("mu")?, get("nu")?);
                let mean = (mu + 0.5 * nu * nu).exp();
                SliceParams::randomized(BaseParams::flat(mean), RandomTarget::Sigma, DistributionSpec::LogNormal { mu, nu }, n_q)
            }
            (ModelKind::Sabr, RandomizerKind::GammaGamma) => {
                let (k, theta) = (get("k")?, get("theta")?);
                SliceParams::randomized(sabr(k * theta)?, RandomTarget::Gamma, DistributionSpec::Gamma { k, theta }, n_q)
            }
            (model, RandomizerKind::SpotLognormal) => {
                let base = match model {
                    ModelKind::Flat => BaseParams::flat(get("sigma")?),
                    ModelKind::Sabr => sabr(get("gamma")?)?,
                };
                let dist = DistributionSpec::SpotLogNormal { s0: ctx.spot, nu: get("nu")? };
                SliceParams::randomized(base, RandomTarget::Spot, dist, n_q)
            }
            (m, r) => return Err(invalid(format!("randomizer {r:?} does not apply to model {m:?}"))),
        };
        slice.validate()?;
        Ok(slice)
    }
}

fn to_internal(name: &str, x: f64) -> f64 {
    match name {
        "mu" => x,
        "rho" => (x / RHO_BOUND).clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh(),
        "beta" => (2.0 * x - 1.0).clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh(),
        _ => x.ln(),
    }
}

fn to_external(name: &str, u: f64) -> f64 {
    match name {
        "mu" => u,
        "rho" => RHO_BOUND * u.tanh(),
        "beta" => 0.5 * (1.0 + u.tanh()),
        _ => u.exp(),
    }
}

/// Squared-error contribution of one quote.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub strike: f64,
    pub kind: OptionKind,
    pub market_iv: f64,
    pub model_iv: f64,
    /// `model_iv − market_iv`.
    pub residual: f64,
}

/// Columns of the calibrated-parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TableRow {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub expiry: f64,
    pub params: SliceParams,
    pub engine: IvEngine,
    pub sse: f64,
    pub mse: f64,
    pub residuals: Vec<Residual>,
    pub randomizer_variance: f64,
    pub table: TableRow,
    pub evaluations: usize,
    pub converged: bool,
    /// Objective at each starting point.
    pub start_sse: Vec<f64>,
}

/// Closed-form variance of a randomizer distribution.
pub fn variance_of_randomizer(spec: &DistributionSpec) -> f64 {
    spec.variance()
}

/// Model implied volatilities at `keys` through the canonical path used by
/// the objective: no warm start, so results do not depend on point order.
pub fn model_ivs(rs: &RandomizedSlice, keys: &[OptionKey], engine: IvEngine, opts: &IvOptions) -> Result<Vec<f64>> {
    keys.iter().map(|k| rs.iv_with(k, engine, opts, None).map(|p| p.vol)).collect()
}

struct Problem<'a> {
    cfg: &'a FitConfig,
    quotes: &'a QuoteSet,
    keys: Vec<OptionKey>,
    free: Vec<&'static str>,
    fixed: BTreeMap<&'static str, f64>,
    opts: IvOptions,
}

impl<'a> Problem<'a> {
    fn new(quotes: &'a QuoteSet, cfg: &'a FitConfig) -> Result<Self> {
        let names = cfg.parameter_names()?;
        let fixed: BTreeMap<&'static str, f64> =
            names.iter().filter_map(|&n| cfg.fixed.get(n).map(|&v| (n, v))).collect();
        let free: Vec<&'static str> = names.into_iter().filter(|n| !fixed.contains_key(n)).collect();
        if quotes.len() < free.len().max(1) {
            return Err(invalid(format!("{} quotes cannot determine {} free parameters", quotes.len(), free.len())));
        }
        Ok(Self { cfg, quotes, keys: quotes.keys(), free, fixed, opts: cfg.iv_options() })
    }

    fn values(&self, u: &[f64]) -> BTreeMap<&str, f64> {
        let mut v: BTreeMap<&str, f64> = self.fixed.clone();
        for (name, x) in self.free.iter().zip(u) {
            v.insert(name, to_external(name, *x));
        }
        v
    }

    fn slice(&self, u: &[f64]) -> Result<RandomizedSlice> {
        let params = self.cfg.build(&self.values(u), &self.quotes.ctx)?;
        RandomizedSlice::new(params, self.quotes.ctx)
    }

    fn sse(&self, u: &[f64]) -> f64 {
        let eval = || -> Result<f64> {
            let rs = self.slice(u)?;
            let ivs = model_ivs(&rs, &self.keys, self.cfg.engine, &self.opts)?;
            Ok(ivs.iter().zip(&self.quotes.quotes).map(|(m, q)| (m - q.iv).powi(2)).sum())
        };
        match eval() {
            Ok(v) if v.is_finite() => v,
            _ => PENALTY,
        }
    }

    /// Deterministic Latin-hypercube starts in internal coordinates.
    fn starts(&self) -> Vec<Vec<f64>> {
        let n = self.cfg.starts.max(1);
        let median_iv = {
            let mut iv: Vec<f64> = self.quotes.quotes.iter().map(|q| q.iv).collect();
            iv.sort_by(f64::total_cmp);
            iv[iv.len() / 2]
        };
        let forward = self.quotes.ctx.forward(self.quotes.quotes[0].expiry);
        let beta = self.fixed.get("beta").copied().unwrap_or(0.9);
        let ranges: Vec<(f64, f64)> = self
            .free
            .iter()
            .map(|&name| match name {
                "sigma" => (median_iv.ln() - 0.7, median_iv.ln() + 0.7),
                "mu" => (median_iv.ln() - 0.7, median_iv.ln() + 0.3),
                "nu" if self.cfg.randomizer == RandomizerKind::SpotLognormal => (0.005f64.ln(), 0.2f64.ln()),
                "nu" => (0.05f64.ln(), 1.0f64.ln()),
                "alpha" => {
                    let a = (median_iv * forward.powf(1.0 - beta)).ln();
                    (a - 0.7, a + 0.7)
                }
                "beta" => (-1.0, 1.0),
                "rho" => (-1.5, 1.5),
                "gamma" => (0.1f64.ln(), 3.0f64.ln()),
                "k" => (0.5f64.ln(), 20.0f64.ln()),
                "theta" => (0.02f64.ln(), 2.0f64.ln()),
                _ => (-1.0, 1.0),
            })
            .collect();
        (0..n)
            .map(|s| {
                ranges
                    .iter()
                    .enumerate()
                    .map(|(j, &(lo, hi))| {
                        let cell = (latin_multiplier(j, n) * s + j) % n;
                        lo + (cell as f64 + 0.5) / n as f64 * (hi - lo)
                    })
                    .collect()
            })
            .collect()
    }

    fn internal(&self, params: &SliceParams) -> Vec<f64> {
        let row = table_row(params);
        self.free
            .iter()
            .map(|&name| {
                let v = match name {
                    "sigma" => row.sigma,
                    "alpha" => row.alpha,
                    "beta" => row.beta,
                    "rho" => row.rho,
                    "gamma" => row.gamma,
                    "k" => row.k,
                    "theta" => row.theta,
                    "mu" => row.mu,
                    "nu" => row.nu,
                    _ => None,
                };
                to_internal(name, v.unwrap_or(1.0))
            })
            .collect()
    }

    /// Randomized parameters reproducing the plain fit up to a negligible
    /// dispersion of the randomizer.
    fn seed_from(&self, plain: &SliceParams) -> Option<Vec<f64>> {
        let mut p = plain.clone();
        match (plain.base, self.cfg.randomizer) {
            (BaseParams::Sabr(s), RandomizerKind::GammaGamma) => {
                let k = DEGENERATE_SHAPE;
                p.randomizer = Some(crate::parametrization::Randomizer {
                    target: RandomTarget::Gamma,
                    dist: DistributionSpec::Gamma { k, theta: s.gamma.max(1e-8) / k },
                    n_q: self.cfg.n_q,
                    recenter: false,
                });
            }
            (BaseParams::Flat(f), RandomizerKind::SigmaLognormal) => {
                let nu = DEGENERATE_NU;
                p.randomizer = Some(crate::parametrization::Randomizer {
                    target: RandomTarget::Sigma,
                    dist: DistributionSpec::LogNormal { mu: f.sigma.max(1e-8).ln() - 0.5 * nu * nu, nu },
                    n_q: self.cfg.n_q,
                    recenter: false,
                });
            }
            (_, RandomizerKind::SpotLognormal) => {
                p.randomizer = Some(crate::parametrization::Randomizer {
                    target: RandomTarget::Spot,
                    dist: DistributionSpec::SpotLogNormal { s0: self.quotes.ctx.spot, nu: DEGENERATE_NU },
                    n_q: self.cfg.n_q,
                    recenter: false,
                });
            }
            _ => return None,
        }
        Some(self.internal(&p))
    }
}

fn latin_multiplier(j: usize, n: usize) -> usize {
    let gcd = |mut a: usize, mut b: usize| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    (2 * j + 1..).step_by(2).find(|&a| gcd(a, n) == 1).unwrap_or(1)
}

fn table_row(params: &SliceParams) -> TableRow {
    let mut row = TableRow::default();
    match params.base {
        BaseParams::Flat(f) => row.sigma = Some(f.sigma),
        BaseParams::Sabr(s) => {
            row.alpha = Some(s.alpha);
            row.beta = Some(s.beta);
            row.rho = Some(s.rho);
            row.gamma = Some(s.gamma);
        }
    }
    if let Some(r) = &params.randomizer {
        match r.dist {
            DistributionSpec::Gamma { k, theta } => {
                row.k = Some(k);
                row.theta = Some(theta);
            }
            DistributionSpec::LogNormal { mu, nu } => {
                row.mu = Some(mu);
                row.nu = Some(nu);
            }
            DistributionSpec::SpotLogNormal { nu, .. } => row.nu = Some(nu),
            DistributionSpec::Discrete { .. } => {}
        }
        row.var = variance_of_randomizer(&r.dist);
    }
    row
}

/// Fits one expiry slice.
///
/// Returns [`Error::CalibrationNotConverged`] with the best parameters found
/// when no start met the simplex tolerances within its budget.
pub fn fit_slice(quotes: &QuoteSet, cfg: &FitConfig) -> Result<FitResult> {
    if quotes.is_empty() {
        return Err(invalid("no quotes to fit"));
    }
    let expiry = quotes.quotes[0].expiry;
    if quotes.quotes.iter().any(|q| q.expiry != expiry) {
        return Err(invalid("fit_slice expects quotes of a single expiry"));
    }
    if cfg.n_q == 0 {
        return Err(invalid("n_q must be at least 1"));
    }
    let problem = Problem::new(quotes, cfg)?;
    let mut starts = problem.starts();
    let mut extra_evals = 0;
    if cfg.seed_from_plain && cfg.randomizer != RandomizerKind::None {
        let plain_cfg = cfg.plain();
        let plain = match fit_slice(quotes, &plain_cfg) {
            Ok(r) => Some(r),
            Err(Error::CalibrationNotConverged { best }) => Some(*best),
            Err(_) => None,
        };
        if let Some(plain) = plain {
            extra_evals = plain.evaluations;
            if let Some(seed) = problem.seed_from(&plain.params) {
                starts.insert(0, seed);
            }
        }
    }

    let opts = SimplexOptions { max_evals: cfg.max_evals, ..SimplexOptions::default() };
    let runs: Vec<(f64, simplex::SimplexResult)> = starts
        .par_iter()
        .map(|x0| {
            let f0 = problem.sse(x0);
            (f0, minimize(|u| problem.sse(u), x0, &opts))
        })
        .collect();
    let start_sse: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let evaluations = extra_evals + runs.iter().map(|r| r.1.evaluations + 1).sum::<usize>();
    let best = runs
        .into_iter()
        .map(|r| r.1)
        .min_by(|a, b| a.f.total_cmp(&b.f))
        .expect("at least one start");

    let rs = problem.slice(&best.x)?;
    let ivs = model_ivs(&rs, &problem.keys, cfg.engine, &problem.opts)?;
    let residuals: Vec<Residual> = ivs
        .iter()
        .zip(&quotes.quotes)
        .map(|(&m, q)| Residual { strike: q.strike, kind: q.kind, market_iv: q.iv, model_iv: m, residual: m - q.iv })
        .collect();
    let sse: f64 = residuals.iter().map(|r| r.residual * r.residual).sum();
    let params = rs.params().clone();
    let table = table_row(&params);
    let result = FitResult {
        expiry,
        randomizer_variance: table.var,
        table,
        params,
        engine: cfg.engine,
        sse,
        mse: sse / quotes.len() as f64,
        residuals,
        evaluations,
        converged: best.converged,
        start_sse,
    };
    if result.converged {
        Ok(result)
    } else {
        Err(Error::CalibrationNotConverged { best: Box::new(result) })
    }
}

/// Fits every expiry of `quotes` independently.
pub fn fit_all(quotes: &QuoteSet, cfg: &FitConfig) -> Vec<Result<FitResult>> {
    quotes.expiries().into_iter().map(|t| fit_slice(&quotes.slice(t), cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ctx() -> MarketContext {
        MarketContext { spot: 100.0, rate: 0.01, t0: 0.0 }
    }

    fn quote(strike: f64, kind: OptionKind, oi: u64) -> Quote {
        Quote { expiry: 0.25, strike, iv: 0.2, kind, open_interest: oi }
    }

    #[test]
    fn liquid_selection() {
        let c = ctx();
        let raw = QuoteSet::new(
            vec![
                quote(95.0, OptionKind::Call, 100),
                quote(95.0, OptionKind::Put, 500),
                quote(110.0, OptionKind::Put, 7),
                quote(110.0, OptionKind::Call, 7),
                quote(90.0, OptionKind::Call, 7),
                quote(90.0, OptionKind::Put, 7),
                quote(120.0, OptionKind::Call, 1),
            ],
            c,
        )
        .unwrap();
        let sel = select_liquid(&raw);
        let kinds: Vec<(f64, OptionKind)> = sel.quotes.iter().map(|q| (q.strike, q.kind)).collect();
        assert_eq!(
            kinds,
            vec![(90.0, OptionKind::Put), (95.0, OptionKind::Put), (110.0, OptionKind::Call), (120.0, OptionKind::Call)]
        );
    }

    #[test]
    fn calibrated_gamma_variances() {
        for (k, theta, var) in [(1.775, 1.378, 3.371), (3.872, 0.455, 0.802), (3.032, 0.446, 0.603), (4.916, 0.271, 0.361)] {
            assert_abs_diff_eq!(variance_of_randomizer(&DistributionSpec::Gamma { k, theta }), var, epsilon = 1e-3);
        }
        assert_eq!(variance_of_randomizer(&DistributionSpec::LogNormal { mu: 0.3, nu: 0.0 }), 0.0);
    }

    #[test]
    fn transforms_round_trip() {
        for (name, x) in [("rho", -0.4), ("beta", 0.9), ("alpha", 0.25), ("mu", -1.7), ("k", 3.0)] {
            assert_abs_diff_eq!(to_external(name, to_internal(name, x)), x, epsilon = 1e-12);
        }
        assert!(to_external("rho", 50.0) <= RHO_BOUND);
    }

    #[test]
    fn latin_starts_are_distinct() {
        let c = ctx();
        let quotes = QuoteSet::new((0..10).map(|i| quote(90.0 + 2.0 * i as f64, OptionKind::Call, 1)).collect(), c).unwrap();
        let cfg = FitConfig::default();
        let p = Problem::new(&quotes, &cfg).unwrap();
        let starts = p.starts();
        assert_eq!(starts.len(), 8);
        for j in 0..starts[0].len() {
            let mut col: Vec<f64> = starts.iter().map(|s| s[j]).collect();
            col.sort_by(f64::total_cmp);
            col.dedup();
            assert_eq!(col.len(), 8, "dimension {j} repeats a cell");
        }
    }

    #[test]
    fn recovers_flat_vol() {
        let c = ctx();
        let quotes: Vec<Quote> = (0..15)
            .map(|i| Quote { expiry: 0.5, strike: 80.0 + 3.0 * i as f64, iv: 0.2, kind: OptionKind::Call, open_interest: 1 })
            .collect();
        let qs = QuoteSet::new(quotes, c).unwrap();
        let cfg = FitConfig { model: ModelKind::Flat, randomizer: RandomizerKind::None, starts: 3, ..FitConfig::default() };
        let r = fit_slice(&qs, &cfg).unwrap();
        assert_abs_diff_eq!(r.table.sigma.unwrap(), 0.2, epsilon = 1e-6);
        assert!(r.sse < 1e-10);
        assert!(r.start_sse.iter().all(|&s| r.sse <= s));
    }

    #[test]
    fn incompatible_randomizer_rejected() {
        let cfg = FitConfig { model: ModelKind::Flat, randomizer: RandomizerKind::GammaGamma, ..FitConfig::default() };
        assert!(cfg.parameter_names().is_err());
    }

    #[test]
    fn config_defaults_from_toml() {
        let cfg: FitConfig = toml::from_str("model = \"sabr\"\nengine = \"expansion:4\"\n").unwrap();
        assert_eq!(cfg.engine, IvEngine::Expansion(4));
        assert_eq!(cfg.fixed.get("beta"), Some(&0.9));
        assert_eq!(cfg.n_q, 2);
    }
}
