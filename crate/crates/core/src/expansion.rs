//! Closed-form Taylor expansions of the randomized implied volatility in
//! log-moneyness `m` around the forward.
//!
//! For a target `(T, K)` the node volatilities are frozen at their values at
//! `K`, and `P(m)` is the volatility whose Black–Scholes price matches the
//! mixture price at log-moneyness `m`. Evaluating the polynomial at
//! `m(T, K)` gives the randomized implied volatility at `K`.
//!
//! Parameter randomization produces an even function of `m` (orders 0, 2, 4,
//! 6 in closed form). Spot randomization breaks the symmetry; orders 0 to 2
//! are closed form, orders 3 and 4 come from the truncated-series solver.

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::normal::{cdf, inv_cdf, pdf};
use crate::parametrization::BaseParams;
use crate::pricing::{log_moneyness, OptionKey};
use crate::randomization::{IvEngine, IvOptions, IvPoint, RandomizationKind, RandomizedSlice};
use crate::series;

/// Derivatives `P^{(k)}(0)` at one target point plus the intermediate quantities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionTerms {
    pub kind: RandomizationKind,
    pub expiry: f64,
    pub strike: f64,
    pub order: usize,
    /// `P^{(k)}(0)` for `k = 0..=order`; odd entries vanish for parameter randomization.
    pub coefficients: Vec<f64>,
    pub aux: ExpansionAux,
    /// `P^{(k)}(0)/k!`, used for evaluation.
    #[serde(skip)]
    taylor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExpansionAux {
    Parameter {
        /// `½ P(0) √T`.
        sigma0: f64,
        /// `P(0) P''(0) T`.
        sigma2: f64,
        /// `P(0) P''''(0) T`.
        sigma4: f64,
        /// Node volatilities `η_n`.
        eta: Vec<f64>,
        /// `½ η_n √T`.
        h: Vec<f64>,
        /// `exp(½(Σ0² − H_n²))`.
        e: Vec<f64>,
    },
    Spot {
        /// Base volatility at the true spot.
        eta: f64,
        /// `log(θ_n/S0)`.
        beta: Vec<f64>,
        d_plus: Vec<f64>,
        d_minus: Vec<f64>,
        d_plus_0: f64,
        d_minus_0: f64,
        /// `(θ_n/S0) Φ(d⁺_n) − Φ(d⁻_n)`.
        sigma: Vec<f64>,
        /// `φ(d⁻_n)`.
        sigma_prime: Vec<f64>,
        sigma_prime_0: f64,
        /// `exp(−β_n²/(2Tη²))`.
        sigma_tilde: Vec<f64>,
    },
}

impl ExpansionTerms {
    fn new(kind: RandomizationKind, key: &OptionKey, coefficients: Vec<f64>, aux: ExpansionAux) -> Self {
        let mut fact = 1.0;
        let taylor = coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| {
                if k > 0 {
                    fact *= k as f64;
                }
                c / fact
            })
            .collect();
        Self {
            kind,
            expiry: key.expiry,
            strike: key.strike,
            order: coefficients.len() - 1,
            coefficients,
            aux,
            taylor,
        }
    }

    /// Polynomial value without the positivity guard.
    pub fn polynomial(&self, m: f64) -> f64 {
        self.taylor.iter().rev().fold(0.0, |acc, c| acc * m + c)
    }
}

/// Taylor polynomial at `m`; nonpositive values are reported as leaving the
/// expansion's validity region.
pub fn eval_expansion(terms: &ExpansionTerms, m: f64) -> Result<f64> {
    let value = terms.polynomial(m);
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::ExpansionGuard { m, value })
    }
}

/// Expansion of the slice's kind at `key`.
pub fn expand(rs: &RandomizedSlice, key: &OptionKey, order: usize) -> Result<ExpansionTerms> {
    match rs.kind() {
        RandomizationKind::Parameter => expand_parameter(rs, key, order),
        RandomizationKind::Spot => expand_spot(rs, key, order),
    }
}

/// Expansion for a randomized parameter; `order` ∈ {0, 2, 4, 6}.
pub fn expand_parameter(rs: &RandomizedSlice, key: &OptionKey, order: usize) -> Result<ExpansionTerms> {
    if rs.kind() != RandomizationKind::Parameter {
        return Err(invalid("parameter expansion needs a parameter-randomized slice"));
    }
    key.validate(rs.ctx())?;
    let etas = rs.node_vols(key)?;
    parameter_terms(key, rs.rule().weights(), &etas, rs.ctx().tau(key.expiry), order)
}

pub(crate) fn parameter_terms(
    key: &OptionKey,
    weights: &[f64],
    etas: &[f64],
    tau: f64,
    order: usize,
) -> Result<ExpansionTerms> {
    if order > 6 || order % 2 == 1 {
        return Err(Error::UnsupportedOrder { order, kind: "parameter" });
    }
    if let Some(&eta) = etas.iter().find(|&&e| !(e > 0.0)) {
        return Err(Error::Domain { name: "node volatility", value: eta });
    }
    let st = tau.sqrt();
    let h: Vec<f64> = etas.iter().map(|eta| 0.5 * eta * st).collect();
    let mix: f64 = weights.iter().zip(&h).map(|(w, &hn)| w * cdf(hn)).sum();
    if !(mix > 0.5 && mix < 1.0) {
        return Err(Error::Precision(mix));
    }
    let p0 = 2.0 / st * inv_cdf(mix);
    let s0 = 0.5 * p0 * st;
    let e: Vec<f64> = h.iter().map(|hn| (0.5 * (s0 * s0 - hn * hn)).exp()).collect();
    let node_sum = |f: &dyn Fn(f64) -> f64| -> f64 {
        weights.iter().zip(&h).zip(&e).map(|((w, &hn), en)| w * en * f(hn)).sum()
    };

    let mut coefficients = vec![0.0; order + 1];
    coefficients[0] = p0;
    let (mut s2, mut s4) = (0.0, 0.0);
    if order >= 2 {
        let p2 = (-1.0 / s0 + node_sum(&|hn| 1.0 / hn)) / (2.0 * st);
        coefficients[2] = p2;
        s2 = p0 * p2 * tau;
    }
    if order >= 4 {
        let s0_2 = s0 * s0;
        let lead = (1.0 + 6.0 * s2 + s0_2 * (-7.0 - 6.0 * s2 + 3.0 * s2 * s2)) / (s0_2 * s0);
        let p4 = (lead + node_sum(&|hn| (-1.0 + 7.0 * hn * hn) / hn.powi(3))) / (8.0 * st);
        coefficients[4] = p4;
        s4 = p0 * p4 * tau;
    }
    if order >= 6 {
        let s0_2 = s0 * s0;
        let s0_4 = s0_2 * s0_2;
        let s0_5 = s0_4 * s0;
        let first = -3.0 - 45.0 * s2
            + s0_2 * (90.0 * s2 + 60.0 * s4)
            + s0_4 * s2 * (45.0 * s2 + 60.0 * s4 - 15.0 * s2 * s2);
        let second = 16.0 * s0_2 - 90.0 * s2 * s2 - 31.0 * s0_4 - 45.0 * s0_2 * s2 * s2
            - s0_4 * (15.0 * s2 + 60.0 * s4)
            + 15.0 * s0_2 * s2.powi(3);
        let nodes = node_sum(&|hn| {
            let h2 = hn * hn;
            (3.0 - 16.0 * h2 + 31.0 * h2 * h2) / hn.powi(5)
        });
        coefficients[6] = ((first + second) / s0_5 + nodes) / (32.0 * st);
    }
    let aux = ExpansionAux::Parameter { sigma0: s0, sigma2: s2, sigma4: s4, eta: etas.to_vec(), h, e };
    Ok(ExpansionTerms::new(RandomizationKind::Parameter, key, coefficients, aux))
}

/// Expansion for a randomized spot; `order` ∈ {0, 1, 2, 3, 4}.
pub fn expand_spot(rs: &RandomizedSlice, key: &OptionKey, order: usize) -> Result<ExpansionTerms> {
    if rs.kind() != RandomizationKind::Spot {
        return Err(invalid("spot expansion needs a spot-randomized slice"));
    }
    key.validate(rs.ctx())?;
    let eta = rs.base_vol(key);
    let spot = rs.ctx().spot;
    let betas: Vec<f64> = rs.rule().nodes().iter().map(|theta| (theta / spot).ln()).collect();
    spot_terms(key, rs.rule().weights(), &betas, eta, rs.ctx().tau(key.expiry), order)
}

pub(crate) fn spot_terms(
    key: &OptionKey,
    weights: &[f64],
    betas: &[f64],
    eta: f64,
    tau: f64,
    order: usize,
) -> Result<ExpansionTerms> {
    if order > 4 {
        return Err(Error::UnsupportedOrder { order, kind: "spot" });
    }
    if !(eta > 0.0) {
        return Err(Error::Domain { name: "base volatility", value: eta });
    }
    let st = tau.sqrt();
    let s = eta * st;
    let d_plus: Vec<f64> = betas.iter().map(|b| (b + 0.5 * s * s) / s).collect();
    let d_minus: Vec<f64> = betas.iter().map(|b| (b - 0.5 * s * s) / s).collect();
    let sigma: Vec<f64> = betas
        .iter()
        .zip(d_plus.iter().zip(&d_minus))
        .map(|(b, (dp, dm))| b.exp() * cdf(*dp) - cdf(*dm))
        .collect();
    let mix: f64 = weights.iter().zip(&sigma).map(|(w, sn)| w * sn).sum();
    let level = 0.5 * (1.0 + mix);
    if !(level > 0.5 && level < 1.0) {
        return Err(Error::Precision(level));
    }
    let p0 = 2.0 / st * inv_cdf(level);
    let d_plus_0 = 0.5 * p0 * st;
    let d_minus_0 = -d_plus_0;
    let phi0 = pdf(d_minus_0);
    let sigma_prime: Vec<f64> = d_minus.iter().map(|d| pdf(*d)).collect();
    let weighted = |v: &[f64], f: &dyn Fn(f64) -> f64| -> f64 { weights.iter().zip(v).map(|(w, x)| w * f(*x)).sum() };

    let mut coefficients = vec![0.0; order + 1];
    coefficients[0] = p0;
    let mut sigma_prime_0 = 0.0;
    if order >= 1 {
        let p1 = (weighted(&d_minus, &cdf) - cdf(d_minus_0)) / (st * phi0);
        coefficients[1] = p1;
        sigma_prime_0 = -cdf(d_minus_0)
            + phi0 * (1.0 / (p0 * st) - st * p1 - 0.25 * p0 * p1 * p1 * tau * st);
        if order >= 2 {
            let node_part: f64 = weights
                .iter()
                .zip(&d_minus)
                .zip(&sigma_prime)
                .map(|((w, d), sp)| w * (sp / s - cdf(*d)))
                .sum();
            coefficients[2] = (node_part - sigma_prime_0) / (st * phi0);
        }
    }
    if order >= 3 {
        let g = series::g_spot(weights, betas, eta, st, order + 1);
        let p = series::solve_implicit(&g, st, p0).derivatives();
        coefficients[3..=order].copy_from_slice(&p[3..=order]);
    }
    let sigma_tilde = betas.iter().map(|b| (-b * b / (2.0 * tau * eta * eta)).exp()).collect();
    let aux = ExpansionAux::Spot {
        eta,
        beta: betas.to_vec(),
        d_plus,
        d_minus,
        d_plus_0,
        d_minus_0,
        sigma,
        sigma_prime,
        sigma_prime_0,
        sigma_tilde,
    };
    Ok(ExpansionTerms::new(RandomizationKind::Spot, key, coefficients, aux))
}

/// Implied volatilities for many points.
///
/// Expansion terms are reused between consecutive points that share the
/// expiry and node volatilities (always the case for flat bases on one
/// expiry). Root finding warm-starts each point from the previous solution.
pub fn batch_iv(rs: &RandomizedSlice, keys: &[OptionKey], engine: IvEngine, opts: &IvOptions) -> Result<Vec<IvPoint>> {
    let mut out = Vec::with_capacity(keys.len());
    match engine {
        IvEngine::RootFind => {
            let mut hint = None;
            for key in keys {
                let vol = rs.iv_brent(key, hint, opts.brent)?;
                hint = Some(vol);
                out.push(IvPoint { vol, fallback: false });
            }
        }
        IvEngine::Expansion(order) => {
            let mut cache: Option<(f64, Vec<f64>, ExpansionTerms)> = None;
            let mut etas = Vec::new();
            let mut hint = None;
            let strike_invariant = matches!(rs.params().base, BaseParams::Flat(_));
            for key in keys {
                key.validate(rs.ctx())?;
                let same_expiry = matches!(&cache, Some((t, _, _)) if *t == key.expiry);
                // A flat base gives the same node vols at every strike.
                let reuse = if same_expiry && strike_invariant {
                    true
                } else {
                    etas.clear();
                    match rs.kind() {
                        RandomizationKind::Parameter => etas.extend(rs.node_vols(key)?),
                        RandomizationKind::Spot => etas.push(rs.base_vol(key)),
                    }
                    same_expiry && matches!(&cache, Some((_, e, _)) if *e == etas)
                };
                if !reuse {
                    let terms = expand(rs, key, order)?;
                    cache = Some((key.expiry, etas.clone(), terms));
                }
                let terms = &cache.as_ref().expect("cache filled above").2;
                let m = log_moneyness(rs.ctx(), key);
                let value = terms.polynomial(m);
                let point = if m.abs() <= opts.m_max && value > 0.0 && value.is_finite() {
                    IvPoint { vol: value, fallback: false }
                } else {
                    IvPoint { vol: rs.iv_brent(key, hint, opts.brent)?, fallback: true }
                };
                hint = Some(point.vol);
                out.push(point);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parametrization::{BaseParams, RandomTarget, SliceParams};
    use crate::pricing::{BrentOptions, MarketContext};
    use crate::quadrature::DistributionSpec;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn flat_lognormal(nu: f64, n_q: usize, r: f64) -> RandomizedSlice {
        let slice = SliceParams::randomized(
            BaseParams::flat(0.0),
            RandomTarget::Sigma,
            DistributionSpec::LogNormal { mu: 0.2f64.ln() - 0.02, nu },
            n_q,
        );
        RandomizedSlice::new(slice, MarketContext { spot: 100.0, rate: r, t0: 0.0 }).unwrap()
    }

    fn spot_lognormal(nu: f64, sigma: f64) -> RandomizedSlice {
        let slice = SliceParams::randomized(
            BaseParams::flat(sigma),
            RandomTarget::Spot,
            DistributionSpec::SpotLogNormal { s0: 100.0, nu },
            2,
        );
        RandomizedSlice::new(slice, MarketContext { spot: 100.0, rate: 0.01, t0: 0.0 }).unwrap()
    }

    #[test]
    fn single_node_is_exact() {
        let t = parameter_terms(&OptionKey::call(1.0, 100.0), &[1.0], &[0.2], 1.0, 6).unwrap();
        assert_abs_diff_eq!(t.coefficients[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn equal_nodes_collapse() {
        let t = parameter_terms(&OptionKey::call(1.0, 100.0), &[0.5, 0.5], &[0.25, 0.25], 1.3, 6).unwrap();
        assert_abs_diff_eq!(t.coefficients[0], 0.25, epsilon = 1e-14);
        for k in [2, 4, 6] {
            assert_abs_diff_eq!(t.coefficients[k], 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn closed_forms_match_series_solver() {
        // Independent algebraic route: solve f(m, P(m)) = g(m) order by order.
        let weights = [0.2, 0.5, 0.3];
        let etas = [0.12, 0.2, 0.41];
        let tau = 1.7;
        let t = parameter_terms(&OptionKey::call(1.7, 90.0), &weights, &etas, tau, 6).unwrap();
        let st = tau.sqrt();
        let g = series::g_parameter(&weights, &etas, st, 7);
        let p = series::solve_implicit(&g, st, t.coefficients[0]).derivatives();
        for k in 1..=6 {
            assert_abs_diff_eq!(t.coefficients[k], p[k], epsilon = 1e-9 * (1.0 + p[k].abs()));
        }
    }

    #[test]
    fn spot_closed_forms_match_series_solver() {
        let weights = [0.3, 0.45, 0.25];
        let betas = [-0.15, 0.02, 0.11];
        let (eta, tau) = (0.22, 0.4);
        let t = spot_terms(&OptionKey::call(0.4, 100.0), &weights, &betas, eta, tau, 2).unwrap();
        let st = tau.sqrt();
        let g = series::g_spot(&weights, &betas, eta, st, 3);
        let p = series::solve_implicit(&g, st, t.coefficients[0]).derivatives();
        assert_relative_eq!(t.coefficients[1], p[1], max_relative = 1e-9);
        assert_relative_eq!(t.coefficients[2], p[2], max_relative = 1e-9);
    }

    #[test]
    fn spot_without_randomization_is_flat() {
        let t = spot_terms(&OptionKey::call(1.0, 100.0), &[1.0], &[0.0], 0.3, 1.0, 4).unwrap();
        assert_abs_diff_eq!(t.coefficients[0], 0.3, epsilon = 1e-14);
        assert_abs_diff_eq!(t.coefficients[1], 0.0, epsilon = 1e-12);
        if let ExpansionAux::Spot { d_plus, d_minus, .. } = &t.aux {
            assert_abs_diff_eq!(d_plus[0], 0.15, epsilon = 1e-15);
            assert_abs_diff_eq!(d_minus[0], -0.15, epsilon = 1e-15);
        } else {
            panic!("wrong aux kind");
        }
    }

    #[test]
    fn atm_matches_root_finder() {
        let rs = flat_lognormal(0.2, 4, 0.02);
        let f = rs.ctx().forward(2.0);
        let key = OptionKey::call(2.0, f);
        let t = expand(&rs, &key, 0).unwrap();
        let brent = rs.iv_brent(&key, None, BrentOptions::tight()).unwrap();
        assert_abs_diff_eq!(eval_expansion(&t, 0.0).unwrap(), brent, epsilon = 1e-10);

        let rs = spot_lognormal(0.1, 0.2);
        let f = rs.ctx().forward(0.5);
        let key = OptionKey::call(0.5, f);
        let t = expand(&rs, &key, 4).unwrap();
        let brent = rs.iv_brent(&key, None, BrentOptions::tight()).unwrap();
        assert_abs_diff_eq!(eval_expansion(&t, 0.0).unwrap(), brent, epsilon = 1e-10);
    }

    #[test]
    fn unsupported_orders() {
        let rs = flat_lognormal(0.2, 2, 0.0);
        let key = OptionKey::call(1.0, 100.0);
        assert!(matches!(expand(&rs, &key, 3), Err(Error::UnsupportedOrder { .. })));
        assert!(matches!(expand(&rs, &key, 8), Err(Error::UnsupportedOrder { .. })));
        let rs = spot_lognormal(0.1, 0.2);
        assert!(matches!(expand(&rs, &key, 5), Err(Error::UnsupportedOrder { .. })));
        assert!(expand_parameter(&rs, &key, 2).is_err());
    }

    #[test]
    fn parity_of_the_polynomial() {
        let rs = flat_lognormal(0.3, 3, 0.0);
        let t = expand(&rs, &OptionKey::call(1.0, 100.0), 6).unwrap();
        assert_eq!(t.polynomial(0.17), t.polynomial(-0.17));
        assert_eq!(eval_expansion(&t, 0.0).unwrap(), t.coefficients[0]);
        let rs = spot_lognormal(0.15, 0.2);
        let t = expand(&rs, &OptionKey::call(0.5, 100.0), 4).unwrap();
        assert!(t.coefficients[1] != 0.0);
        assert!((t.polynomial(0.1) - t.polynomial(-0.1)).abs() > 1e-6);
    }

    #[test]
    fn guard_rejects_nonpositive() {
        let t = ExpansionTerms::new(
            RandomizationKind::Parameter,
            &OptionKey::call(1.0, 1.0),
            vec![0.1, 0.0, -10.0],
            ExpansionAux::Parameter { sigma0: 0.0, sigma2: 0.0, sigma4: 0.0, eta: vec![], h: vec![], e: vec![] },
        );
        assert!(matches!(eval_expansion(&t, 0.5), Err(Error::ExpansionGuard { .. })));
    }

    #[test]
    fn zero_node_vol_rejected() {
        assert!(parameter_terms(&OptionKey::call(1.0, 1.0), &[0.5, 0.5], &[0.0, 0.2], 1.0, 2).is_err());
    }

    #[test]
    fn terms_serialize() {
        let rs = spot_lognormal(0.1, 0.2);
        let t = expand(&rs, &OptionKey::call(0.5, 100.0), 2).unwrap();
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["kind"], "spot");
        assert_eq!(v["coefficients"].as_array().unwrap().len(), 3);
        assert!(v["aux"]["sigma_tilde"].is_array());
    }

    #[test]
    fn batch_matches_pointwise() {
        let rs = flat_lognormal(0.25, 4, 0.02);
        let keys: Vec<OptionKey> = (0..40).map(|i| OptionKey::call(1.0 + (i % 3) as f64, 70.0 + i as f64)).collect();
        let opts = IvOptions::default();
        let batch = batch_iv(&rs, &keys, IvEngine::Expansion(4), &opts).unwrap();
        for (key, p) in keys.iter().zip(&batch) {
            let single = rs.iv_with(key, IvEngine::Expansion(4), &opts, None).unwrap();
            assert_eq!(p.vol, single.vol);
        }
        let brent = batch_iv(&rs, &keys, IvEngine::RootFind, &opts).unwrap();
        for (key, p) in keys.iter().zip(&brent) {
            assert_abs_diff_eq!(p.vol, rs.iv(key, IvEngine::RootFind).unwrap(), epsilon = 1e-7);
        }
    }

    proptest! {
        #[test]
        fn closed_forms_agree_with_series(
            w in proptest::collection::vec(0.05f64..1.0, 1..5),
            tau in 0.05f64..3.0,
            seed in 0.05f64..0.6,
        ) {
            let total: f64 = w.iter().sum();
            let weights: Vec<f64> = w.iter().map(|x| x / total).collect();
            let etas: Vec<f64> = (0..weights.len()).map(|i| seed * (1.0 + 0.4 * i as f64)).collect();
            let t = parameter_terms(&OptionKey::call(tau, 1.0), &weights, &etas, tau, 6).unwrap();
            let st = tau.sqrt();
            let g = series::g_parameter(&weights, &etas, st, 7);
            let p = series::solve_implicit(&g, st, t.coefficients[0]).derivatives();
            // Both routes cancel terms of size 1/(√T Σ0^(k−1)).
            let s0 = 0.5 * t.coefficients[0] * st;
            for k in [2usize, 4, 6] {
                let scale = (1.0 + p[k].abs()).max(1.0 / (st * s0.powi(k as i32 - 1)));
                prop_assert!((t.coefficients[k] - p[k]).abs() <= 1e-10 * scale, "k={} {} vs {}", k, t.coefficients[k], p[k]);
            }
        }
    }
}
