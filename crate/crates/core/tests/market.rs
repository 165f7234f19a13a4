//! End to end on a synthetic four-expiry index market: quote file on disk,
//! ingestion with liquidity selection, slice-wise fits, arbitrage checks.

use std::io::Write;

use chrono::{Duration, NaiveDate};

use randvol::arbitrage::{check_butterfly_slice, check_calendar, log_spaced, SliceSet};
use randvol::calibration::{fit_all, model_ivs, FitConfig, FitResult};
use randvol::error::Error;
use randvol::io::{load_quotes, Market};
use randvol::parametrization::{BaseParams, RandomTarget, SliceParams};
use randvol::pricing::{BrentOptions, OptionKey, OptionKind};
use randvol::quadrature::DistributionSpec;
use randvol::randomization::{IvEngine, IvOptions, RandomizedSlice};

const DAYS: [i64; 4] = [16, 51, 79, 107];
/// `(α, ρ, k, θ)` per expiry, with β = 0.9.
#[allow(clippy::approx_constant)]
const ROWS: [(f64, f64, f64, f64); 4] =
    [(0.335, -0.7, 1.775, 1.378), (0.319, -0.681, 3.872, 0.455), (0.318, -0.674, 3.032, 0.446), (0.338, -0.687, 4.916, 0.271)];

fn market() -> Market {
    Market { spot: 5500.0, rate: 0.05, trade_date: NaiveDate::from_ymd_opt(2024, 7, 31).unwrap() }
}

fn gamma_sabr_slice(row: (f64, f64, f64, f64)) -> SliceParams {
    let (alpha, rho, k, theta) = row;
    SliceParams::randomized(
        BaseParams::sabr(alpha, 0.9, rho, k * theta),
        RandomTarget::Gamma,
        DistributionSpec::Gamma { k, theta },
        2,
    )
}

/// Both option types at every strike; the out-of-the-money side carries
/// the larger open interest.
fn write_quote_file(path: &std::path::Path) {
    let m = market();
    let ctx = m.context().unwrap();
    let mut out = std::fs::File::create(path).unwrap();
    writeln!(out, "expiry_date,strike,type,iv,open_interest").unwrap();
    let opts = IvOptions { brent: BrentOptions::tight(), ..IvOptions::default() };
    for (days, row) in DAYS.iter().zip(ROWS) {
        let expiry = *days as f64 / 365.0;
        let rs = RandomizedSlice::new(gamma_sabr_slice(row), ctx).unwrap();
        let strikes = log_spaced(0.85 * m.spot, 1.15 * m.spot, 40);
        let keys: Vec<OptionKey> = strikes.iter().map(|&k| OptionKey::call(expiry, k)).collect();
        let ivs = model_ivs(&rs, &keys, IvEngine::RootFind, &opts).unwrap();
        let date = m.trade_date + Duration::days(*days);
        for (key, iv) in keys.iter().zip(ivs) {
            let otm = key.otm(&ctx).kind;
            for kind in [OptionKind::Call, OptionKind::Put] {
                let (code, oi) = (if kind == OptionKind::Call { "C" } else { "P" }, if kind == otm { 900 } else { 40 });
                writeln!(out, "{date},{},{code},{iv},{oi}", key.strike).unwrap();
            }
        }
    }
}

#[test]
fn four_expiry_market_fits_without_arbitrage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("quotes.csv");
    write_quote_file(&path);

    let quotes = load_quotes(&path, &market()).unwrap();
    let expiries = quotes.expiries();
    assert_eq!(expiries, DAYS.map(|d| d as f64 / 365.0).to_vec());
    assert_eq!(quotes.len(), 4 * 40);
    let ctx = quotes.ctx;
    assert!(quotes.quotes.iter().all(|q| q.kind == OptionKey::call(q.expiry, q.strike).otm(&ctx).kind));

    let fits: Vec<FitResult> = fit_all(&quotes, &FitConfig::default())
        .into_iter()
        .map(|r| match r {
            Ok(f) => f,
            Err(Error::CalibrationNotConverged { best }) => *best,
            Err(e) => panic!("{e}"),
        })
        .collect();
    for f in &fits {
        assert!(f.mse < 1e-8, "T = {}: mse {}", f.expiry, f.mse);
        assert_eq!(f.table.beta, Some(0.9));
    }

    let slices: Vec<(f64, RandomizedSlice)> =
        fits.iter().map(|f| (f.expiry, RandomizedSlice::new(f.params.clone(), ctx).unwrap())).collect();
    for (t, rs) in &slices {
        let f = ctx.forward(*t);
        let report = check_butterfly_slice(rs, *t, &log_spaced(0.5 * f, 1.5 * f, 201)).unwrap();
        assert!(report.passed, "T = {t}: {report:?}");
    }
    let set = SliceSet::new(slices, IvEngine::RootFind).unwrap();
    let report = check_calendar(&set, &log_spaced(0.85 * ctx.spot, 1.15 * ctx.spot, 41)).unwrap();
    assert!(report.passed, "{report:?}");
}

#[test]
fn shortest_expiry_slice_is_butterfly_free() {
    let ctx = market().context().unwrap();
    let t = 16.0 / 365.0;
    let rs = RandomizedSlice::new(gamma_sabr_slice(ROWS[0]), ctx).unwrap();
    let f = ctx.forward(t);
    let report = check_butterfly_slice(&rs, t, &log_spaced(0.5 * f, 1.5 * f, 201)).unwrap();
    assert!(report.passed, "{report:?}");
}
