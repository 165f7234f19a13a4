//! Wall-clock comparison of expansion and root-finding implied volatilities
//! over growing batches of `(T, K)` pairs.

use std::io::Write;
use std::time::Instant;

use serde::Serialize;

use crate::error::Result;
use crate::expansion::batch_iv;
use crate::parametrization::{BaseParams, RandomTarget, SliceParams};
use crate::pricing::{MarketContext, OptionKey};
use crate::quadrature::DistributionSpec;
use crate::randomization::{IvEngine, IvOptions, RandomizedSlice};

pub const BENCH_COUNTS: [usize; 4] = [1_000, 10_000, 50_000, 100_000];
pub const BENCH_ORDERS: [usize; 3] = [2, 4, 6];
/// Expiries the pairs are spread over.
pub const BENCH_EXPIRIES: [f64; 4] = [0.5, 1.0, 1.5, 2.0];
/// Pairs cover `|m| ≤` this.
pub const BENCH_MONEYNESS: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub count: usize,
    pub seconds: f64,
}

/// Flat volatility with a lognormal randomizer, `r = 2%`, four nodes.
pub fn bench_slice() -> Result<RandomizedSlice> {
    let slice = SliceParams::randomized(
        BaseParams::flat(0.2),
        RandomTarget::Sigma,
        DistributionSpec::LogNormal { mu: 0.2f64.ln() - 0.02, nu: 0.2 },
        4,
    );
    RandomizedSlice::new(slice, MarketContext::new(100.0, 0.02)?)
}

/// `count` pairs ordered by expiry, then strike, so neighbours are close.
pub fn bench_keys(ctx: &MarketContext, count: usize) -> Vec<OptionKey> {
    let n_t = BENCH_EXPIRIES.len();
    let mut keys = Vec::with_capacity(count);
    for (i, &t) in BENCH_EXPIRIES.iter().enumerate() {
        let n = count / n_t + usize::from(i < count % n_t);
        let f = ctx.forward(t);
        for j in 0..n {
            let m = if n == 1 { 0.0 } else { BENCH_MONEYNESS * (1.0 - 2.0 * j as f64 / (n - 1) as f64) };
            keys.push(OptionKey::call(t, f * (-m).exp()));
        }
    }
    keys
}

/// Seconds for one batch; the best of `repeats` runs.
pub fn time_batch(rs: &RandomizedSlice, keys: &[OptionKey], engine: IvEngine, repeats: usize) -> Result<f64> {
    let opts = IvOptions::default();
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let out = batch_iv(rs, keys, engine, &opts)?;
        let elapsed = start.elapsed().as_secs_f64();
        std::hint::black_box(out);
        best = best.min(elapsed);
    }
    Ok(best)
}

fn method_name(engine: IvEngine) -> String {
    match engine {
        IvEngine::RootFind => "brent".to_string(),
        IvEngine::Expansion(n) => format!("expansion{n}"),
    }
}

/// Times Brent and every expansion order at every count.
pub fn run_bench(counts: &[usize], orders: &[usize], repeats: usize) -> Result<Vec<BenchRow>> {
    let rs = bench_slice()?;
    let engines: Vec<IvEngine> =
        std::iter::once(IvEngine::RootFind).chain(orders.iter().map(|&n| IvEngine::Expansion(n))).collect();
    let mut rows = Vec::new();
    for engine in engines {
        for &count in counts {
            let keys = bench_keys(rs.ctx(), count);
            rows.push(BenchRow { method: method_name(engine), count, seconds: time_batch(&rs, &keys, engine, repeats)? });
        }
    }
    Ok(rows)
}

/// Writes `method,count,seconds`.
pub fn write_bench_csv(out: impl Write, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_cover_requested_count() {
        let ctx = MarketContext::new(100.0, 0.02).unwrap();
        for count in [1, 5, 1000, 1001] {
            let keys = bench_keys(&ctx, count);
            assert_eq!(keys.len(), count);
            for k in &keys {
                let m = crate::pricing::log_moneyness(&ctx, k);
                assert!(m.abs() <= BENCH_MONEYNESS + 1e-12);
            }
        }
    }

    #[test]
    fn csv_shape() {
        let rows = run_bench(&[10, 20, 30, 40], &BENCH_ORDERS, 1).unwrap();
        assert_eq!(rows.len(), 16);
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("method,count,seconds"));
        assert_eq!(text.lines().count(), 17);
    }
}
