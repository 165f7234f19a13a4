//! Quote files, run configuration and slice-set files.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calibration::{select_liquid, FitConfig, FitResult, Quote, QuoteSet};
use crate::error::{invalid, Error, Result};
use crate::parametrization::SliceParams;
use crate::pricing::{MarketContext, OptionKey, OptionKind};
use crate::randomization::RandomizedSlice;

/// Columns every quote file starts with, in order.
pub const QUOTE_HEADER: [&str; 5] = ["expiry_date", "strike", "type", "iv", "open_interest"];
/// Optional sixth column.
pub const TRADE_DATE_COLUMN: &str = "trade_date";
/// Quotes above this are taken for percentages and rejected.
pub const MAX_IV: f64 = 5.0;

/// Days in the ACT/365 year.
const DAYS_PER_YEAR: f64 = 365.0;

/// Market data shared by a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Market {
    pub spot: f64,
    pub rate: f64,
    pub trade_date: NaiveDate,
}

impl Market {
    /// Pricing context with times measured in years from the trade date.
    pub fn context(&self) -> Result<MarketContext> {
        MarketContext::new(self.spot, self.rate)
    }
}

/// ACT/365 year fraction between two dates.
pub fn year_fraction(from: NaiveDate, to: NaiveDate) -> f64 {
    (to - from).num_days() as f64 / DAYS_PER_YEAR
}

/// One parsed line of a quote file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuoteFileRow {
    pub expiry_date: NaiveDate,
    pub strike: f64,
    pub kind: OptionKind,
    pub iv: f64,
    pub open_interest: u64,
    pub trade_date: Option<NaiveDate>,
}

fn parse_row(record: &csv::StringRecord, with_trade_date: bool, line: usize) -> Result<QuoteFileRow> {
    let bad = |message: String| Error::Parse { line, message };
    let expected = if with_trade_date { 6 } else { 5 };
    if record.len() != expected {
        return Err(bad(format!("expected {expected} fields, found {}", record.len())));
    }
    let date = |i: usize| {
        NaiveDate::parse_from_str(record[i].trim(), "%Y-%m-%d")
            .map_err(|e| bad(format!("{} `{}`: {e}", QUOTE_HEADER.get(i).unwrap_or(&TRADE_DATE_COLUMN), &record[i])))
    };
    let number = |i: usize| -> Result<f64> {
        let v: f64 = record[i].trim().parse().map_err(|_| bad(format!("{} `{}` is not a number", QUOTE_HEADER[i], &record[i])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(bad(format!("{} must be finite", QUOTE_HEADER[i])))
        }
    };
    let row = QuoteFileRow {
        expiry_date: date(0)?,
        strike: number(1)?,
        kind: record[2].trim().parse().map_err(|_| bad(format!("type `{}` is neither C nor P", &record[2])))?,
        iv: number(3)?,
        open_interest: record[4]
            .trim()
            .parse()
            .map_err(|_| bad(format!("open_interest `{}` is not a nonnegative integer", &record[4])))?,
        trade_date: if with_trade_date { Some(date(5)?) } else { None },
    };
    if row.strike <= 0.0 {
        return Err(bad(format!("strike {} must be positive", row.strike)));
    }
    if !(row.iv > 0.0 && row.iv <= MAX_IV) {
        return Err(bad(format!("iv {} outside (0, {MAX_IV}]; quotes are fractions, not percent", row.iv)));
    }
    Ok(row)
}

/// Parses quote CSV from `reader`, converts expiries to ACT/365 year
/// fractions and keeps the most liquid quote per `(T, K)`.
pub fn read_quotes(reader: impl Read, market: &Market) -> Result<QuoteSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let with_trade_date = match names.as_slice() {
        [a, b, c, d, e] if [*a, *b, *c, *d, *e] == QUOTE_HEADER => false,
        [a, b, c, d, e, f] if [*a, *b, *c, *d, *e] == QUOTE_HEADER && *f == TRADE_DATE_COLUMN => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("header must be `{}` with optional `{TRADE_DATE_COLUMN}`", QUOTE_HEADER.join(",")),
            })
        }
    };
    let ctx = market.context()?;
    let mut quotes = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = parse_row(&record, with_trade_date, line)?;
        let trade = row.trade_date.unwrap_or(market.trade_date);
        if row.expiry_date <= trade {
            return Err(Error::Parse { line, message: format!("expiry {} is not after trade date {trade}", row.expiry_date) });
        }
        quotes.push(Quote {
            expiry: year_fraction(trade, row.expiry_date),
            strike: row.strike,
            iv: row.iv,
            kind: row.kind,
            open_interest: row.open_interest,
        });
    }
    if quotes.is_empty() {
        return Err(invalid("quote file contains no quotes"));
    }
    Ok(select_liquid(&QuoteSet::new(quotes, ctx)?))
}

/// Reads a quote file; see [`read_quotes`].
pub fn load_quotes(path: impl AsRef<Path>, market: &Market) -> Result<QuoteSet> {
    read_quotes(File::open(path)?, market)
}

/// Strike grid, as multiples of the forward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub points: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { points: 201, lo: 0.3, hi: 3.0 }
    }
}

/// Settings of a `fit` run, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub market: Market,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub grid: GridConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.market.context()?;
        let g = &self.grid;
        if !(g.lo > 0.0 && g.hi > g.lo && g.hi.is_finite()) || g.points < 2 {
            return Err(invalid("grid needs 0 < lo < hi and at least two points"));
        }
        if self.fit.fixed.values().any(|v| !v.is_finite()) || !self.fit.iv_tolerance.is_finite() {
            return Err(invalid("fit settings must be finite"));
        }
        if self.fit.n_q == 0 {
            return Err(invalid("n_q must be at least 1"));
        }
        Ok(())
    }
}

/// Parameters of one expiry slice in a slice-set file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceEntry {
    pub expiry: f64,
    pub params: SliceParams,
}

/// A market and its calibrated slices, as exchanged between commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceFile {
    pub market: MarketContext,
    pub slices: Vec<SliceEntry>,
}

impl SliceFile {
    pub fn from_fits(market: MarketContext, fits: &[FitResult]) -> Self {
        Self { market, slices: fits.iter().map(|f| SliceEntry { expiry: f.expiry, params: f.params.clone() }).collect() }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: Self = serde_json::from_str(text)?;
        file.market.validate()?;
        if file.slices.is_empty() {
            return Err(invalid("slice file has no slices"));
        }
        for s in &file.slices {
            s.params.validate()?;
        }
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, out: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Randomized slices with their expiries.
    pub fn build(&self) -> Result<Vec<(f64, RandomizedSlice)>> {
        self.slices.iter().map(|s| Ok((s.expiry, RandomizedSlice::new(s.params.clone(), self.market)?))).collect()
    }

    /// The slice for `expiry`: an exact match, or the only slice of a
    /// single-slice file.
    pub fn slice_for(&self, expiry: f64) -> Result<&SliceParams> {
        if let [only] = self.slices.as_slice() {
            return Ok(&only.params);
        }
        self.slices
            .iter()
            .find(|s| s.expiry == expiry)
            .map(|s| &s.params)
            .ok_or_else(|| invalid(format!("no slice with expiry {expiry}")))
    }
}

/// Reads evaluation points from CSV with `expiry` and `strike` columns and
/// an optional `type` column (calls by default). Other columns are ignored,
/// so a residuals file can be read back as points.
pub fn read_points(reader: impl Read) -> Result<Vec<OptionKey>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let column = |name: &str| header.iter().position(|h| h.trim() == name);
    let (Some(ti), Some(ki)) = (column("expiry"), column("strike")) else {
        return Err(Error::Parse { line: 1, message: "points need `expiry` and `strike` columns".into() });
    };
    let kind_col = column("type");
    let mut keys = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let number = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| Error::Parse { line, message: format!("`{}` is not a number", field(i)) })
        };
        let kind = match kind_col {
            Some(i) => field(i).parse().map_err(|e: Error| Error::Parse { line, message: e.to_string() })?,
            None => OptionKind::Call,
        };
        keys.push(OptionKey { expiry: number(ti)?, strike: number(ki)?, kind });
    }
    Ok(keys)
}

/// Writes residuals of several fits as
/// `expiry,strike,type,market_iv,model_iv,residual`.
pub fn write_residuals(out: impl Write, fits: &[FitResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["expiry", "strike", "type", "market_iv", "model_iv", "residual"])?;
    for f in fits {
        for r in &f.residuals {
            let kind = match r.kind {
                OptionKind::Call => "C",
                OptionKind::Put => "P",
            };
            w.write_record([
                f.expiry.to_string(),
                r.strike.to_string(),
                kind.to_string(),
                r.market_iv.to_string(),
                r.model_iv.to_string(),
                r.residual.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn market() -> Market {
        Market { spot: 100.0, rate: 0.01, trade_date: NaiveDate::from_ymd_opt(2024, 1, 2).unwrap() }
    }

    #[test]
    fn act_365() {
        let d = |m, day| NaiveDate::from_ymd_opt(2024, m, day).unwrap();
        assert_eq!(year_fraction(d(1, 2), d(1, 18)), 16.0 / 365.0);
        // 2024 is a leap year; the convention ignores it.
        assert_eq!(year_fraction(d(1, 1), d(12, 31)), 365.0 / 365.0);
    }

    #[test]
    fn rejects_bad_rows_with_line_numbers() {
        let text = "expiry_date,strike,type,iv,open_interest\n2024-02-01,100,C,0.2,5\n2024-02-01,105,C,0,5\n";
        match read_quotes(text.as_bytes(), &market()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let text = "expiry_date,strike,type,iv,open_interest\n2024-02-01,100,C,20,5\n";
        assert!(matches!(read_quotes(text.as_bytes(), &market()), Err(Error::Parse { line: 2, .. })));
        let text = "expiry_date,strike,type,iv,open_interest\n2023-12-01,100,C,0.2,5\n";
        assert!(matches!(read_quotes(text.as_bytes(), &market()), Err(Error::Parse { line: 2, .. })));
        let text = "expiry,strike,type,iv,open_interest\n";
        assert!(matches!(read_quotes(text.as_bytes(), &market()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(read_quotes("expiry_date,strike,type,iv,open_interest\n".as_bytes(), &market()).is_err());
        assert!(read_quotes("".as_bytes(), &market()).is_err());
    }

    #[test]
    fn trade_date_column_overrides_market() {
        let text = "expiry_date,strike,type,iv,open_interest,trade_date\n2024-02-01,100,C,0.2,5,2024-01-31\n";
        let q = read_quotes(text.as_bytes(), &market()).unwrap();
        assert_eq!(q.quotes[0].expiry, 1.0 / 365.0);
    }

    #[test]
    fn run_config_from_toml() {
        let cfg = RunConfig::from_toml(
            "[market]\nspot = 100.0\nrate = 0.02\ntrade_date = \"2024-01-02\"\n[fit]\nrandomizer = \"spot-lognormal\"\n",
        )
        .unwrap();
        assert_eq!(cfg.fit.randomizer, crate::calibration::RandomizerKind::SpotLognormal);
        assert_eq!(cfg.grid.points, 201);
        assert!(RunConfig::from_toml("[market]\nspot = -1.0\nrate = 0.0\ntrade_date = \"2024-01-02\"\n").is_err());
    }

    #[test]
    fn points_from_residual_columns() {
        let text = "expiry,strike,type,market_iv\n0.5,90,P,0.2\n1,110,C,0.3\n";
        let keys = read_points(text.as_bytes()).unwrap();
        assert_eq!(keys, vec![OptionKey::put(0.5, 90.0), OptionKey::call(1.0, 110.0)]);
        assert_eq!(read_points("expiry,strike\n0.5,100\n".as_bytes()).unwrap(), vec![OptionKey::call(0.5, 100.0)]);
        assert!(matches!(read_points("expiry,strike\n0.5,x\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn slice_file_round_trip() {
        use crate::parametrization::{BaseParams, RandomTarget};
        use crate::quadrature::DistributionSpec;
        let file = SliceFile {
            market: MarketContext::new(100.0, 0.01).unwrap(),
            slices: vec![SliceEntry {
                expiry: 0.1 + 0.2,
                params: SliceParams::randomized(
                    BaseParams::sabr(0.25, 0.9, -0.135, 1.5),
                    RandomTarget::Gamma,
                    DistributionSpec::Gamma { k: 3.0, theta: 0.5 },
                    2,
                ),
            }],
        };
        let mut buf = Vec::new();
        file.write(&mut buf).unwrap();
        let back = SliceFile::from_json(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.build().unwrap().len(), 1);
    }
}
