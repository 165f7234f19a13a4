use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use randvol::arbitrage::{
    check_butterfly_slice, check_calendar, interp_total_variance, log_spaced, ArbReport, SliceSet,
};
use randvol::bench::{run_bench, write_bench_csv, BENCH_COUNTS, BENCH_ORDERS};
use randvol::calibration::{fit_all, FitResult};
use randvol::error::Error;
use randvol::io::{load_quotes, read_points, write_residuals, RunConfig, SliceFile};
use randvol::pricing::{BrentOptions, OptionKey, OptionKind};
use randvol::randomization::{IvEngine, IvOptions, RandomizedSlice};

#[derive(Parser)]
#[command(name = "randvol", version, about = "Randomized implied volatility surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate every expiry slice of a quote file.
    Fit(FitArgs),
    /// Mixture prices at a set of points.
    Price(PointArgs),
    /// Implied volatilities at a set of points.
    Iv(IvArgs),
    /// Risk-neutral density of one slice.
    Density(DensityArgs),
    /// Butterfly, bound and calendar checks; exits with 1 on any violation.
    CheckArb(CheckArbArgs),
    /// Total-variance interpolated volatility between slices.
    Interp(InterpArgs),
    /// Time expansion orders against Brent over growing batches.
    Bench(BenchArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Quote CSV: expiry_date,strike,type,iv,open_interest[,trade_date].
    #[arg(long)]
    quotes: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory receiving fits.json, residuals.csv, params.json and arb.json.
    #[arg(long)]
    out_dir: PathBuf,
    /// Overrides the configured engine.
    #[arg(long)]
    engine: Option<IvEngine>,
    /// Overrides the configured number of starts.
    #[arg(long)]
    starts: Option<usize>,
}

#[derive(Args)]
struct PointArgs {
    /// Slice-set JSON as written by `fit`.
    #[arg(long)]
    params: PathBuf,
    /// CSV with `expiry` and `strike` columns and an optional `type` column.
    #[arg(long, conflicts_with = "expiry")]
    points: Option<PathBuf>,
    /// Expiry of a strike grid.
    #[arg(long, required_unless_present = "points")]
    expiry: Option<f64>,
    /// Lowest grid strike; defaults to half the forward.
    #[arg(long)]
    k_min: Option<f64>,
    /// Highest grid strike; defaults to 1.5 times the forward.
    #[arg(long)]
    k_max: Option<f64>,
    /// Number of grid strikes.
    #[arg(long, default_value_t = 101)]
    n: usize,
    /// Option type of grid points.
    #[arg(long = "type", default_value = "C")]
    kind: OptionKind,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IvArgs {
    #[command(flatten)]
    points: PointArgs,
    /// `brent` or `expansion:N`.
    #[arg(long, default_value = "brent")]
    engine: IvEngine,
    /// Relative tolerance of the root finder.
    #[arg(long, default_value_t = 1e-13)]
    tol: f64,
    /// Expansions are used only for |m| up to this.
    #[arg(long, default_value_t = 0.5)]
    m_max: f64,
}

#[derive(Args)]
struct DensityArgs {
    /// Slice-set JSON as written by `fit`.
    #[arg(long)]
    params: PathBuf,
    /// Expiry of the slice.
    #[arg(long)]
    expiry: f64,
    /// Lowest strike; defaults to 0.3 times the forward.
    #[arg(long)]
    k_min: Option<f64>,
    /// Highest strike; defaults to 3 times the forward.
    #[arg(long)]
    k_max: Option<f64>,
    /// Number of grid strikes.
    #[arg(long, default_value_t = 501)]
    n: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArbArgs {
    /// Slice-set JSON as written by `fit`.
    #[arg(long)]
    params: PathBuf,
    /// Strikes per slice, log-spaced over [0.3F, 3F].
    #[arg(long, default_value_t = 201)]
    n: usize,
    /// Engine for the implied volatilities of the calendar check.
    #[arg(long, default_value = "brent")]
    engine: IvEngine,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InterpArgs {
    /// Slice-set JSON as written by `fit`.
    #[arg(long)]
    params: PathBuf,
    /// Expiry in years, within the range of fitted expiries.
    #[arg(long)]
    expiry: f64,
    /// Strike at which the slices are interpolated.
    #[arg(long)]
    strike: f64,
    /// `brent` or `expansion:N`.
    #[arg(long, default_value = "brent")]
    engine: IvEngine,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated batch sizes.
    #[arg(long, value_delimiter = ',', default_values_t = BENCH_COUNTS)]
    counts: Vec<usize>,
    /// Comma-separated expansion orders.
    #[arg(long, value_delimiter = ',', default_values_t = BENCH_ORDERS)]
    orders: Vec<usize>,
    /// Each timing is the best of this many runs.
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load_slices(path: &Path) -> Result<SliceFile> {
    SliceFile::load(path).with_context(|| format!("reading slice file {}", path.display()))
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Points from `--points`, or the strike grid of `--expiry`.
fn resolve_points(args: &PointArgs, file: &SliceFile) -> Result<Vec<OptionKey>> {
    if let Some(path) = &args.points {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        return Ok(read_points(f)?);
    }
    let expiry = args.expiry.expect("clap requires expiry without points");
    let fwd = file.market.forward(expiry);
    let (lo, hi) = (args.k_min.unwrap_or(0.5 * fwd), args.k_max.unwrap_or(1.5 * fwd));
    if !(lo > 0.0 && hi >= lo) || args.n == 0 {
        bail!("grid needs 0 < k-min <= k-max and n >= 1");
    }
    Ok(linspace(lo, hi, args.n).into_iter().map(|k| OptionKey { expiry, strike: k, kind: args.kind }).collect())
}

/// Randomized slices built on first use, one per expiry.
struct SliceCache<'a> {
    file: &'a SliceFile,
    built: Vec<(f64, RandomizedSlice)>,
}

impl<'a> SliceCache<'a> {
    fn new(file: &'a SliceFile) -> Self {
        Self { file, built: Vec::new() }
    }

    fn get(&mut self, expiry: f64) -> Result<&RandomizedSlice> {
        let i = match self.built.iter().position(|(t, _)| *t == expiry) {
            Some(i) => i,
            None => {
                let rs = RandomizedSlice::new(self.file.slice_for(expiry)?.clone(), self.file.market)?;
                self.built.push((expiry, rs));
                self.built.len() - 1
            }
        };
        Ok(&self.built[i].1)
    }
}

fn kind_code(kind: OptionKind) -> &'static str {
    match kind {
        OptionKind::Call => "C",
        OptionKind::Put => "P",
    }
}

fn cmd_fit(args: FitArgs) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(&args.config).with_context(|| format!("reading config {}", args.config.display()))?;
    if let Some(engine) = args.engine {
        cfg.fit.engine = engine;
    }
    if let Some(starts) = args.starts {
        cfg.fit.starts = starts;
    }
    let quotes = load_quotes(&args.quotes, &cfg.market).with_context(|| format!("reading {}", args.quotes.display()))?;
    let mut fits: Vec<FitResult> = Vec::new();
    let mut failed = false;
    for result in fit_all(&quotes, &cfg.fit) {
        match result {
            Ok(fit) => fits.push(fit),
            Err(Error::CalibrationNotConverged { best }) => {
                eprintln!("warning: slice T={} did not converge; keeping best sse {:e}", best.expiry, best.sse);
                failed = true;
                fits.push(*best);
            }
            Err(e) => return Err(e.into()),
        }
    }
    for f in &fits {
        eprintln!("T={:.6} sse={:.3e} mse={:.3e} var={:.4}", f.expiry, f.sse, f.mse, f.randomizer_variance);
    }

    fs::create_dir_all(&args.out_dir)?;
    let dir = &args.out_dir;
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("fits.json"))?), &fits)?;
    write_residuals(BufWriter::new(File::create(dir.join("residuals.csv"))?), &fits)?;
    let slice_file = SliceFile::from_fits(quotes.ctx, &fits);
    slice_file.write(BufWriter::new(File::create(dir.join("params.json"))?))?;

    let report = arb_report(&slice_file, cfg.grid.points, cfg.grid.lo, cfg.grid.hi, cfg.fit.engine)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("arb.json"))?), &report)?;
    if !report.passed {
        eprintln!("warning: fitted surface has arbitrage violations; see arb.json");
    }
    Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

fn cmd_price(args: PointArgs) -> Result<ExitCode> {
    let file = load_slices(&args.params)?;
    let keys = resolve_points(&args, &file)?;
    let mut cache = SliceCache::new(&file);
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "expiry,strike,type,price")?;
    for key in &keys {
        let price = cache.get(key.expiry)?.price(key)?;
        writeln!(out, "{},{},{},{}", key.expiry, key.strike, kind_code(key.kind), price)?;
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_iv(args: IvArgs) -> Result<ExitCode> {
    let file = load_slices(&args.points.params)?;
    let keys = resolve_points(&args.points, &file)?;
    let opts = IvOptions { m_max: args.m_max, brent: BrentOptions { rel_tol: args.tol, ..BrentOptions::default() } };
    let mut out = output(args.points.out.as_deref())?;
    writeln!(out, "expiry,strike,iv")?;
    let mut fallbacks = 0;
    let mut cache = SliceCache::new(&file);
    for key in &keys {
        let rs = cache.get(key.expiry)?;
        // No warm start: the same evaluation path as the calibration objective.
        let point = rs.iv_with(key, args.engine, &opts, None)?;
        fallbacks += usize::from(point.fallback);
        writeln!(out, "{},{},{}", key.expiry, key.strike, point.vol)?;
    }
    out.flush()?;
    if fallbacks > 0 {
        eprintln!("warning: {fallbacks} points left the expansion's validity region and were solved by Brent");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_density(args: DensityArgs) -> Result<ExitCode> {
    let file = load_slices(&args.params)?;
    let rs = RandomizedSlice::new(file.slice_for(args.expiry)?.clone(), file.market)?;
    let fwd = file.market.forward(args.expiry);
    let grid = linspace(args.k_min.unwrap_or(0.3 * fwd), args.k_max.unwrap_or(3.0 * fwd), args.n);
    let curve = rs.density(args.expiry, &grid)?;
    curve.write_csv(output(args.out.as_deref())?)?;
    eprintln!("mass={} mean={} forward={}", curve.mass, curve.mean, fwd);
    Ok(ExitCode::SUCCESS)
}

fn arb_report(file: &SliceFile, n: usize, lo: f64, hi: f64, engine: IvEngine) -> Result<ArbReport> {
    let slices = file.build()?;
    let mut report = ArbReport::new();
    for (t, rs) in &slices {
        let f = file.market.forward(*t);
        report = report.merge(check_butterfly_slice(rs, *t, &log_spaced(lo * f, hi * f, n))?);
    }
    if slices.len() > 1 {
        let set = SliceSet::new(slices, engine)?;
        let s0 = file.market.spot;
        report = report.merge(check_calendar(&set, &log_spaced(lo * s0, hi * s0, n))?);
    }
    Ok(report)
}

fn cmd_check_arb(args: CheckArbArgs) -> Result<ExitCode> {
    let file = load_slices(&args.params)?;
    let report = arb_report(&file, args.n, 0.3, 3.0, args.engine)?;
    let mut out = output(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    writeln!(out)?;
    out.flush()?;
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_interp(args: InterpArgs) -> Result<ExitCode> {
    let file = load_slices(&args.params)?;
    let set = SliceSet::new(file.build()?, args.engine)?;
    println!("{}", interp_total_variance(&set, args.expiry, args.strike)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    let rows = run_bench(&args.counts, &args.orders, args.repeats)?;
    write_bench_csv(output(args.out.as_deref())?, &rows)?;
    Ok(ExitCode::SUCCESS)
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("RANDVOL_THREADS") {
        let n: usize = v.parse().with_context(|| format!("RANDVOL_THREADS=`{v}` is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    init_threads()?;
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Price(a) => cmd_price(a),
        Command::Iv(a) => cmd_iv(a),
        Command::Density(a) => cmd_density(a),
        Command::CheckArb(a) => cmd_check_arb(a),
        Command::Interp(a) => cmd_interp(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
