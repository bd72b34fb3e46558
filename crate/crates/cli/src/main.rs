use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use weakfarima::harness::{
    emit_figure_data, emit_variance_data, error_moments, infer, read_series_csv, returns_pipeline, run_replications,
    size_table, sn_critical_values, ExperimentSpec, InferenceOptions, Method, ReturnsConfig,
};
use weakfarima::inference::OrderChoice;
use weakfarima::lse::{fit, FitOptions, FitResult};
use weakfarima::selfnorm::{quantile_table, QuantileCache, UMcConfig};
use weakfarima::{simulate_farima, FarimaParams, FeasibleRegion, NoiseKind, SimConfig};

#[derive(Parser)]
#[command(
    name = "weakfarima",
    version,
    about = "FARIMA least squares and weak-noise inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a FARIMA(p, d, q) path; writes `t,X,eps`.
    Simulate(SimulateArgs),
    /// Least-squares fit of one CSV column.
    Fit(FitArgs),
    /// Variance estimates and confidence intervals at a saved fit.
    Infer(InferArgs),
    /// Upper quantiles of the self-normalized limit law.
    Quantiles(QuantilesArgs),
    /// Monte Carlo empirical size of the interval methods.
    McSize(McSizeArgs),
    /// Fit and intervals for the squared returns of a price series.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Strong,
    Garch,
    Weak,
}

impl NoiseArg {
    fn kind(self) -> NoiseKind {
        match self {
            NoiseArg::Strong => NoiseKind::Strong,
            NoiseArg::Garch => NoiseKind::SEMI_STRONG,
            NoiseArg::Weak => NoiseKind::WeakProduct,
        }
    }
}

/// Comma-separated list of numbers; empty string means an empty list.
#[derive(Clone, Debug, Default)]
struct List<T>(Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<T>().map_err(|e| format!("{t:?}: {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(List)
    }
}

#[derive(Parser)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0)]
    p: usize,
    #[arg(long, default_value_t = 0)]
    q: usize,
    #[arg(long, allow_hyphen_values = true)]
    d: f64,
    /// AR coefficients a_1..a_p.
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    ar: List<f64>,
    /// MA coefficients b_1..b_q.
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    ma: List<f64>,
    #[arg(long, value_enum, default_value = "strong")]
    noise: NoiseArg,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = SimConfig::DEFAULT_BURN_IN)]
    burn_in: usize,
    /// Truncation of the fractional integration filter; defaults to max(5000, n).
    #[arg(long)]
    ma_trunc: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser)]
struct RegionArgs {
    #[arg(long, default_value_t = 0.01)]
    delta: f64,
    #[arg(long, default_value_t = -0.49, allow_hyphen_values = true)]
    d_lo: f64,
    #[arg(long, default_value_t = 0.49, allow_hyphen_values = true)]
    d_hi: f64,
}

impl RegionArgs {
    fn region(&self) -> Result<FeasibleRegion> {
        Ok(FeasibleRegion::new(self.delta, self.d_lo, self.d_hi)?)
    }
}

#[derive(Parser)]
struct FitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "X")]
    col: String,
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    q: usize,
    #[command(flatten)]
    region: RegionArgs,
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InferMethod {
    Sandwich,
    Standard,
    Both,
    Sn,
    All,
}

impl InferMethod {
    fn methods(self) -> Vec<Method> {
        match self {
            InferMethod::Sandwich => vec![Method::Modified],
            InferMethod::Standard => vec![Method::Standard],
            InferMethod::Both => vec![Method::Standard, Method::Modified],
            InferMethod::Sn => vec![Method::ModifiedSn],
            InferMethod::All => Method::ALL.to_vec(),
        }
    }
}

#[derive(Parser)]
struct McArgs {
    /// Monte Carlo paths for the self-normalized critical values.
    #[arg(long, default_value_t = UMcConfig::default().num_paths)]
    paths: usize,
    #[arg(long, default_value_t = UMcConfig::default().grid_steps)]
    steps: usize,
    #[arg(long = "mc-seed", default_value_t = UMcConfig::default().seed)]
    mc_seed: u64,
    /// Quantile cache directory; defaults to $WEAKFARIMA_CACHE.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

impl McArgs {
    fn config(&self) -> UMcConfig {
        UMcConfig {
            num_paths: self.paths,
            grid_steps: self.steps,
            seed: self.mc_seed,
        }
    }

    fn cache(&self) -> QuantileCache {
        match &self.cache_dir {
            Some(dir) => QuantileCache::new(dir),
            None => QuantileCache::from_env(),
        }
    }
}

#[derive(Parser)]
struct InferArgs {
    /// JSON written by `fit`.
    #[arg(long)]
    fit: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value = "X")]
    col: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// VAR order: `aic` or a fixed integer.
    #[arg(long, default_value = "aic")]
    r: String,
    #[arg(long, value_enum, default_value = "both")]
    method: InferMethod,
    #[command(flatten)]
    mc: McArgs,
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Parser)]
struct QuantilesArgs {
    #[arg(long, default_value_t = 1)]
    m: usize,
    #[arg(long, default_value = "0.01,0.05,0.10")]
    alpha_grid: List<f64>,
    #[arg(long, default_value_t = UMcConfig::default().num_paths)]
    paths: usize,
    #[arg(long, default_value_t = UMcConfig::default().grid_steps)]
    steps: usize,
    #[arg(long, default_value_t = UMcConfig::default().seed)]
    seed: u64,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Design {
    Farima11,
}

#[derive(Parser)]
struct McSizeArgs {
    #[arg(long, value_enum, default_value = "farima11")]
    design: Design,
    /// True `(a, b, d)`.
    #[arg(long, default_value = "-0.7,-0.2,0.4", allow_hyphen_values = true)]
    theta0: List<f64>,
    #[arg(long, value_enum, default_value = "strong")]
    noise: NoiseArg,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Number of replications.
    #[arg(long = "N", default_value_t = 200)]
    replications: usize,
    #[arg(long, default_value = "0.01,0.05,0.10")]
    alphas: List<f64>,
    #[arg(long, default_value = "standard,modified,sn")]
    methods: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SimConfig::DEFAULT_BURN_IN)]
    burn_in: usize,
    #[command(flatten)]
    mc: McArgs,
    /// Size table CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-replication estimation errors.
    #[arg(long)]
    figure_out: Option<PathBuf>,
    /// Per-replication standardized squared errors and variance estimates.
    #[arg(long)]
    variance_out: Option<PathBuf>,
    /// Mean standardized squared errors as JSON.
    #[arg(long)]
    moments_out: Option<PathBuf>,
}

#[derive(Parser)]
struct ReportArgs {
    #[arg(long)]
    prices: PathBuf,
    #[arg(long, default_value = "date")]
    date_col: String,
    #[arg(long, default_value = "price")]
    price_col: String,
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    q: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    region: RegionArgs,
    #[command(flatten)]
    mc: McArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit_cmd(a),
        Command::Infer(a) => infer_cmd(a),
        Command::Quantiles(a) => quantiles(a),
        Command::McSize(a) => mc_size(a),
        Command::Report(a) => report(a),
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut w = output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if a.ar.0.len() != a.p || a.ma.0.len() != a.q {
        bail!(
            "--ar has {} and --ma has {} coefficients but --p {} --q {}",
            a.ar.0.len(),
            a.ma.0.len(),
            a.p,
            a.q
        );
    }
    let theta = FarimaParams::new(a.ar.0, a.ma.0, a.d);
    let mut cfg = SimConfig::new(a.n, a.seed);
    cfg.burn_in = a.burn_in;
    if let Some(m) = a.ma_trunc {
        cfg.ma_trunc = m;
    }
    let path = simulate_farima(&theta, a.noise.kind(), &cfg)?;
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    w.write_record(["t", "X", "eps"])?;
    for (t, (x, e)) in path.x.iter().zip(&path.eps).enumerate() {
        w.write_record([(t + 1).to_string(), x.to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn fit_cmd(a: FitArgs) -> Result<()> {
    let x = read_series_csv(open(&a.input)?, &a.col)?;
    let result = fit(&x, a.p, a.q, &a.region.region()?, &FitOptions::default())?;
    if !result.converged {
        eprintln!(
            "warning: optimizer did not converge after {} iterations (gradient {:e})",
            result.iterations, result.grad_norm
        );
    }
    write_json(&result, a.json_out.as_deref())
}

fn parse_order(s: &str) -> Result<OrderChoice> {
    if s.eq_ignore_ascii_case("aic") {
        return Ok(OrderChoice::default());
    }
    let r: usize = s
        .parse()
        .with_context(|| format!("--r expects `aic` or an integer, got {s:?}"))?;
    Ok(OrderChoice::Fixed(r))
}

fn infer_cmd(a: InferArgs) -> Result<()> {
    let fitted: FitResult = serde_json::from_reader(open(&a.fit)?).context("reading fit JSON")?;
    let x = read_series_csv(open(&a.input)?, &a.col)?;
    let options = InferenceOptions {
        alpha: a.alpha,
        order: parse_order(&a.r)?,
        methods: a.method.methods(),
        sn_mc: a.mc.config(),
    };
    let report = infer(&x, &fitted, &options, Some(&a.mc.cache()))?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_json(&report, a.json_out.as_deref())
}

fn quantiles(a: QuantilesArgs) -> Result<()> {
    let mc = UMcConfig {
        num_paths: a.paths,
        grid_steps: a.steps,
        seed: a.seed,
    };
    let cache = match &a.cache_dir {
        Some(dir) => QuantileCache::new(dir),
        None => QuantileCache::from_env(),
    };
    let draws = cache.draws(a.m, &mc)?;
    write_json(&quantile_table(&draws, &a.alpha_grid.0)?, a.json_out.as_deref())
}

fn mc_size(a: McSizeArgs) -> Result<()> {
    let Design::Farima11 = a.design;
    let [ar, ma, d] = a.theta0.0[..] else {
        bail!("--theta0 expects three values a,b,d");
    };
    let methods = a
        .methods
        .split(',')
        .map(Method::parse)
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let spec = ExperimentSpec {
        theta0: FarimaParams::new(vec![ar], vec![ma], d),
        n: a.n,
        replications: a.replications,
        alphas: a.alphas.0.clone(),
        methods,
        burn_in: a.burn_in,
        sn_mc: a.mc.config(),
        ..ExperimentSpec::farima11(a.noise.kind(), a.seed)
    };
    let records = run_replications(&spec)?;
    let crit = if spec.methods.contains(&Method::ModifiedSn) {
        sn_critical_values(&spec.alphas, &spec.sn_mc, Some(&a.mc.cache()))?
    } else {
        Vec::new()
    };
    let table = size_table(&spec, &records, &crit)?;
    if table.failed > 0 {
        eprintln!(
            "warning: {} of {} replications failed",
            table.failed, table.replications
        );
    }
    let mut w = output(a.out.as_deref())?;
    table.write_csv(&mut w)?;
    w.flush()?;
    if let Some(p) = &a.figure_out {
        emit_figure_data(&spec, &records, output(Some(p))?)?;
    }
    if let Some(p) = &a.variance_out {
        emit_variance_data(&spec, &records, output(Some(p))?)?;
    }
    if let Some(p) = &a.moments_out {
        write_json(&error_moments(&spec, &records), Some(p))?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let config = ReturnsConfig {
        date_col: a.date_col,
        price_col: a.price_col,
        p: a.p,
        q: a.q,
        region: a.region.region()?,
        inference: InferenceOptions {
            alpha: a.alpha,
            sn_mc: a.mc.config(),
            ..ReturnsConfig::default().inference
        },
        ..ReturnsConfig::default()
    };
    let rep = returns_pipeline(open(&a.prices)?, &config, Some(&a.mc.cache()))?;
    if rep.dropped_rows > 0 {
        eprintln!("warning: dropped {} rows with missing values", rep.dropped_rows);
    }
    write_json(&rep, a.out.as_deref())?;
    Ok(())
}
