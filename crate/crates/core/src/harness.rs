//! Monte Carlo experiments, interval reports and the price-series pipeline.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FarimaError, Result};
use crate::inference::{ci_wald, h_process, normal_quantile, sandwich, Interval, OrderChoice};
use crate::lse::{fit, FitOptions, FitResult};
use crate::model::{residuals_with_grad, FarimaParams, FeasibleRegion};
use crate::rng::derive_seed;
use crate::selfnorm::{p_hat, simulate_u_draws, sn_cis, QuantileCache, UDraws, UMcConfig};
use crate::simulate::{simulate_farima, NoiseKind, SimConfig};

/// Interval construction compared in the size experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Wald interval from `2 sigma^2 J^{-1}`.
    Standard,
    /// Wald interval from the sandwich `J^{-1} I J^{-1}`.
    Modified,
    /// Self-normalized interval.
    ModifiedSn,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Standard, Method::Modified, Method::ModifiedSn];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Standard => "standard",
            Method::Modified => "modified",
            Method::ModifiedSn => "modified_sn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "standard" => Ok(Method::Standard),
            "modified" | "sandwich" => Ok(Method::Modified),
            "sn" | "modified_sn" | "modified-sn" => Ok(Method::ModifiedSn),
            other => Err(FarimaError::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub theta0: FarimaParams,
    pub noise: NoiseKind,
    pub n: usize,
    pub replications: usize,
    pub alphas: Vec<f64>,
    pub methods: Vec<Method>,
    pub base_seed: u64,
    pub burn_in: usize,
    pub region: FeasibleRegion,
    pub fit_options: FitOptions,
    pub order: OrderChoice,
    pub sn_mc: UMcConfig,
}

impl ExperimentSpec {
    /// FARIMA(1, d, 1) design `(a, b, d) = (-0.7, -0.2, 0.4)` with the
    /// desk-scale defaults: n = 2000, N = 200, levels 1%, 5%, 10%.
    pub fn farima11(noise: NoiseKind, base_seed: u64) -> Self {
        Self {
            theta0: FarimaParams::new(vec![-0.7], vec![-0.2], 0.4),
            noise,
            n: 2000,
            replications: 200,
            alphas: vec![0.01, 0.05, 0.10],
            methods: Method::ALL.to_vec(),
            base_seed,
            burn_in: SimConfig::DEFAULT_BURN_IN,
            region: FeasibleRegion::default(),
            fit_options: FitOptions::default(),
            order: OrderChoice::default(),
            sn_mc: UMcConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(FarimaError::InvalidArgument("need at least one replication".into()));
        }
        if self.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(FarimaError::InvalidArgument("levels must lie in (0, 1)".into()));
        }
        self.noise.validate()
    }

    fn sim_config(&self, r: usize) -> SimConfig {
        SimConfig {
            burn_in: self.burn_in,
            ..SimConfig::new(self.n, derive_seed(self.base_seed, r as u64))
        }
    }
}

/// Estimate and variance ingredients of one successful replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFit {
    pub theta_hat: Vec<f64>,
    pub sigma2_hat: f64,
    /// Diagonal of `2 sigma^2 J^{-1}`.
    pub omega_standard: Vec<f64>,
    /// Diagonal of `J^{-1} I J^{-1}`.
    pub omega_sandwich: Vec<f64>,
    /// Diagonal of the self-normalizer `P`.
    pub p_diag: Option<Vec<f64>>,
    pub r_selected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub seed: u64,
    pub outcome: std::result::Result<ReplicationFit, String>,
}

/// Simulates, fits and builds variance estimates for replication `r`.
pub fn run_replication(spec: &ExperimentSpec, r: usize) -> ReplicationRecord {
    let cfg = spec.sim_config(r);
    let outcome = replicate(spec, &cfg).map_err(|e| e.to_string());
    ReplicationRecord {
        index: r,
        seed: cfg.seed,
        outcome,
    }
}

fn replicate(spec: &ExperimentSpec, cfg: &SimConfig) -> Result<ReplicationFit> {
    let path = simulate_farima(&spec.theta0, spec.noise, cfg)?;
    let (p, q) = (spec.theta0.p(), spec.theta0.q());
    let fitted = fit(&path.x, p, q, &spec.region, &spec.fit_options)?;
    if !fitted.converged {
        return Err(FarimaError::Degenerate(format!(
            "optimizer stopped after {} iterations with gradient {:e}",
            fitted.iterations, fitted.grad_norm
        )));
    }
    let res = residuals_with_grad(&fitted.theta_hat, &path.x);
    let sw = sandwich(&res, fitted.sigma2_hat, spec.order)?;
    let p_diag = if spec.methods.contains(&Method::ModifiedSn) {
        let pm = p_hat(&h_process(&res), &sw.j_hat)?;
        Some(pm.p_hat.diagonal().iter().copied().collect())
    } else {
        None
    };
    Ok(ReplicationFit {
        theta_hat: fitted.theta_hat.to_vec(),
        sigma2_hat: fitted.sigma2_hat,
        omega_standard: sw.omega_standard.diagonal().iter().copied().collect(),
        omega_sandwich: sw.omega_hat.diagonal().iter().copied().collect(),
        p_diag,
        r_selected: sw.r_selected,
    })
}

/// All replications of an experiment, in index order.
pub fn run_replications(spec: &ExperimentSpec) -> Result<Vec<ReplicationRecord>> {
    spec.validate()?;
    Ok((0..spec.replications)
        .into_par_iter()
        .map(|r| run_replication(spec, r))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeEntry {
    pub method: Method,
    pub param: String,
    pub alpha: f64,
    pub rejections: usize,
    pub valid: usize,
    pub frequency: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

impl SizeEntry {
    pub fn inside_band(&self) -> bool {
        self.band_lo <= self.frequency && self.frequency <= self.band_hi
    }
}

/// Empirical rejection frequencies of `theta0` by each interval method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeTable {
    pub n: usize,
    pub replications: usize,
    /// Replications excluded from every denominator.
    pub failed: usize,
    pub entries: Vec<SizeEntry>,
}

impl SizeTable {
    pub fn get(&self, method: Method, param: &str, alpha: f64) -> Option<&SizeEntry> {
        self.entries
            .iter()
            .find(|e| e.method == method && e.param == param && (e.alpha - alpha).abs() < 1e-12)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "method",
            "param",
            "alpha",
            "rejections",
            "valid",
            "failed",
            "frequency",
            "band_lo",
            "band_hi",
        ])?;
        for e in &self.entries {
            out.write_record([
                e.method.label().to_string(),
                e.param.clone(),
                format!("{}", e.alpha),
                e.rejections.to_string(),
                e.valid.to_string(),
                self.failed.to_string(),
                format!("{:.6}", e.frequency),
                format!("{:.6}", e.band_lo),
                format!("{:.6}", e.band_hi),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `alpha +- 1.96 sqrt(alpha (1 - alpha) / N)`.
pub fn binomial_band(alpha: f64, replications: usize) -> (f64, f64) {
    let half = 1.96 * (alpha * (1.0 - alpha) / replications as f64).sqrt();
    (alpha - half, alpha + half)
}

/// Upper critical values of `U_1` for each level.
pub fn sn_critical_values(alphas: &[f64], mc: &UMcConfig, cache: Option<&QuantileCache>) -> Result<Vec<f64>> {
    let draws: UDraws = match cache {
        Some(c) => c.draws(1, mc)?,
        None => simulate_u_draws(1, mc)?,
    };
    alphas.iter().map(|&a| draws.upper_quantile(a)).collect()
}

/// Aggregates replication records into a size table.
pub fn size_table(spec: &ExperimentSpec, records: &[ReplicationRecord], sn_critical: &[f64]) -> Result<SizeTable> {
    let names = FarimaParams::names(spec.theta0.p(), spec.theta0.q());
    let truth = spec.theta0.to_vec();
    let fits: Vec<&ReplicationFit> = records.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let failed = records.len() - fits.len();
    let mut methods = spec.methods.clone();
    methods.sort();
    methods.dedup();

    let mut entries = Vec::new();
    for &method in &methods {
        for (i, name) in names.iter().enumerate() {
            for (ai, &alpha) in spec.alphas.iter().enumerate() {
                let z = normal_quantile(alpha)?;
                let mut rejections = 0;
                for f in &fits {
                    let half = match method {
                        Method::Standard => z * (f.omega_standard[i].max(0.0) / spec.n as f64).sqrt(),
                        Method::Modified => z * (f.omega_sandwich[i].max(0.0) / spec.n as f64).sqrt(),
                        Method::ModifiedSn => {
                            let w = f.p_diag.as_ref().ok_or_else(|| {
                                FarimaError::InvalidArgument("replications lack SN ingredients".into())
                            })?[i];
                            let crit = *sn_critical
                                .get(ai)
                                .ok_or_else(|| FarimaError::InvalidArgument("missing SN critical value".into()))?;
                            (crit * w / spec.n as f64).sqrt()
                        }
                    };
                    if !Interval::centered(f.theta_hat[i], half).contains(truth[i]) {
                        rejections += 1;
                    }
                }
                let valid = fits.len();
                let (band_lo, band_hi) = binomial_band(alpha, spec.replications);
                entries.push(SizeEntry {
                    method,
                    param: name.clone(),
                    alpha,
                    rejections,
                    valid,
                    frequency: if valid > 0 {
                        rejections as f64 / valid as f64
                    } else {
                        0.0
                    },
                    band_lo,
                    band_hi,
                });
            }
        }
    }
    Ok(SizeTable {
        n: spec.n,
        replications: spec.replications,
        failed,
        entries,
    })
}

/// Runs the replications and tabulates empirical sizes.
pub fn run_size_experiment(spec: &ExperimentSpec, cache: Option<&QuantileCache>) -> Result<SizeTable> {
    let records = run_replications(spec)?;
    let crit = if spec.methods.contains(&Method::ModifiedSn) {
        sn_critical_values(&spec.alphas, &spec.sn_mc, cache)?
    } else {
        Vec::new()
    };
    size_table(spec, &records, &crit)
}

/// Means over successful replications of `n (theta_hat_i - theta0_i)^2` and of
/// the two variance estimates of the same quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMoments {
    pub params: Vec<String>,
    pub mean_sq_error: Vec<f64>,
    pub mean_omega_standard: Vec<f64>,
    pub mean_omega_sandwich: Vec<f64>,
    pub valid: usize,
    pub failed: usize,
}

pub fn error_moments(spec: &ExperimentSpec, records: &[ReplicationRecord]) -> ErrorMoments {
    let k = spec.theta0.dim();
    let truth = spec.theta0.to_vec();
    let fits: Vec<&ReplicationFit> = records.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let valid = fits.len();
    let mean = |f: &dyn Fn(&ReplicationFit, usize) -> f64| -> Vec<f64> {
        (0..k)
            .map(|i| fits.iter().map(|r| f(r, i)).sum::<f64>() / valid.max(1) as f64)
            .collect()
    };
    let n = spec.n as f64;
    ErrorMoments {
        params: FarimaParams::names(spec.theta0.p(), spec.theta0.q()),
        mean_sq_error: mean(&|r, i| n * (r.theta_hat[i] - truth[i]).powi(2)),
        mean_omega_standard: mean(&|r, i| r.omega_standard[i]),
        mean_omega_sandwich: mean(&|r, i| r.omega_sandwich[i]),
        valid,
        failed: records.len() - valid,
    }
}

pub fn run_error_moments(spec: &ExperimentSpec) -> Result<ErrorMoments> {
    Ok(error_moments(spec, &run_replications(spec)?))
}

/// Writes `replication,noise_kind,param,error` rows, one per successful
/// replication and parameter.
pub fn emit_figure_data<W: Write>(spec: &ExperimentSpec, records: &[ReplicationRecord], w: W) -> Result<()> {
    let names = FarimaParams::names(spec.theta0.p(), spec.theta0.q());
    let truth = spec.theta0.to_vec();
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["replication", "noise_kind", "param", "error"])?;
    for rec in records {
        if let Ok(f) = &rec.outcome {
            for (i, name) in names.iter().enumerate() {
                out.write_record([
                    rec.index.to_string(),
                    spec.noise.label().to_string(),
                    name.clone(),
                    format!("{}", f.theta_hat[i] - truth[i]),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes per-replication standardized squared errors next to both variance
/// estimates: `replication,noise_kind,param,sq_error,omega_standard,omega_sandwich`.
pub fn emit_variance_data<W: Write>(spec: &ExperimentSpec, records: &[ReplicationRecord], w: W) -> Result<()> {
    let names = FarimaParams::names(spec.theta0.p(), spec.theta0.q());
    let truth = spec.theta0.to_vec();
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "replication",
        "noise_kind",
        "param",
        "sq_error",
        "omega_standard",
        "omega_sandwich",
    ])?;
    for rec in records {
        if let Ok(f) = &rec.outcome {
            for (i, name) in names.iter().enumerate() {
                out.write_record([
                    rec.index.to_string(),
                    spec.noise.label().to_string(),
                    name.clone(),
                    format!("{}", spec.n as f64 * (f.theta_hat[i] - truth[i]).powi(2)),
                    format!("{}", f.omega_standard[i]),
                    format!("{}", f.omega_sandwich[i]),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads one numeric column from a headed CSV; every row must parse.
pub fn read_series_csv<R: Read>(reader: R, column: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let idx = column_index(rdr.headers()?, column)?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(idx).unwrap_or("").trim();
        let v: f64 = field.parse().map_err(|_| {
            FarimaError::InvalidArgument(format!("row {}: cannot parse {field:?} in column {column:?}", row + 1))
        })?;
        out.push(v);
    }
    Ok(out)
}

fn column_index(headers: &csv::StringRecord, column: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == column)
        .ok_or_else(|| FarimaError::InvalidArgument(format!("no column named {column:?}")))
}

pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamIntervals {
    pub name: String,
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standard: Option<Interval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modified: Option<Interval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modified_sn: Option<Interval>,
}

/// Everything inference produces for one fitted sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub n: usize,
    pub alpha: f64,
    pub theta_hat: FarimaParams,
    pub sigma2_hat: f64,
    pub j_hat: Vec<Vec<f64>>,
    pub i_hat: Vec<Vec<f64>>,
    pub omega_hat: Vec<Vec<f64>>,
    pub omega_standard: Vec<Vec<f64>>,
    pub r_selected: usize,
    pub aic_trace: Vec<Option<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_hat: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sn_critical: Option<f64>,
    pub parameters: Vec<ParamIntervals>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceOptions {
    pub alpha: f64,
    pub order: OrderChoice,
    pub methods: Vec<Method>,
    pub sn_mc: UMcConfig,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            order: OrderChoice::default(),
            methods: Method::ALL.to_vec(),
            sn_mc: UMcConfig::default(),
        }
    }
}

/// Sandwich, standard and self-normalized intervals at a fitted estimate.
pub fn infer(
    x: &[f64],
    fitted: &FitResult,
    options: &InferenceOptions,
    cache: Option<&QuantileCache>,
) -> Result<InferenceReport> {
    let theta = &fitted.theta_hat;
    if x.len() != fitted.n {
        return Err(FarimaError::InvalidArgument(format!(
            "fit was computed on {} observations but the data have {}",
            fitted.n,
            x.len()
        )));
    }
    let res = residuals_with_grad(theta, x);
    let sw = sandwich(&res, fitted.sigma2_hat, options.order)?;
    let th = theta.to_vec();
    let n = x.len();
    let standard = options
        .methods
        .contains(&Method::Standard)
        .then(|| ci_wald(&th, &sw.omega_standard, n, options.alpha))
        .transpose()?;
    let modified = options
        .methods
        .contains(&Method::Modified)
        .then(|| ci_wald(&th, &sw.omega_hat, n, options.alpha))
        .transpose()?;
    let (sn, p_rows, crit) = if options.methods.contains(&Method::ModifiedSn) {
        let pm = p_hat(&h_process(&res), &sw.j_hat)?;
        let crit = sn_critical_values(&[options.alpha], &options.sn_mc, cache)?[0];
        (Some(sn_cis(&th, &pm, crit)?), Some(matrix_rows(&pm.p_hat)), Some(crit))
    } else {
        (None, None, None)
    };
    let parameters = FarimaParams::names(theta.p(), theta.q())
        .into_iter()
        .enumerate()
        .map(|(i, name)| ParamIntervals {
            name,
            estimate: th[i],
            standard: standard.as_ref().map(|v| v[i]),
            modified: modified.as_ref().map(|v| v[i]),
            modified_sn: sn.as_ref().map(|v| v[i]),
        })
        .collect();
    Ok(InferenceReport {
        n,
        alpha: options.alpha,
        theta_hat: theta.clone(),
        sigma2_hat: fitted.sigma2_hat,
        j_hat: matrix_rows(&sw.j_hat),
        i_hat: matrix_rows(&sw.i_hat),
        omega_hat: matrix_rows(&sw.omega_hat),
        omega_standard: matrix_rows(&sw.omega_standard),
        r_selected: sw.r_selected,
        aic_trace: sw.aic_trace,
        p_hat: p_rows,
        sn_critical: crit,
        parameters,
        warnings: sw.warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnsConfig {
    pub date_col: String,
    pub price_col: String,
    pub p: usize,
    pub q: usize,
    pub region: FeasibleRegion,
    pub fit_options: FitOptions,
    pub inference: InferenceOptions,
}

impl Default for ReturnsConfig {
    fn default() -> Self {
        Self {
            date_col: "date".into(),
            price_col: "price".into(),
            p: 1,
            q: 1,
            region: FeasibleRegion::default(),
            fit_options: FitOptions::default(),
            inference: InferenceOptions {
                methods: vec![Method::Modified, Method::ModifiedSn],
                ..InferenceOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnsReport {
    pub n_prices: usize,
    pub dropped_rows: usize,
    pub first_date: String,
    pub last_date: String,
    /// Mean of the squared log returns, subtracted before fitting.
    pub mean_squared_return: f64,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub inference: InferenceReport,
}

/// Log returns of a price series, squared and mean-corrected.
pub fn mean_corrected_squared_returns(prices: &[f64]) -> Result<(Vec<f64>, f64)> {
    if let Some((row, &price)) = prices.iter().enumerate().find(|(_, p)| p.is_nan() || **p <= 0.0) {
        return Err(FarimaError::NonPositivePrice { row: row + 1, price });
    }
    if prices.len() < 2 {
        return Err(FarimaError::Degenerate("need at least two prices".into()));
    }
    let sq: Vec<f64> = prices.windows(2).map(|w| (w[1] / w[0]).ln().powi(2)).collect();
    let mean = sq.iter().sum::<f64>() / sq.len() as f64;
    let centred: Vec<f64> = sq.iter().map(|v| v - mean).collect();
    let var = centred.iter().map(|v| v * v).sum::<f64>() / centred.len() as f64;
    if var.is_nan() || var <= 0.0 {
        return Err(FarimaError::Degenerate("squared returns have zero variance".into()));
    }
    Ok((centred, mean))
}

/// Reads `date,price` rows, fits a FARIMA model to the mean-corrected squared
/// log returns and reports sandwich and self-normalized intervals.
pub fn returns_pipeline<R: Read>(
    prices_csv: R,
    config: &ReturnsConfig,
    cache: Option<&QuantileCache>,
) -> Result<ReturnsReport> {
    let mut rdr = csv::Reader::from_reader(prices_csv);
    let headers = rdr.headers()?.clone();
    let date_idx = column_index(&headers, &config.date_col)?;
    let price_idx = column_index(&headers, &config.price_col)?;
    let mut dates = Vec::new();
    let mut prices = Vec::new();
    let mut dropped = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let date = rec.get(date_idx).unwrap_or("").trim();
        let field = rec.get(price_idx).unwrap_or("").trim();
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() && !date.is_empty() => {
                if v <= 0.0 {
                    return Err(FarimaError::NonPositivePrice { row: row + 1, price: v });
                }
                dates.push(date.to_string());
                prices.push(v);
            }
            _ => dropped += 1,
        }
    }
    let (x, mean) = mean_corrected_squared_returns(&prices)?;
    let fitted = fit(&x, config.p, config.q, &config.region, &config.fit_options)?;
    let inference = infer(&x, &fitted, &config.inference, cache)?;
    Ok(ReturnsReport {
        n_prices: prices.len(),
        dropped_rows: dropped,
        first_date: dates.first().cloned().unwrap_or_default(),
        last_date: dates.last().cloned().unwrap_or_default(),
        mean_squared_return: mean,
        converged: fitted.converged,
        iterations: fitted.iterations,
        grad_norm: fitted.grad_norm,
        inference,
    })
}
