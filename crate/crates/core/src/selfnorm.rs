//! Self-normalized inference.
//!
//! The normalizer is built from partial sums of the centred scores
//! `U_t = -J^{-1} H_t`; its limit law only involves Brownian motion, so
//! critical values come from simulating
//! `U_m = B(1)' V^{-1} B(1)`, `V = int_0^1 (B(r) - r B(1))(B(r) - r B(1))' dr`.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FarimaError, Result};
use crate::inference::{HProcess, Interval};
use crate::linalg::{inverse_with_condition, min_symmetric_eigenvalue};
use crate::rng::{derive_seed, rng_from_seed};

/// Environment variable naming the on-disk quantile cache directory.
pub const CACHE_ENV: &str = "WEAKFARIMA_CACHE";

/// `P = (1/n^2) sum_t S_t S_t'` with `S_t` the partial sums of the demeaned scores.
#[derive(Debug, Clone, PartialEq)]
pub struct SNMatrix {
    pub p_hat: DMatrix<f64>,
    pub u_bar: DVector<f64>,
    pub n: usize,
}

/// Builds the normalizer from the score process and `J`.
///
/// Refuses samples with fewer than `10 k^2` observations, `k` the parameter
/// dimension.
pub fn p_hat(h: &HProcess, j_hat: &DMatrix<f64>) -> Result<SNMatrix> {
    let (n, k) = (h.n(), h.dim());
    let min = 10 * k * k;
    if n < min {
        return Err(FarimaError::SampleTooSmall { n, min });
    }
    let (j_inv, _) = inverse_with_condition(j_hat, "J")?;
    let u = -(h.rows() * j_inv.transpose());
    Ok(sn_matrix_from_scores(&u))
}

/// Normalizer from explicit scores, one row per time point.
pub fn sn_matrix_from_scores(u: &DMatrix<f64>) -> SNMatrix {
    let (n, k) = (u.nrows(), u.ncols());
    let u_bar: DVector<f64> = if n > 0 {
        u.row_mean().transpose()
    } else {
        DVector::zeros(k)
    };
    let mut partial = DVector::<f64>::zeros(k);
    let mut acc = DMatrix::<f64>::zeros(k, k);
    for t in 0..n {
        for c in 0..k {
            partial[c] += u[(t, c)] - u_bar[c];
        }
        acc.syger(1.0, &partial, &partial, 1.0);
    }
    acc.fill_upper_triangle_with_lower_triangle();
    let nf = (n.max(1) as f64).powi(2);
    SNMatrix {
        p_hat: acc / nf,
        u_bar,
        n,
    }
}

/// `n (theta_hat - theta0)' P^{-1} (theta_hat - theta0)`.
pub fn sn_statistic(theta_hat: &[f64], theta0: &[f64], p: &SNMatrix) -> Result<f64> {
    let k = p.p_hat.nrows();
    if theta_hat.len() != k || theta0.len() != k {
        return Err(FarimaError::InvalidArgument(
            "parameter dimension does not match P".into(),
        ));
    }
    let diff = DVector::from_iterator(k, theta_hat.iter().zip(theta0).map(|(a, b)| a - b));
    let chol = p
        .p_hat
        .clone()
        .cholesky()
        .ok_or_else(|| FarimaError::SingularSelfNormalizer {
            min_eigenvalue: min_symmetric_eigenvalue(&p.p_hat),
        })?;
    let solved = chol.solve(&diff);
    Ok((p.n as f64 * diff.dot(&solved)).max(0.0))
}

/// Interval `{x : n (theta_i - x)^2 / P(i, i) <= critical}` for coordinate `i`,
/// with `critical` the upper quantile of `U_1`.
///
/// The `i`-th coordinate of the partial-sum process is itself a scaled
/// Brownian motion with normalizer `P(i, i)`, so this is the marginal
/// self-normalized interval.
pub fn sn_ci(theta_hat: &[f64], p: &SNMatrix, critical: f64, i: usize) -> Result<Interval> {
    check_coordinate(theta_hat, p, i)?;
    sn_interval(theta_hat[i], 1.0 / p.p_hat[(i, i)], "P", i, p.n, critical)
}

/// Intervals for every coordinate.
pub fn sn_cis(theta_hat: &[f64], p: &SNMatrix, critical: f64) -> Result<Vec<Interval>> {
    (0..theta_hat.len()).map(|i| sn_ci(theta_hat, p, critical, i)).collect()
}

/// Interval `{x : n (theta_i - x)^2 P^{-1}(i, i) <= critical}`.
///
/// `1 / P^{-1}(i, i)` is the conditional normalizer of coordinate `i` given the
/// others, so with correlated estimates this interval is much narrower than
/// [`sn_ci`] and does not hold its nominal level against `U_1`.
pub fn sn_ci_inverse_diagonal(theta_hat: &[f64], p: &SNMatrix, critical: f64, i: usize) -> Result<Interval> {
    check_coordinate(theta_hat, p, i)?;
    let inv =
        inverse_with_condition(&p.p_hat, "P")
            .map(|(inv, _)| inv)
            .map_err(|_| FarimaError::SingularSelfNormalizer {
                min_eigenvalue: min_symmetric_eigenvalue(&p.p_hat),
            })?;
    sn_interval(theta_hat[i], inv[(i, i)], "P^{-1}", i, p.n, critical)
}

fn check_coordinate(theta_hat: &[f64], p: &SNMatrix, i: usize) -> Result<()> {
    if i >= theta_hat.len() || i >= p.p_hat.nrows() {
        return Err(FarimaError::InvalidArgument(format!("coordinate {i} out of range")));
    }
    Ok(())
}

/// `theta_i +- sqrt(critical / (n w))`.
fn sn_interval(theta_i: f64, w: f64, name: &'static str, i: usize, n: usize, critical: f64) -> Result<Interval> {
    if !(w > 0.0 && w.is_finite()) {
        return Err(FarimaError::NonPositiveDiagonal {
            name,
            index: i,
            value: w,
        });
    }
    if critical < 0.0 {
        return Err(FarimaError::InvalidArgument(format!(
            "critical value must be nonnegative, got {critical}"
        )));
    }
    Ok(Interval::centered(theta_i, (critical / (n as f64 * w)).sqrt()))
}

/// Monte Carlo settings for the `U_m` distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UMcConfig {
    pub num_paths: usize,
    pub grid_steps: usize,
    pub seed: u64,
}

impl Default for UMcConfig {
    fn default() -> Self {
        Self {
            num_paths: 50_000,
            grid_steps: 2_000,
            seed: 0x5eed_0fb0,
        }
    }
}

/// Sorted Monte Carlo draws of `U_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct UDraws {
    pub m: usize,
    pub mc: UMcConfig,
    pub sorted: Vec<f64>,
    /// Paths discarded because their `V_m` was not positive definite.
    pub dropped: usize,
}

impl UDraws {
    /// Empirical quantile of order `1 - alpha`, linear interpolation between order statistics.
    pub fn upper_quantile(&self, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(FarimaError::InvalidArgument(format!(
                "level must be in (0, 1), got {alpha}"
            )));
        }
        if self.sorted.is_empty() {
            return Err(FarimaError::Degenerate("no valid Monte Carlo paths".into()));
        }
        let pos = (1.0 - alpha) * (self.sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(self.sorted.len() - 1);
        let frac = pos - lo as f64;
        Ok(self.sorted[lo] + frac * (self.sorted[hi] - self.sorted[lo]))
    }
}

/// One discretized Brownian path of dimension `m`; `None` if `V_m` is singular.
fn simulate_u(m: usize, steps: usize, seed: u64, path: &mut Vec<f64>) -> Option<f64> {
    let mut rng = rng_from_seed(seed);
    let sd = (1.0 / steps as f64).sqrt();
    path.clear();
    path.resize((steps + 1) * m, 0.0);
    for k in 1..=steps {
        for c in 0..m {
            let z: f64 = rng.sample(StandardNormal);
            path[k * m + c] = path[(k - 1) * m + c] + sd * z;
        }
    }
    let end: Vec<f64> = path[steps * m..].to_vec();
    let mut v = DMatrix::<f64>::zeros(m, m);
    let mut prev = vec![0.0; m];
    let mut mid = DVector::<f64>::zeros(m);
    for k in 1..=steps {
        let r = k as f64 / steps as f64;
        for c in 0..m {
            let bridge = path[k * m + c] - r * end[c];
            mid[c] = 0.5 * (prev[c] + bridge);
            prev[c] = bridge;
        }
        v.syger(1.0, &mid, &mid, 1.0);
    }
    v.fill_upper_triangle_with_lower_triangle();
    v /= steps as f64;
    let b = DVector::from_vec(end);
    let chol = v.cholesky()?;
    let u = b.dot(&chol.solve(&b));
    u.is_finite().then_some(u)
}

/// Simulates `num_paths` draws of `U_m`. Paths are seeded individually so the
/// result does not depend on thread scheduling.
pub fn simulate_u_draws(m: usize, mc: &UMcConfig) -> Result<UDraws> {
    if m == 0 {
        return Err(FarimaError::InvalidArgument("dimension m must be at least 1".into()));
    }
    if mc.num_paths == 0 || mc.grid_steps < 2 {
        return Err(FarimaError::InvalidArgument(
            "need at least one path and two grid steps".into(),
        ));
    }
    let draws: Vec<Option<f64>> = (0..mc.num_paths)
        .into_par_iter()
        .map_init(Vec::new, |buf, i| {
            simulate_u(m, mc.grid_steps, derive_seed(mc.seed, i as u64), buf)
        })
        .collect();
    let dropped = draws.iter().filter(|d| d.is_none()).count();
    let mut sorted: Vec<f64> = draws.into_iter().flatten().collect();
    sorted.sort_by(f64::total_cmp);
    Ok(UDraws {
        m,
        mc: *mc,
        sorted,
        dropped,
    })
}

/// Upper `alpha` critical value of `U_m`, simulated without caching.
pub fn u_quantile(m: usize, alpha: f64, mc: &UMcConfig) -> Result<f64> {
    simulate_u_draws(m, mc)?.upper_quantile(alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UQuantileTable {
    pub m: usize,
    pub alphas: Vec<f64>,
    pub quantiles: Vec<f64>,
    pub mc_config: UMcConfig,
    pub dropped_paths: usize,
}

pub fn quantile_table(draws: &UDraws, alphas: &[f64]) -> Result<UQuantileTable> {
    let quantiles = alphas
        .iter()
        .map(|&a| draws.upper_quantile(a))
        .collect::<Result<Vec<_>>>()?;
    Ok(UQuantileTable {
        m: draws.m,
        alphas: alphas.to_vec(),
        quantiles,
        mc_config: draws.mc,
        dropped_paths: draws.dropped,
    })
}

const CACHE_MAGIC: &[u8; 8] = b"WFUDRAW1";

/// Directory of simulated `U_m` samples keyed by `(m, num_paths, grid_steps, seed)`.
#[derive(Debug, Clone)]
pub struct QuantileCache {
    dir: PathBuf,
}

impl QuantileCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    /// `$WEAKFARIMA_CACHE`, or a directory under the system temp dir.
    pub fn from_env() -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => Self::new(dir),
            _ => Self::new(std::env::temp_dir().join("weakfarima-cache")),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, m: usize, mc: &UMcConfig) -> PathBuf {
        self.dir.join(format!(
            "u_m{m}_paths{}_steps{}_seed{}.v1.bin",
            mc.num_paths, mc.grid_steps, mc.seed
        ))
    }

    /// Loads the draws from disk, simulating and storing them on a miss.
    pub fn draws(&self, m: usize, mc: &UMcConfig) -> Result<UDraws> {
        let path = self.path_for(m, mc);
        if let Some(d) = self.load(&path, m, mc)? {
            return Ok(d);
        }
        let draws = simulate_u_draws(m, mc)?;
        self.store(&path, &draws)?;
        Ok(draws)
    }

    fn load(&self, path: &Path, m: usize, mc: &UMcConfig) -> Result<Option<UDraws>> {
        let mut bytes = Vec::new();
        match fs::File::open(path) {
            Ok(mut f) => f.read_to_end(&mut bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        if bytes.len() < 24 || &bytes[..8] != CACHE_MAGIC {
            return Ok(None);
        }
        let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
        let dropped = word(8) as usize;
        let count = word(16) as usize;
        if bytes.len() != 24 + 8 * count || count + dropped != mc.num_paths {
            return Ok(None);
        }
        let sorted = (0..count).map(|i| f64::from_bits(word(24 + 8 * i))).collect();
        Ok(Some(UDraws {
            m,
            mc: *mc,
            sorted,
            dropped,
        }))
    }

    fn store(&self, path: &Path, draws: &UDraws) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let mut bytes = Vec::with_capacity(24 + 8 * draws.sorted.len());
        bytes.extend_from_slice(CACHE_MAGIC);
        bytes.extend_from_slice(&(draws.dropped as u64).to_le_bytes());
        bytes.extend_from_slice(&(draws.sorted.len() as u64).to_le_bytes());
        for v in &draws.sorted {
            bytes.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::File::create(&tmp)?.write_all(&bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }
}
