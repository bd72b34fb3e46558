//! Innovation generators and the FARIMA path simulator.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FarimaError, Result};
use crate::filter::{causal_filter, recursive_filter};
use crate::model::{roots_outside, FarimaParams};
use crate::rng::rng_from_seed;
use crate::series::frac_coeffs;

/// Innovation process driving the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    /// iid N(0, 1).
    Strong,
    /// `eps_t = sigma_t eta_t`, `sigma_t^2 = omega + alpha eps_{t-1}^2 + beta sigma_{t-1}^2`.
    Garch { omega: f64, alpha: f64, beta: f64 },
    /// `eps_t = eta_t^2 eta_{t-1}`: uncorrelated but not a martingale difference.
    WeakProduct,
}

impl NoiseKind {
    /// The semi-strong design used in the Monte Carlo studies.
    pub const SEMI_STRONG: NoiseKind = NoiseKind::Garch {
        omega: 0.04,
        alpha: 0.12,
        beta: 0.85,
    };

    pub fn validate(&self) -> Result<()> {
        if let NoiseKind::Garch { omega, alpha, beta } = *self {
            let ok = omega > 0.0 && alpha >= 0.0 && beta >= 0.0 && alpha + beta < 1.0;
            if !ok || !(omega.is_finite() && alpha.is_finite() && beta.is_finite()) {
                return Err(FarimaError::InvalidGarch { omega, alpha, beta });
            }
        }
        Ok(())
    }

    /// Theoretical innovation variance.
    pub fn variance(&self) -> f64 {
        match *self {
            NoiseKind::Strong => 1.0,
            NoiseKind::Garch { omega, alpha, beta } => omega / (1.0 - alpha - beta),
            NoiseKind::WeakProduct => 3.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            NoiseKind::Strong => "strong",
            NoiseKind::Garch { .. } => "garch",
            NoiseKind::WeakProduct => "weak",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub burn_in: usize,
    /// Truncation lag of the fractional integration filter.
    pub ma_trunc: usize,
    pub seed: u64,
}

impl SimConfig {
    pub const DEFAULT_BURN_IN: usize = 2000;
    pub const DEFAULT_MA_TRUNC: usize = 5000;

    /// Default burn-in, and a filter truncation of 5000 lags or `n`, whichever is larger.
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            burn_in: Self::DEFAULT_BURN_IN,
            ma_trunc: Self::DEFAULT_MA_TRUNC.max(n),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(FarimaError::InvalidArgument("n must be at least 1".into()));
        }
        if self.ma_trunc < self.n {
            return Err(FarimaError::InvalidArgument(format!(
                "ma_trunc ({}) must be at least n ({})",
                self.ma_trunc, self.n
            )));
        }
        Ok(())
    }
}

/// Draws `count` innovations; deterministic in `seed`.
pub fn gen_noise(kind: NoiseKind, count: usize, seed: u64) -> Result<Vec<f64>> {
    kind.validate()?;
    if count == 0 {
        return Err(FarimaError::InvalidArgument("count must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let mut eta = move || -> f64 { rng.sample(StandardNormal) };
    let out = match kind {
        NoiseKind::Strong => (0..count).map(|_| eta()).collect(),
        NoiseKind::Garch { omega, alpha, beta } => {
            let mut sigma2 = omega / (1.0 - alpha - beta);
            let mut prev_sq = sigma2;
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                sigma2 = omega + alpha * prev_sq + beta * sigma2;
                let e = sigma2.sqrt() * eta();
                prev_sq = e * e;
                out.push(e);
            }
            out
        }
        NoiseKind::WeakProduct => {
            let mut prev = eta();
            (0..count)
                .map(|_| {
                    let cur = eta();
                    let e = cur * cur * prev;
                    prev = cur;
                    e
                })
                .collect()
        }
    };
    Ok(out)
}

/// A simulated sample and the innovations that produced it.
#[derive(Debug, Clone)]
pub struct SimPath {
    pub x: Vec<f64>,
    pub eps: Vec<f64>,
}

/// Simulates `a(L) (1 - L)^d X_t = b(L) eps_t`, discarding `burn_in` leading values.
pub fn simulate_farima(theta0: &FarimaParams, kind: NoiseKind, cfg: &SimConfig) -> Result<SimPath> {
    cfg.validate()?;
    if !(theta0.is_finite()
        && theta0.d.abs() < 0.5
        && roots_outside(&theta0.ar, 1.0 + 1e-6)
        && roots_outside(&theta0.ma, 1.0 + 1e-6))
    {
        return Err(FarimaError::Infeasible(format!(
            "cannot simulate from non-stationary or non-invertible {theta0:?}"
        )));
    }
    let total = cfg.burn_in + cfg.n;
    let eps = gen_noise(kind, total, cfg.seed)?;

    let mut u = eps.clone();
    for t in 0..total {
        for (j, &b) in theta0.ma.iter().enumerate() {
            if t > j {
                u[t] -= b * eps[t - j - 1];
            }
        }
    }
    let psi = frac_coeffs(-theta0.d, cfg.ma_trunc.min(total - 1));
    let v = causal_filter(psi.coeffs(), &u);
    let x = recursive_filter(&theta0.ar, &v);

    Ok(SimPath {
        x: x[cfg.burn_in..].to_vec(),
        eps: eps[cfg.burn_in..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::residuals;

    fn mean_var(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n)
    }

    fn autocorr(v: &[f64], h: usize) -> f64 {
        let (m, var) = mean_var(v);
        let n = v.len();
        let c: f64 = (h..n).map(|t| (v[t] - m) * (v[t - h] - m)).sum::<f64>() / n as f64;
        c / var
    }

    #[test]
    fn strong_noise_moments() {
        let e = gen_noise(NoiseKind::Strong, 1_000_000, 1).unwrap();
        let (m, v) = mean_var(&e);
        assert!(m.abs() < 4.0 / 1000.0);
        assert!((v - 1.0).abs() < 0.01);
    }

    #[test]
    fn garch_noise_unconditional_variance() {
        let e = gen_noise(NoiseKind::SEMI_STRONG, 1_000_000, 2).unwrap();
        let (_, v) = mean_var(&e);
        assert!((v / (4.0 / 3.0) - 1.0).abs() < 0.05, "variance {v}");
    }

    #[test]
    fn weak_noise_moments_and_whiteness() {
        let e = gen_noise(NoiseKind::WeakProduct, 1_000_000, 3).unwrap();
        let (_, v) = mean_var(&e);
        assert!((v / 3.0 - 1.0).abs() < 0.05, "variance {v}");
        for h in 1..=5 {
            assert!(autocorr(&e, h).abs() < 0.01, "lag {h}");
        }
    }

    #[test]
    fn all_noise_kinds_are_uncorrelated() {
        let bound = 4.0 / 1000.0;
        for kind in [NoiseKind::Strong, NoiseKind::SEMI_STRONG, NoiseKind::WeakProduct] {
            let e = gen_noise(kind, 1_000_000, 17).unwrap();
            for h in 1..=10 {
                let r = autocorr(&e, h);
                assert!(r.abs() < bound, "{kind:?} lag {h}: {r}");
            }
        }
    }

    #[test]
    fn invalid_garch_is_rejected() {
        let bad = NoiseKind::Garch {
            omega: 0.1,
            alpha: 0.5,
            beta: 0.5,
        };
        assert!(matches!(gen_noise(bad, 10, 0), Err(FarimaError::InvalidGarch { .. })));
        let bad = NoiseKind::Garch {
            omega: 0.0,
            alpha: 0.1,
            beta: 0.1,
        };
        assert!(gen_noise(bad, 10, 0).is_err());
    }

    #[test]
    fn simulation_is_reproducible_and_seed_sensitive() {
        let theta = FarimaParams::new(vec![-0.7], vec![-0.2], 0.4);
        let cfg = SimConfig::new(500, 9);
        let a = simulate_farima(&theta, NoiseKind::SEMI_STRONG, &cfg).unwrap();
        let b = simulate_farima(&theta, NoiseKind::SEMI_STRONG, &cfg).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.eps, b.eps);
        let c = simulate_farima(&theta, NoiseKind::SEMI_STRONG, &SimConfig::new(500, 10)).unwrap();
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn white_noise_design_returns_innovations() {
        let path = simulate_farima(&FarimaParams::zeros(0, 0), NoiseKind::Strong, &SimConfig::new(300, 4)).unwrap();
        assert_eq!(path.x, path.eps);
    }

    #[test]
    fn infeasible_design_is_rejected() {
        let theta = FarimaParams::new(vec![1.1], vec![], 0.2);
        assert!(simulate_farima(&theta, NoiseKind::Strong, &SimConfig::new(10, 0)).is_err());
        let cfg = SimConfig {
            ma_trunc: 5,
            ..SimConfig::new(10, 0)
        };
        assert!(simulate_farima(&FarimaParams::zeros(0, 0), NoiseKind::Strong, &cfg).is_err());
    }

    #[test]
    fn residuals_recover_innovations() {
        let theta = FarimaParams::new(vec![-0.7], vec![-0.2], 0.4);
        let path = simulate_farima(&theta, NoiseKind::Strong, &SimConfig::new(2000, 5)).unwrap();
        let e = residuals(&theta, &path.x).eps;
        let tail = 1000..2000;
        let mse: f64 = tail.clone().map(|t| (e[t] - path.eps[t]).powi(2)).sum::<f64>() / tail.len() as f64;
        assert!(mse.sqrt() < 0.05, "rmse {}", mse.sqrt());
    }

    #[test]
    fn fractional_noise_variance_matches_ma_weights() {
        // Averages uncentred second moments over independent paths; the
        // oracle accounts for each time point's effective filter length.
        let d = 0.4;
        let n = 100_000;
        let paths = 100;
        let cfg0 = SimConfig::new(n, 0);
        let psi = frac_coeffs(-d, cfg0.ma_trunc);
        let mut cum = Vec::with_capacity(psi.trunc_len() + 1);
        let mut acc = 0.0;
        for &c in psi.coeffs() {
            acc += c * c;
            cum.push(acc);
        }
        let exact: f64 = (0..n).map(|t| cum[(t + cfg0.burn_in).min(cfg0.ma_trunc)]).sum::<f64>() / n as f64;
        let m5000: f64 = frac_coeffs(-d, 5000).coeffs().iter().map(|c| c * c).sum();

        let mut second = 0.0;
        for r in 0..paths {
            let path = simulate_farima(
                &FarimaParams::new(vec![], vec![], d),
                NoiseKind::Strong,
                &SimConfig::new(n, 1000 + r),
            )
            .unwrap();
            second += path.x.iter().map(|x| x * x).sum::<f64>() / n as f64;
        }
        second /= paths as f64;
        assert!((second / exact - 1.0).abs() < 0.05, "{second} vs {exact}");
        assert!((second / m5000 - 1.0).abs() < 0.05, "{second} vs {m5000}");
    }
}
