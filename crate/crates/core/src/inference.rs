//! Sandwich covariance of the least-squares estimator.
//!
//! `Omega = J^{-1} I J^{-1}` where `J` is estimated by the empirical Gram
//! matrix of residual gradients and `I`, the long-run variance of the score
//! process `H_t = 2 e_t de_t/dtheta`, by fitting a vector autoregression to
//! `H_t` and evaluating its spectral density at frequency zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{FarimaError, Result};
use crate::linalg::{inverse_with_condition, symmetrize, CONDITION_WARNING};
use crate::model::ResidualSet;

/// Score process, one row `H_t` per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct HProcess(pub DMatrix<f64>);

impl HProcess {
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// `(1/n) sum H_t`.
    pub fn mean(&self) -> DVector<f64> {
        self.0.row_mean().transpose()
    }
}

/// `(2/n) sum_t g_t g_t'` with `g_t` the residual gradient at time `t`.
pub fn j_hat(res: &ResidualSet) -> DMatrix<f64> {
    let g = res.grad();
    let n = g.nrows().max(1) as f64;
    symmetrize(&(g.tr_mul(g) * (2.0 / n)))
}

/// `H_t = 2 e_t de_t/dtheta`.
pub fn h_process(res: &ResidualSet) -> HProcess {
    let mut h = res.grad().clone();
    for (t, mut row) in h.row_iter_mut().enumerate() {
        row *= 2.0 * res.eps[t];
    }
    HProcess(h)
}

/// Least-squares VAR(r) fit of the score process.
#[derive(Debug, Clone, PartialEq)]
pub struct VarFit {
    pub order: usize,
    /// `Phi_1..Phi_r`, each `k x k`.
    pub phi: Vec<DMatrix<f64>>,
    /// `(1/n) sum u_t u_t'` of the regression residuals.
    pub sigma_u: DMatrix<f64>,
    /// Condition number of the lagged-regressor covariance (1 when `r = 0`).
    pub regressor_condition: f64,
}

impl VarFit {
    /// `Phi(1) = I - sum_k Phi_k`.
    pub fn phi_at_one(&self, k: usize) -> DMatrix<f64> {
        self.phi.iter().fold(DMatrix::identity(k, k), |acc, p| acc - p)
    }
}

/// Regresses `H_t` on `H_{t-1}..H_{t-r}` over `t = 1..n`, with `H_t = 0` for `t <= 0`.
pub fn var_ar_fit(h: &HProcess, r: usize) -> Result<VarFit> {
    let (n, k) = (h.n(), h.dim());
    let nf = n.max(1) as f64;
    let hm = h.rows();
    if r == 0 {
        return Ok(VarFit {
            order: 0,
            phi: Vec::new(),
            sigma_u: symmetrize(&(hm.tr_mul(hm) / nf)),
            regressor_condition: 1.0,
        });
    }

    let mut lagged = DMatrix::<f64>::zeros(n, r * k);
    for t in 0..n {
        for lag in 1..=r.min(t) {
            for c in 0..k {
                lagged[(t, (lag - 1) * k + c)] = hm[(t - lag, c)];
            }
        }
    }
    let s_zz = lagged.tr_mul(&lagged) / nf;
    let s_hz = hm.tr_mul(&lagged) / nf;
    let (s_zz_inv, regressor_condition) = inverse_with_condition(&s_zz, "lagged regressor covariance")
        .map_err(|_| FarimaError::SingularRegressors { r })?;
    let coef = s_hz * s_zz_inv;
    let resid = hm - &lagged * coef.transpose();
    let sigma_u = symmetrize(&(resid.tr_mul(&resid) / nf));
    let phi = (0..r).map(|l| coef.columns(l * k, k).into_owned()).collect();
    Ok(VarFit {
        order: r,
        phi,
        sigma_u,
        regressor_condition,
    })
}

/// `n log det Sigma_u + 2 r k^2`; `None` when the fit fails or `Sigma_u` is not positive definite.
pub fn aic(h: &HProcess, r: usize) -> Option<f64> {
    let fit = var_ar_fit(h, r).ok()?;
    let det = fit.sigma_u.clone().cholesky()?.determinant();
    if !(det > 0.0 && det.is_finite()) {
        return None;
    }
    let k = h.dim() as f64;
    Some(h.n() as f64 * det.ln() + 2.0 * r as f64 * k * k)
}

/// Default upper bound `max(1, floor(n^{1/5}))` for the AR order search.
pub fn default_r_max(n: usize) -> usize {
    ((n as f64).powf(0.2).floor() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderSelection {
    pub order: usize,
    /// AIC for `r = 1..=r_max`; `None` where the fit failed.
    pub aic_trace: Vec<Option<f64>>,
}

/// AIC-minimizing VAR order in `1..=r_max`; ties go to the smaller order.
pub fn select_order_aic(h: &HProcess, r_max: usize) -> Result<OrderSelection> {
    if r_max == 0 {
        return Err(FarimaError::InvalidArgument("r_max must be at least 1".into()));
    }
    let aic_trace: Vec<Option<f64>> = (1..=r_max).map(|r| aic(h, r)).collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in aic_trace.iter().enumerate() {
        if let Some(v) = *v {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i + 1, v));
            }
        }
    }
    match best {
        Some((order, _)) => Ok(OrderSelection { order, aic_trace }),
        None => Err(FarimaError::NoValidOrder { r_max }),
    }
}

/// `Phi(1)^{-1} Sigma_u Phi(1)^{-T}` from a VAR(r) fit, symmetrized.
pub fn i_hat_spectral(h: &HProcess, r: usize) -> Result<DMatrix<f64>> {
    Ok(i_hat_from_fit(&var_ar_fit(h, r)?, h.dim())?.0)
}

fn i_hat_from_fit(fit: &VarFit, k: usize) -> Result<(DMatrix<f64>, f64)> {
    let (inv, cond) = inverse_with_condition(&fit.phi_at_one(k), "Phi(1)")
        .map_err(|_| FarimaError::SingularPhiAtOne { r: fit.order })?;
    Ok((symmetrize(&(&inv * &fit.sigma_u * inv.transpose())), cond))
}

/// How the VAR order of the spectral estimator is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OrderChoice {
    /// AIC over `1..=r_max`, with `r_max` defaulting to `floor(n^{1/5})`.
    Aic {
        r_max: Option<usize>,
    },
    Fixed(usize),
}

impl Default for OrderChoice {
    fn default() -> Self {
        OrderChoice::Aic { r_max: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichEstimate {
    pub j_hat: DMatrix<f64>,
    pub i_hat: DMatrix<f64>,
    /// `J^{-1} I J^{-1}`.
    pub omega_hat: DMatrix<f64>,
    /// `2 sigma^2 J^{-1}`, valid only for iid innovations.
    pub omega_standard: DMatrix<f64>,
    pub r_selected: usize,
    pub aic_trace: Vec<Option<f64>>,
    pub j_condition: f64,
    pub warnings: Vec<String>,
}

/// Builds `J`, the spectral `I` and both covariance estimates from residuals
/// at the estimate.
pub fn sandwich(res: &ResidualSet, sigma2_hat: f64, order: OrderChoice) -> Result<SandwichEstimate> {
    let k = res.theta.dim();
    if res.n() < k {
        return Err(FarimaError::SampleTooSmall { n: res.n(), min: k });
    }
    let j = j_hat(res);
    let (j_inv, j_condition) = inverse_with_condition(&j, "J")?;
    let h = h_process(res);
    let (r, aic_trace) = match order {
        OrderChoice::Fixed(r) => (r, Vec::new()),
        OrderChoice::Aic { r_max } => {
            let sel = select_order_aic(&h, r_max.unwrap_or_else(|| default_r_max(res.n())))?;
            (sel.order, sel.aic_trace)
        }
    };
    let fit = var_ar_fit(&h, r)?;
    let (i, phi_condition) = i_hat_from_fit(&fit, k)?;

    let mut warnings = Vec::new();
    for (name, c) in [
        ("J", j_condition),
        ("lagged regressor covariance", fit.regressor_condition),
        ("Phi(1)", phi_condition),
    ] {
        if c > CONDITION_WARNING {
            warnings.push(format!("{name} is ill-conditioned (condition number {c:e})"));
        }
    }

    Ok(SandwichEstimate {
        omega_hat: symmetrize(&(&j_inv * &i * &j_inv)),
        omega_standard: symmetrize(&(&j_inv * (2.0 * sigma2_hat))),
        j_hat: j,
        i_hat: i,
        r_selected: r,
        aic_trace,
        j_condition,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn centered(center: f64, half_width: f64) -> Self {
        Self {
            lower: center - half_width,
            upper: center + half_width,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.upper - self.lower)
    }
}

/// `z_{1-alpha/2}`.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(FarimaError::InvalidArgument(format!(
            "level must be in (0, 1), got {alpha}"
        )));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(1.0 - alpha / 2.0))
}

/// Per-coordinate intervals `theta_i +- z_{1-alpha/2} sqrt(omega_ii / n)`.
pub fn ci_wald(theta_hat: &[f64], omega: &DMatrix<f64>, n: usize, alpha: f64) -> Result<Vec<Interval>> {
    if omega.nrows() != theta_hat.len() || omega.ncols() != theta_hat.len() {
        return Err(FarimaError::InvalidArgument(
            "covariance dimension does not match theta".into(),
        ));
    }
    let z = normal_quantile(alpha)?;
    theta_hat
        .iter()
        .enumerate()
        .map(|(i, &th)| {
            let v = omega[(i, i)];
            if v < 0.0 || !v.is_finite() {
                return Err(FarimaError::NonPositiveDiagonal {
                    name: "Omega",
                    index: i,
                    value: v,
                });
            }
            Ok(Interval::centered(th, z * (v / n as f64).sqrt()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FarimaParams;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn white_h(n: usize, k: usize, seed: u64) -> HProcess {
        let mut rng = rng_from_seed(seed);
        HProcess(DMatrix::from_fn(n, k, |_, _| rng.sample(StandardNormal)))
    }

    fn var1_h(n: usize, k: usize, coef: f64, seed: u64) -> HProcess {
        let mut rng = rng_from_seed(seed);
        let mut m = DMatrix::<f64>::zeros(n, k);
        for t in 0..n {
            for c in 0..k {
                let prev = if t > 0 { m[(t - 1, c)] } else { 0.0 };
                let shock: f64 = rng.sample(StandardNormal);
                m[(t, c)] = coef * prev + shock;
            }
        }
        HProcess(m)
    }

    fn residual_set(eps: Vec<f64>, grad: DMatrix<f64>) -> ResidualSet {
        ResidualSet {
            theta: FarimaParams::new(vec![0.0], vec![0.0], 0.0),
            eps,
            grad: Some(grad),
        }
    }

    #[test]
    fn zero_gradient_gives_zero_j() {
        let res = residual_set(vec![1.0; 10], DMatrix::zeros(10, 3));
        assert_eq!(j_hat(&res), DMatrix::zeros(3, 3));
    }

    #[test]
    fn j_is_symmetric_psd_gram_matrix() {
        let mut rng = rng_from_seed(3);
        let g = DMatrix::from_fn(40, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let res = residual_set(vec![0.5; 40], g.clone());
        let j = j_hat(&res);
        assert!((&j - j.transpose()).abs().max() < 1e-12);
        assert!(j.clone().symmetric_eigenvalues().min() > 0.0);
        let direct = (0..40).fold(DMatrix::zeros(3, 3), |acc, t| {
            let row = g.row(t);
            acc + row.transpose() * row
        }) * (2.0 / 40.0);
        assert!((&j - direct).abs().max() < 1e-12);
    }

    #[test]
    fn zero_residuals_give_zero_score() {
        let res = residual_set(vec![0.0; 5], DMatrix::from_element(5, 3, 1.0));
        assert_eq!(h_process(&res).0, DMatrix::zeros(5, 3));
    }

    #[test]
    fn order_zero_fit_is_raw_second_moment() {
        let h = white_h(200, 2, 1);
        let fit = var_ar_fit(&h, 0).unwrap();
        let direct = h.rows().tr_mul(h.rows()) / 200.0;
        assert!((&fit.sigma_u - &direct).abs().max() < 1e-12);
        let i = i_hat_spectral(&h, 0).unwrap();
        assert!((&i - &direct).abs().max() < 1e-12);
    }

    #[test]
    fn white_noise_var_coefficients_vanish() {
        let h = white_h(100_000, 3, 2);
        let fit = var_ar_fit(&h, 1).unwrap();
        assert!(fit.phi[0].norm() < 0.05, "{}", fit.phi[0]);
    }

    #[test]
    fn var1_coefficients_are_recovered() {
        let h = var1_h(100_000, 3, 0.5, 3);
        let fit = var_ar_fit(&h, 1).unwrap();
        let err = (&fit.phi[0] - DMatrix::<f64>::identity(3, 3) * 0.5).abs().max();
        assert!(err < 0.02, "{}", fit.phi[0]);
    }

    #[test]
    fn var_fit_honors_zero_padding() {
        // with H_0 = 0 the first regression row contributes H_1 to the residuals unchanged
        let h = HProcess(DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 4.0]));
        let fit = var_ar_fit(&h, 1).unwrap();
        // s_zz = (0 + 1 + 4)/3, s_hz = (0 + 2 + 8)/3 => phi = 2
        assert!((fit.phi[0][(0, 0)] - 2.0).abs() < 1e-14);
        assert!((fit.sigma_u[(0, 0)] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_regressors_are_reported() {
        let h = HProcess(DMatrix::zeros(50, 2));
        assert!(matches!(
            var_ar_fit(&h, 2),
            Err(FarimaError::SingularRegressors { r: 2 })
        ));
        assert!(matches!(
            select_order_aic(&h, 3),
            Err(FarimaError::NoValidOrder { r_max: 3 })
        ));
    }

    #[test]
    fn aic_selects_order_one_for_white_noise() {
        let mut ones = 0;
        for seed in 0..20 {
            let h = white_h(10_000, 3, 100 + seed);
            if select_order_aic(&h, 6).unwrap().order == 1 {
                ones += 1;
            }
        }
        assert!(ones >= 15, "order 1 chosen {ones}/20 times");
    }

    #[test]
    fn aic_selects_order_one_for_var1() {
        let mut ones = 0;
        for seed in 0..100 {
            let h = var1_h(10_000, 3, 0.5, 500 + seed);
            let sel = select_order_aic(&h, default_r_max(10_000)).unwrap();
            assert_eq!(sel.aic_trace.len(), 6);
            if sel.order == 1 {
                ones += 1;
            }
        }
        assert!(ones > 80, "order 1 chosen {ones}/100 times");
    }

    #[test]
    fn aic_with_single_candidate() {
        assert_eq!(select_order_aic(&white_h(100, 2, 9), 1).unwrap().order, 1);
        assert!(select_order_aic(&white_h(100, 2, 9), 0).is_err());
        assert_eq!(default_r_max(2000), 4);
        assert_eq!(default_r_max(5), 1);
    }

    #[test]
    fn flat_spectrum_matches_raw_second_moment() {
        let h = white_h(100_000, 3, 4);
        let i = i_hat_spectral(&h, 1).unwrap();
        let raw = h.rows().tr_mul(h.rows()) / 100_000.0;
        for d in 0..3 {
            assert!((i[(d, d)] / raw[(d, d)] - 1.0).abs() < 0.1);
        }
        assert!((&i - &raw).norm() / raw.norm() < 0.1);
    }

    #[test]
    fn spectral_estimate_of_var1_long_run_variance() {
        // long-run variance of x_t = 0.5 x_{t-1} + u_t is 1 / (1 - 0.5)^2 = 4
        let h = var1_h(100_000, 2, 0.5, 5);
        let i = i_hat_spectral(&h, 1).unwrap();
        for d in 0..2 {
            assert!((i[(d, d)] / 4.0 - 1.0).abs() < 0.1, "{}", i[(d, d)]);
        }
        assert!((&i - i.transpose()).abs().max() == 0.0);
    }

    #[test]
    fn wald_intervals() {
        let z = ci_wald(&[0.3], &DMatrix::zeros(1, 1), 100, 0.05).unwrap();
        assert_eq!(z[0], Interval { lower: 0.3, upper: 0.3 });
        let iv = ci_wald(&[0.0], &DMatrix::identity(1, 1), 100, 0.05).unwrap();
        assert!((iv[0].half_width() - 0.196).abs() < 1e-3);
        let bad = DMatrix::from_element(1, 1, -1.0);
        assert!(ci_wald(&[0.0], &bad, 100, 0.05).is_err());
        assert!(ci_wald(&[0.0], &DMatrix::identity(1, 1), 100, 1.5).is_err());
    }
}
