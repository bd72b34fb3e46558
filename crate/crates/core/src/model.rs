//! FARIMA(p, d, q) parameters, the admissible parameter region, and the
//! truncated residual recursion with its analytic gradient.
//!
//! The model is `a(L) (1 - L)^d X_t = b(L) eps_t` with
//! `a(z) = 1 - sum a_i z^i` and `b(z) = 1 - sum b_j z^j`. Given `X_1..X_n`,
//! residuals are computed with zero pre-sample values:
//!
//! ```text
//! e_t = w_t - sum_i a_i w_{t-i} + sum_j b_j e_{t-j},   w_t = sum_{j<t} alpha_j(d) X_{t-j}
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FarimaError, Result};
use crate::filter::{recursive_filter, CausalFilter};
use crate::series::{frac_coeffs, frac_coeffs_dd};

/// Modulus slack used when comparing polynomial roots against `1 + delta`.
pub const ROOT_TOLERANCE: f64 = 1e-8;

/// Parameter vector `(a_1..a_p, b_1..b_q, d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarimaParams {
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub d: f64,
}

impl FarimaParams {
    pub fn new(ar: Vec<f64>, ma: Vec<f64>, d: f64) -> Self {
        Self { ar, ma, d }
    }

    /// All coefficients zero: white noise, always feasible.
    pub fn zeros(p: usize, q: usize) -> Self {
        Self::new(vec![0.0; p], vec![0.0; q], 0.0)
    }

    pub fn p(&self) -> usize {
        self.ar.len()
    }

    pub fn q(&self) -> usize {
        self.ma.len()
    }

    pub fn dim(&self) -> usize {
        self.p() + self.q() + 1
    }

    /// Flattened as `(a_1..a_p, b_1..b_q, d)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.ar);
        v.extend_from_slice(&self.ma);
        v.push(self.d);
        v
    }

    pub fn from_slice(p: usize, q: usize, v: &[f64]) -> Result<Self> {
        if v.len() != p + q + 1 {
            return Err(FarimaError::InvalidArgument(format!(
                "expected {} parameters for p={p}, q={q}, got {}",
                p + q + 1,
                v.len()
            )));
        }
        Ok(Self::new(v[..p].to_vec(), v[p..p + q].to_vec(), v[p + q]))
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|x| x.is_finite())
    }

    /// Names in flattened order: `a1.., b1.., d`.
    pub fn names(p: usize, q: usize) -> Vec<String> {
        (1..=p)
            .map(|i| format!("a{i}"))
            .chain((1..=q).map(|j| format!("b{j}")))
            .chain(std::iter::once("d".to_string()))
            .collect()
    }
}

/// The compact set of admissible parameters: every root of `a` and `b` has
/// modulus at least `1 + delta`, and `d` lies in `[d_lo, d_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub delta: f64,
    pub d_lo: f64,
    pub d_hi: f64,
}

impl FeasibleRegion {
    pub fn new(delta: f64, d_lo: f64, d_hi: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(FarimaError::InvalidArgument(format!(
                "root margin delta must be positive, got {delta}"
            )));
        }
        if !(-0.5 < d_lo && d_lo <= d_hi && d_hi < 0.5) {
            return Err(FarimaError::InvalidArgument(format!(
                "need -0.5 < d_lo <= d_hi < 0.5, got [{d_lo}, {d_hi}]"
            )));
        }
        Ok(Self { delta, d_lo, d_hi })
    }

    pub fn clamp_d(&self, d: f64) -> f64 {
        d.clamp(self.d_lo, self.d_hi)
    }
}

impl Default for FeasibleRegion {
    fn default() -> Self {
        Self {
            delta: 0.01,
            d_lo: -0.49,
            d_hi: 0.49,
        }
    }
}

/// Largest modulus among the reciprocal roots of `1 - sum c_i z^i`, i.e. the
/// spectral radius of its companion matrix. Zero for an empty polynomial.
pub fn reciprocal_root_radius(coeffs: &[f64]) -> f64 {
    let k = match coeffs.iter().rposition(|&c| c != 0.0) {
        Some(last) => last + 1,
        None => return 0.0,
    };
    if k == 1 {
        return coeffs[0].abs();
    }
    let mut companion = DMatrix::<f64>::zeros(k, k);
    for (j, &c) in coeffs[..k].iter().enumerate() {
        companion[(0, j)] = c;
    }
    for i in 1..k {
        companion[(i, i - 1)] = 1.0;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Whether every root of `1 - sum c_i z^i` has modulus at least `min_modulus`.
pub fn roots_outside(coeffs: &[f64], min_modulus: f64) -> bool {
    if coeffs.iter().any(|c| !c.is_finite()) {
        return false;
    }
    reciprocal_root_radius(coeffs) * min_modulus <= 1.0 + ROOT_TOLERANCE
}

pub fn check_feasible(theta: &FarimaParams, region: &FeasibleRegion) -> bool {
    let bound = 1.0 + region.delta;
    theta.is_finite()
        && theta.d >= region.d_lo
        && theta.d <= region.d_hi
        && roots_outside(&theta.ar, bound)
        && roots_outside(&theta.ma, bound)
}

/// Truncated residuals and, optionally, their gradient.
#[derive(Debug, Clone)]
pub struct ResidualSet {
    pub theta: FarimaParams,
    pub eps: Vec<f64>,
    /// `n x (p+q+1)` matrix of partial derivatives, column order as
    /// [`FarimaParams::to_vec`].
    pub grad: Option<DMatrix<f64>>,
}

impl ResidualSet {
    pub fn n(&self) -> usize {
        self.eps.len()
    }

    /// Gradient matrix; panics if the set was built without derivatives.
    pub fn grad(&self) -> &DMatrix<f64> {
        self.grad.as_ref().expect("residual set was computed without gradient")
    }
}

/// Residual evaluator bound to one data sample, reused across many parameter
/// values (the optimizer's hot path).
pub struct ResidualEngine {
    filter: CausalFilter,
}

impl ResidualEngine {
    pub fn new(x: &[f64]) -> Self {
        Self {
            filter: CausalFilter::new(x),
        }
    }

    pub fn n(&self) -> usize {
        self.filter.len()
    }

    pub fn residuals(&self, theta: &FarimaParams) -> ResidualSet {
        let n = self.n();
        let w = self.filter.apply(frac_coeffs(theta.d, n.saturating_sub(1)).coeffs());
        let eps = recursive_filter(&theta.ma, &ar_filter(&theta.ar, &w));
        ResidualSet {
            theta: theta.clone(),
            eps,
            grad: None,
        }
    }

    pub fn residuals_with_grad(&self, theta: &FarimaParams) -> ResidualSet {
        let n = self.n();
        let (p, q) = (theta.p(), theta.q());
        let m = n.saturating_sub(1);
        let w = self.filter.apply(frac_coeffs(theta.d, m).coeffs());
        let w_d = self.filter.apply(frac_coeffs_dd(theta.d, m).coeffs());
        let eps = recursive_filter(&theta.ma, &ar_filter(&theta.ar, &w));

        let mut grad = DMatrix::<f64>::zeros(n, p + q + 1);
        for i in 1..=p {
            let drive: Vec<f64> = (0..n).map(|t| if t >= i { -w[t - i] } else { 0.0 }).collect();
            grad.set_column(i - 1, &DVector::from_vec(recursive_filter(&theta.ma, &drive)));
        }
        for j in 1..=q {
            let drive: Vec<f64> = (0..n).map(|t| if t >= j { eps[t - j] } else { 0.0 }).collect();
            grad.set_column(p + j - 1, &DVector::from_vec(recursive_filter(&theta.ma, &drive)));
        }
        let drive = ar_filter(&theta.ar, &w_d);
        grad.set_column(p + q, &DVector::from_vec(recursive_filter(&theta.ma, &drive)));

        ResidualSet {
            theta: theta.clone(),
            eps,
            grad: Some(grad),
        }
    }
}

/// `v_t = w_t - sum_i a_i w_{t-i}` with zero pre-sample values.
fn ar_filter(ar: &[f64], w: &[f64]) -> Vec<f64> {
    (0..w.len())
        .map(|t| {
            let mut v = w[t];
            for (i, &a) in ar.iter().enumerate() {
                if t > i {
                    v -= a * w[t - i - 1];
                }
            }
            v
        })
        .collect()
}

/// Truncated residuals `e_1..e_n` at `theta`.
pub fn residuals(theta: &FarimaParams, x: &[f64]) -> ResidualSet {
    ResidualEngine::new(x).residuals(theta)
}

/// Truncated residuals together with their `n x (p+q+1)` gradient.
pub fn residuals_with_grad(theta: &FarimaParams, x: &[f64]) -> ResidualSet {
    ResidualEngine::new(x).residuals_with_grad(theta)
}
