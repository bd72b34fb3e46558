//! Truncated power-series arithmetic.
//!
//! Everything here works on coefficient vectors `c_0..c_M` of a formal power
//! series in the lag operator. The truncation degree `M` is always passed
//! explicitly; entries past the end of a shorter input are read as zero.

use crate::error::{FarimaError, Result};

/// Coefficients `c_0..c_M` of a power series truncated at degree `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffSeq(Vec<f64>);

impl CoeffSeq {
    /// Wraps raw coefficients. Panics on an empty vector or a non-finite entry.
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(!coeffs.is_empty(), "a coefficient sequence holds at least c_0");
        assert!(coeffs.iter().all(|c| c.is_finite()), "coefficients must be finite");
        Self(coeffs)
    }

    /// The series `1` truncated at degree `m`.
    pub fn identity(m: usize) -> Self {
        let mut c = vec![0.0; m + 1];
        c[0] = 1.0;
        Self(c)
    }

    pub fn trunc_len(&self) -> usize {
        self.0.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Coefficient `j`, zero past the stored degree.
    pub fn get(&self, j: usize) -> f64 {
        self.0.get(j).copied().unwrap_or(0.0)
    }

    /// Largest absolute entry of `self - other` over degrees `0..=max(M, M')`.
    pub fn sup_distance(&self, other: &CoeffSeq) -> f64 {
        let m = self.trunc_len().max(other.trunc_len());
        (0..=m).map(|j| (self.get(j) - other.get(j)).abs()).fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for CoeffSeq {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

/// Coefficients of `(1 - z)^d` up to degree `m`.
///
/// Uses the ratio recursion `alpha_j = alpha_{j-1} (j - 1 - d) / j`, which
/// stays finite for any `j` where the Gamma-quotient form overflows.
pub fn frac_coeffs(d: f64, m: usize) -> CoeffSeq {
    let mut c = Vec::with_capacity(m + 1);
    c.push(1.0);
    for j in 1..=m {
        let jf = j as f64;
        c.push(c[j - 1] * (jf - 1.0 - d) / jf);
    }
    CoeffSeq(c)
}

/// Derivatives `d alpha_j / d d` of the coefficients of `(1 - z)^d`.
pub fn frac_coeffs_dd(d: f64, m: usize) -> CoeffSeq {
    let alpha = frac_coeffs(d, m);
    let mut c = Vec::with_capacity(m + 1);
    c.push(0.0);
    for j in 1..=m {
        let jf = j as f64;
        c.push(c[j - 1] * (jf - 1.0 - d) / jf - alpha[j - 1] / jf);
    }
    CoeffSeq(c)
}

/// Cauchy product of `a` and `b`, truncated at degree `m`.
pub fn convolve(a: &CoeffSeq, b: &CoeffSeq, m: usize) -> CoeffSeq {
    let mut c = vec![0.0; m + 1];
    for (i, ci) in c.iter_mut().enumerate() {
        let k_hi = i.min(a.trunc_len());
        let k_lo = i.saturating_sub(b.trunc_len());
        let mut acc = 0.0;
        for k in k_lo..=k_hi {
            acc += a.0[k] * b.0[i - k];
        }
        *ci = acc;
    }
    CoeffSeq(c)
}

/// Reciprocal of a series with unit constant term, truncated at degree `m`.
pub fn invert_unit_poly(p: &CoeffSeq, m: usize) -> Result<CoeffSeq> {
    if p.0[0] != 1.0 {
        return Err(FarimaError::NonUnitLeading(p.0[0]));
    }
    let deg = p.trunc_len();
    let mut q = vec![0.0; m + 1];
    q[0] = 1.0;
    for i in 1..=m {
        let mut acc = 0.0;
        for k in 1..=i.min(deg) {
            acc += p.0[k] * q[i - k];
        }
        q[i] = -acc;
    }
    Ok(CoeffSeq(q))
}

/// Coefficients of `ln(1 - z)`: `0, -1, -1/2, ..., -1/m`.
pub fn log_one_minus_z(m: usize) -> CoeffSeq {
    let c = (0..=m).map(|j| if j == 0 { 0.0 } else { -1.0 / j as f64 }).collect();
    CoeffSeq(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::function::gamma::gamma;

    fn assert_close(got: &[f64], want: &[f64], tol: f64) {
        assert_eq!(got.len(), want.len());
        for (j, (g, w)) in got.iter().zip(want).enumerate() {
            assert!((g - w).abs() <= tol, "index {j}: got {g}, want {w}");
        }
    }

    #[test]
    fn frac_coeffs_at_zero_is_identity() {
        assert_eq!(frac_coeffs(0.0, 5), CoeffSeq::identity(5));
    }

    #[test]
    fn frac_coeffs_hand_recursion() {
        assert_close(frac_coeffs(0.4, 3).coeffs(), &[1.0, -0.4, -0.12, -0.064], 1e-15);
    }

    #[test]
    fn frac_coeffs_stirling_asymptote() {
        let m = 10_000;
        let a = frac_coeffs(0.4, m);
        let scaled = a[m] * gamma(-0.4) * (m as f64).powf(1.4);
        assert!((scaled - 1.0).abs() < 0.01, "scaled tail {scaled}");
    }

    #[test]
    fn frac_coeffs_match_gamma_quotient_for_small_j() {
        let d = 0.3;
        let a = frac_coeffs(d, 30);
        for j in 0..=30 {
            let exact = gamma(j as f64 - d) / (gamma(j as f64 + 1.0) * gamma(-d));
            assert!((a[j] - exact).abs() < 1e-12 * exact.abs().max(1.0), "j={j}");
        }
    }

    #[test]
    fn frac_coeffs_dd_closed_forms() {
        assert_close(frac_coeffs_dd(0.0, 2).coeffs(), &[0.0, -1.0, -0.5], 1e-15);
        assert!((frac_coeffs_dd(0.4, 2)[2] - (-0.1)).abs() < 1e-15);
    }

    #[test]
    fn frac_coeffs_dd_matches_finite_differences() {
        let h = 1e-6;
        for &d in &[-0.45, -0.2, 0.1, 0.37] {
            let m = 500;
            let an = frac_coeffs_dd(d, m);
            let up = frac_coeffs(d + h, m);
            let dn = frac_coeffs(d - h, m);
            for j in 1..=m {
                let fd = (up[j] - dn[j]) / (2.0 * h);
                let rel = (an[j] - fd).abs() / an[j].abs().max(1e-300);
                assert!(rel < 1e-6, "d={d} j={j}: analytic {} vs fd {fd}", an[j]);
            }
        }
    }

    #[test]
    fn convolve_examples() {
        let b = CoeffSeq::new(vec![0.3, -1.2, 4.0]);
        assert_eq!(convolve(&CoeffSeq::identity(2), &b, 2), b);
        let a = CoeffSeq::new(vec![1.0, -1.0]);
        let b = CoeffSeq::new(vec![1.0, 1.0]);
        assert_close(convolve(&a, &b, 2).coeffs(), &[1.0, 0.0, -1.0], 0.0);
    }

    #[test]
    fn fractional_difference_and_integration_cancel() {
        let m = 2000;
        for &d in &[-0.45, -0.2, 0.0, 0.2, 0.45] {
            let prod = convolve(&frac_coeffs(d, m), &frac_coeffs(-d, m), m);
            let err = prod.sup_distance(&CoeffSeq::identity(m));
            assert!(err < 1e-10, "d={d}: sup error {err}");
        }
    }

    #[test]
    fn invert_unit_poly_examples() {
        assert_eq!(
            invert_unit_poly(&CoeffSeq::new(vec![1.0]), 4).unwrap(),
            CoeffSeq::identity(4)
        );
        let q = invert_unit_poly(&CoeffSeq::new(vec![1.0, -0.5]), 4).unwrap();
        assert_close(q.coeffs(), &[1.0, 0.5, 0.25, 0.125, 0.0625], 1e-15);
        assert!(matches!(
            invert_unit_poly(&CoeffSeq::new(vec![2.0, 1.0]), 3),
            Err(FarimaError::NonUnitLeading(_))
        ));
    }

    #[test]
    fn log_series() {
        assert_eq!(log_one_minus_z(0).coeffs(), &[0.0]);
        assert_close(log_one_minus_z(3).coeffs(), &[0.0, -1.0, -0.5, -1.0 / 3.0], 1e-16);
    }

    #[test]
    fn d_derivative_equals_log_times_series() {
        let m = 400;
        for &d in &[-0.3, 0.0, 0.25, 0.45] {
            let lhs = frac_coeffs_dd(d, m);
            let rhs = convolve(&frac_coeffs(d, m), &log_one_minus_z(m), m);
            assert!(lhs.sup_distance(&rhs) < 1e-10, "d={d}");
        }
    }

    #[test]
    fn frac_coeffs_tail_envelope_is_bounded() {
        for &d in &[-0.4, -0.1, 0.2, 0.45] {
            let m = 10_000;
            let a = frac_coeffs(d, m);
            let limit = 1.0 / gamma(-d).abs();
            for j in 100..=m {
                let scaled = a[j].abs() * (j as f64).powf(1.0 + d);
                assert!(scaled < 1.1 * limit, "d={d} j={j}: {scaled}");
            }
        }
    }

    fn stable_poly() -> impl Strategy<Value = Vec<f64>> {
        // product of factors (1 - r z) with |r| < 0.95 keeps every root outside the unit disk
        prop::collection::vec(-0.95f64..0.95, 0..=5).prop_map(|roots| {
            let mut p = CoeffSeq::identity(0);
            for r in roots {
                let deg = p.trunc_len() + 1;
                p = convolve(&p, &CoeffSeq::new(vec![1.0, -r]), deg);
            }
            p.into_vec()
        })
    }

    proptest! {
        #[test]
        fn inverse_round_trips(p in stable_poly(), m in 0usize..60) {
            let p = CoeffSeq::new(p);
            let q = invert_unit_poly(&p, m).unwrap();
            let id = convolve(&p, &q, m);
            prop_assert!(id.sup_distance(&CoeffSeq::identity(m)) < 1e-12);
        }
    }
}
