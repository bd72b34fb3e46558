//! Small dense-matrix helpers on top of nalgebra.

use nalgebra::DMatrix;

use crate::error::{FarimaError, Result};

/// Condition numbers above this are reported as warnings.
pub const CONDITION_WARNING: f64 = 1e12;

/// Singular values at or below `SINGULAR_RTOL * s_max` count as zero.
const SINGULAR_RTOL: f64 = 1e-14;

/// Inverse through an SVD, together with the 2-norm condition number.
pub fn inverse_with_condition(m: &DMatrix<f64>, name: &'static str) -> Result<(DMatrix<f64>, f64)> {
    assert!(m.is_square(), "{name} must be square");
    if m.nrows() == 0 {
        return Ok((m.clone(), 1.0));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FarimaError::Singular {
            name,
            condition: f64::INFINITY,
        });
    }
    let svd = m.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if s_max == 0.0 || s_min <= SINGULAR_RTOL * s_max {
        return Err(FarimaError::Singular { name, condition });
    }
    let inv = svd
        .pseudo_inverse(0.0)
        .map_err(|_| FarimaError::Singular { name, condition })?;
    Ok((inv, condition))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}
