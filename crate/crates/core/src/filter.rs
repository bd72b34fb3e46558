//! Causal linear filtering `y_t = sum_{j=0}^{t} c_j x_{t-j}` over a finite sample.
//!
//! Short inputs use the direct double loop. Longer ones go through a
//! zero-padded FFT; the transform of the data is computed once so the same
//! sample can be filtered by many coefficient sequences cheaply.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

const DIRECT_MAX_LEN: usize = 256;

/// Applies causal filters to one fixed input sequence.
pub struct CausalFilter {
    x: Vec<f64>,
    fft: Option<FftState>,
}

struct FftState {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    x_spectrum: Vec<Complex<f64>>,
}

impl CausalFilter {
    pub fn new(x: &[f64]) -> Self {
        let n = x.len();
        let fft = (n > DIRECT_MAX_LEN).then(|| {
            let len = (2 * n).next_power_of_two();
            let mut planner = FftPlanner::new();
            let forward = planner.plan_fft_forward(len);
            let inverse = planner.plan_fft_inverse(len);
            let mut x_spectrum = padded(x, len);
            forward.process(&mut x_spectrum);
            FftState {
                len,
                forward,
                inverse,
                x_spectrum,
            }
        });
        Self { x: x.to_vec(), fft }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Filters the stored input with `coeffs`; coefficients beyond the sample
    /// length are irrelevant and ignored.
    pub fn apply(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.x.len();
        let coeffs = &coeffs[..coeffs.len().min(n)];
        if coeffs.iter().skip(1).all(|&c| c == 0.0) {
            let c0 = coeffs.first().copied().unwrap_or(0.0);
            return self.x.iter().map(|x| c0 * x).collect();
        }
        match &self.fft {
            None => direct(coeffs, &self.x),
            Some(state) => {
                let mut spec = padded(coeffs, state.len);
                state.forward.process(&mut spec);
                for (s, xs) in spec.iter_mut().zip(&state.x_spectrum) {
                    *s *= xs;
                }
                state.inverse.process(&mut spec);
                let scale = 1.0 / state.len as f64;
                spec[..n].iter().map(|c| c.re * scale).collect()
            }
        }
    }
}

fn padded(v: &[f64], len: usize) -> Vec<Complex<f64>> {
    let mut out = vec![Complex::new(0.0, 0.0); len];
    for (o, &x) in out.iter_mut().zip(v) {
        o.re = x;
    }
    out
}

fn direct(coeffs: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| {
            let hi = t.min(coeffs.len().saturating_sub(1));
            if coeffs.is_empty() {
                return 0.0;
            }
            (0..=hi).map(|j| coeffs[j] * x[t - j]).sum()
        })
        .collect()
}

/// One-shot causal filter.
pub fn causal_filter(coeffs: &[f64], x: &[f64]) -> Vec<f64> {
    CausalFilter::new(x).apply(coeffs)
}

/// Solves `y_t = u_t + sum_j phi_j y_{t-j}` with zero pre-sample values.
pub fn recursive_filter(phi: &[f64], u: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(u.len());
    for (t, &ut) in u.iter().enumerate() {
        let mut acc = ut;
        for (j, &p) in phi.iter().enumerate() {
            if t > j {
                acc += p * y[t - j - 1];
            }
        }
        y.push(acc);
    }
    y
}
