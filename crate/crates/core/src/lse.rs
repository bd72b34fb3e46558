//! Least-squares estimation: minimize `Q_n(theta) = (1/n) sum e_t(theta)^2`
//! over the feasible region.
//!
//! The minimizer is a BFGS iteration on the flattened parameter vector with
//! a backtracking Armijo line search. Trial points are projected onto the
//! `d` bounds and rejected (step halved) while they fall outside the root
//! constraints, so every accepted iterate is feasible. Data are rescaled to
//! unit mean square before optimizing, which makes the iterate sequence
//! independent of the scale of `X`.

use serde::{Deserialize, Serialize};

use crate::error::{FarimaError, Result};
use crate::model::{check_feasible, FarimaParams, FeasibleRegion, ResidualEngine};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Starting point; `d` is overridden by each multistart value.
    pub init: Option<FarimaParams>,
    pub max_iter: usize,
    /// Relative stationarity tolerance on the projected gradient.
    pub tol: f64,
    /// Initial values of `d` to start from; empty means a single start at `init`.
    pub multistart_d_grid: Vec<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            init: None,
            max_iter: 500,
            tol: 1e-6,
            multistart_d_grid: vec![-0.3, 0.0, 0.3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: FarimaParams,
    /// `Q_n` at the estimate, the innovation variance estimate.
    pub sigma2_hat: f64,
    /// Sup-norm of the projected gradient of `Q_n` at the estimate.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `Q_n` at every accepted iterate of the winning start.
    pub objective_trace: Vec<f64>,
    pub n: usize,
}

pub fn objective(theta: &FarimaParams, x: &[f64], region: &FeasibleRegion) -> Result<f64> {
    ensure_feasible(theta, region)?;
    Ok(mean_square(&ResidualEngine::new(x).residuals(theta).eps))
}

/// `(2/n) sum e_t de_t/dtheta`.
pub fn objective_grad(theta: &FarimaParams, x: &[f64], region: &FeasibleRegion) -> Result<Vec<f64>> {
    ensure_feasible(theta, region)?;
    let (_, g) = value_and_grad(&ResidualEngine::new(x), theta);
    Ok(g)
}

fn ensure_feasible(theta: &FarimaParams, region: &FeasibleRegion) -> Result<()> {
    if check_feasible(theta, region) {
        Ok(())
    } else {
        Err(FarimaError::Infeasible(format!("{theta:?} not in {region:?}")))
    }
}

fn mean_square(e: &[f64]) -> f64 {
    if e.is_empty() {
        return 0.0;
    }
    e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64
}

fn value_and_grad(engine: &ResidualEngine, theta: &FarimaParams) -> (f64, Vec<f64>) {
    let res = engine.residuals_with_grad(theta);
    let n = res.n().max(1) as f64;
    let grad = res.grad();
    let g = (0..theta.dim())
        .map(|k| 2.0 / n * grad.column(k).iter().zip(&res.eps).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    (mean_square(&res.eps), g)
}

/// Fits a FARIMA(p, d, q) model by least squares.
pub fn fit(x: &[f64], p: usize, q: usize, region: &FeasibleRegion, options: &FitOptions) -> Result<FitResult> {
    let n = x.len();
    let min = 10 * (p + q + 1) + 1;
    if n < min {
        return Err(FarimaError::SampleTooSmall { n, min });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FarimaError::InvalidArgument("data contain non-finite values".into()));
    }
    let init = match &options.init {
        Some(t) if t.p() != p || t.q() != q => {
            return Err(FarimaError::InvalidArgument(format!(
                "initial value has orders ({}, {}), expected ({p}, {q})",
                t.p(),
                t.q()
            )))
        }
        Some(t) => t.clone(),
        None => FarimaParams::zeros(p, q),
    };

    let mut starts: Vec<FarimaParams> = Vec::new();
    let grid = if options.multistart_d_grid.is_empty() {
        vec![init.d]
    } else {
        options.multistart_d_grid.clone()
    };
    for d in grid {
        let mut s = init.clone();
        s.d = region.clamp_d(d);
        if !starts.contains(&s) {
            starts.push(s);
        }
    }
    for s in &starts {
        ensure_feasible(s, region)?;
    }

    let scale = mean_square(x).sqrt();
    let scaled: Vec<f64> = if scale > 0.0 {
        x.iter().map(|v| v / scale).collect()
    } else {
        x.to_vec()
    };
    let engine = ResidualEngine::new(&scaled);
    let var_scale = if scale > 0.0 { scale * scale } else { 1.0 };

    let mut best: Option<FitResult> = None;
    for start in starts {
        let mut run = minimize(&engine, start, region, options);
        run.sigma2_hat *= var_scale;
        run.grad_norm *= var_scale;
        for v in &mut run.objective_trace {
            *v *= var_scale;
        }
        best = Some(match best {
            None => run,
            Some(b) => pick_better(b, run),
        });
    }
    Ok(best.expect("at least one start"))
}

/// Lower objective wins; near-ties go to smaller |d|, then lexicographic theta.
fn pick_better(a: FitResult, b: FitResult) -> FitResult {
    let tie = (a.sigma2_hat - b.sigma2_hat).abs() <= 1e-10 * a.sigma2_hat.abs().max(b.sigma2_hat.abs());
    if !tie {
        return if b.sigma2_hat < a.sigma2_hat { b } else { a };
    }
    let da = a.theta_hat.d.abs();
    let db = b.theta_hat.d.abs();
    if db < da {
        return b;
    }
    if da < db {
        return a;
    }
    let va = a.theta_hat.to_vec();
    let vb = b.theta_hat.to_vec();
    if vb.partial_cmp(&va) == Some(std::cmp::Ordering::Less) {
        b
    } else {
        a
    }
}

fn projected_gradient(g: &[f64], d: f64, region: &FeasibleRegion) -> Vec<f64> {
    let mut pg = g.to_vec();
    let k = pg.len() - 1;
    if (d <= region.d_lo && pg[k] > 0.0) || (d >= region.d_hi && pg[k] < 0.0) {
        pg[k] = 0.0;
    }
    pg
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const MAX_STEP: f64 = 0.5;

fn minimize(engine: &ResidualEngine, start: FarimaParams, region: &FeasibleRegion, options: &FitOptions) -> FitResult {
    let (p, q) = (start.p(), start.q());
    let k = start.dim();
    let to_params = |v: &[f64]| FarimaParams::from_slice(p, q, v).expect("dimension preserved");

    let mut x = start.to_vec();
    let (mut f, mut g) = value_and_grad(engine, &start);
    let mut h = identity(k);
    let mut h_is_identity = true;
    let mut trace = vec![f];
    let mut iterations = 0;
    let mut converged = false;

    loop {
        let pg = projected_gradient(&g, x[k - 1], region);
        if sup_norm(&pg) <= options.tol * f {
            converged = true;
            break;
        }
        if iterations >= options.max_iter {
            break;
        }

        let mut dir: Vec<f64> = (0..k).map(|i| -dot(&h[i], &g)).collect();
        let at_lo = x[k - 1] <= region.d_lo && dir[k - 1] < 0.0;
        let at_hi = x[k - 1] >= region.d_hi && dir[k - 1] > 0.0;
        if at_lo || at_hi {
            dir[k - 1] = 0.0;
        }
        if dot(&dir, &g) >= 0.0 {
            h = identity(k);
            h_is_identity = true;
            dir = pg.iter().map(|v| -v).collect();
        }

        let mut t = (MAX_STEP / sup_norm(&dir)).min(1.0);
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + t * di).collect();
            trial[k - 1] = region.clamp_d(trial[k - 1]);
            let theta = to_params(&trial);
            if check_feasible(&theta, region) {
                let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let f_new = mean_square(&engine.residuals(&theta).eps);
                if f_new <= f + ARMIJO_C1 * dot(&g, &step) && f_new <= f {
                    accepted = Some((trial, theta, step));
                    break;
                }
            }
            t *= 0.5;
        }

        let Some((trial, theta, s)) = accepted else {
            if h_is_identity {
                break;
            }
            h = identity(k);
            h_is_identity = true;
            continue;
        };

        let (f_new, g_new) = value_and_grad(engine, &theta);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if h_is_identity {
                let scale = sy / dot(&y, &y);
                for (i, row) in h.iter_mut().enumerate() {
                    row[i] = scale;
                }
            }
            bfgs_update(&mut h, &s, &y, sy);
            h_is_identity = false;
        }
        x = trial;
        f = f_new;
        g = g_new;
        trace.push(f);
        iterations += 1;
    }

    let grad_norm = sup_norm(&projected_gradient(&g, x[k - 1], region));
    FitResult {
        theta_hat: to_params(&x),
        sigma2_hat: f,
        grad_norm,
        iterations,
        converged,
        objective_trace: trace,
        n: engine.n(),
    }
}

fn identity(k: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// Inverse-Hessian update `H <- (I - rho s y') H (I - rho y s') + rho s s'`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let k = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..k).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..k {
        for j in 0..k {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
