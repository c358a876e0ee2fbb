//! Independent dual solver for small problems: accelerated projected
//! gradient ascent with an exact projection onto the feasible set.

use super::{check_training_input, dual_objective, SvmModel, TrainConfig};
use crate::error::{Error, Result};
use crate::kernels::KernelMatrix;
use crate::linalg;
use crate::singularity::Label;

const MAX_SIZE: usize = 50;
const MAX_ITER: usize = 2_000_000;
/// Stop once the objective improved by less than this over a full window.
const STAGNATION: f64 = 1e-13;
const WINDOW: usize = 2000;

/// Euclidean projection onto `{0 ≤ c ≤ C, yᵀc = 0}`; the multiplier of the
/// equality constraint is found by bisection.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - mu * yi).clamp(0.0, c)).collect() };
    let residual = |x: &[f64]| -> f64 { x.iter().zip(y).map(|(a, b)| a * b).sum() };
    let bound = v.iter().fold(0.0f64, |m, x| m.max(x.abs())) + c + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if residual(&at(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * bound {
            break;
        }
    }
    at(0.5 * (lo + hi))
}

/// Reference solution of the same dual as [`super::train`]; only meant for
/// verification on `n ≤ 50`.
pub fn qp_oracle_small(gram: &impl KernelMatrix, labels: &[Label], c: f64) -> Result<SvmModel> {
    let config = TrainConfig::new(c);
    config.validate()?;
    let y = check_training_input(gram, labels)?;
    let n = y.len();
    if n > MAX_SIZE {
        return Err(Error::InvalidConfig(format!("oracle is limited to {MAX_SIZE} points, got {n}")));
    }
    let q: Vec<f64> = (0..n * n).map(|k| y[k / n] * y[k % n] * gram.get(k / n, k % n)).collect();
    let lipschitz = linalg::symmetric_eigenvalues(nalgebra::DMatrix::from_row_slice(n, n, &q))?
        .last()
        .copied()
        .unwrap_or(1.0)
        .max(1e-12);
    let step = 1.0 / lipschitz;
    let objective = |x: &[f64]| dual_objective(gram, &y, x);
    let gradient =
        |x: &[f64]| -> Vec<f64> { (0..n).map(|i| 1.0 - (0..n).map(|j| q[i * n + j] * x[j]).sum::<f64>()).collect() };

    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut obj = objective(&x);
    let mut history = vec![obj];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        iterations += 1;
        let g = gradient(&z);
        let ascent: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| zi + step * gi).collect();
        let x_new = project(&ascent, &y, c);
        let obj_new = objective(&x_new);
        if obj_new < obj {
            // Momentum overshot (or rounding noise at the optimum): restart.
            z.clone_from(&x);
            t = 1.0;
        } else {
            let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            z = x_new.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / t_new * (a - b)).collect();
            x = x_new;
            t = t_new;
            obj = obj_new;
        }
        history.push(obj);
        if history.len() > WINDOW && obj - history[history.len() - 1 - WINDOW] < STAGNATION {
            converged = true;
            break;
        }
    }

    // Bias from the gradient of f = −dual, treating near-bound values as bound.
    let grad_f: Vec<f64> = gradient(&x).into_iter().map(|g| -g).collect();
    let eps = 1e-9 * c.max(1.0);
    let (mut ub, mut lb, mut sum, mut free) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for i in 0..n {
        let yg = y[i] * grad_f[i];
        let (upper, lower) = (x[i] >= c - eps, x[i] <= eps);
        if (upper && y[i] > 0.0) || (lower && y[i] < 0.0) {
            lb = lb.max(yg);
        } else if upper || lower {
            ub = ub.min(yg);
        } else {
            sum += yg;
            free += 1;
        }
    }
    let bias = if free > 0 { sum / free as f64 } else { 0.5 * (ub + lb) };
    Ok(SvmModel::from_dual(&x, &y, bias, config, obj, iterations, converged))
}
