//! Sequential minimal optimisation with second-order working-set selection.
//!
//! Works on the equivalent minimisation `f(α) = ½ αᵀQα − Σα` with
//! `Q_ij = y_i y_j K_ij`, keeping the gradient `G = Qα − 1` up to date.

use super::{check_training_input, SvmModel, TrainConfig};
use crate::error::Result;
use crate::kernels::KernelMatrix;
use crate::singularity::Label;

/// Curvature floor for non-positive-definite pairs.
const TAU: f64 = 1e-12;

struct Solver<'a, K> {
    gram: &'a K,
    y: Vec<f64>,
    c: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
    diag: Vec<f64>,
}

impl<K: KernelMatrix> Solver<'_, K> {
    fn at_upper(&self, t: usize) -> bool {
        self.alpha[t] >= self.c
    }

    fn at_lower(&self, t: usize) -> bool {
        self.alpha[t] <= 0.0
    }

    /// `t ∈ I_up`: `α_t` can move so that `y_t α_t` increases.
    fn in_up(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            !self.at_upper(t)
        } else {
            !self.at_lower(t)
        }
    }

    fn in_low(&self, t: usize) -> bool {
        if self.y[t] > 0.0 {
            !self.at_lower(t)
        } else {
            !self.at_upper(t)
        }
    }

    /// Most violating pair by second-order gain, or `None` once the KKT gap
    /// is below `tol`.
    fn select(&self, tol: f64) -> Option<(usize, usize)> {
        let n = self.y.len();
        let mut g_max = f64::NEG_INFINITY;
        let mut i = None;
        for t in 0..n {
            let v = -self.y[t] * self.grad[t];
            if self.in_up(t) && v > g_max {
                g_max = v;
                i = Some(t);
            }
        }
        let i = i?;
        let mut g_max2 = f64::NEG_INFINITY;
        let mut j = None;
        let mut best_gain = f64::INFINITY;
        for t in 0..n {
            if !self.in_low(t) {
                continue;
            }
            let v = self.y[t] * self.grad[t];
            g_max2 = g_max2.max(v);
            let diff = g_max + v;
            if diff > 0.0 {
                let quad = self.diag[i] + self.diag[t] - 2.0 * self.gram.get(i, t);
                let gain = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if gain < best_gain {
                    best_gain = gain;
                    j = Some(t);
                }
            }
        }
        if g_max + g_max2 < tol {
            return None;
        }
        j.map(|j| (i, j))
    }

    /// Analytic two-variable update with clipping to the box.
    fn update(&mut self, i: usize, j: usize) -> (f64, f64) {
        let (c, yi, yj) = (self.c, self.y[i], self.y[j]);
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let k_ij = self.gram.get(i, j);
        let quad = (self.diag[i] + self.diag[j] - 2.0 * k_ij).max(TAU);
        let (mut ai, mut aj);
        if yi != yj {
            let delta = (-self.grad[i] - self.grad[j]) / quad;
            let diff = old_i - old_j;
            ai = old_i + delta;
            aj = old_j + delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (self.grad[i] - self.grad[j]) / quad;
            let sum = old_i + old_j;
            ai = old_i - delta;
            aj = old_j + delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..self.y.len() {
            let yt = self.y[t];
            self.grad[t] += yt * (yi * self.gram.get(i, t) * di + yj * self.gram.get(j, t) * dj);
        }
        (di, dj)
    }

    /// Bias `b` (libsvm's ρ): mean of `y_t G_t` over free vectors, else the
    /// midpoint of the feasible interval.
    fn bias(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut sum, mut free) = (0.0, 0usize);
        for t in 0..self.y.len() {
            let yg = self.y[t] * self.grad[t];
            let positive = self.y[t] > 0.0;
            if self.at_upper(t) {
                if positive {
                    lb = lb.max(yg);
                } else {
                    ub = ub.min(yg);
                }
            } else if self.at_lower(t) {
                if positive {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum += yg;
            }
        }
        if free > 0 {
            sum / free as f64
        } else {
            0.5 * (ub + lb)
        }
    }
}

pub fn train(gram: &impl KernelMatrix, labels: &[Label], config: &TrainConfig) -> Result<SvmModel> {
    config.validate()?;
    let y = check_training_input(gram, labels)?;
    let n = y.len();
    let mut solver = Solver {
        gram,
        diag: (0..n).map(|i| gram.get(i, i)).collect(),
        y,
        c: config.c,
        alpha: vec![0.0; n],
        grad: vec![-1.0; n],
    };
    // f(α) = ½αᵀQα − Σα, tracked incrementally; the dual objective is −f.
    let mut f = 0.0f64;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        let Some((i, j)) = solver.select(config.kkt_tol) else {
            converged = true;
            break;
        };
        let (gi, gj) = (solver.grad[i], solver.grad[j]);
        let (qii, qjj) = (solver.diag[i], solver.diag[j]);
        let qij = solver.y[i] * solver.y[j] * gram.get(i, j);
        let (di, dj) = solver.update(i, j);
        let df = gi * di + gj * dj + 0.5 * (qii * di * di + qjj * dj * dj) + qij * di * dj;
        debug_assert!(df <= 1e-12 * (1.0 + f.abs()), "dual objective decreased by {df} at iteration {iterations}");
        f += df;
        iterations += 1;
    }
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations without reaching kkt_tol {}", config.kkt_tol);
    }
    let bias = solver.bias();
    Ok(SvmModel::from_dual(&solver.alpha, &solver.y, bias, *config, -f, iterations, converged))
}
