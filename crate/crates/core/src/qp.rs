//! SVM dual solver.
//!
//! Solves
//!
//! ```text
//! max_alpha  e^T alpha - 1/2 (alpha . y)^T K (alpha . y)
//! s.t.       0 <= alpha_i <= C,   y^T alpha = 0
//! ```
//!
//! by sequential minimal optimization over maximal-violating pairs: at each
//! step the pair with the largest Karush-Kuhn-Tucker violation is updated
//! analytically, clipped to the feasible segment of the box. Near-singular
//! pair curvature is floored, which turns the analytic step into a move to
//! the segment endpoint; this also covers slightly indefinite kernels, with
//! a warning. The bias is the mean of the decision-value residuals over
//! free support vectors, or the midpoint of the feasible bias interval when
//! no vector is free.

use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default stopping tolerance on the maximal KKT violation.
pub const DEFAULT_DUAL_TOL: f64 = 1e-6;
/// Default limit on pair updates.
pub const DEFAULT_MAX_STEPS: usize = 1_000_000;
/// Curvature floor for a pair update; steps at the floor move straight to a
/// feasible segment endpoint.
pub const CURVATURE_FLOOR: f64 = 1e-12;

/// One binary dual problem. `labels` must be `+1.0` or `-1.0`.
#[derive(Debug, Clone)]
pub struct DualProblem<'a> {
    pub kernel: &'a Array2<f64>,
    pub labels: &'a [f64],
    pub c: f64,
    pub tol: f64,
    pub max_steps: usize,
    pub warm_start: Option<&'a [f64]>,
}

impl<'a> DualProblem<'a> {
    pub fn new(kernel: &'a Array2<f64>, labels: &'a [f64], c: f64) -> Self {
        DualProblem {
            kernel,
            labels,
            c,
            tol: DEFAULT_DUAL_TOL,
            max_steps: DEFAULT_MAX_STEPS,
            warm_start: None,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_warm_start(mut self, warm: &'a [f64]) -> Self {
        self.warm_start = Some(warm);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    /// Dual objective `e^T alpha - 1/2 (alpha . y)^T K (alpha . y)`.
    pub objective: f64,
    /// Maximal KKT violation at exit; at most `tol` when `converged`.
    pub kkt_residual: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Solves one binary dual problem. See the module docs for the algorithm.
pub fn solve_dual(problem: &DualProblem) -> Result<DualSolution> {
    solve_dual_observed(problem, |_| {})
}

/// As [`solve_dual`], invoking `observer` with the multipliers after every
/// accepted pair update.
pub fn solve_dual_observed(
    problem: &DualProblem,
    mut observer: impl FnMut(&[f64]),
) -> Result<DualSolution> {
    let k = problem.kernel;
    let y = problem.labels;
    let c = problem.c;
    let n = y.len();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: k.nrows(),
        });
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::BadBinaryLabels);
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::SingleClass);
    }
    if !c.is_finite() || c <= 0.0 {
        return Err(Error::InvalidDocument(format!("C = {c} is invalid")));
    }

    let mut alpha = vec![0.0f64; n];
    if let Some(warm) = problem.warm_start {
        if warm.len() == n {
            let mut candidate: Vec<f64> = warm.iter().map(|&a| a.clamp(0.0, c)).collect();
            let drift: f64 = candidate
                .iter()
                .zip(y)
                .map(|(&a, &yi)| a * yi)
                .sum();
            if drift.abs() <= 1e-8 * (1.0 + c * n as f64) {
                std::mem::swap(&mut alpha, &mut candidate);
            }
        }
    }

    // Gradient of the (minimized) objective 1/2 a^T Q a - e^T a,
    // Q_ij = y_i y_j K_ij.
    let mut grad = vec![-1.0f64; n];
    if alpha.iter().any(|&a| a != 0.0) {
        for t in 0..n {
            let mut acc = 0.0;
            let row = k.row(t);
            for j in 0..n {
                acc += y[j] * row[j] * alpha[j];
            }
            grad[t] = y[t] * acc - 1.0;
        }
    }

    let mut warned_curvature = false;
    let mut steps = 0;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    while steps < problem.max_steps {
        let (i, up_val) = match select_up(&alpha, y, &grad, c) {
            Some(v) => v,
            None => break,
        };
        let (j, low_val) = match select_low(&alpha, y, &grad, c) {
            Some(v) => v,
            None => break,
        };
        residual = up_val - low_val;
        if residual <= problem.tol {
            converged = true;
            break;
        }

        let mut a = k[[i, i]] + k[[j, j]] - 2.0 * k[[i, j]];
        if a <= CURVATURE_FLOOR {
            if a < 0.0 && !warned_curvature {
                log::warn!(
                    "kernel matrix has negative pair curvature ({a:.3e}); clipping steps to the feasible segment"
                );
                warned_curvature = true;
            }
            a = CURVATURE_FLOOR;
        }
        let delta = (up_val - low_val) / a;

        let old_i = alpha[i];
        let old_j = alpha[j];
        let sum = y[i] * old_i + y[j] * old_j;
        alpha[i] = (old_i + y[i] * delta).clamp(0.0, c);
        alpha[j] = (y[j] * (sum - y[i] * alpha[i])).clamp(0.0, c);
        alpha[i] = (y[i] * (sum - y[j] * alpha[j])).clamp(0.0, c);

        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        let (row_i, row_j) = (k.row(i), k.row(j));
        for t in 0..n {
            grad[t] += y[t] * (y[i] * di * row_i[t] + y[j] * dj * row_j[t]);
        }
        steps += 1;
        observer(&alpha);
    }

    // Exit-state violation and bias.
    let up = select_up(&alpha, y, &grad, c);
    let low = select_low(&alpha, y, &grad, c);
    if let (Some((_, u)), Some((_, l))) = (up, low) {
        residual = u - l;
        if residual <= problem.tol {
            converged = true;
        }
    }
    let free: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0 && alpha[t] < c).collect();
    let bias = if !free.is_empty() {
        free.iter().map(|&t| -y[t] * grad[t]).sum::<f64>() / free.len() as f64
    } else {
        match (up, low) {
            (Some((_, u)), Some((_, l))) => (u + l) / 2.0,
            (Some((_, u)), None) => u,
            (None, Some((_, l))) => l,
            (None, None) => 0.0,
        }
    };

    let mut objective = 0.0;
    for t in 0..n {
        // 1/2 a^T Q a = 1/2 a^T (grad + e), since grad = Q a - e.
        objective += alpha[t] - 0.5 * alpha[t] * (grad[t] + 1.0);
    }

    Ok(DualSolution {
        alpha,
        bias,
        objective,
        kkt_residual: residual.max(0.0),
        steps,
        converged,
    })
}

fn select_up(alpha: &[f64], y: &[f64], grad: &[f64], c: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for t in 0..alpha.len() {
        let movable = (y[t] == 1.0 && alpha[t] < c) || (y[t] == -1.0 && alpha[t] > 0.0);
        if movable {
            let v = -y[t] * grad[t];
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((t, v));
            }
        }
    }
    best
}

fn select_low(alpha: &[f64], y: &[f64], grad: &[f64], c: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for t in 0..alpha.len() {
        let movable = (y[t] == 1.0 && alpha[t] > 0.0) || (y[t] == -1.0 && alpha[t] < c);
        if movable {
            let v = -y[t] * grad[t];
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((t, v));
            }
        }
    }
    best
}

/// One-vs-rest solutions for every class, in ascending class order.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassSolution {
    pub classes: Vec<i64>,
    pub per_class: Vec<DualSolution>,
}

/// Distinct labels in ascending order.
pub fn distinct_classes(labels: &[i64]) -> Vec<i64> {
    let mut classes: Vec<i64> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// Encodes one-vs-rest targets for `class`: `+1` on the class, `-1` on the
/// rest.
pub fn one_vs_rest_labels(labels: &[i64], class: i64) -> Vec<f64> {
    labels
        .iter()
        .map(|&l| if l == class { 1.0 } else { -1.0 })
        .collect()
}

/// Solves one independent one-vs-rest dual per class over a shared kernel.
/// Classes are solved in parallel; results are ordered by class label.
pub fn solve_multiclass(
    kernel: &Array2<f64>,
    labels: &[i64],
    c: f64,
    tol: f64,
    warm_starts: Option<&[Vec<f64>]>,
) -> Result<MulticlassSolution> {
    let classes = distinct_classes(labels);
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let per_class: Result<Vec<DualSolution>> = classes
        .par_iter()
        .enumerate()
        .map(|(ci, &class)| {
            let y = one_vs_rest_labels(labels, class);
            let mut problem = DualProblem::new(kernel, &y, c).with_tol(tol);
            if let Some(warm) = warm_starts {
                if let Some(w) = warm.get(ci) {
                    problem.warm_start = Some(w);
                }
            }
            solve_dual(&problem)
        })
        .collect();
    Ok(MulticlassSolution {
        classes,
        per_class: per_class?,
    })
}
