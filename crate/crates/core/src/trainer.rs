//! Alternating training loop.
//!
//! Each outer iteration performs three blocks:
//!
//! 1. solve the SVM dual on the composite kernel `K = sum_m g_m K_m`
//!    (one dual per class above two classes, one-vs-rest),
//! 2. refresh the per-path function norms
//!    `||w_m||^2 = g_m^2 sum_c (alpha_c . y_c)^T K_m (alpha_c . y_c)`,
//! 3. update the node weights: one guarded projected-gradient step for
//!    nodes with penalty exponent `p_v >= 1`, and a concave-convex
//!    surrogate step (the penalty linearized at the sweep start, the
//!    surrogate minimized by repeated projected-gradient steps) for nodes
//!    with `0 < p_v < 1`.
//!
//! Both weight updates use gradients evaluated at the sweep-start state and
//! move all touched nodes simultaneously under one backtracking line
//! search, so the regularizer value never increases; the dual solve
//! minimizes the remaining blocks, which makes the recorded objective
//! non-increasing up to solver tolerance. Weights driven to zero are
//! pruned together with their paths and never return.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelSpec, KernelWorkspace};
use crate::model::TrainedModel;
use crate::qp::{distinct_classes, one_vs_rest_labels, solve_dual, DualProblem};
use crate::spn::{enumerate_paths, prune_zero_nodes, NodeId, PathTable, SpnGraph, DEFAULT_PATH_CAP};
use crate::weighting::{
    eval_r_extended, g_all, grad_r1, grad_r2, reg_coeffs, RegularizerParams, WeightVector,
    BETA_FLOOR,
};

/// Training hyperparameters. `params` carries the hinge cost and penalty;
/// the remaining fields control the alternating loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub params: RegularizerParams,
    /// Outer iteration limit.
    pub outer_max_iters: usize,
    /// Relative objective-change threshold that stops the outer loop.
    pub outer_rel_tol: f64,
    /// Initial step size of the backtracking line search.
    pub step_init: f64,
    /// Multiplicative step shrink factor.
    pub step_shrink: f64,
    /// Sufficient-decrease constant of the line search.
    pub armijo_c: f64,
    /// Maximum shrinks before a weight step is declared stalled. One step
    /// size serves every touched node, and a node decaying toward zero
    /// needs steps on its own scale before the norm barrier relents, so
    /// this must cover the spread between the largest and smallest live
    /// weights (2^-60 spans the decay down to the pruning threshold).
    pub max_shrinks: usize,
    /// Inner iteration limit of the concave-convex surrogate minimization.
    pub cccp_max_inner: usize,
    /// Relative surrogate-change threshold that stops the inner loop.
    pub cccp_inner_tol: f64,
    /// Weights at or below this value are pruned with their paths. Values
    /// below the weight-evaluation floor are raised to it, since gradients
    /// are undefined underneath.
    pub prune_threshold: f64,
    /// Limit on the number of expanded paths.
    pub max_paths: usize,
    /// Dual-solver tolerance used inside training (tighter than the
    /// standalone solver default so the objective trace stays monotone).
    pub svm_tol: f64,
    /// Dual-solver pair-update limit.
    pub svm_max_steps: usize,
    /// Recorded into the model; training itself is deterministic.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            params: RegularizerParams::new(1.0, 0.1),
            outer_max_iters: 200,
            outer_rel_tol: 1e-5,
            step_init: 1.0,
            step_shrink: 0.5,
            armijo_c: 1e-4,
            max_shrinks: 60,
            cccp_max_inner: 50,
            cccp_inner_tol: 1e-10,
            prune_threshold: 1e-8,
            max_paths: DEFAULT_PATH_CAP,
            svm_tol: 1e-10,
            svm_max_steps: 1_000_000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn new(params: RegularizerParams) -> Self {
        TrainConfig {
            params,
            ..TrainConfig::default()
        }
    }
}

/// Mutable optimization state across outer iterations.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub betas: WeightVector,
    /// `g_m` per path, consistent with `betas`.
    pub g: Vec<f64>,
    /// Dual multipliers, one vector per trained target.
    pub alphas: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    /// `||w_m||^2` per path.
    pub w_norms: Vec<f64>,
    /// Decision values on the training rows per target, cached at the last
    /// dual solve; the hinge term of the objective is evaluated on these.
    pub decisions: Vec<Vec<f64>>,
    /// Recorded objective after each dual solve.
    pub objective_trace: Vec<f64>,
}

/// One line of the training log, emitted per outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iter: usize,
    /// Objective after the dual solve of this iteration.
    pub objective: f64,
    pub r1: f64,
    pub r2: f64,
    /// Hinge-loss sum over targets and rows (unscaled by the cost).
    pub hinge: f64,
    pub train_accuracy: f64,
    /// Objective after this iteration's weight sweep, on the cached
    /// decision values.
    pub objective_after_step: f64,
    /// Product nodes still in the structure after this iteration.
    pub active_nodes: usize,
    /// Nodes pruned in this iteration.
    pub pruned: Vec<NodeId>,
    pub cccp_inner_iters: usize,
    pub stalled: bool,
    pub dual_steps: usize,
    pub converged: bool,
}

/// Everything produced by [`fit`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub records: Vec<IterRecord>,
    pub state: TrainState,
}

/// Composite training kernel `sum_m g_m K_m`. Fails when every path weight
/// is zero.
pub fn compose_optimal_kernel(ws: &KernelWorkspace, g: &[f64]) -> Result<Array2<f64>> {
    if g.iter().all(|&v| v == 0.0) {
        return Err(Error::EmptyModel);
    }
    let mut acc = Array2::<f64>::zeros((ws.n, ws.n));
    for (gram, &gm) in ws.path_grams.iter().zip(g) {
        if gm != 0.0 {
            acc.scaled_add(gm, gram);
        }
    }
    Ok(acc)
}

/// Per-path squared function norms
/// `||w_m||^2 = g_m^2 sum_c (alpha_c . y_c)^T K_m (alpha_c . y_c)`,
/// clamped at zero against roundoff.
pub fn update_w_norms(
    ws: &KernelWorkspace,
    g: &[f64],
    alphas: &[Vec<f64>],
    targets_y: &[Vec<f64>],
) -> Vec<f64> {
    let coefs: Vec<Vec<f64>> = alphas
        .iter()
        .zip(targets_y)
        .map(|(a, y)| a.iter().zip(y).map(|(ai, yi)| ai * yi).collect())
        .collect();
    ws.path_grams
        .iter()
        .zip(g)
        .map(|(gram, &gm)| {
            if gm == 0.0 {
                return 0.0;
            }
            let q: f64 = coefs.iter().map(|v| quadratic_form(gram, v)).sum();
            (gm * gm * q).max(0.0)
        })
        .collect()
}

fn quadratic_form(k: &Array2<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut acc = 0.0;
    for i in 0..n {
        if v[i] == 0.0 {
            continue;
        }
        let row = k.row(i);
        let mut inner = 0.0;
        for j in 0..n {
            inner += row[j] * v[j];
        }
        acc += v[i] * inner;
    }
    acc
}

/// Objective value split into its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveBreakdown {
    pub r1: f64,
    pub r2: f64,
    /// Unscaled hinge-loss sum.
    pub hinge: f64,
    /// `r1 + r2 + c * hinge`.
    pub total: f64,
}

/// Evaluates the regularized primal objective from the current weights,
/// norms, and cached decision values.
pub fn eval_objective(
    table: &PathTable,
    betas: &WeightVector,
    w_norms: &[f64],
    decisions: &[Vec<f64>],
    targets_y: &[Vec<f64>],
    params: &RegularizerParams,
) -> Result<ObjectiveBreakdown> {
    let (r1, r2) = crate::weighting::eval_r(table, betas, w_norms, params)?;
    let hinge = hinge_sum(decisions, targets_y);
    Ok(ObjectiveBreakdown {
        r1,
        r2,
        hinge,
        total: r1 + r2 + params.c * hinge,
    })
}

fn hinge_sum(decisions: &[Vec<f64>], targets_y: &[Vec<f64>]) -> f64 {
    decisions
        .iter()
        .zip(targets_y)
        .map(|(f, y)| {
            f.iter()
                .zip(y)
                .map(|(fi, yi)| (1.0 - yi * fi).max(0.0))
                .sum::<f64>()
        })
        .sum()
}

/// Result of one weight update.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub betas: WeightVector,
    /// True when the line search exhausted its shrinks without progress.
    pub stalled: bool,
    /// Projected-gradient steps taken inside a surrogate minimization.
    pub inner_iters: usize,
}

/// One projected-gradient step with backtracking on all nodes whose penalty
/// exponent is at least one. Gradients are evaluated at the entry state and
/// every touched node moves simultaneously; the step is accepted only under
/// sufficient decrease of the regularizer, so a zero gradient returns the
/// weights unchanged and a step that would land negative stops exactly at
/// zero.
pub fn beta_step_convex(
    table: &PathTable,
    betas: &WeightVector,
    w_norms: &[f64],
    coeffs: &BTreeMap<NodeId, f64>,
    params: &RegularizerParams,
    config: &TrainConfig,
) -> Result<StepOutcome> {
    let touched: Vec<NodeId> = table
        .reg_coeff
        .keys()
        .filter(|v| params.p_of(v) >= 1.0)
        .cloned()
        .collect();
    if touched.is_empty() {
        return Ok(StepOutcome {
            betas: betas.clone(),
            stalled: false,
            inner_iters: 0,
        });
    }
    let mut grads = BTreeMap::new();
    for node in &touched {
        let g = grad_r1(node, table, betas, w_norms)?
            + grad_r2(node, coeffs, betas, params)?;
        grads.insert(node.clone(), g);
    }
    let objective =
        |b: &WeightVector| -> f64 { sum2(eval_r_extended(table, b, w_norms, params)) };
    let (betas, stalled) = armijo_step(betas, &grads, objective, config);
    Ok(StepOutcome {
        betas,
        stalled,
        inner_iters: 0,
    })
}

/// Concave-convex update for all nodes whose penalty exponent is below one:
/// the penalty term is linearized at the entry weights and the resulting
/// convex surrogate (norm part plus linear penalty) is minimized over the
/// touched nodes by repeated guarded projected-gradient steps. Decreasing
/// the surrogate never increases the true regularizer because the concave
/// penalty lies below its linearization. With `p_v = 1` the linearization
/// is exact and a single inner step reproduces [`beta_step_convex`].
pub fn beta_step_cccp(
    table: &PathTable,
    betas: &WeightVector,
    w_norms: &[f64],
    coeffs: &BTreeMap<NodeId, f64>,
    params: &RegularizerParams,
    config: &TrainConfig,
) -> Result<StepOutcome> {
    let touched: Vec<NodeId> = table
        .reg_coeff
        .keys()
        .filter(|v| params.p_of(v) < 1.0)
        .cloned()
        .collect();
    if touched.is_empty() {
        return Ok(StepOutcome {
            betas: betas.clone(),
            stalled: false,
            inner_iters: 0,
        });
    }

    // Linearized penalty slopes, fixed for the whole inner loop.
    let mut rho = BTreeMap::new();
    for node in &touched {
        rho.insert(node.clone(), grad_r2(node, coeffs, betas, params)?);
    }
    let surrogate = |b: &WeightVector| -> f64 {
        let (r1, _) = eval_r_extended(table, b, w_norms, params);
        r1 + rho.iter().map(|(v, s)| s * b[v]).sum::<f64>()
    };

    let entry = betas.clone();
    let mut current = betas.clone();
    let mut value = surrogate(&current);
    let mut inner_iters = 0;
    let mut stalled = false;
    for _ in 0..config.cccp_max_inner {
        // The frozen-norm barrier weakens as the entry weights shrink, so a
        // dying node can be driven below the evaluation floor, where its
        // norm gradient is no longer defined. Such a weight is already far
        // under any usable pruning threshold: stop refining and let the
        // caller prune it.
        let below_floor = touched
            .iter()
            .any(|v| current[v] > 0.0 && current[v] < BETA_FLOOR);
        if below_floor {
            break;
        }
        let mut grads = BTreeMap::new();
        for node in &touched {
            let g = grad_r1(node, table, &current, w_norms)? + rho[node];
            grads.insert(node.clone(), g);
        }
        let (next, step_stalled) = armijo_step(&current, &grads, surrogate, config);
        if step_stalled {
            stalled = inner_iters == 0;
            break;
        }
        inner_iters += 1;
        let next_value = surrogate(&next);
        let done = (value - next_value).abs() <= config.cccp_inner_tol * value.abs().max(1.0);
        current = next;
        value = next_value;
        if done {
            break;
        }
    }

    // Majorization guarantees descent; guard against roundoff regardless.
    let before = sum2(eval_r_extended(table, &entry, w_norms, params));
    let after = sum2(eval_r_extended(table, &current, w_norms, params));
    if after > before {
        return Ok(StepOutcome {
            betas: entry,
            stalled: true,
            inner_iters,
        });
    }
    Ok(StepOutcome {
        betas: current,
        stalled,
        inner_iters,
    })
}

fn sum2((a, b): (f64, f64)) -> f64 {
    a + b
}

/// Projected step `beta <- max(beta - eta * grad, 0)` on the keys of
/// `grads`, with `eta` backtracked until sufficient decrease of
/// `objective`. Returns the entry weights and a stalled flag when the
/// shrinks are exhausted.
fn armijo_step(
    betas: &WeightVector,
    grads: &BTreeMap<NodeId, f64>,
    objective: impl Fn(&WeightVector) -> f64,
    config: &TrainConfig,
) -> (WeightVector, bool) {
    if grads.values().all(|&g| g == 0.0) {
        return (betas.clone(), false);
    }
    let base = objective(betas);
    let mut eta = config.step_init;
    for _ in 0..=config.max_shrinks {
        let mut candidate = betas.clone();
        let mut directional = 0.0;
        let mut moved = false;
        for (node, &grad) in grads {
            let old = betas[node];
            let new = (old - eta * grad).max(0.0);
            directional += grad * (new - old);
            if new != old {
                moved = true;
            }
            candidate.insert(node.clone(), new);
        }
        if !moved {
            // Projection pinned every touched node; nothing to change.
            return (betas.clone(), false);
        }
        let value = objective(&candidate);
        if value <= base + config.armijo_c * directional {
            return (candidate, false);
        }
        eta *= config.step_shrink;
    }
    (betas.clone(), true)
}

struct Problem<'a> {
    data: &'a Array2<f64>,
    labels: &'a [i64],
    classes: Vec<i64>,
    /// Trained one-vs-rest targets: all classes when more than two,
    /// otherwise just the larger class.
    targets: Vec<i64>,
    targets_y: Vec<Vec<f64>>,
}

impl<'a> Problem<'a> {
    fn new(data: &'a Array2<f64>, labels: &'a [i64]) -> Result<Self> {
        if data.nrows() == 0 || labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if data.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: data.nrows(),
                got: labels.len(),
            });
        }
        let classes = distinct_classes(labels);
        if classes.len() < 2 {
            return Err(Error::SingleClass);
        }
        let targets: Vec<i64> = if classes.len() == 2 {
            vec![classes[1]]
        } else {
            classes.clone()
        };
        let targets_y = targets
            .iter()
            .map(|&t| one_vs_rest_labels(labels, t))
            .collect();
        Ok(Problem {
            data,
            labels,
            classes,
            targets,
            targets_y,
        })
    }

    fn predict_labels(&self, decisions: &[Vec<f64>]) -> Vec<i64> {
        if self.targets.len() == 1 {
            return decisions[0]
                .iter()
                .map(|&d| if d >= 0.0 { self.classes[1] } else { self.classes[0] })
                .collect();
        }
        // Strict argmax: ties keep the earliest target.
        let mut best_idx = vec![0usize; self.labels.len()];
        let mut best_val = decisions[0].clone();
        for (c, row) in decisions.iter().enumerate().skip(1) {
            for ((bi, bv), &d) in best_idx.iter_mut().zip(&mut best_val).zip(row) {
                if d > *bv {
                    *bi = c;
                    *bv = d;
                }
            }
        }
        best_idx.into_iter().map(|c| self.targets[c]).collect()
    }
}

/// Trains a model. See the module docs for the loop structure; the loop
/// stops when the relative objective change drops below
/// `config.outer_rel_tol` or after `config.outer_max_iters` iterations.
pub fn fit(
    data: &Array2<f64>,
    labels: &[i64],
    graph: &SpnGraph,
    kernels: &[KernelSpec],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    fit_observed(data, labels, graph, kernels, config, |_| {})
}

/// As [`fit`], invoking `observer` with each iteration record as it is
/// produced.
pub fn fit_observed(
    data: &Array2<f64>,
    labels: &[i64],
    graph: &SpnGraph,
    kernels: &[KernelSpec],
    config: &TrainConfig,
    mut observer: impl FnMut(&IterRecord),
) -> Result<TrainOutcome> {
    config.params.validate()?;
    let problem = Problem::new(data, labels)?;
    graph.check_kernel_refs(&kernels.iter().map(|k| k.name.clone()).collect())?;

    let mut graph = graph.clone();
    let mut table = enumerate_paths(&graph, config.max_paths)?;
    let mut ws = KernelWorkspace::build(data, kernels, &table)?;
    let mut coeffs = reg_coeffs(&table, &config.params);

    let mut state = TrainState {
        betas: graph.product_ids().into_iter().map(|id| (id, 1.0)).collect(),
        g: Vec::new(),
        alphas: vec![Vec::new(); problem.targets.len()],
        biases: vec![0.0; problem.targets.len()],
        w_norms: Vec::new(),
        decisions: Vec::new(),
        objective_trace: Vec::new(),
    };
    let mut records = Vec::new();
    let mut pruned_total: Vec<NodeId> = Vec::new();

    for iter in 1..=config.outer_max_iters {
        state.g = g_all(&table, &state.betas);
        let k_opt = compose_optimal_kernel(&ws, &state.g)?;

        let solutions: Result<Vec<_>> = {
            use rayon::prelude::*;
            problem
                .targets_y
                .par_iter()
                .zip(state.alphas.par_iter())
                .map(|(y, warm)| {
                    let mut dual = DualProblem::new(&k_opt, y, config.params.c)
                        .with_tol(config.svm_tol);
                    dual.max_steps = config.svm_max_steps;
                    if warm.len() == y.len() {
                        dual.warm_start = Some(warm);
                    }
                    solve_dual(&dual)
                })
                .collect()
        };
        let solutions = solutions?;
        let dual_steps = solutions.iter().map(|s| s.steps).sum();
        state.alphas = solutions.iter().map(|s| s.alpha.clone()).collect();
        state.biases = solutions.iter().map(|s| s.bias).collect();
        state.decisions = state
            .alphas
            .iter()
            .zip(&problem.targets_y)
            .zip(&state.biases)
            .map(|((alpha, y), &b)| decision_values(&k_opt, alpha, y, b))
            .collect();
        state.w_norms = update_w_norms(&ws, &state.g, &state.alphas, &problem.targets_y);

        let objective = eval_objective(
            &table,
            &state.betas,
            &state.w_norms,
            &state.decisions,
            &problem.targets_y,
            &config.params,
        )?;
        let prev = state.objective_trace.last().copied();
        state.objective_trace.push(objective.total);
        let train_accuracy = accuracy(&problem.predict_labels(&state.decisions), problem.labels);
        let converged = prev.is_some_and(|p| {
            (p - objective.total).abs() <= config.outer_rel_tol * p.abs().max(1.0)
        });
        let last_iter = converged || iter == config.outer_max_iters;

        let mut record = IterRecord {
            iter,
            objective: objective.total,
            r1: objective.r1,
            r2: objective.r2,
            hinge: objective.hinge,
            train_accuracy,
            objective_after_step: objective.total,
            active_nodes: table.reg_coeff.len(),
            pruned: Vec::new(),
            cccp_inner_iters: 0,
            stalled: false,
            dual_steps,
            converged,
        };
        if last_iter {
            observer(&record);
            records.push(record);
            break;
        }

        // Weight sweep: convex step first, then the surrogate step from the
        // updated weights. The penalty slopes are separable per node, so
        // the surrogate linearization is unaffected by the convex move.
        let convex = beta_step_convex(
            &table,
            &state.betas,
            &state.w_norms,
            &coeffs,
            &config.params,
            config,
        )?;
        let cccp = beta_step_cccp(
            &table,
            &convex.betas,
            &state.w_norms,
            &coeffs,
            &config.params,
            config,
        )?;
        state.betas = cccp.betas;
        record.stalled = convex.stalled && cccp.stalled;
        record.cccp_inner_iters = cccp.inner_iters;
        let (r1_after, r2_after) =
            eval_r_extended(&table, &state.betas, &state.w_norms, &config.params);
        record.objective_after_step =
            r1_after + r2_after + config.params.c * objective.hinge;

        // Gradients are undefined below the evaluation floor, so the next
        // sweep requires every surviving weight to clear it; prune at the
        // floor even when a lower threshold was configured.
        let prune_at = config.prune_threshold.max(BETA_FLOOR);
        if state.betas.values().any(|&b| b <= prune_at) {
            let pruned = prune_zero_nodes(&graph, &table, &state.betas, prune_at)?;
            ws.retain_paths(&pruned.kept);
            state.w_norms = pruned.kept.iter().map(|&i| state.w_norms[i]).collect();
            state.betas.retain(|id, _| pruned.graph.node(id).is_some());
            for id in &pruned.removed {
                log::debug!("pruned node `{id}`");
            }
            record.pruned = pruned.removed.clone();
            pruned_total.extend(pruned.removed);
            graph = pruned.graph;
            table = pruned.table;
            coeffs = reg_coeffs(&table, &config.params);
        }
        record.active_nodes = table.reg_coeff.len();

        observer(&record);
        records.push(record);
    }

    state.g = g_all(&table, &state.betas);
    let model = TrainedModel::assemble(
        graph,
        table,
        &ws,
        &state,
        &problem.targets,
        &problem.classes,
        problem.data,
        problem.labels,
        &config.params,
        pruned_total,
    )?;
    Ok(TrainOutcome {
        model,
        records,
        state,
    })
}

/// Decision values `K (alpha . y) + b` on the training rows.
pub fn decision_values(k: &Array2<f64>, alpha: &[f64], y: &[f64], bias: f64) -> Vec<f64> {
    let n = alpha.len();
    let coef: Vec<f64> = alpha.iter().zip(y).map(|(a, yi)| a * yi).collect();
    (0..n)
        .map(|i| {
            let row = k.row(i);
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * coef[j];
            }
            acc + bias
        })
        .collect()
}

fn accuracy(predicted: &[i64], labels: &[i64]) -> f64 {
    let hits = predicted
        .iter()
        .zip(labels)
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / labels.len().max(1) as f64
}
