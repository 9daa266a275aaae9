//! Trained-model format, prediction, and the capacity diagnostic.
//!
//! A model stores the (possibly pruned) structure with its path table and
//! node weights, the support rows with their dual multipliers per target,
//! the kernel specifications, and the training-side self-similarities
//! needed to normalize query kernels consistently. Everything serializes
//! to JSON through ordered maps, so saving the same model twice produces
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path as FsPath;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{cross_kernel, raw_diag, KernelSpec, KernelWorkspace};
use crate::qp::one_vs_rest_labels;
use crate::spn::{enumerate_paths, NodeId, PathTable, SpnGraph};
use crate::trainer::TrainState;
use crate::weighting::{g_all, RegularizerParams, WeightVector};

/// Version tag written into every model file.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Dual multipliers for one one-vs-rest target, restricted to the support
/// rows shared by all targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDual {
    pub class: i64,
    pub alpha: Vec<f64>,
    pub bias: f64,
}

/// Training-time summary numbers carried inside the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDiagnostics {
    /// Kernel-complexity constant `sqrt(sum_m sum_i K_m(x_i, x_i))` on the
    /// training rows.
    pub a_constant: f64,
    /// Capacity bound `(2 A / N) * (||w||-term + weight-term + C * hinge)`
    /// evaluated at the final training state.
    pub rademacher_bound: f64,
    pub final_objective: f64,
    pub train_accuracy: f64,
}

/// A trained classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub graph: SpnGraph,
    pub table: PathTable,
    pub betas: WeightVector,
    /// `g_m` per path, consistent with `betas` (verified on load).
    pub g_cache: Vec<f64>,
    /// All class labels, ascending.
    pub classes: Vec<i64>,
    /// Trained one-vs-rest targets: the larger class alone for binary
    /// problems, every class otherwise.
    pub targets: Vec<i64>,
    pub duals: Vec<ModelDual>,
    /// Feature rows of the support vectors.
    pub sv_rows: Vec<Vec<f64>>,
    /// Row indices of the support vectors in the training set.
    pub sv_indices: Vec<usize>,
    pub sv_labels: Vec<i64>,
    pub kernels: Vec<KernelSpec>,
    /// Pre-normalization self-similarities of the support rows, per kernel.
    pub norm_stats: BTreeMap<String, Vec<f64>>,
    pub params: RegularizerParams,
    pub diagnostics: ModelDiagnostics,
    /// Nodes removed over the whole run, in pruning order.
    pub pruned_nodes: Vec<NodeId>,
}

/// Decision values and predicted labels for a batch of queries.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<i64>,
    /// One decision column per target, `n_queries x n_targets`.
    pub decisions: Array2<f64>,
    pub classes: Vec<i64>,
    pub targets: Vec<i64>,
}

impl TrainedModel {
    /// Builds a model from the final training state. The support set is the
    /// union over targets of rows with a strictly positive multiplier.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        graph: SpnGraph,
        table: PathTable,
        ws: &KernelWorkspace,
        state: &TrainState,
        targets: &[i64],
        classes: &[i64],
        data: &Array2<f64>,
        labels: &[i64],
        params: &RegularizerParams,
        pruned_nodes: Vec<NodeId>,
    ) -> Result<TrainedModel> {
        let n = labels.len();
        let sv_indices: Vec<usize> = (0..n)
            .filter(|&i| state.alphas.iter().any(|a| a[i] > 0.0))
            .collect();
        let sv_rows: Vec<Vec<f64>> = sv_indices
            .iter()
            .map(|&i| data.row(i).to_vec())
            .collect();
        let sv_labels: Vec<i64> = sv_indices.iter().map(|&i| labels[i]).collect();
        let duals = targets
            .iter()
            .zip(&state.alphas)
            .zip(&state.biases)
            .map(|((&class, alpha), &bias)| ModelDual {
                class,
                alpha: sv_indices.iter().map(|&i| alpha[i]).collect(),
                bias,
            })
            .collect();
        let norm_stats = ws
            .raw_diags
            .iter()
            .map(|(name, diag)| {
                let restricted = sv_indices.iter().map(|&i| diag[i]).collect();
                (name.clone(), restricted)
            })
            .collect();

        let a_constant = ws.compute_a()?;
        let targets_y: Vec<Vec<f64>> = targets
            .iter()
            .map(|&t| one_vs_rest_labels(labels, t))
            .collect();
        let hinge: f64 = state
            .decisions
            .iter()
            .zip(&targets_y)
            .map(|(f, y)| {
                f.iter()
                    .zip(y)
                    .map(|(fi, yi)| (1.0 - yi * fi).max(0.0))
                    .sum::<f64>()
            })
            .sum();
        let r1: f64 = table
            .paths
            .iter()
            .map(|p| {
                let g = state.g[p.id];
                let wn = state.w_norms[p.id];
                if g > 0.0 {
                    wn / (2.0 * g)
                } else {
                    0.0
                }
            })
            .sum();
        let bound = capacity_bound(a_constant, n, r1, unit_weight_term(&table, &state.betas), params.c, hinge);
        let (final_objective, train_accuracy) = {
            let obj = state.objective_trace.last().copied().unwrap_or(f64::NAN);
            let predicted = predict_labels_from_decisions(&state.decisions, classes, targets);
            let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
            (obj, hits as f64 / n.max(1) as f64)
        };

        Ok(TrainedModel {
            format_version: MODEL_FORMAT_VERSION,
            graph,
            table,
            betas: state.betas.clone(),
            g_cache: state.g.clone(),
            classes: classes.to_vec(),
            targets: targets.to_vec(),
            duals,
            sv_rows,
            sv_indices,
            sv_labels,
            kernels: ws.specs.clone(),
            norm_stats,
            params: params.clone(),
            diagnostics: ModelDiagnostics {
                a_constant,
                rademacher_bound: bound,
                final_objective,
                train_accuracy,
            },
            pruned_nodes,
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("model serialization");
        text.push('\n');
        text
    }

    pub fn from_json_str(text: &str) -> Result<TrainedModel> {
        let model: TrainedModel = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &FsPath) -> Result<()> {
        fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<TrainedModel> {
        let text = fs::read_to_string(path)?;
        TrainedModel::from_json_str(&text)
    }

    /// Integrity checks run on every loaded model: version match, structure
    /// re-expansion equal to the stored path table, path weights consistent
    /// with the node weights, and well-formed duals and support data.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let corrupt = |reason: &str| Err(Error::CorruptModel(reason.into()));
        if self.table.is_empty() || self.kernels.is_empty() {
            return Err(Error::EmptyModel);
        }

        let expanded = enumerate_paths(&self.graph, self.table.len().max(1))?;
        if expanded != self.table {
            return corrupt("stored path table does not match the structure");
        }
        let products: Vec<NodeId> = self.graph.product_ids();
        if products.len() != self.betas.len()
            || products.iter().any(|id| !self.betas.contains_key(id))
        {
            return corrupt("weight map does not cover the product nodes");
        }
        if self.betas.values().any(|b| !b.is_finite() || *b < 0.0) {
            return corrupt("weights must be finite and nonnegative");
        }
        let g = g_all(&self.table, &self.betas);
        if g.len() != self.g_cache.len()
            || g.iter()
                .zip(&self.g_cache)
                .any(|(a, b)| (a - b).abs() > 1e-12 * a.abs().max(1.0))
        {
            return corrupt("cached path weights disagree with the node weights");
        }

        self.graph
            .check_kernel_refs(&self.kernels.iter().map(|k| k.name.clone()).collect())?;
        for spec in &self.kernels {
            spec.validate()?;
        }
        if self.classes.windows(2).any(|w| w[0] >= w[1]) {
            return corrupt("classes must be strictly ascending");
        }
        let expected_targets: Vec<i64> = if self.classes.len() == 2 {
            vec![self.classes[1]]
        } else {
            self.classes.clone()
        };
        if self.targets != expected_targets {
            return corrupt("targets do not match the class list");
        }
        if self.duals.len() != self.targets.len()
            || self
                .duals
                .iter()
                .zip(&self.targets)
                .any(|(d, &t)| d.class != t)
        {
            return corrupt("one dual per target is required, in target order");
        }

        let nsv = self.sv_rows.len();
        if self.sv_indices.len() != nsv || self.sv_labels.len() != nsv {
            return corrupt("support-row fields disagree in length");
        }
        let dim = self.sv_rows.first().map(|r| r.len()).unwrap_or(0);
        if self.sv_rows.iter().any(|r| r.len() != dim) {
            return corrupt("support rows have mixed dimensions");
        }
        for dual in &self.duals {
            if dual.alpha.len() != nsv {
                return corrupt("dual multipliers disagree with the support count");
            }
            if dual.alpha.iter().any(|a| !a.is_finite() || *a < 0.0) || !dual.bias.is_finite() {
                return corrupt("dual values must be finite and multipliers nonnegative");
            }
        }
        for spec in &self.kernels {
            match self.norm_stats.get(&spec.name) {
                Some(diag) if diag.len() == nsv => {}
                _ => return corrupt("normalization statistics missing for a kernel"),
            }
        }
        Ok(())
    }

    fn sv_matrix(&self) -> Array2<f64> {
        let dim = self.sv_rows.first().map(|r| r.len()).unwrap_or(0);
        let flat: Vec<f64> = self.sv_rows.iter().flatten().copied().collect();
        Array2::from_shape_vec((self.sv_rows.len(), dim), flat).expect("support rows rectangular")
    }

    /// Composite cross-kernel block `sum_m g_m K_m(queries, support)`.
    fn composite_cross(&self, queries: &Array2<f64>) -> Result<Array2<f64>> {
        let train = self.sv_matrix();
        let mut basis_cross = BTreeMap::new();
        for spec in &self.kernels {
            let block = cross_kernel(spec, &train, &self.norm_stats[&spec.name], queries)?;
            basis_cross.insert(spec.name.clone(), block);
        }
        let mut acc = Array2::<f64>::zeros((queries.nrows(), self.sv_rows.len()));
        for path in &self.table.paths {
            let g = self.g_cache[path.id];
            if g == 0.0 {
                continue;
            }
            let mut block = Array2::<f64>::ones(acc.dim());
            for leaf in &path.leaves {
                block = &block * &basis_cross[leaf];
            }
            acc.scaled_add(g, &block);
        }
        Ok(acc)
    }
}

/// Classifies `queries`: decision values per target, then the sign rule for
/// binary problems or the argmax target otherwise.
pub fn predict(model: &TrainedModel, queries: &Array2<f64>) -> Result<Prediction> {
    let cross = model.composite_cross(queries)?;
    let nq = queries.nrows();
    let mut decisions = Array2::<f64>::zeros((nq, model.targets.len()));
    for (t, dual) in model.duals.iter().enumerate() {
        let y = one_vs_rest_labels(&model.sv_labels, dual.class);
        let coef: Vec<f64> = dual
            .alpha
            .iter()
            .zip(&y)
            .map(|(a, yi)| a * yi)
            .collect();
        for qi in 0..nq {
            let row = cross.row(qi);
            let mut acc = 0.0;
            for (j, c) in coef.iter().enumerate() {
                acc += row[j] * c;
            }
            decisions[[qi, t]] = acc + dual.bias;
        }
    }
    let per_target: Vec<Vec<f64>> = (0..model.targets.len())
        .map(|t| decisions.column(t).to_vec())
        .collect();
    let labels = predict_labels_from_decisions(&per_target, &model.classes, &model.targets);
    Ok(Prediction {
        labels,
        decisions,
        classes: model.classes.clone(),
        targets: model.targets.clone(),
    })
}

pub(crate) fn predict_labels_from_decisions(
    decisions: &[Vec<f64>],
    classes: &[i64],
    targets: &[i64],
) -> Vec<i64> {
    let n = decisions.first().map(|d| d.len()).unwrap_or(0);
    (0..n)
        .map(|i| {
            if targets.len() == 1 {
                if decisions[0][i] >= 0.0 {
                    classes[1]
                } else {
                    classes[0]
                }
            } else {
                let mut best = 0;
                for t in 1..targets.len() {
                    if decisions[t][i] > decisions[best][i] {
                        best = t;
                    }
                }
                targets[best]
            }
        })
        .collect()
}

/// `sum_v s_v beta_v`: the weight penalty at unit strength and unit
/// exponents, as used by the capacity bound.
fn unit_weight_term(table: &PathTable, betas: &WeightVector) -> f64 {
    table
        .reg_coeff
        .iter()
        .map(|(node, r)| {
            let s = *r.numer() as f64 / *r.denom() as f64;
            s * betas[node]
        })
        .sum()
}

fn capacity_bound(a: f64, n: usize, r1: f64, weight_term: f64, c: f64, hinge: f64) -> f64 {
    2.0 * a / n as f64 * (r1 + weight_term + c * hinge)
}

/// Recomputes the capacity bound of `model` on a labeled dataset: the
/// kernel-complexity constant over the rows, the function-norm term from
/// the support Grams, the weight term at unit strength, and the hinge loss
/// of the model's own decisions.
pub fn rademacher_bound(model: &TrainedModel, data: &Array2<f64>, labels: &[i64]) -> Result<f64> {
    let n = labels.len();
    if data.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: data.nrows(),
            got: n,
        });
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }

    // A^2 sums every path's self-similarity over the rows; normalized
    // kernels contribute exactly one per row.
    let mut diag_per_kernel: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for spec in &model.kernels {
        let d = if spec.normalize {
            vec![1.0; n]
        } else {
            raw_diag(data, spec)
        };
        diag_per_kernel.insert(spec.name.clone(), d);
    }
    let mut a_sq = 0.0;
    for path in &model.table.paths {
        let mut prod = vec![1.0; n];
        for leaf in &path.leaves {
            for (p, d) in prod.iter_mut().zip(&diag_per_kernel[leaf]) {
                *p *= d;
            }
        }
        a_sq += prod.iter().sum::<f64>();
    }

    // ||w_m||^2 from the support-row Grams; the path functions live in the
    // span of the support images, so the restriction is exact.
    let sv = model.sv_matrix();
    let mut r1 = 0.0;
    if !model.sv_rows.is_empty() {
        let mut basis = BTreeMap::new();
        for spec in &model.kernels {
            basis.insert(
                spec.name.clone(),
                cross_kernel(spec, &sv, &model.norm_stats[&spec.name], &sv)?,
            );
        }
        let coefs: Vec<Vec<f64>> = model
            .duals
            .iter()
            .map(|d| {
                let y = one_vs_rest_labels(&model.sv_labels, d.class);
                d.alpha.iter().zip(&y).map(|(a, yi)| a * yi).collect()
            })
            .collect();
        for path in &model.table.paths {
            let g = model.g_cache[path.id];
            if g == 0.0 {
                continue;
            }
            let gram = crate::kernel::path_gram(&basis, &path.leaves);
            let q: f64 = coefs
                .iter()
                .map(|v| {
                    let mut acc = 0.0;
                    for i in 0..v.len() {
                        for j in 0..v.len() {
                            acc += v[i] * gram[[i, j]] * v[j];
                        }
                    }
                    acc
                })
                .sum();
            r1 += (g * g * q).max(0.0) / (2.0 * g);
        }
    }

    let prediction = predict(model, data)?;
    let mut hinge = 0.0;
    for (t, &target) in model.targets.iter().enumerate() {
        let y = one_vs_rest_labels(labels, target);
        for (i, &yi) in y.iter().enumerate() {
            hinge += (1.0 - yi * prediction.decisions[[i, t]]).max(0.0);
        }
    }

    Ok(capacity_bound(
        a_sq.max(0.0).sqrt(),
        n,
        r1,
        unit_weight_term(&model.table, &model.betas),
        model.params.c,
        hinge,
    ))
}
