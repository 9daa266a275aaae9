//! Path weighting and the structured regularizer.
//!
//! Every path `m` is weighted by the geometric combination
//! `g_m = prod_v beta_v^(1/(N_m * N_{m_l}))` of its product-node weights
//! (see [`crate::spn`]). Training minimizes
//!
//! ```text
//! R(beta) = R1 + R2
//! R1 = sum_m ||w_m||^2 / (2 g_m)
//! R2 = sum_v c_v * beta_v^{p_v},   c_v = lambda * sum over occurrences of
//!                                        1 / (N_m * N_{m_l})
//! ```
//!
//! plus the hinge-loss term handled by the trainer. `R1` is jointly convex
//! in `(w, beta)`; `R2` is convex whenever every `p_v >= 1` and concave in
//! the coordinates with `p_v < 1`, which selects the update rule per node.
//! When `g_m` reaches zero the function norm `||w_m||^2` must vanish with
//! it; a zero weight therefore keeps its whole path switched off.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spn::{NodeId, Path, PathTable};

/// Smallest weight at which curvature gradients are evaluated; nodes at or
/// below the pruning threshold are removed before gradients are requested.
pub const BETA_FLOOR: f64 = 1e-10;

/// Nonnegative weight per product node.
pub type WeightVector = BTreeMap<NodeId, f64>;

/// Penalty configuration: hinge cost `c`, penalty strength `lambda`, and
/// the per-node exponents `p_v` with a global default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerParams {
    pub c: f64,
    pub lambda: f64,
    #[serde(default = "default_p")]
    pub default_p: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub node_p: BTreeMap<NodeId, f64>,
}

fn default_p() -> f64 {
    1.0
}

impl RegularizerParams {
    pub fn new(c: f64, lambda: f64) -> Self {
        RegularizerParams {
            c,
            lambda,
            default_p: 1.0,
            node_p: BTreeMap::new(),
        }
    }

    pub fn with_default_p(mut self, p: f64) -> Self {
        self.default_p = p;
        self
    }

    pub fn with_node_p(mut self, node: &str, p: f64) -> Self {
        self.node_p.insert(node.into(), p);
        self
    }

    pub fn p_of(&self, node: &str) -> f64 {
        self.node_p.get(node).copied().unwrap_or(self.default_p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Error::InvalidDocument(format!("{name} = {v} is invalid"));
        if !self.c.is_finite() || self.c <= 0.0 {
            return Err(bad("c", self.c));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(bad("lambda", self.lambda));
        }
        for (node, &p) in std::iter::once((&"default_p".to_string(), &self.default_p))
            .chain(self.node_p.iter())
        {
            if !p.is_finite() || p <= 0.0 {
                return Err(Error::NonpositiveExponent {
                    node: node.clone(),
                    p,
                });
            }
        }
        Ok(())
    }
}

/// Evaluates `g_m` for one path. Exponents are the exact rationals fixed at
/// expansion; a zero member weight yields exactly zero, and a path without
/// members yields one. Panics if a member is missing from `betas`.
pub fn g_path(path: &Path, betas: &WeightVector) -> f64 {
    let mut g = 1.0;
    for (member, exp) in path.members.iter().zip(&path.exponents) {
        let beta = *betas
            .get(&member.node)
            .unwrap_or_else(|| panic!("missing weight for node `{}`", member.node));
        let e = *exp.numer() as f64 / *exp.denom() as f64;
        g *= beta.powf(e);
    }
    g
}

/// `g_m` for every path, indexed by path id.
pub fn g_all(table: &PathTable, betas: &WeightVector) -> Vec<f64> {
    table.paths.iter().map(|p| g_path(p, betas)).collect()
}

/// Per-node penalty coefficients `c_v = lambda * reg_coeff[v]`.
pub fn reg_coeffs(table: &PathTable, params: &RegularizerParams) -> BTreeMap<NodeId, f64> {
    table
        .reg_coeff
        .iter()
        .map(|(node, r)| {
            let v = *r.numer() as f64 / *r.denom() as f64;
            (node.clone(), params.lambda * v)
        })
        .collect()
}

/// Value of the structured regularizer, split into its norm part `R1` and
/// penalty part `R2`. `w_norms[m]` is `||w_m||^2` by path id. Fails when a
/// path has zero weight but a nonzero norm.
pub fn eval_r(
    table: &PathTable,
    betas: &WeightVector,
    w_norms: &[f64],
    params: &RegularizerParams,
) -> Result<(f64, f64)> {
    let (r1, r2) = eval_r_extended(table, betas, w_norms, params);
    if !r1.is_finite() {
        let path = table
            .paths
            .iter()
            .position(|p| w_norms[p.id] > 0.0 && g_path(p, betas) == 0.0)
            .unwrap_or(0);
        return Err(Error::ContinuityViolation { path });
    }
    Ok((r1, r2))
}

/// As [`eval_r`] but returns `R1 = +inf` instead of failing on a continuity
/// violation, so that line searches can reject such steps.
pub fn eval_r_extended(
    table: &PathTable,
    betas: &WeightVector,
    w_norms: &[f64],
    params: &RegularizerParams,
) -> (f64, f64) {
    let mut r1 = 0.0;
    for path in &table.paths {
        let wn = w_norms[path.id];
        if wn <= 0.0 {
            continue;
        }
        let g = g_path(path, betas);
        if g == 0.0 {
            r1 = f64::INFINITY;
            break;
        }
        r1 += wn / (2.0 * g);
    }
    let mut r2 = 0.0;
    for (node, r) in &table.reg_coeff {
        let c = params.lambda * (*r.numer() as f64 / *r.denom() as f64);
        let p = params.p_of(node);
        r2 += c * betas[node].powf(p);
    }
    (r1, r2)
}

/// Partial derivative of `R1` with respect to one node weight:
///
/// ```text
/// dR1/dbeta_v = -sum_{m: v on m} ||w_m||^2 * e_{v,m} / (2 g_m beta_v)
/// ```
///
/// where `e_{v,m}` sums the exponents of the node's occurrences on path
/// `m`. Always nonpositive. Paths with a zero norm contribute nothing, so
/// the gradient of a node whose every path is dead is zero at any weight;
/// a live path requires `beta_v >= BETA_FLOOR`.
pub fn grad_r1(
    node: &str,
    table: &PathTable,
    betas: &WeightVector,
    w_norms: &[f64],
) -> Result<f64> {
    let beta = betas[node];
    let mut grad = 0.0;
    if let Some(path_ids) = table.node_to_paths.get(node) {
        for &id in path_ids {
            let path = &table.paths[id];
            let wn = w_norms[id];
            if wn <= 0.0 {
                continue;
            }
            if beta < BETA_FLOOR {
                return Err(Error::BelowFloor {
                    node: node.into(),
                    floor: BETA_FLOOR,
                });
            }
            let g = g_path(path, betas);
            if g == 0.0 {
                return Err(Error::ContinuityViolation { path: id });
            }
            let e: f64 = path
                .members
                .iter()
                .zip(&path.exponents)
                .filter(|(m, _)| m.node == node)
                .map(|(_, r)| *r.numer() as f64 / *r.denom() as f64)
                .sum();
            grad -= wn * e / (2.0 * g * beta);
        }
    }
    Ok(grad)
}

/// Partial derivative of `R2` with respect to one node weight:
/// `c_v * p_v * beta_v^(p_v - 1)`. Always nonnegative. Fails at zero weight
/// when `p_v < 1`, where the derivative diverges.
pub fn grad_r2(
    node: &str,
    coeffs: &BTreeMap<NodeId, f64>,
    betas: &WeightVector,
    params: &RegularizerParams,
) -> Result<f64> {
    let beta = betas[node];
    let p = params.p_of(node);
    if p < 1.0 && beta == 0.0 {
        return Err(Error::SingularGradient { node: node.into(), p });
    }
    let c = coeffs.get(node).copied().unwrap_or(0.0);
    Ok(c * p * beta.powf(p - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spn::{enumerate_paths, DEFAULT_PATH_CAP};
    use approx::assert_relative_eq;

    fn setup() -> (crate::spn::SpnGraph, PathTable) {
        let graph = crate::spn::tests::two_layer_graph();
        let table = enumerate_paths(&graph, DEFAULT_PATH_CAP).unwrap();
        (graph, table)
    }

    fn uniform(graph: &crate::spn::SpnGraph, v: f64) -> WeightVector {
        graph.product_ids().into_iter().map(|id| (id, v)).collect()
    }

    #[test]
    fn g_is_one_at_unit_weights() {
        let (graph, table) = setup();
        let betas = uniform(&graph, 1.0);
        for path in &table.paths {
            assert_eq!(g_path(path, &betas), 1.0);
        }
    }

    #[test]
    fn g_on_deep_path_combines_member_roots() {
        let (graph, table) = setup();
        let mut betas = uniform(&graph, 1.0);
        betas.insert("b9".into(), 4.0);
        betas.insert("b4".into(), 16.0);
        betas.insert("b6".into(), 16.0);
        let path = table
            .paths
            .iter()
            .find(|p| p.leaves == ["K4", "K6"])
            .unwrap();
        // 4^(1/2) * 16^(1/4) * 16^(1/4) = 8
        assert_relative_eq!(g_path(path, &betas), 8.0, max_relative = 1e-12);
    }

    #[test]
    fn zero_member_weight_zeroes_g() {
        let (graph, table) = setup();
        let mut betas = uniform(&graph, 2.0);
        betas.insert("b9".into(), 0.0);
        let path = table
            .paths
            .iter()
            .find(|p| p.leaves == ["K4", "K6"])
            .unwrap();
        assert_eq!(g_path(path, &betas), 0.0);
    }

    #[test]
    fn scaling_a_whole_path_scales_g_linearly() {
        let (graph, table) = setup();
        let path = table
            .paths
            .iter()
            .find(|p| p.leaves == ["K3", "K7"])
            .unwrap();
        let base = uniform(&graph, 1.3);
        let t = 3.7;
        let mut scaled = base.clone();
        for m in &path.members {
            scaled.insert(m.node.clone(), base[&m.node] * t);
        }
        assert_relative_eq!(
            g_path(path, &scaled),
            t * g_path(path, &base),
            max_relative = 1e-12
        );
    }

    #[test]
    fn coefficients_scale_with_penalty_strength() {
        let (_, table) = setup();
        let params = RegularizerParams::new(1.0, 0.4);
        let coeffs = reg_coeffs(&table, &params);
        assert_relative_eq!(coeffs["b9"], 3.0 * 0.4, max_relative = 1e-15);
        assert_relative_eq!(coeffs["b4"], 0.75 * 0.4, max_relative = 1e-15);
        let total: f64 = coeffs.values().sum();
        assert_relative_eq!(total, 0.4 * table.len() as f64, max_relative = 1e-12);
    }

    #[test]
    fn regularizer_value_at_unit_state() {
        let (graph, table) = setup();
        let betas = uniform(&graph, 1.0);
        let w_norms = vec![2.0; table.len()];
        let params = RegularizerParams::new(1.0, 1.0);
        let (r1, r2) = eval_r(&table, &betas, &w_norms, &params).unwrap();
        assert_relative_eq!(r1, table.len() as f64, max_relative = 1e-12);
        assert_relative_eq!(r2, table.len() as f64, max_relative = 1e-12);
    }

    #[test]
    fn regularizer_vanishes_on_dead_state() {
        let (graph, table) = setup();
        let betas = uniform(&graph, 0.0);
        let w_norms = vec![0.0; table.len()];
        let params = RegularizerParams::new(1.0, 2.0);
        let (r1, r2) = eval_r(&table, &betas, &w_norms, &params).unwrap();
        assert_eq!((r1, r2), (0.0, 0.0));
    }

    #[test]
    fn zero_weight_with_live_norm_violates_continuity() {
        let (graph, table) = setup();
        let mut betas = uniform(&graph, 1.0);
        betas.insert("b8".into(), 0.0);
        let w_norms = vec![1.0; table.len()];
        let params = RegularizerParams::new(1.0, 1.0);
        let err = eval_r(&table, &betas, &w_norms, &params).unwrap_err();
        assert!(matches!(err, Error::ContinuityViolation { path: 0 }));
        let (r1, _) = eval_r_extended(&table, &betas, &w_norms, &params);
        assert!(r1.is_infinite());
    }

    #[test]
    fn single_layer_norm_gradient_is_closed_form() {
        let nodes = vec![
            crate::spn::SpnNode {
                id: "root".into(),
                kind: crate::spn::NodeKind::Sum,
                children: vec!["b".into()],
                kernel: None,
                p: None,
            },
            crate::spn::SpnNode {
                id: "b".into(),
                kind: crate::spn::NodeKind::Product,
                children: vec!["k".into()],
                kernel: None,
                p: None,
            },
            crate::spn::SpnNode {
                id: "k".into(),
                kind: crate::spn::NodeKind::Leaf,
                children: vec![],
                kernel: Some("lin".into()),
                p: None,
            },
        ];
        let graph = crate::spn::SpnGraph::new(nodes, "root".into()).unwrap();
        let table = enumerate_paths(&graph, DEFAULT_PATH_CAP).unwrap();
        let betas: WeightVector = [("b".to_string(), 0.8)].into_iter().collect();
        let wn = vec![3.0];
        let grad = grad_r1("b", &table, &betas, &wn).unwrap();
        assert_relative_eq!(grad, -3.0 / (2.0 * 0.8 * 0.8), max_relative = 1e-12);
    }

    #[test]
    fn dead_paths_contribute_no_norm_gradient() {
        let (graph, table) = setup();
        let w_norms = vec![0.0; table.len()];
        for value in [0.7, 0.0] {
            let betas = uniform(&graph, value);
            for id in graph.product_ids() {
                assert_eq!(grad_r1(&id, &table, &betas, &w_norms).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn norm_gradient_requires_weight_above_floor() {
        let (graph, table) = setup();
        let mut betas = uniform(&graph, 1.0);
        betas.insert("b4".into(), 1e-11);
        let w_norms = vec![1.0; table.len()];
        let err = grad_r1("b4", &table, &betas, &w_norms).unwrap_err();
        assert!(matches!(err, Error::BelowFloor { .. }));
    }

    #[test]
    fn penalty_gradient_matches_power_rule() {
        let (graph, table) = setup();
        let mut params = RegularizerParams::new(1.0, 0.5);
        let coeffs = reg_coeffs(&table, &params);
        let mut betas = uniform(&graph, 1.0);
        // p = 1: the gradient is the coefficient itself, at any weight.
        betas.insert("b9".into(), 0.0);
        assert_relative_eq!(
            grad_r2("b9", &coeffs, &betas, &params).unwrap(),
            coeffs["b9"],
            max_relative = 1e-15
        );
        // p = 2 at beta = 3: c * 2 * 3.
        params.node_p.insert("b4".into(), 2.0);
        betas.insert("b4".into(), 3.0);
        assert_relative_eq!(
            grad_r2("b4", &coeffs, &betas, &params).unwrap(),
            coeffs["b4"] * 6.0,
            max_relative = 1e-15
        );
        // p < 1 at beta = 0 diverges.
        params.node_p.insert("b3".into(), 0.5);
        betas.insert("b3".into(), 0.0);
        let err = grad_r2("b3", &coeffs, &betas, &params).unwrap_err();
        assert!(matches!(err, Error::SingularGradient { .. }));
    }

    #[test]
    fn gradients_match_central_differences() {
        let (graph, table) = setup();
        let mut params = RegularizerParams::new(1.0, 0.7);
        params.node_p.insert("b3".into(), 0.5);
        params.node_p.insert("b9".into(), 2.0);
        let coeffs = reg_coeffs(&table, &params);
        let mut betas = uniform(&graph, 1.0);
        for (i, id) in graph.product_ids().iter().enumerate() {
            betas.insert(id.clone(), 0.4 + 0.3 * i as f64);
        }
        let w_norms: Vec<f64> = (0..table.len()).map(|i| 0.5 + 0.25 * i as f64).collect();

        for id in graph.product_ids() {
            let analytic = grad_r1(&id, &table, &betas, &w_norms).unwrap()
                + grad_r2(&id, &coeffs, &betas, &params).unwrap();
            let h = 1e-6 * (1.0 + betas[&id].abs());
            let mut up = betas.clone();
            up.insert(id.clone(), betas[&id] + h);
            let mut down = betas.clone();
            down.insert(id.clone(), betas[&id] - h);
            let f = |b: &WeightVector| {
                let (r1, r2) = eval_r(&table, b, &w_norms, &params).unwrap();
                r1 + r2
            };
            let fd = (f(&up) - f(&down)) / (2.0 * h);
            assert_relative_eq!(analytic, fd, max_relative = 1e-5, epsilon = 1e-8);
        }
    }

    #[test]
    fn params_validation() {
        assert!(RegularizerParams::new(1.0, 0.5).validate().is_ok());
        assert!(RegularizerParams::new(0.0, 0.5).validate().is_err());
        assert!(RegularizerParams::new(1.0, -0.1).validate().is_err());
        assert!(RegularizerParams::new(1.0, 0.5)
            .with_default_p(0.0)
            .validate()
            .is_err());
        assert!(RegularizerParams::new(1.0, 0.5)
            .with_node_p("b1", -2.0)
            .validate()
            .is_err());
    }
}
