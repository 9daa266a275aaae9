//! Shared fixtures and independent oracle implementations used by the
//! integration suites. Everything here recomputes results from first
//! principles — direct formulas, dense linear algebra, exhaustive
//! enumeration — so agreement with the library is meaningful.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spnmkl::spn::{Exponent, NodeKind, SpnNode};
use spnmkl::{solve_dual, DualProblem, KernelSpec, SpnGraph};

// ---------------------------------------------------------------------------
// Structure fixtures

pub fn leaf(id: &str, kernel: &str) -> SpnNode {
    SpnNode {
        id: id.into(),
        kind: NodeKind::Leaf,
        children: vec![],
        kernel: Some(kernel.into()),
        p: None,
    }
}

pub fn inner(id: &str, kind: NodeKind, children: &[&str]) -> SpnNode {
    SpnNode {
        id: id.into(),
        kind,
        children: children.iter().map(|s| s.to_string()).collect(),
        kernel: None,
        p: None,
    }
}

/// Two-layer reference structure over seven basis kernels: the root sum
/// chooses between a one-layer branch (`b8` over a sum of `K1 | K2`) and a
/// two-layer branch (`b9` over a combiner of two sums, `K3 | K4` and
/// `K5 | K6 | K7`). Expands to exactly eight paths.
pub fn two_layer_graph() -> SpnGraph {
    let nodes = vec![
        inner("root", NodeKind::Sum, &["b8", "b9"]),
        inner("b8", NodeKind::Product, &["s1"]),
        inner("b9", NodeKind::Product, &["comb"]),
        inner("s1", NodeKind::Sum, &["b1", "b2"]),
        inner("comb", NodeKind::Combiner, &["s2", "s3"]),
        inner("s2", NodeKind::Sum, &["b3", "b4"]),
        inner("s3", NodeKind::Sum, &["b5", "b6", "b7"]),
        inner("b1", NodeKind::Product, &["k1"]),
        inner("b2", NodeKind::Product, &["k2"]),
        inner("b3", NodeKind::Product, &["k3"]),
        inner("b4", NodeKind::Product, &["k4"]),
        inner("b5", NodeKind::Product, &["k5"]),
        inner("b6", NodeKind::Product, &["k6"]),
        inner("b7", NodeKind::Product, &["k7"]),
        leaf("k1", "K1"),
        leaf("k2", "K2"),
        leaf("k3", "K3"),
        leaf("k4", "K4"),
        leaf("k5", "K5"),
        leaf("k6", "K6"),
        leaf("k7", "K7"),
    ];
    SpnGraph::new(nodes, "root".into()).unwrap()
}

/// Mixed basis kernels matching [`two_layer_graph`]'s leaves.
pub fn two_layer_kernels() -> Vec<KernelSpec> {
    vec![
        KernelSpec::linear("K1"),
        KernelSpec::polynomial("K2", 2, 1.0),
        KernelSpec::rbf("K3", 0.25),
        KernelSpec::rbf("K4", 0.5),
        KernelSpec::rbf("K5", 1.0),
        KernelSpec::rbf("K6", 2.0),
        KernelSpec::polynomial("K7", 3, 0.5),
    ]
}

/// Flat one-layer structure: a root sum over one product per kernel name.
pub fn single_layer_graph(names: &[&str]) -> SpnGraph {
    let mut nodes = vec![SpnNode {
        id: "root".into(),
        kind: NodeKind::Sum,
        children: names.iter().map(|n| format!("b_{n}")).collect(),
        kernel: None,
        p: None,
    }];
    for n in names {
        nodes.push(inner(&format!("b_{n}"), NodeKind::Product, &[&format!("k_{n}")]));
        nodes.push(leaf(&format!("k_{n}"), n));
    }
    SpnGraph::new(nodes, "root".into()).unwrap()
}

/// Random alternating structure: sums choose among products, products merge
/// leaves, sums, and combiners of sums. Tree-shaped with ids `n0, n1, ...`;
/// leaves draw kernel names (with repetition) from `kernel_pool`.
pub fn random_graph(seed: u64, kernel_pool: &[&str], max_depth: usize) -> SpnGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::new();
    let mut counter = 0usize;
    let root = gen_sum(&mut rng, &mut nodes, &mut counter, kernel_pool, max_depth);
    SpnGraph::new(nodes, root).expect("generated structure is valid")
}

fn fresh_id(counter: &mut usize) -> String {
    let id = format!("n{counter}");
    *counter += 1;
    id
}

fn gen_sum(
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<SpnNode>,
    counter: &mut usize,
    pool: &[&str],
    depth: usize,
) -> String {
    let id = fresh_id(counter);
    let n_children = rng.gen_range(1..=3);
    let children: Vec<String> = (0..n_children)
        .map(|_| gen_product(rng, nodes, counter, pool, depth))
        .collect();
    nodes.push(SpnNode {
        id: id.clone(),
        kind: NodeKind::Sum,
        children,
        kernel: None,
        p: None,
    });
    id
}

fn gen_product(
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<SpnNode>,
    counter: &mut usize,
    pool: &[&str],
    depth: usize,
) -> String {
    let id = fresh_id(counter);
    let n_children = rng.gen_range(1..=2);
    let mut children = Vec::new();
    for _ in 0..n_children {
        let roll: f64 = rng.gen();
        if depth == 0 || roll < 0.5 {
            let kid = fresh_id(counter);
            let kernel = pool[rng.gen_range(0..pool.len())];
            nodes.push(leaf(&kid, kernel));
            children.push(kid);
        } else if roll < 0.85 {
            children.push(gen_sum(rng, nodes, counter, pool, depth - 1));
        } else {
            let kid = fresh_id(counter);
            let subs: Vec<String> = (0..2)
                .map(|_| gen_sum(rng, nodes, counter, pool, depth - 1))
                .collect();
            nodes.push(SpnNode {
                id: kid.clone(),
                kind: NodeKind::Combiner,
                children: subs,
                kernel: None,
                p: None,
            });
            children.push(kid);
        }
    }
    nodes.push(SpnNode {
        id: id.clone(),
        kind: NodeKind::Product,
        children,
        kernel: None,
        p: None,
    });
    id
}

// ---------------------------------------------------------------------------
// Independent path enumeration

/// A path reduced to order-free form: sorted leaf names and sorted
/// `(node, layer)` member occurrences.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct FlatPath {
    pub leaves: Vec<String>,
    pub members: Vec<(String, usize)>,
}

/// Expands `graph` with an explicit worklist instead of recursion: each
/// work item keeps a frontier of `(node, sums_above)` pairs plus the
/// members and leaves gathered so far. Sums fork the item, products and
/// combiners push their children, products record an occurrence.
pub fn oracle_paths(graph: &SpnGraph) -> Vec<FlatPath> {
    type Item = (Vec<(String, usize)>, Vec<(String, usize)>, Vec<String>);
    let mut work: Vec<Item> = vec![(vec![(graph.root().clone(), 0)], vec![], vec![])];
    let mut done = Vec::new();
    while let Some((mut frontier, mut members, mut leaves)) = work.pop() {
        let Some((id, depth)) = frontier.pop() else {
            members.sort();
            leaves.sort();
            done.push(FlatPath { leaves, members });
            continue;
        };
        let node = graph.node(&id).expect("known node");
        match node.kind {
            NodeKind::Leaf => {
                leaves.push(node.kernel.clone().unwrap());
                work.push((frontier, members, leaves));
            }
            NodeKind::Sum => {
                for child in &node.children {
                    let mut f = frontier.clone();
                    f.push((child.clone(), depth + 1));
                    work.push((f, members.clone(), leaves.clone()));
                }
            }
            NodeKind::Product | NodeKind::Combiner => {
                if node.kind == NodeKind::Product {
                    members.push((id, depth));
                }
                for child in &node.children {
                    frontier.push((child.clone(), depth));
                }
                work.push((frontier, members, leaves));
            }
        }
    }
    done.sort();
    done
}

/// Per-node exponent totals recomputed from a set of flat paths: each
/// occurrence of a node in a path with layer structure `counts` contributes
/// `1 / (n_layers * counts[layer])` exactly.
pub fn oracle_reg_coeffs(paths: &[FlatPath]) -> BTreeMap<String, Exponent> {
    let mut out: BTreeMap<String, Exponent> = BTreeMap::new();
    for path in paths {
        let n_layers = path.members.iter().map(|&(_, l)| l).max().unwrap_or(0);
        let mut counts = vec![0i64; n_layers];
        for &(_, layer) in &path.members {
            counts[layer - 1] += 1;
        }
        for (node, layer) in &path.members {
            *out.entry(node.clone())
                .or_insert_with(|| Exponent::new(0, 1)) +=
                Exponent::new(1, n_layers as i64 * counts[layer - 1]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Dense symmetric eigenvalues (cyclic Jacobi)

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations,
/// ascending.
pub fn sym_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-300);
    for _ in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off = off.max(m[[i, j]].abs());
            }
        }
        if off <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eigs: Vec<f64> = (0..n).map(|i| m[[i, i]]).collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eigs
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting; `None`
/// when a pivot degenerates.
pub fn gaussian_solve(a: &Array2<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    assert_eq!(a.dim(), (n, n));
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().partial_cmp(&m[[j, col]].abs()).unwrap())?;
        if m[[pivot_row, col]].abs() <= 1e-12 * scale {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                let tmp = m[[col, k]];
                m[[col, k]] = m[[pivot_row, k]];
                m[[pivot_row, k]] = tmp;
            }
            rhs.swap(col, pivot_row);
        }
        for row in (col + 1)..n {
            let f = m[[row, col]] / m[[col, col]];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[[row, k]] -= f * m[[col, k]];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..n {
            acc -= m[[row, k]] * x[k];
        }
        x[row] = acc / m[[row, row]];
    }
    Some(x)
}

// ---------------------------------------------------------------------------
// Exhaustive box-QP solver

pub struct BruteSolution {
    pub alpha: Vec<f64>,
    pub objective: f64,
}

/// Globally minimizes `1/2 a^T Q a - e^T a` over `0 <= a <= c`,
/// `y^T a = 0`, with `Q_ij = y_i y_j K_ij`, by enumerating every activity
/// pattern (each variable at 0, at c, or free), solving the stationarity
/// system on the free set, and keeping the best feasible candidate. Exact
/// for positive definite `Q`, where the optimum is unique.
pub fn brute_force_dual(k: &Array2<f64>, y: &[f64], c: f64) -> BruteSolution {
    let n = y.len();
    assert!(n <= 10, "exhaustive enumeration is exponential");
    let mut q = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            q[[i, j]] = y[i] * y[j] * k[[i, j]];
        }
    }

    let objective = |alpha: &[f64]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n {
            let mut inner = 0.0;
            for j in 0..n {
                inner += q[[i, j]] * alpha[j];
            }
            acc += 0.5 * alpha[i] * inner - alpha[i];
        }
        acc
    };

    let mut best: Option<BruteSolution> = None;
    let patterns = 3usize.pow(n as u32);
    for code in 0..patterns {
        let mut digits = Vec::with_capacity(n);
        let mut rest = code;
        for _ in 0..n {
            digits.push(rest % 3);
            rest /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| digits[i] == 2).collect();
        let mut alpha: Vec<f64> = digits
            .iter()
            .map(|&d| if d == 1 { c } else { 0.0 })
            .collect();

        if free.is_empty() {
            let drift: f64 = (0..n).map(|i| y[i] * alpha[i]).sum();
            if drift.abs() > 1e-9 * (1.0 + c * n as f64) {
                continue;
            }
        } else {
            // Stationarity over the free set with multiplier nu:
            // Q_FF a_F - nu y_F = e_F - Q_FB a_B,  y_F^T a_F = -y_B^T a_B.
            let f = free.len();
            let mut sys = Array2::zeros((f + 1, f + 1));
            let mut rhs = vec![0.0; f + 1];
            for (r, &i) in free.iter().enumerate() {
                for (cix, &j) in free.iter().enumerate() {
                    sys[[r, cix]] = q[[i, j]];
                }
                sys[[r, f]] = -y[i];
                sys[[f, r]] = y[i];
                let fixed: f64 = (0..n)
                    .filter(|&j| digits[j] != 2)
                    .map(|j| q[[i, j]] * alpha[j])
                    .sum();
                rhs[r] = 1.0 - fixed;
            }
            rhs[f] = -(0..n)
                .filter(|&j| digits[j] != 2)
                .map(|j| y[j] * alpha[j])
                .sum::<f64>();
            let Some(sol) = gaussian_solve(&sys, &rhs) else {
                continue;
            };
            let mut feasible = true;
            for (r, &i) in free.iter().enumerate() {
                if sol[r] < -1e-10 || sol[r] > c + 1e-10 {
                    feasible = false;
                    break;
                }
                alpha[i] = sol[r];
            }
            if !feasible {
                continue;
            }
        }

        let value = objective(&alpha);
        if best.as_ref().is_none_or(|b| value < b.objective) {
            best = Some(BruteSolution {
                alpha,
                objective: value,
            });
        }
    }
    best.expect("the all-zero pattern is always feasible")
}

// ---------------------------------------------------------------------------
// Flat multiple-kernel baseline

pub struct FlatMkl {
    pub betas: Vec<f64>,
    pub objective: f64,
    pub iters: usize,
}

/// Reference alternation for a flat nonnegative combination
/// `K = sum_m beta_m K_m` under the objective
/// `sum_m ||w_m||^2 / (2 beta_m) + lambda sum_m beta_m + c * hinge`:
/// an SVM dual solve followed by the closed-form weight minimizer
/// `beta_m = sqrt(||w_m||^2 / (2 lambda))`, iterated to a fixed point. The
/// objective is evaluated directly from its definition each round.
pub fn flat_mkl_reference(
    grams: &[Array2<f64>],
    y: &[f64],
    c: f64,
    lambda: f64,
    max_iters: usize,
) -> FlatMkl {
    assert!(lambda > 0.0, "closed-form weight update needs lambda > 0");
    let n = y.len();
    let m = grams.len();
    let mut betas = vec![1.0f64; m];
    let mut last = f64::INFINITY;
    let mut iters = 0;
    loop {
        iters += 1;
        let mut k = Array2::<f64>::zeros((n, n));
        for (gram, &b) in grams.iter().zip(&betas) {
            if b > 0.0 {
                k.scaled_add(b, gram);
            }
        }
        let dual = solve_dual(&DualProblem::new(&k, y, c).with_tol(1e-12)).unwrap();
        let coef: Vec<f64> = dual.alpha.iter().zip(y).map(|(a, yi)| a * yi).collect();

        let w_norms: Vec<f64> = grams
            .iter()
            .zip(&betas)
            .map(|(gram, &b)| {
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += coef[i] * gram[[i, j]] * coef[j];
                    }
                }
                (b * b * acc).max(0.0)
            })
            .collect();
        let mut objective = lambda * betas.iter().sum::<f64>();
        for (wn, &b) in w_norms.iter().zip(&betas) {
            if b > 0.0 {
                objective += wn / (2.0 * b);
            }
        }
        for i in 0..n {
            let mut f = dual.bias;
            for j in 0..n {
                f += k[[i, j]] * coef[j];
            }
            objective += c * (1.0 - y[i] * f).max(0.0);
        }

        if (last - objective).abs() <= 1e-10 * objective.abs().max(1.0) || iters >= max_iters {
            return FlatMkl {
                betas,
                objective,
                iters,
            };
        }
        last = objective;
        betas = w_norms
            .iter()
            .map(|&wn| (wn / (2.0 * lambda)).sqrt())
            .collect();
    }
}

// ---------------------------------------------------------------------------
// Misc numeric helpers

/// Random symmetric positive definite matrix `B B^T + eps I` with entries
/// of `B` uniform in `[-1, 1]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Array2<f64> {
    let cols = n + 2;
    let b: Vec<f64> = (0..n * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for t in 0..cols {
                acc += b[i * cols + t] * b[j * cols + t];
            }
            out[[i, j]] = acc;
        }
    }
    for i in 0..n {
        out[[i, i]] += 1e-6;
    }
    out
}

/// Random labels with both classes present.
pub fn random_labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let y: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
            .collect();
        if y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0) {
            return y;
        }
    }
}
