//! Structural and numeric invariants checked on randomized inputs against
//! the independent oracles in `common`.

mod common;

use std::collections::BTreeMap;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spnmkl::kernel::path_gram;
use spnmkl::spn::Exponent;
use spnmkl::{enumerate_paths, KernelSpec, KernelWorkspace, SpnGraph, DEFAULT_PATH_CAP};

const POOL: [&str; 4] = ["lin", "poly", "rbf_a", "rbf_b"];

fn pool_specs() -> Vec<KernelSpec> {
    vec![
        KernelSpec::linear("lin"),
        KernelSpec::polynomial("poly", 2, 1.0),
        KernelSpec::rbf("rbf_a", 0.5),
        KernelSpec::rbf("rbf_b", 2.0),
    ]
}

fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    let flat: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Array2::from_shape_vec((n, d), flat).unwrap()
}

#[test]
fn expansion_matches_worklist_oracle_on_random_structures() {
    for seed in 0..60u64 {
        let graph = random_graph(seed, &POOL, 2);
        let table = enumerate_paths(&graph, DEFAULT_PATH_CAP).unwrap();

        let mut expanded: Vec<FlatPath> = table
            .paths
            .iter()
            .map(|p| {
                let mut leaves = p.leaves.clone();
                leaves.sort();
                let mut members: Vec<(String, usize)> = p
                    .members
                    .iter()
                    .map(|m| (m.node.clone(), m.layer))
                    .collect();
                members.sort();
                FlatPath { leaves, members }
            })
            .collect();
        expanded.sort();

        let oracle = oracle_paths(&graph);
        assert_eq!(expanded, oracle, "seed {seed}");
        assert_eq!(
            table.reg_coeff,
            oracle_reg_coeffs(&oracle),
            "per-node exponent totals disagree at seed {seed}"
        );
    }
}

#[test]
fn exponent_totals_sum_to_the_path_count() {
    // Every path's exponents sum to exactly one, so the per-node totals sum
    // to the number of paths (all paths here carry at least one member).
    for seed in 0..60u64 {
        let graph = random_graph(seed, &POOL, 2);
        let table = enumerate_paths(&graph, DEFAULT_PATH_CAP).unwrap();
        let total: Exponent = table.reg_coeff.values().sum();
        assert_eq!(
            total,
            Exponent::new(table.len() as i64, 1),
            "seed {seed}: {total} != {}",
            table.len()
        );
        for path in &table.paths {
            assert_eq!(path.exponent_sum(), Exponent::new(1, 1));
        }
    }
}

#[test]
fn path_grams_stay_positive_semidefinite() {
    // Entrywise products of positive semidefinite Grams stay positive
    // semidefinite; verified with a dense eigensolver.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..12u64 {
        let graph = random_graph(seed, &POOL, 2);
        let table = enumerate_paths(&graph, DEFAULT_PATH_CAP).unwrap();
        let data = random_data(&mut rng, 8, 3);
        let ws = KernelWorkspace::build(&data, &pool_specs(), &table).unwrap();
        for (id, gram) in ws.path_grams.iter().enumerate() {
            let eigs = sym_eigenvalues(gram);
            let min = eigs.first().copied().unwrap();
            let max = eigs.last().copied().unwrap().max(1e-12);
            assert!(
                min >= -1e-8 * max,
                "seed {seed} path {id}: min eigenvalue {min} vs norm {max}"
            );
        }
    }
}

#[test]
fn hadamard_products_associate_within_roundoff() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = random_data(&mut rng, 10, 3);
    let graph = single_layer_graph(&["lin", "poly", "rbf_a", "rbf_b"]);
    let table = enumerate_paths(&graph, DEFAULT_PATH_CAP).unwrap();
    let ws = KernelWorkspace::build(&data, &pool_specs(), &table).unwrap();

    let leaves: Vec<String> = POOL.iter().map(|s| s.to_string()).collect();
    let forward = path_gram(&ws.basis, &leaves);
    let mut reversed_names = leaves.clone();
    reversed_names.reverse();
    let reversed = path_gram(&ws.basis, &reversed_names);
    for i in 0..10 {
        for j in 0..10 {
            let (a, b) = (forward[[i, j]], reversed[[i, j]]);
            assert!(
                (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                "entry ({i}, {j}): {a} vs {b}"
            );
        }
    }
}

#[test]
fn shared_leaves_square_their_gram_entries() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = random_data(&mut rng, 6, 2);
    let graph = single_layer_graph(&["lin"]);
    let table = enumerate_paths(&graph, DEFAULT_PATH_CAP).unwrap();
    let ws = KernelWorkspace::build(&data, &[KernelSpec::linear("lin")], &table).unwrap();
    let doubled = path_gram(&ws.basis, &["lin".to_string(), "lin".to_string()]);
    for i in 0..6 {
        for j in 0..6 {
            let base = ws.basis["lin"][[i, j]];
            assert_eq!(doubled[[i, j]], base * base);
        }
    }
}

#[test]
fn eigenvalue_oracle_agrees_with_known_spectra() {
    // [[2, 1], [1, 2]] has eigenvalues 1 and 3; an orthogonal projector has
    // eigenvalues 0 and 1.
    let m = ndarray::array![[2.0, 1.0], [1.0, 2.0]];
    let eigs = sym_eigenvalues(&m);
    assert!((eigs[0] - 1.0).abs() < 1e-10 && (eigs[1] - 3.0).abs() < 1e-10);

    let p = ndarray::array![[0.5, 0.5], [0.5, 0.5]];
    let eigs = sym_eigenvalues(&p);
    assert!(eigs[0].abs() < 1e-10 && (eigs[1] - 1.0).abs() < 1e-10);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let spd = random_spd(&mut rng, 6);
    let eigs = sym_eigenvalues(&spd);
    assert!(eigs.iter().all(|&e| e > 0.0), "SPD spectrum {eigs:?}");
    let trace: f64 = (0..6).map(|i| spd[[i, i]]).sum();
    assert!((eigs.iter().sum::<f64>() - trace).abs() <= 1e-9 * trace.abs());
}

#[test]
fn workspace_rebuild_is_idempotent_after_retain() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let data = random_data(&mut rng, 7, 3);
    let graph = two_layer_graph();
    let table = enumerate_paths(&graph, DEFAULT_PATH_CAP).unwrap();
    let mut ws = KernelWorkspace::build(&data, &two_layer_kernels(), &table).unwrap();
    let full = ws.path_grams.clone();
    let kept = vec![0usize, 2, 5, 7];
    ws.retain_paths(&kept);
    for (new_id, &old_id) in kept.iter().enumerate() {
        assert_eq!(ws.path_grams[new_id], full[old_id]);
    }
    assert_eq!(ws.diag_sums.len(), kept.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn document_round_trip_preserves_structure(seed in any::<u64>()) {
        let graph = random_graph(seed, &POOL, 2);
        let text = graph.to_json();
        let reparsed = SpnGraph::parse(&text).unwrap();
        prop_assert_eq!(&reparsed, &graph);
        prop_assert_eq!(reparsed.to_json(), text);
    }

    #[test]
    fn expanded_tables_are_reproducible(seed in any::<u64>()) {
        let graph = random_graph(seed, &POOL, 2);
        let a = enumerate_paths(&graph, DEFAULT_PATH_CAP).unwrap();
        let b = enumerate_paths(&graph, DEFAULT_PATH_CAP).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn node_to_paths_indexes_exactly_the_occurrences() {
    for seed in 0..30u64 {
        let graph = random_graph(seed, &POOL, 2);
        let table = enumerate_paths(&graph, DEFAULT_PATH_CAP).unwrap();
        let mut rebuilt: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for path in &table.paths {
            let mut seen = BTreeMap::new();
            for member in &path.members {
                seen.entry(member.node.clone()).or_insert(path.id);
            }
            for (node, id) in seen {
                rebuilt.entry(node).or_default().push(id);
            }
        }
        assert_eq!(table.node_to_paths, rebuilt, "seed {seed}");
    }
}
