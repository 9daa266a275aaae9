//! Shared fixtures for the benchmark targets.

use spnmkl::{KernelSpec, SpnGraph};

/// The bundled two-layer demo structure (8 paths).
pub fn demo_structure() -> SpnGraph {
    SpnGraph::parse(include_str!(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../assets/structure.json"
    )))
    .expect("bundled structure parses")
}

/// The basis kernels the demo structure references.
pub fn demo_kernels() -> Vec<KernelSpec> {
    vec![
        KernelSpec::linear("k_lin"),
        KernelSpec::polynomial("k_poly2", 2, 1.0),
        KernelSpec::rbf("k_rbf_wide", 0.25),
        KernelSpec::rbf("k_rbf_mid", 0.5),
        KernelSpec::rbf("k_rbf_unit", 1.0),
        KernelSpec::rbf("k_rbf_narrow", 2.0),
        KernelSpec::polynomial("k_poly3", 3, 0.5),
    ]
}
