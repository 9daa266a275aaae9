//! Support vector machine training with structured multiple-kernel
//! combinations.
//!
//! The combination of basis kernels is described by a sum-product network:
//! sum nodes choose among alternatives, product and combiner nodes merge
//! kernels entrywise, and leaves name basis kernels. Expanding the network
//! yields a set of weighted kernel paths; training alternates between an
//! SVM dual solve on the composite kernel and descent on the nonnegative
//! path weights under a sparsity-inducing penalty.

pub mod dataset;
pub mod error;
pub mod kernel;
pub mod model;
pub mod qp;
pub mod spn;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
pub use kernel::{KernelFamily, KernelSpec, KernelWorkspace};
pub use model::{predict, rademacher_bound, Prediction, TrainedModel};
pub use qp::{solve_dual, solve_multiclass, DualProblem, DualSolution};
pub use spn::{enumerate_paths, prune_zero_nodes, Path, PathTable, SpnGraph, DEFAULT_PATH_CAP};
pub use trainer::{fit, fit_observed, IterRecord, TrainConfig, TrainOutcome};
pub use weighting::{RegularizerParams, WeightVector};
