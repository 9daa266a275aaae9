//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by structure parsing, kernel evaluation, optimization,
/// and model persistence.
#[derive(Debug, Error)]
pub enum Error {
    // ---- structure / configuration ----
    #[error("duplicate node id `{0}`")]
    DuplicateNodeId(String),
    #[error("node `{parent}` references unknown child `{child}`")]
    UnknownChild { parent: String, child: String },
    #[error("unknown root node `{0}`")]
    UnknownRoot(String),
    #[error("cycle detected through node `{0}`")]
    CycleDetected(String),
    #[error("node `{0}` is not reachable from the root")]
    UnreachableNode(String),
    #[error("weight exponent declared on non-product node `{0}`")]
    WeightOnNonProduct(String),
    #[error("nonpositive weight exponent {p} on node `{node}`")]
    NonpositiveExponent { node: String, p: f64 },
    #[error("leaf node `{0}` must name exactly one kernel and have no children")]
    MalformedLeaf(String),
    #[error("internal node `{0}` must have at least one child")]
    EmptyChildren(String),
    #[error("non-leaf node `{0}` must not name a kernel")]
    KernelOnInternal(String),
    #[error("leaf `{node}` references unknown kernel `{kernel}`")]
    UnknownKernelRef { node: String, kernel: String },
    #[error("path through node `{node}` places weighted nodes at sum depth {depth} but leaves sum depth {missing} empty; interleave product nodes between sums")]
    NonAlternatingStructure {
        node: String,
        depth: usize,
        missing: usize,
    },
    #[error("structure expands to more than {cap} paths")]
    PathCapExceeded { cap: usize },
    #[error("invalid structure document: {0}")]
    InvalidDocument(String),

    // ---- kernels / data ----
    #[error("non-finite value in input data at row {row}")]
    NonFiniteInput { row: usize },
    #[error("row {row} has nonpositive self-similarity under kernel `{kernel}`; cannot normalize")]
    ZeroNormRow { kernel: String, row: usize },
    #[error("dimension mismatch: expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel matrix `{kernel}` is not positive semidefinite (estimated minimum eigenvalue {min_eig:.3e})")]
    NotPsd { kernel: String, min_eig: f64 },
    #[error("invalid kernel `{name}`: {reason}")]
    InvalidKernelSpec { name: String, reason: String },
    #[error("malformed data file at line {line}: {reason}")]
    DataFormat { line: usize, reason: String },
    #[error("dataset is empty")]
    EmptyDataset,

    // ---- optimization ----
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("labels must be -1/+1 for a binary dual problem")]
    BadBinaryLabels,
    #[error("path {path} has zero weight but a nonzero function norm; continuity requires the norm to vanish")]
    ContinuityViolation { path: usize },
    #[error("weight gradient requested for node `{node}` below the evaluation floor {floor:e}")]
    BelowFloor { node: String, floor: f64 },
    #[error("regularizer gradient is singular at zero weight for node `{node}` (exponent {p} < 1)")]
    SingularGradient { node: String, p: f64 },
    #[error("all paths pruned; model is empty")]
    EmptyModel,

    // ---- persistence ----
    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model fails integrity check: {0}")]
    CorruptModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
