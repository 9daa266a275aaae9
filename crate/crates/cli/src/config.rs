//! Experiment configuration: the on-disk description of a training run and
//! its resolution into trainer inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Deserialize;
use spnmkl::dataset::{self, DataLayout};
use spnmkl::spn::NodeKind;
use spnmkl::{KernelSpec, RegularizerParams, SpnGraph, TrainConfig};

use crate::Failure;

/// On-disk experiment description. Input paths (`dataset`, `structure`)
/// resolve relative to the configuration file's directory; output paths
/// resolve relative to the working directory.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Labeled training data.
    pub dataset: PathBuf,
    /// Data layout override: "csv" or "sparse"; inferred from the extension
    /// when absent.
    #[serde(default)]
    pub format: Option<String>,
    /// Structure document describing the kernel combination.
    pub structure: PathBuf,
    /// Basis kernels referenced by the structure's leaves.
    pub kernels: Vec<KernelSpec>,
    /// Hinge-loss cost.
    pub c: f64,
    /// Penalty strength.
    pub lambda: f64,
    /// Penalty exponent for product nodes without an explicit one.
    #[serde(default)]
    pub default_p: Option<f64>,
    /// Per-node penalty exponents; these win over exponents declared in the
    /// structure document.
    #[serde(default)]
    pub node_p: BTreeMap<String, f64>,
    /// Trainer overrides.
    #[serde(default)]
    pub train: TrainOverrides,
    /// Where `train` writes the model unless `--out` overrides it.
    #[serde(default)]
    pub model_out: Option<PathBuf>,
    /// Where `train` streams per-iteration records as JSON lines.
    #[serde(default)]
    pub log_out: Option<PathBuf>,
}

/// Optional overrides of the trainer defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub outer_max_iters: Option<usize>,
    pub outer_rel_tol: Option<f64>,
    pub step_init: Option<f64>,
    pub step_shrink: Option<f64>,
    pub armijo_c: Option<f64>,
    pub max_shrinks: Option<usize>,
    pub cccp_max_inner: Option<usize>,
    pub cccp_inner_tol: Option<f64>,
    pub prune_threshold: Option<f64>,
    pub max_paths: Option<usize>,
    pub svm_tol: Option<f64>,
    pub svm_max_steps: Option<usize>,
    pub seed: Option<u64>,
}

impl TrainOverrides {
    fn apply(&self, config: &mut TrainConfig) -> Result<(), Failure> {
        if let Some(n) = self.outer_max_iters {
            if n == 0 {
                return Err(Failure::new(2, "outer_max_iters must be at least 1"));
            }
            config.outer_max_iters = n;
        }
        if let Some(v) = self.outer_rel_tol {
            config.outer_rel_tol = v;
        }
        if let Some(v) = self.step_init {
            config.step_init = v;
        }
        if let Some(v) = self.step_shrink {
            config.step_shrink = v;
        }
        if let Some(v) = self.armijo_c {
            config.armijo_c = v;
        }
        if let Some(v) = self.max_shrinks {
            config.max_shrinks = v;
        }
        if let Some(v) = self.cccp_max_inner {
            config.cccp_max_inner = v;
        }
        if let Some(v) = self.cccp_inner_tol {
            config.cccp_inner_tol = v;
        }
        if let Some(v) = self.prune_threshold {
            config.prune_threshold = v;
        }
        if let Some(v) = self.max_paths {
            config.max_paths = v;
        }
        if let Some(v) = self.svm_tol {
            config.svm_tol = v;
        }
        if let Some(v) = self.svm_max_steps {
            config.svm_max_steps = v;
        }
        if let Some(v) = self.seed {
            config.seed = v;
        }
        Ok(())
    }
}

/// Fully resolved experiment: parsed data, validated structure and kernels,
/// and the trainer configuration.
pub struct Experiment {
    pub data: Array2<f64>,
    pub labels: Vec<i64>,
    pub graph: SpnGraph,
    pub kernels: Vec<KernelSpec>,
    pub config: TrainConfig,
    pub model_out: Option<PathBuf>,
    pub log_out: Option<PathBuf>,
}

/// Reads, validates, and resolves an experiment configuration.
pub fn load_experiment(path: &Path) -> Result<Experiment, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::new(2, format!("cannot read config `{}`: {e}", path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::new(2, format!("invalid config `{}`: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));

    let structure_path = resolve(base, &cfg.structure);
    let structure = std::fs::read_to_string(&structure_path).map_err(|e| {
        Failure::new(
            2,
            format!("cannot read structure `{}`: {e}", structure_path.display()),
        )
    })?;
    let graph = SpnGraph::parse(&structure).map_err(Failure::from_core)?;

    let mut names = BTreeSet::new();
    for spec in &cfg.kernels {
        spec.validate().map_err(Failure::from_core)?;
        if !names.insert(spec.name.clone()) {
            return Err(Failure::new(
                2,
                format!("duplicate kernel name `{}`", spec.name),
            ));
        }
    }
    graph.check_kernel_refs(&names).map_err(Failure::from_core)?;

    // Exponent precedence: config overrides beat the structure document's
    // declarations, which beat the global default.
    let mut params = RegularizerParams::new(cfg.c, cfg.lambda);
    if let Some(p) = cfg.default_p {
        params.default_p = p;
    }
    for node in graph.nodes() {
        if let Some(p) = node.p {
            params.node_p.insert(node.id.clone(), p);
        }
    }
    for (node, &p) in &cfg.node_p {
        match graph.node(node).map(|n| n.kind) {
            Some(NodeKind::Product) => {
                params.node_p.insert(node.clone(), p);
            }
            Some(_) => {
                return Err(Failure::new(
                    2,
                    format!("node_p key `{node}` is not a product node"),
                ))
            }
            None => {
                return Err(Failure::new(
                    2,
                    format!("node_p key `{node}` is not in the structure"),
                ))
            }
        }
    }
    params.validate().map_err(Failure::from_core)?;

    let layout = parse_layout(cfg.format.as_deref())?;
    let data_path = resolve(base, &cfg.dataset);
    let (data, labels) =
        dataset::load_labeled(&data_path, layout).map_err(|e| data_failure(&data_path, e))?;

    let mut config = TrainConfig::new(params);
    cfg.train.apply(&mut config)?;
    Ok(Experiment {
        data,
        labels,
        graph,
        kernels: cfg.kernels,
        config,
        model_out: cfg.model_out,
        log_out: cfg.log_out,
    })
}

/// Parses a data-layout override; `None` defers to extension inference.
pub fn parse_layout(format: Option<&str>) -> Result<Option<DataLayout>, Failure> {
    format
        .map(|f| DataLayout::parse(f).map_err(Failure::from_core))
        .transpose()
}

/// Failure for a dataset that cannot be read or parsed; a missing file is a
/// data error like any malformed content.
pub fn data_failure(path: &Path, err: spnmkl::Error) -> Failure {
    match err {
        spnmkl::Error::Io(e) => {
            Failure::new(3, format!("cannot read data `{}`: {e}", path.display()))
        }
        other => Failure::from_core(other),
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
