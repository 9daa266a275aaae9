//! Subcommand implementations.
//!
//! All report output goes through fallible writers: a broken pipe ends the
//! command quietly instead of panicking, so the binary composes with
//! `head` and friends.

use std::fs::File;
use std::io::{self, BufWriter, Write};

use spnmkl::dataset;
use spnmkl::spn::{Exponent, PathTable};
use spnmkl::weighting::g_all;
use spnmkl::{
    enumerate_paths, fit_observed, KernelFamily, KernelSpec, SpnGraph, TrainedModel, WeightVector,
    DEFAULT_PATH_CAP,
};

use crate::config::{self, data_failure, parse_layout};
use crate::{Failure, GenSynthArgs, InspectArgs, PredictArgs, SynthKind, TrainArgs};

/// Maps a stdout write result onto the exit contract: a broken pipe is a
/// normal end of output, anything else is a generic failure.
fn stdout_result(result: io::Result<()>) -> Result<(), Failure> {
    match result {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        Err(e) => Err(Failure::new(1, format!("cannot write to stdout: {e}"))),
    }
}

pub fn train(args: &TrainArgs) -> Result<(), Failure> {
    let mut exp = config::load_experiment(&args.config)?;
    if let Some(n) = args.max_paths {
        exp.config.max_paths = n;
    }
    if let Some(s) = args.seed {
        exp.config.seed = s;
    }
    let model_out = args
        .out
        .clone()
        .or_else(|| exp.model_out.clone())
        .ok_or_else(|| {
            Failure::new(
                2,
                "no model output path: pass --out or set model_out in the config",
            )
        })?;

    let mut log_sink = match &exp.log_out {
        Some(path) => Some(BufWriter::new(File::create(path).map_err(|e| {
            Failure::new(1, format!("cannot create log `{}`: {e}", path.display()))
        })?)),
        None => None,
    };
    let mut log_err: Option<io::Error> = None;

    let outcome = fit_observed(
        &exp.data,
        &exp.labels,
        &exp.graph,
        &exp.kernels,
        &exp.config,
        |record| {
            log::info!(
                "iter {} objective {:.6} hinge {:.6} accuracy {:.4} active {} pruned {} inner {}",
                record.iter,
                record.objective,
                record.hinge,
                record.train_accuracy,
                record.active_nodes,
                record.pruned.len(),
                record.cccp_inner_iters,
            );
            if let Some(sink) = log_sink.as_mut() {
                if log_err.is_none() {
                    let write = serde_json::to_writer(&mut *sink, record)
                        .map_err(io::Error::from)
                        .and_then(|()| writeln!(sink));
                    if let Err(e) = write {
                        log_err = Some(e);
                    }
                }
            }
        },
    )
    .map_err(Failure::from_core)?;

    if let Some(mut sink) = log_sink {
        if log_err.is_none() {
            if let Err(e) = sink.flush() {
                log_err = Some(e);
            }
        }
    }
    if let Some(e) = log_err {
        return Err(Failure::new(1, format!("cannot write training log: {e}")));
    }

    outcome.model.save(&model_out).map_err(|e| {
        Failure::new(
            1,
            format!("cannot write model `{}`: {e}", model_out.display()),
        )
    })?;

    let last = outcome
        .records
        .last()
        .expect("training always records an iteration");
    let mut out = io::stdout().lock();
    stdout_result((|| {
        writeln!(out, "paths {}", outcome.model.table.len())?;
        writeln!(out, "targets {}", outcome.model.targets.len())?;
        writeln!(out, "iterations {}", last.iter)?;
        writeln!(out, "converged {}", last.converged)?;
        writeln!(out, "final objective {}", last.objective)?;
        writeln!(out, "train accuracy {}", last.train_accuracy)?;
        writeln!(
            out,
            "capacity bound {}",
            outcome.model.diagnostics.rademacher_bound
        )?;
        writeln!(out, "model written to {}", model_out.display())
    })())
}

pub fn predict(args: &PredictArgs) -> Result<(), Failure> {
    let model = TrainedModel::load(&args.model).map_err(|e| match e {
        spnmkl::Error::Io(io) => Failure::new(
            2,
            format!("cannot read model `{}`: {io}", args.model.display()),
        ),
        other => Failure::from_core(other),
    })?;

    let layout = parse_layout(args.format.as_deref())?;
    let (data, labels) = if args.unlabeled {
        let data = dataset::load_unlabeled(&args.data).map_err(|e| data_failure(&args.data, e))?;
        (data, None)
    } else {
        let (data, labels) =
            dataset::load_labeled(&args.data, layout).map_err(|e| data_failure(&args.data, e))?;
        (data, Some(labels))
    };

    let prediction = spnmkl::predict(&model, &data).map_err(Failure::from_core)?;

    let to_file = args.out.is_some();
    let mut sink: BufWriter<Box<dyn Write>> = BufWriter::new(match &args.out {
        Some(path) => Box::new(File::create(path).map_err(|e| {
            Failure::new(
                1,
                format!("cannot write predictions `{}`: {e}", path.display()),
            )
        })?),
        None => Box::new(io::stdout()),
    });
    let rows = (|| {
        for (i, &label) in prediction.labels.iter().enumerate() {
            write!(sink, "{label}")?;
            for &d in prediction.decisions.row(i) {
                write!(sink, ",{d}")?;
            }
            writeln!(sink)?;
        }
        sink.flush()
    })();
    if to_file {
        rows.map_err(|e| Failure::new(1, format!("cannot write predictions: {e}")))?;
    } else {
        stdout_result(rows)?;
    }

    if let Some(labels) = labels {
        let correct = prediction
            .labels
            .iter()
            .zip(&labels)
            .filter(|(p, t)| p == t)
            .count();
        let mut out = io::stdout().lock();
        stdout_result(writeln!(
            out,
            "accuracy {}",
            correct as f64 / labels.len() as f64
        ))?;
    }
    Ok(())
}

pub fn inspect(args: &InspectArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.model)
        .map_err(|e| Failure::new(2, format!("cannot read `{}`: {e}", args.model.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::new(2, format!("invalid JSON `{}`: {e}", args.model.display())))?;

    let mut out = BufWriter::new(io::stdout().lock());
    if value.get("format_version").is_some() {
        let model = TrainedModel::from_json_str(&text).map_err(Failure::from_core)?;
        stdout_result((|| {
            writeln!(
                out,
                "model: root `{}`  nodes {}  weighted {}  paths {}",
                model.graph.root(),
                model.graph.nodes().len(),
                model.betas.len(),
                model.table.len(),
            )?;
            write_kernels(&mut out, &model.kernels)?;
            write_report(
                &mut out,
                &model.table,
                &model.betas,
                &model.g_cache,
                model.params.lambda,
            )?;
            writeln!(
                out,
                "classes: {}   targets: {}",
                join(&model.classes),
                join(&model.targets)
            )?;
            write_pruned(&mut out, &model.pruned_nodes)?;
            let d = &model.diagnostics;
            writeln!(out, "diagnostics:")?;
            writeln!(out, "  kernel complexity A = {}", d.a_constant)?;
            writeln!(out, "  capacity bound = {}", d.rademacher_bound)?;
            writeln!(out, "  final objective = {}", d.final_objective)?;
            writeln!(out, "  train accuracy = {}", d.train_accuracy)?;
            out.flush()
        })())
    } else {
        let graph = SpnGraph::parse(&text).map_err(Failure::from_core)?;
        let cap = args.max_paths.unwrap_or(DEFAULT_PATH_CAP);
        let table = enumerate_paths(&graph, cap).map_err(Failure::from_core)?;
        let betas: WeightVector = graph
            .product_ids()
            .into_iter()
            .map(|id| (id, 1.0))
            .collect();
        let g = g_all(&table, &betas);
        stdout_result((|| {
            writeln!(
                out,
                "structure: root `{}`  nodes {}  weighted {}  paths {}",
                graph.root(),
                graph.nodes().len(),
                betas.len(),
                table.len(),
            )?;
            writeln!(out, "untrained view: unit weights, unit penalty strength")?;
            write_report(&mut out, &table, &betas, &g, 1.0)?;
            write_pruned(&mut out, &[])?;
            out.flush()
        })())
    }
}

pub fn gen_synth(args: &GenSynthArgs) -> Result<(), Failure> {
    if args.n == 0 {
        return Err(Failure::new(2, "n must be at least 1"));
    }
    let (data, labels) = match args.kind {
        SynthKind::TwoGaussians => dataset::gen_two_gaussians(args.n, args.seed),
        SynthKind::XorRings => dataset::gen_xor_rings(args.n, args.seed),
        SynthKind::KBlobs => {
            if args.classes < 2 {
                return Err(Failure::new(2, "k-blobs needs at least 2 classes"));
            }
            dataset::gen_blobs(args.n, args.classes, args.seed)
        }
    };
    dataset::write_labeled_csv(&args.out, &data, &labels)
        .map_err(|e| Failure::new(1, format!("cannot write `{}`: {e}", args.out.display())))?;
    stdout_result(writeln!(
        io::stdout().lock(),
        "wrote {} ({} rows)",
        args.out.display(),
        labels.len()
    ))
}

fn write_kernels(out: &mut dyn Write, kernels: &[KernelSpec]) -> io::Result<()> {
    writeln!(out, "kernels:")?;
    for spec in kernels {
        let family = match spec.family {
            KernelFamily::Linear => "linear".to_string(),
            KernelFamily::Polynomial { degree, coef } => {
                format!("polynomial(degree {degree}, coef {coef})")
            }
            KernelFamily::Rbf { gamma } => format!("rbf(gamma {gamma})"),
        };
        let norm = if spec.normalize { ", normalized" } else { "" };
        writeln!(out, "  {}: {family}{norm}", spec.name)?;
    }
    Ok(())
}

/// Weight table, per-path weighting with exponent tuples, and the penalty
/// coefficients with their exact per-unit total (always the path count).
fn write_report(
    out: &mut dyn Write,
    table: &PathTable,
    betas: &WeightVector,
    g: &[f64],
    lambda: f64,
) -> io::Result<()> {
    writeln!(out, "weights:")?;
    for (node, beta) in betas {
        writeln!(out, "  {node} = {beta}")?;
    }
    writeln!(out, "paths:")?;
    for path in &table.paths {
        let exponents = path
            .exponents
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        let members = path
            .members
            .iter()
            .map(|m| m.node.as_str())
            .collect::<Vec<_>>()
            .join(", ");
        writeln!(
            out,
            "  path {}: g = {}  exponents ({})  members [{}]  leaves [{}]",
            path.id,
            g[path.id],
            exponents,
            members,
            path.leaves.join(", "),
        )?;
    }
    writeln!(out, "penalty coefficients (strength {lambda}):")?;
    for (node, r) in &table.reg_coeff {
        let c = lambda * (*r.numer() as f64 / *r.denom() as f64);
        writeln!(out, "  {node}: {r} per unit strength, c = {c}")?;
    }
    let total: Exponent = table.reg_coeff.values().copied().sum();
    writeln!(out, "per-unit total {} = path count {}", total, table.len())
}

fn write_pruned(out: &mut dyn Write, pruned: &[String]) -> io::Result<()> {
    if pruned.is_empty() {
        writeln!(out, "pruned nodes: none")
    } else {
        writeln!(out, "pruned nodes: {}", pruned.join(", "))
    }
}

fn join(values: &[i64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
