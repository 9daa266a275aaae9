//! Basis kernels, Gram matrices, and entrywise path kernels.
//!
//! Three kernel families are supported:
//!
//! * linear: `k(x, y) = x^T y`
//! * polynomial: `k(x, y) = (x^T y + coef)^degree`
//! * rbf: `k(x, y) = exp(-gamma * ||x - y||^2)`
//!
//! Each kernel may be cosine-normalized, `k(x, y) / sqrt(k(x, x) k(y, y))`,
//! which is the default; the training-side self-similarities are retained so
//! that query-time cross kernels normalize against the same statistics.
//!
//! A path kernel is the entrywise (Hadamard) product of the path's leaf
//! Grams, with repeated leaves multiplying repeatedly. Entrywise products of
//! positive semidefinite matrices stay positive semidefinite, which the
//! diagnostics here estimate without a full decomposition.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spn::PathTable;

/// Relative tolerance for the positive-semidefiniteness diagnostic: the
/// estimated minimum eigenvalue may not fall below `-PSD_RTOL * ||K||_2`.
pub const PSD_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelFamily {
    Linear,
    Polynomial { degree: u32, coef: f64 },
    Rbf { gamma: f64 },
}

/// A named basis kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub name: String,
    #[serde(flatten)]
    pub family: KernelFamily,
    #[serde(default = "default_normalize")]
    pub normalize: bool,
}

fn default_normalize() -> bool {
    true
}

impl KernelSpec {
    pub fn linear(name: &str) -> Self {
        KernelSpec {
            name: name.into(),
            family: KernelFamily::Linear,
            normalize: true,
        }
    }

    pub fn polynomial(name: &str, degree: u32, coef: f64) -> Self {
        KernelSpec {
            name: name.into(),
            family: KernelFamily::Polynomial { degree, coef },
            normalize: true,
        }
    }

    pub fn rbf(name: &str, gamma: f64) -> Self {
        KernelSpec {
            name: name.into(),
            family: KernelFamily::Rbf { gamma },
            normalize: true,
        }
    }

    pub fn with_normalize(mut self, normalize: bool) -> Self {
        self.normalize = normalize;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| {
            Err(Error::InvalidKernelSpec {
                name: self.name.clone(),
                reason: reason.into(),
            })
        };
        match self.family {
            KernelFamily::Linear => Ok(()),
            KernelFamily::Polynomial { degree, coef } => {
                if degree == 0 {
                    return fail("degree must be at least 1");
                }
                if !coef.is_finite() || coef < 0.0 {
                    return fail("coef must be finite and nonnegative");
                }
                Ok(())
            }
            KernelFamily::Rbf { gamma } => {
                if !gamma.is_finite() || gamma <= 0.0 {
                    return fail("gamma must be finite and positive");
                }
                Ok(())
            }
        }
    }

    fn eval(&self, x: ArrayView1<f64>, y: ArrayView1<f64>) -> f64 {
        match self.family {
            KernelFamily::Linear => x.dot(&y),
            KernelFamily::Polynomial { degree, coef } => (x.dot(&y) + coef).powi(degree as i32),
            KernelFamily::Rbf { gamma } => {
                let mut sq = 0.0;
                for (a, b) in x.iter().zip(y.iter()) {
                    let d = a - b;
                    sq += d * d;
                }
                (-gamma * sq).exp()
            }
        }
    }
}

/// Checks that every entry of `data` is finite.
pub fn validate_data(data: &Array2<f64>) -> Result<()> {
    for (row, r) in data.rows().into_iter().enumerate() {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { row });
        }
    }
    Ok(())
}

/// Raw (unnormalized) self-similarities `k(x_i, x_i)`.
pub fn raw_diag(data: &Array2<f64>, spec: &KernelSpec) -> Vec<f64> {
    data.rows()
        .into_iter()
        .map(|r| spec.eval(r, r))
        .collect()
}

/// Computes the full Gram matrix of `spec` over the rows of `data`,
/// normalized when the spec requests it. The result is exactly symmetric.
pub fn compute_gram(data: &Array2<f64>, spec: &KernelSpec) -> Result<Array2<f64>> {
    spec.validate()?;
    validate_data(data)?;
    let n = data.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut buf = vec![0.0f64; n * n];
    buf.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let xi = data.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = spec.eval(xi, data.row(j));
        }
    });
    let mut gram = Array2::from_shape_vec((n, n), buf).expect("shape matches buffer");
    if spec.normalize {
        let diag: Vec<f64> = (0..n).map(|i| gram[[i, i]]).collect();
        if let Some(row) = diag.iter().position(|&d| d.is_nan() || d <= 0.0) {
            return Err(Error::ZeroNormRow {
                kernel: spec.name.clone(),
                row,
            });
        }
        for i in 0..n {
            for j in 0..n {
                gram[[i, j]] /= (diag[i] * diag[j]).sqrt();
            }
        }
    }
    Ok(gram)
}

/// Computes the query-by-training cross-kernel block of `spec`, normalizing
/// query rows against fresh self-similarities and training rows against the
/// self-similarities recorded at training time.
pub fn cross_kernel(
    spec: &KernelSpec,
    train: &Array2<f64>,
    train_diag: &[f64],
    queries: &Array2<f64>,
) -> Result<Array2<f64>> {
    spec.validate()?;
    validate_data(queries)?;
    if train.ncols() != queries.ncols() {
        return Err(Error::DimensionMismatch {
            expected: train.ncols(),
            got: queries.ncols(),
        });
    }
    let (nq, nt) = (queries.nrows(), train.nrows());
    let mut out = Array2::zeros((nq, nt));
    for qi in 0..nq {
        let q = queries.row(qi);
        let dq = if spec.normalize {
            let d = spec.eval(q, q);
            if d.is_nan() || d <= 0.0 {
                return Err(Error::ZeroNormRow {
                    kernel: spec.name.clone(),
                    row: qi,
                });
            }
            d
        } else {
            1.0
        };
        for ti in 0..nt {
            let mut v = spec.eval(q, train.row(ti));
            if spec.normalize {
                v /= (dq * train_diag[ti]).sqrt();
            }
            out[[qi, ti]] = v;
        }
    }
    Ok(out)
}

/// Entrywise product of the named leaf Grams, with multiplicity.
pub fn path_gram(basis: &BTreeMap<String, Array2<f64>>, leaves: &[String]) -> Array2<f64> {
    let n = basis
        .values()
        .next()
        .map(|g| g.nrows())
        .unwrap_or(0);
    let mut out = Array2::ones((n, n));
    for leaf in leaves {
        out = &out * &basis[leaf];
    }
    out
}

/// Estimated extreme eigenvalues of a symmetric matrix.
#[derive(Debug, Clone, Copy)]
pub struct PsdReport {
    pub min_eig: f64,
    pub spectral_norm: f64,
}

/// Estimates the minimum eigenvalue of symmetric `k` by power iteration on
/// the matrix itself and on its spectral shift, and checks it against
/// `-PSD_RTOL * ||k||_2`.
pub fn psd_check(k: &Array2<f64>, name: &str) -> Result<PsdReport> {
    let report = estimate_extremes(k);
    if report.min_eig < -PSD_RTOL * report.spectral_norm.max(1e-12) {
        return Err(Error::NotPsd {
            kernel: name.into(),
            min_eig: report.min_eig,
        });
    }
    Ok(report)
}

fn estimate_extremes(k: &Array2<f64>) -> PsdReport {
    let n = k.nrows();
    if n == 0 {
        return PsdReport {
            min_eig: 0.0,
            spectral_norm: 0.0,
        };
    }
    let dominant = power_iterate(|v, out| mat_vec(k, v, out), n);
    let spectral_norm = dominant.abs();
    let shift = spectral_norm * (1.0 + 1e-6) + 1e-12;
    let shifted = power_iterate(
        |v, out| {
            mat_vec(k, v, out);
            for i in 0..n {
                out[i] = shift * v[i] - out[i];
            }
        },
        n,
    );
    PsdReport {
        min_eig: shift - shifted,
        spectral_norm,
    }
}

fn mat_vec(k: &Array2<f64>, v: &[f64], out: &mut [f64]) {
    let n = k.nrows();
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        let row = k.row(i);
        for j in 0..n {
            acc += row[j] * v[j];
        }
        *slot = acc;
    }
}

/// Returns the Rayleigh quotient of the dominant eigenpair of the linear
/// operator `apply`, from a fixed deterministic start vector.
fn power_iterate(mut apply: impl FnMut(&[f64], &mut [f64]), n: usize) -> f64 {
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 1e-3 * (i as f64)).collect();
    normalize(&mut v);
    let mut w = vec![0.0; n];
    let mut rayleigh = 0.0;
    for _ in 0..300 {
        apply(&v, &mut w);
        let next: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let norm = normalize(&mut w);
        if norm == 0.0 {
            return 0.0;
        }
        std::mem::swap(&mut v, &mut w);
        if (next - rayleigh).abs() <= 1e-12 * (1.0 + next.abs()) {
            return next;
        }
        rayleigh = next;
    }
    rayleigh
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// Gram matrices of every basis kernel and every path over one dataset.
#[derive(Debug, Clone)]
pub struct KernelWorkspace {
    pub specs: Vec<KernelSpec>,
    /// Normalized basis Grams by kernel name.
    pub basis: BTreeMap<String, Array2<f64>>,
    /// Pre-normalization self-similarities by kernel name.
    pub raw_diags: BTreeMap<String, Vec<f64>>,
    /// Path Grams, indexed by path id.
    pub path_grams: Vec<Array2<f64>>,
    /// Trace of each path Gram.
    pub diag_sums: Vec<f64>,
    pub n: usize,
}

impl KernelWorkspace {
    /// Computes all basis and path Grams over `data` and runs the
    /// positive-semidefiniteness diagnostic on each basis Gram.
    pub fn build(data: &Array2<f64>, specs: &[KernelSpec], table: &PathTable) -> Result<Self> {
        let mut names = std::collections::BTreeSet::new();
        for spec in specs {
            spec.validate()?;
            if !names.insert(spec.name.clone()) {
                return Err(Error::InvalidKernelSpec {
                    name: spec.name.clone(),
                    reason: "duplicate kernel name".into(),
                });
            }
        }
        validate_data(data)?;
        if data.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }

        let mut basis = BTreeMap::new();
        let mut raw_diags = BTreeMap::new();
        for spec in specs {
            let gram = compute_gram(data, spec)?;
            psd_check(&gram, &spec.name)?;
            raw_diags.insert(spec.name.clone(), raw_diag(data, spec));
            basis.insert(spec.name.clone(), gram);
        }
        for path in &table.paths {
            for leaf in &path.leaves {
                if !basis.contains_key(leaf) {
                    return Err(Error::UnknownKernelRef {
                        node: format!("path {}", path.id),
                        kernel: leaf.clone(),
                    });
                }
            }
        }

        let mut ws = KernelWorkspace {
            specs: specs.to_vec(),
            basis,
            raw_diags,
            path_grams: Vec::new(),
            diag_sums: Vec::new(),
            n: data.nrows(),
        };
        ws.rebuild_paths(table)?;
        Ok(ws)
    }

    /// Recomputes the path Grams for `table` from the stored basis Grams.
    pub fn rebuild_paths(&mut self, table: &PathTable) -> Result<()> {
        self.path_grams = table
            .paths
            .par_iter()
            .map(|p| path_gram(&self.basis, &p.leaves))
            .collect();
        self.diag_sums = self
            .path_grams
            .iter()
            .map(|g| (0..self.n).map(|i| g[[i, i]]).sum())
            .collect();
        for (id, &trace) in self.diag_sums.iter().enumerate() {
            if trace < -1e-9 {
                return Err(Error::NotPsd {
                    kernel: format!("path {id}"),
                    min_eig: trace,
                });
            }
        }
        Ok(())
    }

    /// Keeps only the path Grams whose old ids appear in `kept`, in order.
    pub fn retain_paths(&mut self, kept: &[usize]) {
        self.path_grams = kept.iter().map(|&i| self.path_grams[i].clone()).collect();
        self.diag_sums = kept.iter().map(|&i| self.diag_sums[i]).collect();
    }

    /// Kernel-complexity constant: `sqrt(sum_i sum_m K_m(x_i, x_i))`.
    pub fn compute_a(&self) -> Result<f64> {
        let total: f64 = self.diag_sums.iter().sum();
        if total < 0.0 {
            return Err(Error::NotPsd {
                kernel: "path kernel sum".into(),
                min_eig: total,
            });
        }
        Ok(total.sqrt())
    }
}
