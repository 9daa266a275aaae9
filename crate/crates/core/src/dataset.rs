//! Dataset loading, writing, and synthetic generators.
//!
//! Two on-disk formats are supported:
//!
//! * CSV without a header, the integer class label in the first column and
//!   the feature values after it;
//! * sparse `label index:value ...` lines with 1-based indices, missing
//!   entries read as zero.
//!
//! The synthetic generators are seeded and deterministic.

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// On-disk dataset layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataLayout {
    Csv,
    Sparse,
}

impl DataLayout {
    /// Picks a layout from the file extension; CSV unless the extension is
    /// one of the sparse spellings.
    pub fn infer(path: &Path) -> DataLayout {
        match path.extension().and_then(|e| e.to_str()) {
            Some("libsvm") | Some("svm") | Some("sparse") => DataLayout::Sparse,
            _ => DataLayout::Csv,
        }
    }

    pub fn parse(text: &str) -> Result<DataLayout> {
        match text {
            "csv" => Ok(DataLayout::Csv),
            "sparse" | "libsvm" => Ok(DataLayout::Sparse),
            other => Err(Error::InvalidDocument(format!(
                "unknown data format `{other}` (expected csv or sparse)"
            ))),
        }
    }
}

/// Loads a labeled dataset, inferring the layout from the extension when
/// `layout` is not given.
pub fn load_labeled(path: &Path, layout: Option<DataLayout>) -> Result<(Array2<f64>, Vec<i64>)> {
    let layout = layout.unwrap_or_else(|| DataLayout::infer(path));
    let text = std::fs::read_to_string(path)?;
    match layout {
        DataLayout::Csv => parse_csv(&text, true).map(|(d, l)| (d, l.unwrap())),
        DataLayout::Sparse => parse_sparse(&text),
    }
}

/// Loads an unlabeled CSV: every column is a feature.
pub fn load_unlabeled(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text, false).map(|(d, _)| d)
}

fn parse_csv(text: &str, labeled: bool) -> Result<(Array2<f64>, Option<Vec<i64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    let mut width = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| Error::DataFormat {
            line,
            reason: e.to_string(),
        })?;
        if record.is_empty() || (record.len() == 1 && record[0].is_empty()) {
            continue;
        }
        let min_fields = if labeled { 2 } else { 1 };
        if record.len() < min_fields {
            return Err(Error::DataFormat {
                line,
                reason: format!("expected at least {min_fields} fields, found {}", record.len()),
            });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::DataFormat {
                    line,
                    reason: format!("expected {w} fields, found {}", record.len()),
                });
            }
            _ => {}
        }
        let mut fields = record.iter();
        if labeled {
            let raw = fields.next().unwrap();
            labels.push(parse_label(raw, line)?);
        }
        let mut row = Vec::with_capacity(record.len());
        for field in fields {
            row.push(parse_value(field, line)?);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let data = Array2::from_shape_vec((rows.len(), dim), flat).expect("rows rectangular");
    Ok((data, labeled.then_some(labels)))
}

fn parse_sparse(text: &str) -> Result<(Array2<f64>, Vec<i64>)> {
    let mut entries: Vec<(Vec<(usize, f64)>, i64)> = Vec::new();
    let mut dim = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        let mut tokens = stripped.split_whitespace();
        let label = parse_label(tokens.next().unwrap(), line)?;
        let mut row = Vec::new();
        for token in tokens {
            let (i, v) = token.split_once(':').ok_or_else(|| Error::DataFormat {
                line,
                reason: format!("expected index:value, found `{token}`"),
            })?;
            let index: usize = i.parse().map_err(|_| Error::DataFormat {
                line,
                reason: format!("bad feature index `{i}`"),
            })?;
            if index == 0 {
                return Err(Error::DataFormat {
                    line,
                    reason: "feature indices are 1-based".into(),
                });
            }
            let value = parse_value(v, line)?;
            dim = dim.max(index);
            row.push((index - 1, value));
        }
        entries.push((row, label));
    }
    if entries.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut data = Array2::zeros((entries.len(), dim));
    let mut labels = Vec::with_capacity(entries.len());
    for (r, (row, label)) in entries.into_iter().enumerate() {
        for (c, v) in row {
            data[[r, c]] = v;
        }
        labels.push(label);
    }
    Ok((data, labels))
}

fn parse_value(field: &str, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::DataFormat {
        line,
        reason: format!("bad numeric value `{field}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::DataFormat {
            line,
            reason: format!("non-finite value `{field}`"),
        });
    }
    Ok(v)
}

fn parse_label(field: &str, line: usize) -> Result<i64> {
    let v: f64 = field.parse().map_err(|_| Error::DataFormat {
        line,
        reason: format!("bad label `{field}`"),
    })?;
    let rounded = v.round();
    if (v - rounded).abs() > 1e-9 || !rounded.is_finite() {
        return Err(Error::DataFormat {
            line,
            reason: format!("label `{field}` is not an integer"),
        });
    }
    Ok(rounded as i64)
}

/// Writes a labeled CSV in the layout [`load_labeled`] reads back.
pub fn write_labeled_csv(path: &Path, data: &Array2<f64>, labels: &[i64]) -> Result<()> {
    if data.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: data.nrows(),
            got: labels.len(),
        });
    }
    let mut out = String::new();
    for (row, label) in data.rows().into_iter().zip(labels) {
        out.push_str(&label.to_string());
        for v in row {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Two isotropic unit-variance blobs centered at `(-2, 0)` and `(2, 0)`,
/// labels `-1` and `1`, the first half of the rows negative.
pub fn gen_two_gaussians(n: usize, seed: u64) -> (Array2<f64>, Vec<i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut data = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    let n_neg = n / 2;
    for i in 0..n {
        let (cx, label) = if i < n_neg { (-2.0, -1) } else { (2.0, 1) };
        data[[i, 0]] = cx + normal.sample(&mut rng);
        data[[i, 1]] = normal.sample(&mut rng);
        labels.push(label);
    }
    (data, labels)
}

/// Two concentric rings: class `1` at radius one, class `-1` at radius two,
/// radial noise of scale `0.1` and uniform angles. Not linearly separable.
pub fn gen_xor_rings(n: usize, seed: u64) -> (Array2<f64>, Vec<i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut data = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    let n_inner = n / 2;
    for i in 0..n {
        let (radius, label) = if i < n_inner { (1.0, 1) } else { (2.0, -1) };
        let angle = rng.gen::<f64>() * std::f64::consts::TAU;
        let r = radius + noise.sample(&mut rng);
        data[[i, 0]] = r * angle.cos();
        data[[i, 1]] = r * angle.sin();
        labels.push(label);
    }
    (data, labels)
}

/// `k` isotropic blobs with centers spaced evenly on a circle of radius
/// four, spread `0.7`, labels `0..k`.
pub fn gen_blobs(n: usize, k: usize, seed: u64) -> (Array2<f64>, Vec<i64>) {
    assert!(k >= 1, "at least one blob");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.7).unwrap();
    let mut data = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i * k / n.max(1);
        let angle = std::f64::consts::TAU * class as f64 / k as f64;
        data[[i, 0]] = 4.0 * angle.cos() + normal.sample(&mut rng);
        data[[i, 1]] = 4.0 * angle.sin() + normal.sample(&mut rng);
        labels.push(class as i64);
    }
    (data, labels)
}
