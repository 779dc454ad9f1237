//! On-disk formats and validated input types.
//!
//! Feature and probability matrices are read from headerless CSV or from the
//! little-endian FMB container:
//!
//! ```text
//! "FMB1" | dtype: u8 (1 = f32, 2 = f64) | rows: u64 | cols: u64 | rows*cols values, row-major
//! ```
//!
//! Labels are either one integer per line or the FLB container
//! (`"FLB1" | n: u64 | n * u32`). Task bundles are described by a TSV manifest
//! with the header `id features labels softpred accuracy num_classes`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

const FMB_MAGIC: &[u8; 4] = b"FMB1";
const FLB_MAGIC: &[u8; 4] = b"FLB1";
const FMB_HEADER_LEN: usize = 4 + 1 + 8 + 8;

/// Row-sum tolerance accepted for serialized probabilities.
pub const SOFTPRED_ROW_TOL: f64 = 1e-6;

/// Target embeddings, one row per sample. Entries are finite and the matrix is
/// non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Array2<f64>);

impl FeatureMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::Validation(format!(
                "feature matrix must be non-empty, got {n}x{d}"
            )));
        }
        if let Some(((i, j), v)) = data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {v} at row {i}, column {j}"
            )));
        }
        Ok(Self(data))
    }

    pub fn n_samples(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix(self.0.select(Axis(0), rows))
    }

    // Callers guarantee finiteness (outputs of arithmetic on valid matrices).
    pub(crate) fn from_trusted(data: Array2<f64>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Self(data)
    }
}

/// Class labels remapped to the contiguous range `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<usize>,
    num_classes: usize,
    original: Vec<i64>,
}

impl LabelVector {
    /// Builds from labels already in `0..C`; every class must occur.
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Validation("label vector is empty".into()));
        }
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut seen = vec![false; num_classes];
        for &l in &labels {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!(
                "class {missing} has no samples; labels must cover 0..{num_classes}"
            )));
        }
        let original = (0..num_classes as i64).collect();
        Ok(Self {
            labels,
            num_classes,
            original,
        })
    }

    /// Remaps arbitrary integer labels to `0..C` in order of first appearance.
    pub fn from_raw(raw: &[i64]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::Validation("label vector is empty".into()));
        }
        let mut index: HashMap<i64, usize> = HashMap::new();
        let mut original = Vec::new();
        let labels = raw
            .iter()
            .map(|&r| {
                *index.entry(r).or_insert_with(|| {
                    original.push(r);
                    original.len() - 1
                })
            })
            .collect();
        Ok(Self {
            labels,
            num_classes: original.len(),
            original,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Original label value for each contiguous class index.
    pub fn original_labels(&self) -> &[i64] {
        &self.original
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Labels at the given rows, remapped by first appearance.
    pub fn select(&self, rows: &[usize]) -> Result<LabelVector> {
        let raw: Vec<i64> = rows.iter().map(|&r| self.labels[r] as i64).collect();
        LabelVector::from_raw(&raw)
    }
}

/// Source-model class probabilities, one row per target sample. Rows are
/// renormalized to sum to one after validation.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPredictionMatrix(Array2<f64>);

impl SoftPredictionMatrix {
    pub fn new(mut probs: Array2<f64>) -> Result<Self> {
        let (n, k) = probs.dim();
        if n == 0 || k == 0 {
            return Err(Error::Validation(format!(
                "soft predictions must be non-empty, got {n}x{k}"
            )));
        }
        for (i, mut row) in probs.axis_iter_mut(Axis(0)).enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Validation(format!("probability {v} outside [0,1] in row {i}")));
            }
            let s: f64 = row.sum();
            if (s - 1.0).abs() > SOFTPRED_ROW_TOL {
                return Err(Error::Validation(format!("row {i} sums to {s}, expected 1")));
            }
            row /= s;
        }
        Ok(Self(probs))
    }

    /// One-hot rows for the given labels over `num_sources` columns.
    pub fn one_hot(labels: &[usize], num_sources: usize) -> Result<Self> {
        let mut probs = Array2::zeros((labels.len(), num_sources));
        for (i, &l) in labels.iter().enumerate() {
            if l >= num_sources {
                return Err(Error::Validation(format!("label {l} out of range {num_sources}")));
            }
            probs[(i, l)] = 1.0;
        }
        Self::new(probs)
    }

    pub fn n_samples(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_sources(&self) -> usize {
        self.0.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    /// Row argmax; ties go to the lowest index.
    pub fn pseudo_labels(&self) -> Vec<usize> {
        self.0
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0usize, f64::NEG_INFINITY),
                        |best, (j, &p)| {
                            if p > best.1 {
                                (j, p)
                            } else {
                                best
                            }
                        },
                    )
                    .0
            })
            .collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> SoftPredictionMatrix {
        SoftPredictionMatrix(self.0.select(Axis(0), rows))
    }
}

/// Where a task's metric inputs live.
#[derive(Debug, Clone)]
pub enum TaskInputs {
    Files {
        features: PathBuf,
        labels: PathBuf,
        softpred: Option<PathBuf>,
    },
    Inline(Arc<TaskData>),
}

/// Loaded inputs of one task.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub features: FeatureMatrix,
    pub labels: LabelVector,
    pub softpred: Option<SoftPredictionMatrix>,
}

impl TaskData {
    pub fn new(features: FeatureMatrix, labels: LabelVector, softpred: Option<SoftPredictionMatrix>) -> Result<Self> {
        if labels.len() != features.n_samples() {
            return Err(Error::Validation(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.n_samples()
            )));
        }
        if let Some(sp) = &softpred {
            if sp.n_samples() != features.n_samples() {
                return Err(Error::Validation(format!(
                    "{} soft-prediction rows for {} feature rows",
                    sp.n_samples(),
                    features.n_samples()
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            softpred,
        })
    }
}

/// One row of an evaluation bundle: metric inputs plus the fine-tuned accuracy.
#[derive(Debug, Clone)]
pub struct TaskRecord {
    pub id: String,
    pub inputs: TaskInputs,
    pub accuracy: f64,
    pub num_classes: Option<usize>,
}

impl TaskRecord {
    pub fn new(id: impl Into<String>, inputs: TaskInputs, accuracy: f64, num_classes: Option<usize>) -> Result<Self> {
        let id = id.into();
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::Validation(format!(
                "task {id}: accuracy {accuracy} outside [0,1]"
            )));
        }
        if let Some(c) = num_classes {
            if c < 2 {
                return Err(Error::Validation(format!("task {id}: num_classes {c} < 2")));
            }
        }
        Ok(Self {
            id,
            inputs,
            accuracy,
            num_classes,
        })
    }

    pub fn load(&self) -> Result<Arc<TaskData>> {
        match &self.inputs {
            TaskInputs::Inline(data) => Ok(Arc::clone(data)),
            TaskInputs::Files {
                features,
                labels,
                softpred,
            } => {
                let f = load_feature_matrix(features, detect_matrix_format(features)?)?;
                let y = load_labels(labels)?;
                let sp = softpred
                    .as_ref()
                    .map(|p| load_soft_predictions(p, detect_matrix_format(p)?))
                    .transpose()?;
                Ok(Arc::new(TaskData::new(f, y, sp)?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Fmb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FmbDtype {
    F32,
    F64,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Picks FMB when the file starts with its magic, CSV otherwise.
pub fn detect_matrix_format(path: &Path) -> Result<MatrixFormat> {
    use std::io::Read;
    let mut head = [0u8; 4];
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let got = file.read(&mut head).map_err(|e| Error::io(path, e))?;
    Ok(if got == 4 && &head == FMB_MAGIC {
        MatrixFormat::Fmb
    } else {
        MatrixFormat::Csv
    })
}

fn parse_csv_matrix(path: &Path, text: &str) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0usize;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, format!("line {}: cannot parse `{}`", lineno + 1, field.trim())))?;
            values.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(Error::Validation(format!(
                    "{}: ragged rows, line {} has {count} fields, expected {c}",
                    path.display(),
                    lineno + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::parse(path, e.to_string()))
}

fn parse_fmb(path: &Path, bytes: &[u8]) -> Result<Array2<f64>> {
    if bytes.len() < FMB_HEADER_LEN || &bytes[..4] != FMB_MAGIC {
        return Err(Error::parse(path, "missing FMB1 header"));
    }
    let width = match bytes[4] {
        1 => 4usize,
        2 => 8usize,
        other => return Err(Error::parse(path, format!("unknown FMB dtype {other}"))),
    };
    let rows = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes"));
    let count = rows
        .checked_mul(cols)
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::parse(path, "FMB shape overflows"))?;
    let payload = &bytes[FMB_HEADER_LEN..];
    if payload.len() != count * width {
        return Err(Error::parse(
            path,
            format!("payload has {} bytes, header implies {}", payload.len(), count * width),
        ));
    }
    let values: Vec<f64> = if width == 8 {
        payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    } else {
        payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect()
    };
    Array2::from_shape_vec((rows as usize, cols as usize), values).map_err(|e| Error::parse(path, e.to_string()))
}

fn read_matrix(path: &Path, format: MatrixFormat) -> Result<Array2<f64>> {
    let bytes = read_bytes(path)?;
    match format {
        MatrixFormat::Fmb => parse_fmb(path, &bytes),
        MatrixFormat::Csv => {
            let text = std::str::from_utf8(&bytes).map_err(|_| Error::parse(path, "not valid UTF-8"))?;
            parse_csv_matrix(path, text)
        }
    }
}

pub fn load_feature_matrix(path: &Path, format: MatrixFormat) -> Result<FeatureMatrix> {
    FeatureMatrix::new(read_matrix(path, format)?).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn load_soft_predictions(path: &Path, format: MatrixFormat) -> Result<SoftPredictionMatrix> {
    SoftPredictionMatrix::new(read_matrix(path, format)?)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

/// Loads labels from text (one integer per line) or FLB, remapped to `0..C`
/// by first appearance.
pub fn load_labels(path: &Path) -> Result<LabelVector> {
    let bytes = read_bytes(path)?;
    let raw: Vec<i64> = if bytes.len() >= 4 && &bytes[..4] == FLB_MAGIC {
        if bytes.len() < 12 {
            return Err(Error::parse(path, "truncated FLB header"));
        }
        let n = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let payload = &bytes[12..];
        if payload.len() != n * 4 {
            return Err(Error::parse(
                path,
                format!("FLB payload has {} bytes, expected {}", payload.len(), n * 4),
            ));
        }
        payload
            .chunks_exact(4)
            .map(|c| i64::from(u32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect()
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::parse(path, "not valid UTF-8"))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim()
                    .parse::<i64>()
                    .map_err(|_| Error::parse(path, format!("line {}: `{}` is not an integer", i + 1, l.trim())))
            })
            .collect::<Result<_>>()?
    };
    if raw.is_empty() {
        return Err(Error::Validation(format!("{}: no labels", path.display())));
    }
    LabelVector::from_raw(&raw)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

pub fn write_matrix_fmb(path: &Path, m: ArrayView2<'_, f64>, dtype: FmbDtype) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(FMB_MAGIC).map_err(io)?;
    w.write_all(&[match dtype {
        FmbDtype::F32 => 1u8,
        FmbDtype::F64 => 2u8,
    }])
    .map_err(io)?;
    w.write_all(&(m.nrows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.ncols() as u64).to_le_bytes()).map_err(io)?;
    for v in m.iter() {
        match dtype {
            FmbDtype::F64 => w.write_all(&v.to_le_bytes()),
            FmbDtype::F32 => w.write_all(&(*v as f32).to_le_bytes()),
        }
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// CSV with 17 significant digits, enough to round-trip every f64.
pub fn write_matrix_csv(path: &Path, m: ArrayView2<'_, f64>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for row in m.axis_iter(Axis(0)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn write_matrix(path: &Path, m: ArrayView2<'_, f64>, format: MatrixFormat) -> Result<()> {
    match format {
        MatrixFormat::Csv => write_matrix_csv(path, m),
        MatrixFormat::Fmb => write_matrix_fmb(path, m, FmbDtype::F64),
    }
}

pub fn write_labels_text(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = create(path)?;
    for l in labels {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_labels_flb(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    w.write_all(FLB_MAGIC).map_err(io)?;
    w.write_all(&(labels.len() as u64).to_le_bytes()).map_err(io)?;
    for &l in labels {
        let v = u32::try_from(l).map_err(|_| Error::Validation(format!("label {l} does not fit in u32")))?;
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub const MANIFEST_HEADER: [&str; 6] = ["id", "features", "labels", "softpred", "accuracy", "num_classes"];

/// Parses a task manifest. Relative paths resolve against the manifest's
/// directory; the referenced files are only opened by [`TaskRecord::load`].
pub fn load_task_bundle(manifest: &Path) -> Result<Vec<TaskRecord>> {
    let bytes = read_bytes(manifest)?;
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::parse(manifest, "not valid UTF-8"))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let resolve = |p: &str| -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };

    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let (_, header) = lines.next().ok_or_else(|| Error::parse(manifest, "empty manifest"))?;
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let col = |name: &str| -> Result<usize> {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::MissingField {
                field: name.to_string(),
                line: 1,
            })
    };
    let idx: Vec<usize> = MANIFEST_HEADER.iter().map(|n| col(n)).collect::<Result<_>>()?;

    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (lineno, line) in lines {
        let line_no = lineno + 1;
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let get = |k: usize| -> Result<&str> {
            fields
                .get(idx[k])
                .copied()
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::MissingField {
                    field: MANIFEST_HEADER[k].to_string(),
                    line: line_no,
                })
        };
        let id = get(0)?.to_string();
        let features = resolve(get(1)?);
        let labels = resolve(get(2)?);
        let softpred = match get(3)? {
            "-" => None,
            p => Some(resolve(p)),
        };
        let accuracy: f64 = get(4)?
            .parse()
            .map_err(|_| Error::parse(manifest, format!("line {line_no}: bad accuracy")))?;
        let num_classes = match get(5)? {
            "-" => None,
            c => Some(
                c.parse::<usize>()
                    .map_err(|_| Error::parse(manifest, format!("line {line_no}: bad num_classes")))?,
            ),
        };
        if !seen.insert(id.clone()) {
            return Err(Error::Validation(format!("duplicate task id `{id}` on line {line_no}")));
        }
        records.push(TaskRecord::new(
            id,
            TaskInputs::Files {
                features,
                labels,
                softpred,
            },
            accuracy,
            num_classes,
        )?);
    }
    Ok(records)
}

/// One manifest data line (no trailing newline). Paths are written as given.
pub fn manifest_row(
    id: &str,
    features: &Path,
    labels: &Path,
    softpred: Option<&Path>,
    accuracy: f64,
    num_classes: Option<usize>,
) -> String {
    format!(
        "{id}\t{}\t{}\t{}\t{accuracy}\t{}",
        features.display(),
        labels.display(),
        softpred.map_or_else(|| "-".to_string(), |p| p.display().to_string()),
        num_classes.map_or_else(|| "-".to_string(), |c| c.to_string()),
    )
}
