//! Feature matrices, class pools and their on-disk formats.
//!
//! Two file formats are understood:
//!
//! * **OCMF binary** (any extension other than `.csv`). All integers and
//!   floats are little-endian:
//!
//!   | field        | type               |
//!   |--------------|--------------------|
//!   | magic        | `b"OCMF"`          |
//!   | version      | `u16` (= 1)        |
//!   | rows         | `u32`              |
//!   | dim          | `u32`              |
//!   | has_labels   | `u8` (0 or 1)      |
//!   | values       | `rows * dim` × `f32`, row-major |
//!   | labels       | `rows` × `u16`, only when `has_labels == 1` |
//!   | ids          | `rows` × `u64`     |
//!
//! * **CSV** (`.csv` extension) with header `id,label,f0,…,f{d-1}`; the
//!   `label` column may be omitted for unlabeled query sets.
//!
//! Values are held in memory as `f64` regardless of storage precision.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OCMF";
pub const FORMAT_VERSION: u16 = 1;
const HEADER_LEN: u64 = 4 + 2 + 4 + 4 + 1;

/// Normal (0) or abnormal (1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Abnormal => 1,
        }
    }
}

/// Row-major block of equal-length vectors, without labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    values: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "{} values do not divide into rows of dimension {dim}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                row: pos / dim,
                message: format!("non-finite value {}", values[pos]),
            });
        }
        Ok(Points { dim, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).ok_or_else(|| {
            Error::Config("cannot infer the dimension of an empty row set".into())
        })?;
        let mut values = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Points::new(dim, values)
    }

    /// An empty block that still remembers its dimension.
    pub fn empty(dim: usize) -> Self {
        Points {
            dim,
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copies the selected rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Points {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Points {
            dim: self.dim,
            values,
        }
    }

    /// Applies `f` to every component. Fails if the result is not finite.
    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> Result<Points> {
        let dim = self.dim;
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, &v)| f(k % dim, v))
            .collect();
        Points::new(dim, values)
    }
}

/// Where the rows of a [`ClassPool`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolOrigin {
    GroundTruth,
    Stage1Predicted,
}

/// Reference samples for one class.
#[derive(Debug, Clone)]
pub struct ClassPool {
    points: Points,
    class: Label,
    origin: PoolOrigin,
}

impl ClassPool {
    /// Pool of labelled training rows. Must be nonempty.
    pub fn ground_truth(points: Points, class: Label) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPool);
        }
        Ok(ClassPool {
            points,
            class,
            origin: PoolOrigin::GroundTruth,
        })
    }

    /// Abnormal pool assembled from stage-one rejects. May be empty.
    pub fn predicted_abnormal(points: Points) -> Self {
        ClassPool {
            points,
            class: Label::Abnormal,
            origin: PoolOrigin::Stage1Predicted,
        }
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn class(&self) -> Label {
        self.class
    }

    pub fn origin(&self) -> PoolOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }
}

/// Feature vectors together with optional class ids and stable row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub points: Points,
    pub labels: Option<Vec<u16>>,
    pub ids: Vec<u64>,
}

impl FeatureMatrix {
    pub fn new(points: Points, labels: Option<Vec<u16>>, ids: Vec<u64>) -> Result<Self> {
        let rows = points.len();
        if let Some(labels) = &labels {
            if labels.len() != rows {
                return Err(Error::Config(format!(
                    "{} labels for {rows} rows",
                    labels.len()
                )));
            }
        }
        if ids.len() != rows {
            return Err(Error::Config(format!("{} ids for {rows} rows", ids.len())));
        }
        Ok(FeatureMatrix {
            points,
            labels,
            ids,
        })
    }

    /// Row ids default to `0..rows`.
    pub fn with_labels(points: Points, labels: Vec<u16>) -> Result<Self> {
        let ids = (0..points.len() as u64).collect();
        FeatureMatrix::new(points, Some(labels), ids)
    }

    pub fn unlabeled(points: Points) -> Self {
        let ids = (0..points.len() as u64).collect();
        FeatureMatrix {
            points,
            labels: None,
            ids,
        }
    }

    pub fn rows(&self) -> usize {
        self.points.len()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn classes(&self) -> Vec<u16> {
        self.labels
            .iter()
            .flatten()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    fn require_labels(&self, what: &str) -> Result<&[u16]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Config(format!("{what} feature file carries no labels")))
    }
}

/// One-class experiment: a normal-only training pool and a labelled test set
/// whose labels are kept apart from the queries.
#[derive(Debug, Clone)]
pub struct ExperimentSplit {
    pub normal_class: u16,
    pub train_pool: ClassPool,
    pub queries: Points,
    pub query_ids: Vec<u64>,
    pub truth: Vec<Label>,
}

impl ExperimentSplit {
    /// `(normal, abnormal)` counts in the test partition.
    pub fn test_composition(&self) -> (usize, usize) {
        let normal = self.truth.iter().filter(|&&l| l == Label::Normal).count();
        (normal, self.truth.len() - normal)
    }
}

/// Builds the one-class protocol split: every training row of `normal_class`
/// forms the pool and the entire test partition becomes the query set.
pub fn make_one_class_split(
    train: &FeatureMatrix,
    test: &FeatureMatrix,
    normal_class: u16,
) -> Result<ExperimentSplit> {
    if train.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            found: test.dim(),
        });
    }
    let train_labels = train.require_labels("training")?;
    let test_labels = test.require_labels("test")?;
    let rows: Vec<usize> = train_labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l == normal_class)
        .map(|(i, _)| i)
        .collect();
    if rows.is_empty() {
        return Err(Error::MissingClass {
            class: normal_class,
            available: train.classes(),
        });
    }
    let train_pool = ClassPool::ground_truth(train.points.select(&rows), Label::Normal)?;
    let truth = test_labels
        .iter()
        .map(|&l| {
            if l == normal_class {
                Label::Normal
            } else {
                Label::Abnormal
            }
        })
        .collect();
    Ok(ExperimentSplit {
        normal_class,
        train_pool,
        queries: test.points.clone(),
        query_ids: test.ids.clone(),
        truth,
    })
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a feature file, choosing the format from the extension.
pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    if is_csv(path) {
        read_csv(path)
    } else {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_binary(BufReader::new(file)).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }
}

/// Writes a feature file, choosing the format from the extension.
pub fn write_feature_file(path: impl AsRef<Path>, matrix: &FeatureMatrix) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        return write_csv(path, matrix);
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_binary(&mut out, matrix)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_binary<W: Write>(out: &mut W, matrix: &FeatureMatrix) -> std::io::Result<()> {
    let too_large = |what| std::io::Error::new(std::io::ErrorKind::InvalidInput, what);
    let rows = u32::try_from(matrix.rows()).map_err(|_| too_large("row count exceeds u32"))?;
    let dim = u32::try_from(matrix.dim()).map_err(|_| too_large("dimension exceeds u32"))?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&rows.to_le_bytes())?;
    out.write_all(&dim.to_le_bytes())?;
    out.write_all(&[u8::from(matrix.labels.is_some())])?;
    for &v in matrix.points.values() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    if let Some(labels) = &matrix.labels {
        for &l in labels {
            out.write_all(&l.to_le_bytes())?;
        }
    }
    for &id in &matrix.ids {
        out.write_all(&id.to_le_bytes())?;
    }
    Ok(())
}

struct OffsetReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> OffsetReader<R> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        match self.inner.read_exact(&mut buf) {
            Ok(()) => {
                self.offset += N as u64;
                Ok(buf)
            }
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(Error::Format {
                offset: self.offset,
                message: format!("unexpected end of file while reading {what}"),
            }),
            Err(e) => Err(Error::io("<feature stream>", e)),
        }
    }
}

pub fn read_binary<R: Read>(reader: R) -> Result<FeatureMatrix> {
    let mut r = OffsetReader {
        inner: reader,
        offset: 0,
    };
    let magic = r.take::<4>("magic")?;
    if &magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {magic:?}, expected \"OCMF\""),
        });
    }
    let version = u16::from_le_bytes(r.take("version")?);
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported format version {version}"),
        });
    }
    let rows = u32::from_le_bytes(r.take("row count")?) as usize;
    let dim = u32::from_le_bytes(r.take("dimension")?) as usize;
    let flag_offset = r.offset;
    let has_labels = match r.take::<1>("label flag")?[0] {
        0 => false,
        1 => true,
        other => {
            return Err(Error::Format {
                offset: flag_offset,
                message: format!("label flag must be 0 or 1, found {other}"),
            })
        }
    };
    if dim == 0 {
        return Err(Error::Format {
            offset: 10,
            message: "dimension must be positive".into(),
        });
    }
    debug_assert_eq!(r.offset, HEADER_LEN);

    let mut values = Vec::with_capacity(rows.saturating_mul(dim).min(1 << 28));
    for row in 0..rows {
        for _ in 0..dim {
            let v = f32::from_le_bytes(r.take("feature values")?);
            if !v.is_finite() {
                return Err(Error::Data {
                    row,
                    message: format!("non-finite value {v}"),
                });
            }
            values.push(f64::from(v));
        }
    }
    let labels = if has_labels {
        let mut labels = Vec::with_capacity(rows);
        for _ in 0..rows {
            labels.push(u16::from_le_bytes(r.take("labels")?));
        }
        Some(labels)
    } else {
        None
    };
    let mut ids = Vec::with_capacity(rows);
    for _ in 0..rows {
        ids.push(u64::from_le_bytes(r.take("ids")?));
    }
    let mut extra = [0u8; 1];
    match r.inner.read(&mut extra) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Format {
                offset: r.offset,
                message: "trailing bytes after ids".into(),
            })
        }
        Err(e) => return Err(Error::io("<feature stream>", e)),
    }
    let points = if rows == 0 {
        Points::empty(dim)
    } else {
        Points::new(dim, values)?
    };
    FeatureMatrix::new(points, labels, ids)
}

fn read_csv(path: &Path) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let headers = reader.headers().map_err(|e| Error::csv(path, e))?.clone();
    let header_error = |message: String| Error::Format { offset: 0, message };
    if headers.get(0) != Some("id") {
        return Err(header_error("first CSV column must be \"id\"".into()));
    }
    let has_labels = headers.get(1) == Some("label");
    let first_feature = if has_labels { 2 } else { 1 };
    let dim = headers.len() - first_feature;
    if dim == 0 {
        return Err(header_error(
            "CSV header declares no feature columns".into(),
        ));
    }
    for (k, name) in headers.iter().skip(first_feature).enumerate() {
        if name != format!("f{k}") {
            return Err(header_error(format!(
                "expected column \"f{k}\", found \"{name}\""
            )));
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut ids = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(path, e))?;
        let data_error = |message: String| Error::Data { row, message };
        if record.len() != headers.len() {
            return Err(data_error(format!(
                "{} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let id = record[0]
            .trim()
            .parse::<u64>()
            .map_err(|e| data_error(format!("bad id {:?}: {e}", &record[0])))?;
        ids.push(id);
        if has_labels {
            let label = record[1]
                .trim()
                .parse::<u16>()
                .map_err(|e| data_error(format!("bad label {:?}: {e}", &record[1])))?;
            labels.push(label);
        }
        for field in record.iter().skip(first_feature) {
            let v = field
                .trim()
                .parse::<f64>()
                .map_err(|e| data_error(format!("bad value {field:?}: {e}")))?;
            if !v.is_finite() {
                return Err(data_error(format!("non-finite value {v}")));
            }
            values.push(v);
        }
    }
    let points = if ids.is_empty() {
        Points::empty(dim)
    } else {
        Points::new(dim, values)?
    };
    FeatureMatrix::new(points, has_labels.then_some(labels), ids)
}

fn write_csv(path: &Path, matrix: &FeatureMatrix) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut header = vec!["id".to_string()];
    if matrix.labels.is_some() {
        header.push("label".into());
    }
    header.extend((0..matrix.dim()).map(|k| format!("f{k}")));
    writer
        .write_record(&header)
        .map_err(|e| Error::csv(path, e))?;
    for (i, row) in matrix.points.rows().enumerate() {
        let mut record = vec![matrix.ids[i].to_string()];
        if let Some(labels) = &matrix.labels {
            record.push(labels[i].to_string());
        }
        record.extend(row.iter().map(|v| v.to_string()));
        writer
            .write_record(&record)
            .map_err(|e| Error::csv(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
