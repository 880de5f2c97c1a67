//! Dataset ingestion from labeled CSV files, synthetic blob fixtures, and
//! schema validation for the shapes the experiment suite expects.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::{DataMatrix, LabelVector};

/// Shape summary of a labeled dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub id: String,
    pub sample_count: usize,
    pub feature_dim: usize,
    pub class_count: usize,
    pub source: Option<PathBuf>,
}

impl DatasetDescriptor {
    pub fn from_parts(id: &str, x: &DataMatrix, labels: &LabelVector) -> DatasetDescriptor {
        DatasetDescriptor {
            id: id.to_string(),
            sample_count: x.sample_count(),
            feature_dim: x.feature_dim(),
            class_count: labels.class_count(),
            source: None,
        }
    }
}

/// Checks loaded data against a declared shape, reporting every mismatch.
pub fn validate(
    descriptor: &DatasetDescriptor,
    x: &DataMatrix,
    labels: &LabelVector,
) -> Result<()> {
    let mut issues = Vec::new();
    if x.sample_count() != descriptor.sample_count {
        issues.push(format!(
            "sample count: declared {}, found {}",
            descriptor.sample_count,
            x.sample_count()
        ));
    }
    if x.feature_dim() != descriptor.feature_dim {
        issues.push(format!(
            "feature dimension: declared {}, found {}",
            descriptor.feature_dim,
            x.feature_dim()
        ));
    }
    if labels.len() != x.sample_count() {
        issues.push(format!(
            "label count: {} labels for {} samples",
            labels.len(),
            x.sample_count()
        ));
    }
    let found = labels.class_count();
    let declared = descriptor.class_count;
    if found != declared {
        if found < declared {
            let missing: Vec<String> = (found..declared).map(|c| c.to_string()).collect();
            issues.push(format!(
                "classes: declared {declared}, found {found} (class {} absent)",
                missing.join(", ")
            ));
        } else {
            issues.push(format!("classes: declared {declared}, found {found}"));
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "dataset '{}' fails its schema: {}",
            descriptor.id,
            issues.join("; ")
        )))
    }
}

/// Recipe for seeded Gaussian blob data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub per_cluster: usize,
    pub feature_dim: usize,
    /// Scale of the cluster-center coordinates.
    pub spread: f64,
    /// Within-cluster standard deviation.
    pub stddev: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.clusters == 0 || self.per_cluster == 0 || self.feature_dim == 0 {
            return Err(Error::invalid(
                "clusters, per_cluster, and feature_dim must be positive",
            ));
        }
        if !(self.spread > 0.0) {
            return Err(Error::invalid(format!(
                "spread must be > 0, got {}",
                self.spread
            )));
        }
        if !(self.stddev >= 0.0) {
            return Err(Error::invalid(format!(
                "stddev must be >= 0, got {}",
                self.stddev
            )));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.clusters * self.per_cluster
    }
}

/// Seeded standard normals via the Box-Muller transform.
struct NormalSource {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalSource {
    fn new(rng: ChaCha8Rng) -> Self {
        NormalSource { rng, spare: None }
    }

    fn next(&mut self) -> f64 {
        if let Some(s) = self.spare.take() {
            return s;
        }
        let u1 = 1.0 - self.rng.random::<f64>(); // (0, 1]: keeps ln finite
        let u2 = self.rng.random::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(radius * theta.sin());
        radius * theta.cos()
    }
}

/// Generates `clusters` Gaussian blobs with centers drawn uniformly from
/// `[spread, 2*spread)` per coordinate, which keeps the data positive for any
/// stddev well below the spread. Samples are ordered cluster by cluster and
/// fully determined by the seed.
pub fn make_blobs(spec: &SyntheticSpec) -> Result<(DataMatrix, LabelVector)> {
    spec.validate()?;
    let (c, per, m) = (spec.clusters, spec.per_cluster, spec.feature_dim);
    let n = spec.sample_count();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut centers = Array2::<f64>::zeros((c, m));
    for k in 0..c {
        for d in 0..m {
            centers[[k, d]] = spec.spread * (1.0 + rng.random::<f64>());
        }
    }

    let mut normals = NormalSource::new(rng);
    let mut values = Array2::<f64>::zeros((m, n));
    let mut labels = Vec::with_capacity(n);
    for k in 0..c {
        for p in 0..per {
            let j = k * per + p;
            for d in 0..m {
                values[[d, j]] = centers[[k, d]] + spec.stddev * normals.next();
            }
            labels.push(k);
        }
    }

    Ok((
        DataMatrix::from_columns(values)?,
        LabelVector::new(labels, c)?,
    ))
}

/// Where the ground-truth column lives in a CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelColumn {
    /// Rightmost column.
    Last,
    /// Header name (requires a header row).
    Named(String),
    /// Unlabeled data.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub delimiter: u8,
    pub has_header: bool,
    pub label_column: LabelColumn,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            delimiter: b',',
            has_header: true,
            label_column: LabelColumn::Last,
        }
    }
}

/// Reads a rectangular CSV of samples-as-rows into a feature matrix and,
/// unless the file is unlabeled, a label vector with classes densified to
/// `[0, c)` in order of first appearance. Error positions are 1-based file
/// coordinates.
pub fn load_csv(
    path: impl AsRef<Path>,
    options: &CsvOptions,
) -> Result<(DataMatrix, Option<LabelVector>)> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let at = |row: usize, column: usize, message: String| Error::Csv {
        path: display.clone(),
        row,
        column,
        message,
    };

    let file = File::open(path).map_err(|e| at(0, 0, format!("cannot open: {e}")))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(options.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));

    let mut records = reader.records();
    let mut row = 0usize;
    let header: Option<Vec<String>> = if options.has_header {
        row += 1;
        match records.next() {
            Some(rec) => {
                let rec = rec.map_err(|e| at(row, 0, e.to_string()))?;
                Some(rec.iter().map(|s| s.to_string()).collect())
            }
            None => return Err(at(row, 0, "file is empty".to_string())),
        }
    } else {
        None
    };

    let mut width: Option<usize> = header.as_ref().map(|h| h.len());
    let label_index = |width: usize| -> Result<Option<usize>> {
        match &options.label_column {
            LabelColumn::None => Ok(None),
            LabelColumn::Last => Ok(Some(width - 1)),
            LabelColumn::Named(name) => {
                let header = header.as_ref().ok_or_else(|| {
                    at(1, 0, format!("label column '{name}' needs a header row"))
                })?;
                match header.iter().position(|h| h == name) {
                    Some(i) => Ok(Some(i)),
                    None => Err(at(
                        1,
                        0,
                        format!("label column '{name}' not in header {header:?}"),
                    )),
                }
            }
        }
    };

    let mut feature_rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut label_col: Option<usize> = None;

    for rec in records {
        row += 1;
        let rec = rec.map_err(|e| at(row, 0, e.to_string()))?;
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue; // blank line
        }
        let expected = *width.get_or_insert(rec.len());
        if rec.len() != expected {
            return Err(at(
                row,
                rec.len().min(expected) + 1,
                format!("expected {expected} fields, found {}", rec.len()),
            ));
        }
        if feature_rows.is_empty() {
            label_col = label_index(expected)?;
            let feature_width = expected - usize::from(label_col.is_some());
            if feature_width == 0 {
                return Err(at(row, 1, "no feature columns".to_string()));
            }
        }

        let mut features = Vec::with_capacity(expected - usize::from(label_col.is_some()));
        for (idx, field) in rec.iter().enumerate() {
            if Some(idx) == label_col {
                raw_labels.push(field.to_string());
                continue;
            }
            match field.parse::<f64>() {
                Ok(v) if v.is_finite() => features.push(v),
                _ => {
                    return Err(at(
                        row,
                        idx + 1,
                        format!("expected a finite number, found '{field}'"),
                    ))
                }
            }
        }
        feature_rows.push(features);
    }

    if feature_rows.is_empty() {
        return Err(at(row.max(1), 0, "no data rows".to_string()));
    }

    let n = feature_rows.len();
    let m = feature_rows[0].len();
    let mut rows_matrix = Array2::<f64>::zeros((n, m));
    for (i, r) in feature_rows.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            rows_matrix[[i, j]] = v;
        }
    }
    let x = DataMatrix::from_rows(rows_matrix)?;

    let labels = if label_col.is_some() {
        let mut ids: HashMap<String, usize> = HashMap::new();
        let mut dense = Vec::with_capacity(n);
        for raw in &raw_labels {
            let next = ids.len();
            let id = *ids.entry(raw.clone()).or_insert(next);
            dense.push(id);
        }
        Some(LabelVector::new(dense, ids.len())?)
    } else {
        None
    };

    Ok((x, labels))
}

/// Writes samples as rows with a `f0..f{m-1}[,label]` header. Features are
/// printed with 17 significant digits so a reload reproduces them exactly.
pub fn save_csv(
    path: impl AsRef<Path>,
    x: &DataMatrix,
    labels: Option<&LabelVector>,
) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    let m = x.feature_dim();

    let mut header: Vec<String> = (0..m).map(|i| format!("f{i}")).collect();
    if labels.is_some() {
        header.push("label".to_string());
    }
    writeln!(out, "{}", header.join(","))?;

    for j in 0..x.sample_count() {
        let mut fields: Vec<String> = x.column(j).iter().map(|v| format!("{v:.16e}")).collect();
        if let Some(l) = labels {
            fields.push(l.labels()[j].to_string());
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Reference to experiment input data: a CSV on disk or a synthetic recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetRef {
    Csv { path: PathBuf, options: CsvOptions },
    Synthetic(SyntheticSpec),
}

impl DatasetRef {
    pub fn id(&self) -> String {
        match self {
            DatasetRef::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            DatasetRef::Synthetic(spec) => format!(
                "blobs-c{}x{}-m{}-seed{}",
                spec.clusters, spec.per_cluster, spec.feature_dim, spec.seed
            ),
        }
    }

    /// Loads or generates the data. CSV datasets must carry labels.
    pub fn load(&self) -> Result<(DataMatrix, LabelVector)> {
        match self {
            DatasetRef::Csv { path, options } => {
                let (x, labels) = load_csv(path, options)?;
                let labels = labels.ok_or_else(|| {
                    Error::invalid(format!(
                        "{}: experiments need ground-truth labels",
                        path.display()
                    ))
                })?;
                Ok((x, labels))
            }
            DatasetRef::Synthetic(spec) => make_blobs(spec),
        }
    }

    /// Parses `PATH` or `blobs:clusters=3,per_cluster=20,dim=10,spread=10,stddev=1[,seed=0]`.
    pub fn parse(text: &str, csv_options: &CsvOptions) -> Result<DatasetRef> {
        if let Some(spec_text) = text.strip_prefix("blobs:") {
            let mut spec = SyntheticSpec {
                clusters: 0,
                per_cluster: 0,
                feature_dim: 0,
                spread: 0.0,
                stddev: 0.0,
                seed: 0,
            };
            for piece in spec_text.split(',') {
                let (key, value) = piece.split_once('=').ok_or_else(|| {
                    Error::invalid(format!("blob spec piece '{piece}' is not key=value"))
                })?;
                let bad = |e: String| Error::invalid(format!("blob spec '{key}': {e}"));
                match key.trim() {
                    "clusters" => spec.clusters = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                    "per_cluster" => spec.per_cluster = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                    "dim" => spec.feature_dim = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                    "spread" => spec.spread = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                    "stddev" => spec.stddev = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
                    "seed" => spec.seed = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
                    other => {
                        return Err(Error::invalid(format!(
                            "unknown blob spec key '{other}'"
                        )))
                    }
                }
            }
            spec.validate()?;
            Ok(DatasetRef::Synthetic(spec))
        } else {
            Ok(DatasetRef::Csv {
                path: PathBuf::from(text),
                options: csv_options.clone(),
            })
        }
    }
}

/// Convenience wrapper for reading a text file's lines (config parsing).
pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    BufReader::new(file)
        .lines()
        .map(|l| l.map_err(|e| Error::Config(format!("{}: {e}", path.display()))))
        .collect()
}
