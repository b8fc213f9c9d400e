//! Path-loss datasets: CSV loading, zero-mean/unit-variance feature scaling,
//! row subsetting and a seeded log-distance generator.
//!
//! A [`Dataset`] is stored column-major: one `Vec<f64>` per feature plus the
//! target vector. Every row also carries the index it had in the dataset it
//! was originally loaded or generated as (`row_ids`), so a subset always
//! knows which source rows it contains.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feature columns in canonical order.
pub const FEATURE_NAMES: [&str; 6] = [
    "longitude",
    "latitude",
    "elevation",
    "altitude",
    "clutter_height",
    "distance",
];

pub const TARGET_NAME: &str = "path_loss";

/// Position of `distance` in [`FEATURE_NAMES`].
pub const DISTANCE_INDEX: usize = 5;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header has no column for `{field}` (accepted names: {accepted})")]
    MissingColumn { field: String, accepted: String },
    #[error("unknown field `{0}` in column mapping")]
    UnknownField(String),
    #[error("line {line}: column `{column}` holds non-numeric value {value:?}")]
    InvalidCell {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: {reason}")]
    InvalidSample { line: u64, reason: String },
    #[error("no valid rows")]
    NoValidRows,
    #[error("dataset shape error: {0}")]
    Shape(String),
    #[error("row index {index} out of range for dataset of {n} rows")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("row index {0} selected twice")]
    DuplicateIndex(usize),
    #[error("empty row selection")]
    EmptySelection,
    #[error("feature count mismatch: expected {expected}, found {found}")]
    FeatureCountMismatch { expected: usize, found: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// One drive-test measurement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub longitude: f64,
    pub latitude: f64,
    pub elevation: f64,
    pub altitude: f64,
    pub clutter_height: f64,
    /// Transmitter-receiver distance in meters.
    pub distance: f64,
    /// Path loss in dB.
    pub path_loss: f64,
}

impl Sample {
    pub fn features(&self) -> [f64; 6] {
        [
            self.longitude,
            self.latitude,
            self.elevation,
            self.altitude,
            self.clutter_height,
            self.distance,
        ]
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        let names = FEATURE_NAMES.iter().chain(std::iter::once(&TARGET_NAME));
        let values = self.features().into_iter().chain(std::iter::once(self.path_loss));
        for (name, v) in names.zip(values) {
            if !v.is_finite() {
                return Err(format!("`{name}` is not finite ({v})"));
            }
        }
        if self.distance <= 0.0 {
            return Err(format!("distance must be > 0, got {}", self.distance));
        }
        if self.path_loss <= 0.0 {
            return Err(format!("path_loss must be > 0, got {}", self.path_loss));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    feature_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    targets: Vec<f64>,
    row_ids: Vec<usize>,
}

impl Dataset {
    /// Builds a dataset from feature columns. Row ids are `0..n`.
    pub fn new(feature_names: Vec<String>, columns: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let n = targets.len();
        Self::with_row_ids(feature_names, columns, targets, (0..n).collect())
    }

    pub fn with_row_ids(
        feature_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        targets: Vec<f64>,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        let n = targets.len();
        if n == 0 {
            return Err(DataError::Shape("dataset needs at least one row".into()));
        }
        if feature_names.len() != columns.len() {
            return Err(DataError::Shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                columns.len()
            )));
        }
        if row_ids.len() != n {
            return Err(DataError::Shape(format!("{} row ids for {n} rows", row_ids.len())));
        }
        for (name, col) in feature_names.iter().zip(&columns) {
            if col.len() != n {
                return Err(DataError::Shape(format!(
                    "column `{name}` has {} rows, targets have {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(DataError::Shape(format!("column `{name}` has a non-finite entry")));
            }
        }
        if targets.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Shape("non-finite target".into()));
        }
        Ok(Self {
            feature_names,
            columns,
            targets,
            row_ids,
        })
    }

    /// Builds a dataset from row-major feature vectors.
    pub fn from_rows(feature_names: Vec<String>, rows: &[Vec<f64>], targets: Vec<f64>) -> Result<Self> {
        let p = feature_names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); p];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(DataError::Shape(format!("row {i} has {} features, expected {p}", row.len())));
            }
            for (col, &v) in columns.iter_mut().zip(row) {
                col.push(v);
            }
        }
        Self::new(feature_names, columns, targets)
    }

    pub fn from_samples(samples: &[Sample]) -> Result<Self> {
        let mut columns = vec![Vec::with_capacity(samples.len()); FEATURE_NAMES.len()];
        for s in samples {
            for (col, v) in columns.iter_mut().zip(s.features()) {
                col.push(v);
            }
        }
        Self::new(
            FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            columns,
            samples.iter().map(|s| s.path_loss).collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.columns[feature][row]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn fill_row(&self, i: usize, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.columns) {
            *o = c[i];
        }
    }

    /// Row-major copy of the feature matrix.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.row(i)).collect()
    }

    /// Returns the rows at `indices`, in the given order.
    pub fn split_rows(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(DataError::EmptySelection);
        }
        let n = self.n();
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in indices {
            if i >= n {
                return Err(DataError::IndexOutOfRange { index: i, n });
            }
            if !seen.insert(i) {
                return Err(DataError::DuplicateIndex(i));
            }
        }
        Ok(Dataset {
            feature_names: self.feature_names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| indices.iter().map(|&i| c[i]).collect())
                .collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
        })
    }

    /// Same features, new targets.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Dataset> {
        Dataset::with_row_ids(
            self.feature_names.clone(),
            self.columns.clone(),
            targets,
            self.row_ids.clone(),
        )
    }

    /// Writes the dataset as a delimited table with a header row. Floats are
    /// written in shortest round-trip form.
    pub fn write_csv(&self, path: &Path, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(TARGET_NAME);
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            record.clear();
            record.extend(self.columns.iter().map(|c| c[i].to_string()));
            record.push(self.targets[i].to_string());
            w.write_record(&record)?;
        }
        w.flush().map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(())
    }
}

/// What to do with rows that fail to parse or violate [`Sample`] invariants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadPolicy {
    #[default]
    Reject,
    Drop,
}

/// Maps the six features and the target onto CSV header names.
///
/// Header comparison ignores case and every non-alphanumeric character, so
/// `Clutter Height`, `clutter_height` and `clutterHeight` are the same
/// column. Each field accepts a list of names; the defaults include the
/// `cluster height` spelling and a few common abbreviations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    accepted: [Vec<String>; 7],
}

const MAPPING_FIELDS: [&str; 7] = [
    "longitude",
    "latitude",
    "elevation",
    "altitude",
    "clutter_height",
    "distance",
    "path_loss",
];

impl Default for ColumnMapping {
    fn default() -> Self {
        let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            accepted: [
                names(&["longitude", "lon", "lng"]),
                names(&["latitude", "lat"]),
                names(&["elevation"]),
                names(&["altitude"]),
                names(&["clutter_height", "cluster_height"]),
                names(&["distance", "dist"]),
                names(&["path_loss", "pathloss", "pl"]),
            ],
        }
    }
}

impl ColumnMapping {
    pub fn fields() -> &'static [&'static str; 7] {
        &MAPPING_FIELDS
    }

    /// Pins `field` to a single header name.
    pub fn set(&mut self, field: &str, header: &str) -> Result<()> {
        let k = MAPPING_FIELDS
            .iter()
            .position(|f| *f == field)
            .ok_or_else(|| DataError::UnknownField(field.to_string()))?;
        self.accepted[k] = vec![header.to_string()];
        Ok(())
    }

    pub fn accepted(&self, field: usize) -> &[String] {
        &self.accepted[field]
    }

    fn locate(&self, header: &csv::StringRecord) -> Result<[usize; 7]> {
        let normalized: Vec<String> = header.iter().map(normalize_header).collect();
        let mut out = [0usize; 7];
        for (k, names) in self.accepted.iter().enumerate() {
            let pos = names.iter().find_map(|name| {
                let want = normalize_header(name);
                normalized.iter().position(|h| *h == want)
            });
            out[k] = pos.ok_or_else(|| DataError::MissingColumn {
                field: MAPPING_FIELDS[k].to_string(),
                accepted: names.join(", "),
            })?;
        }
        Ok(out)
    }
}

fn normalize_header(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadOptions {
    pub mapping: ColumnMapping,
    pub delimiter: u8,
    pub policy: LoadPolicy,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            mapping: ColumnMapping::default(),
            delimiter: b',',
            policy: LoadPolicy::Reject,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadReport {
    pub dataset: Dataset,
    /// Data rows in the file (header excluded).
    pub rows_read: usize,
    pub dropped: usize,
}

/// Loads a delimited table with a header row. Row `k` of the file becomes row
/// `k` of the dataset (minus any dropped rows under [`LoadPolicy::Drop`]).
pub fn load_csv(path: &Path, opts: &LoadOptions) -> Result<LoadReport> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let header = reader.headers()?.clone();
    let cols = opts.mapping.locate(&header)?;

    let mut samples = Vec::new();
    let mut rows_read = 0usize;
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record?;
        rows_read += 1;
        let line = record.position().map_or(rows_read as u64 + 1, |p| p.line());
        match parse_sample(&record, &cols, line) {
            Ok(s) => samples.push(s),
            Err(e) => match opts.policy {
                LoadPolicy::Reject => return Err(e),
                LoadPolicy::Drop => dropped += 1,
            },
        }
    }
    if samples.is_empty() {
        return Err(DataError::NoValidRows);
    }
    Ok(LoadReport {
        dataset: Dataset::from_samples(&samples)?,
        rows_read,
        dropped,
    })
}

fn parse_sample(record: &csv::StringRecord, cols: &[usize; 7], line: u64) -> Result<Sample> {
    let mut v = [0.0f64; 7];
    for (k, &c) in cols.iter().enumerate() {
        let raw = record.get(c).unwrap_or("");
        v[k] = raw.parse::<f64>().map_err(|_| DataError::InvalidCell {
            line,
            column: MAPPING_FIELDS[k].to_string(),
            value: raw.to_string(),
        })?;
    }
    let s = Sample {
        longitude: v[0],
        latitude: v[1],
        elevation: v[2],
        altitude: v[3],
        clutter_height: v[4],
        distance: v[5],
        path_loss: v[6],
    };
    s.validate()
        .map_err(|reason| DataError::InvalidSample { line, reason })?;
    Ok(s)
}

/// Per-feature mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub degenerate_mask: Vec<bool>,
}

impl NormalizationParams {
    /// Fits on `train` only. Zero-variance features are flagged, not rejected.
    pub fn fit(train: &Dataset) -> Self {
        let n = train.n() as f64;
        let mut mean = Vec::with_capacity(train.n_features());
        let mut std = Vec::with_capacity(train.n_features());
        for col in train.columns() {
            let mu = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
            mean.push(mu);
            std.push(var.sqrt());
        }
        let degenerate_mask = std.iter().map(|&s| s == 0.0).collect();
        Self {
            mean,
            std,
            degenerate_mask,
        }
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, found: usize) -> Result<()> {
        if found != self.n_features() {
            return Err(DataError::FeatureCountMismatch {
                expected: self.n_features(),
                found,
            });
        }
        Ok(())
    }

    /// Maps every feature to `(x - mean) / std`; degenerate features map to 0.
    /// Targets pass through unchanged.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data.n_features())?;
        let columns = data
            .columns()
            .iter()
            .enumerate()
            .map(|(j, col)| col.iter().map(|&x| self.scale(j, x)).collect())
            .collect();
        Dataset::with_row_ids(
            data.feature_names().to_vec(),
            columns,
            data.targets().to_vec(),
            data.row_ids().to_vec(),
        )
    }

    pub fn apply_row(&self, row: &mut [f64]) -> Result<()> {
        self.check(row.len())?;
        for (j, x) in row.iter_mut().enumerate() {
            *x = self.scale(j, *x);
        }
        Ok(())
    }

    #[inline]
    fn scale(&self, j: usize, x: f64) -> f64 {
        if self.degenerate_mask[j] {
            0.0
        } else {
            (x - self.mean[j]) / self.std[j]
        }
    }

    /// Inverse of [`apply`](Self::apply). Degenerate features come back as
    /// their mean.
    pub fn invert(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data.n_features())?;
        let columns = data
            .columns()
            .iter()
            .enumerate()
            .map(|(j, col)| {
                col.iter()
                    .map(|&z| {
                        if self.degenerate_mask[j] {
                            self.mean[j]
                        } else {
                            z * self.std[j] + self.mean[j]
                        }
                    })
                    .collect()
            })
            .collect();
        Dataset::with_row_ids(
            data.feature_names().to_vec(),
            columns,
            data.targets().to_vec(),
            data.row_ids().to_vec(),
        )
    }
}

/// Log-distance generator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Path loss at 1 km, dB.
    pub intercept: f64,
    /// dB per decade of distance.
    pub slope: f64,
    pub noise_std: f64,
    pub n: usize,
    /// Meters, `(min, max)`.
    pub distance_range: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            intercept: 128.1,
            slope: 37.6,
            noise_std: 2.0,
            n: 2000,
            distance_range: (50.0, 2000.0),
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        let (lo, hi) = self.distance_range;
        if !(lo > 0.0 && lo.is_finite() && hi.is_finite() && hi >= lo) {
            return bad(format!("distance_range must satisfy 0 < min <= max, got ({lo}, {hi})"));
        }
        if !(self.intercept.is_finite() && self.slope.is_finite()) {
            return bad("intercept and slope must be finite".into());
        }
        Ok(())
    }

    /// Noise-free path loss at `distance` meters.
    pub fn mean_path_loss(&self, distance: f64) -> f64 {
        self.intercept + self.slope * (distance / 1000.0).log10()
    }
}

/// Uniform ranges of the four signal-free synthetic features
/// (longitude, latitude, elevation, altitude, clutter height).
pub const SYNTHETIC_NUISANCE_RANGES: [(f64, f64); 5] = [
    (116.30, 116.40),
    (39.90, 40.00),
    (30.0, 60.0),
    (0.0, 50.0),
    (0.0, 40.0),
];

/// Draws `cfg.n` rows: log-uniform distance, uniform nuisance features and
/// `intercept + slope * log10(d / 1 km) + N(0, noise_std^2)` targets.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).expect("validated noise_std"))
    } else {
        None
    };
    let (lo, hi) = cfg.distance_range;
    let (ln_lo, ln_hi) = (lo.ln(), hi.ln());
    let mut samples = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let u: f64 = rng.random();
        let distance = if hi > lo { (ln_lo + u * (ln_hi - ln_lo)).exp() } else { lo };
        let mut nuisance = [0.0; 5];
        for (x, &(a, b)) in nuisance.iter_mut().zip(&SYNTHETIC_NUISANCE_RANGES) {
            *x = rng.random_range(a..=b);
        }
        let eps = noise.map_or(0.0, |d| d.sample(&mut rng));
        samples.push(Sample {
            longitude: nuisance[0],
            latitude: nuisance[1],
            elevation: nuisance[2],
            altitude: nuisance[3],
            clutter_height: nuisance[4],
            distance,
            path_loss: cfg.mean_path_loss(distance) + eps,
        });
    }
    Dataset::from_samples(&samples)
}

/// Writes a synthetic dataset plus a `<file>.config.json` sidecar holding the
/// generator settings.
pub fn write_synthetic(data: &Dataset, cfg: &SyntheticConfig, path: &Path) -> Result<PathBuf> {
    data.write_csv(path, b',')?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".config.json");
    let sidecar = PathBuf::from(sidecar);
    let io_err = |source| DataError::Io {
        path: sidecar.clone(),
        source,
    };
    let file = File::create(&sidecar).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, cfg).map_err(|e| DataError::InvalidConfig(e.to_string()))?;
    w.write_all(b"\n").map_err(io_err)?;
    w.flush().map_err(io_err)?;
    Ok(sidecar)
}
