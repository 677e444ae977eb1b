//! Feature-set container, its on-disk formats, and a synthetic generator.
//!
//! Two formats are supported:
//!
//! * `FSET1` binary (canonical): ASCII `FSET1`, then little-endian `u32`
//!   `n`, `h`, `c`, then `n` little-endian `u32` labels, then `n * h`
//!   little-endian `f32` features in row-major order.
//! * CSV: header `label,f0,f1,...,f{h-1}`, one sample per row. The class
//!   count is inferred as `max(label) + 1`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"FSET1";
const HEADER_LEN: usize = 5 + 3 * 4;

/// Labeled matrix of nonnegative feature vectors.
///
/// Immutable once built; every constructor runs the same validation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    features: Array2<f32>,
    labels: Vec<usize>,
    class_count: usize,
    name: String,
    class_rows: Vec<Vec<usize>>,
}

impl FeatureSet {
    pub fn new(
        features: Array2<f32>,
        labels: Vec<usize>,
        class_count: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        let (n, h) = features.dim();
        if n == 0 || h == 0 {
            return Err(Error::validation(format!(
                "feature matrix must be non-empty, got {n}x{h}"
            )));
        }
        if class_count == 0 {
            return Err(Error::validation("class count must be at least 1"));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        let mut class_rows = vec![Vec::new(); class_count];
        for (row, &label) in labels.iter().enumerate() {
            if label >= class_count {
                return Err(Error::validation(format!(
                    "label {label} at row {row} is out of range for {class_count} classes"
                )));
            }
            class_rows[label].push(row);
        }
        for ((row, col), &value) in features.indexed_iter() {
            if !value.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            if value < 0.0 {
                return Err(Error::NegativeFeature { row, col, value });
            }
        }
        if let Some(empty) = class_rows.iter().position(Vec::is_empty) {
            return Err(Error::validation(format!("class {empty} has no rows")));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            name: name.into(),
            class_rows,
        })
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Row indices belonging to `class`, in ascending order.
    pub fn class_rows(&self, class: usize) -> &[usize] {
        &self.class_rows[class]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFormat {
    Binary,
    Csv,
}

impl FeatureFormat {
    /// `.csv` files are CSV, everything else is treated as `FSET1`.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

impl std::str::FromStr for FeatureFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "binary" | "fset" | "fset1" => Ok(FeatureFormat::Binary),
            "csv" => Ok(FeatureFormat::Csv),
            other => Err(format!("unknown feature format {other:?} (binary|csv)")),
        }
    }
}

pub fn load_feature_set(path: impl AsRef<Path>, format: FeatureFormat) -> Result<FeatureSet> {
    let path = path.as_ref();
    let name = path.display().to_string();
    match format {
        FeatureFormat::Binary => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_binary(&bytes, name)
        }
        FeatureFormat::Csv => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            decode_csv(&text, name)
        }
    }
}

/// Writes through a temporary sibling file and renames it into place, so a
/// failed save never leaves a partial file at `path`.
pub fn save_feature_set(set: &FeatureSet, path: impl AsRef<Path>, format: FeatureFormat) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        match format {
            FeatureFormat::Binary => out.write_all(&encode_binary(set)),
            FeatureFormat::Csv => out.write_all(encode_csv(set).as_bytes()),
        }
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn encode_binary(set: &FeatureSet) -> Vec<u8> {
    let (n, h) = set.features.dim();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * n * (h + 1));
    buf.extend_from_slice(MAGIC);
    for v in [n, h, set.class_count] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &label in &set.labels {
        buf.extend_from_slice(&(label as u32).to_le_bytes());
    }
    for &x in set.features.iter() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_binary(bytes: &[u8], name: impl Into<String>) -> Result<FeatureSet> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} bytes, need at least {HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[..5] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic bytes {:02x?} ({:?}), expected \"FSET1\"",
            &bytes[..5],
            String::from_utf8_lossy(&bytes[..5])
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (n, h, c) = (word(5), word(9), word(13));
    let expected = n
        .checked_mul(h)
        .and_then(|nh| nh.checked_add(n))
        .and_then(|words| words.checked_mul(4))
        .and_then(|body| body.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format(format!("header dimensions overflow: n={n} h={h}")))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for n={n} h={h}, found {}",
            bytes.len()
        )));
    }
    let labels: Vec<usize> = (0..n).map(|i| word(HEADER_LEN + 4 * i)).collect();
    let base = HEADER_LEN + 4 * n;
    let values: Vec<f32> = bytes[base..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let features = Array2::from_shape_vec((n, h), values)
        .map_err(|e| Error::Format(format!("feature block: {e}")))?;
    FeatureSet::new(features, labels, c, name)
}

pub fn encode_csv(set: &FeatureSet) -> String {
    let h = set.dim();
    let mut out = String::from("label");
    for j in 0..h {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for (row, &label) in set.features.rows().into_iter().zip(&set.labels) {
        out.push_str(&label.to_string());
        for x in row {
            // Display on f32 is shortest round-trip.
            out.push(',');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn decode_csv(text: &str, name: impl Into<String>) -> Result<FeatureSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("csv header: {e}")))?
        .clone();
    if header.get(0) != Some("label") || header.len() < 2 {
        return Err(Error::Format(
            "csv header must be `label,f0,f1,...`".to_string(),
        ));
    }
    for (j, field) in header.iter().skip(1).enumerate() {
        if field != format!("f{j}") {
            return Err(Error::Format(format!(
                "csv header column {} is {field:?}, expected \"f{j}\"",
                j + 1
            )));
        }
    }
    let h = header.len() - 1;
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("csv row {row}: {e}")))?;
        if record.len() != h + 1 {
            return Err(Error::Format(format!(
                "csv row {row} has {} fields, expected {}",
                record.len(),
                h + 1
            )));
        }
        let label: usize = record[0]
            .parse()
            .map_err(|_| Error::Format(format!("csv row {row}: bad label {:?}", &record[0])))?;
        labels.push(label);
        for (col, field) in record.iter().skip(1).enumerate() {
            let v: f32 = field.parse().map_err(|_| {
                Error::Format(format!("csv row {row} column {col}: bad number {field:?}"))
            })?;
            values.push(v);
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::Format("csv file has no data rows".to_string()));
    }
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    let features = Array2::from_shape_vec((n, h), values)
        .map_err(|e| Error::Format(format!("feature block: {e}")))?;
    FeatureSet::new(features, labels, class_count, name)
}

/// Parameters of the rectified-Gaussian class mixture used as a stand-in for
/// backbone features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub class_count: usize,
    pub per_class: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            class_count: 20,
            per_class: 600,
            dim: 64,
            center_scale: 1.0,
            noise_sigma: 0.3,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::validation("class_count must be at least 2"));
        }
        if self.per_class < 2 {
            return Err(Error::validation("per_class must be at least 2"));
        }
        if self.dim < 2 {
            return Err(Error::validation("dim must be at least 2"));
        }
        if !(self.center_scale.is_finite() && self.center_scale > 0.0) {
            return Err(Error::validation("center_scale must be positive"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(Error::validation("noise_sigma must be positive"));
        }
        Ok(())
    }
}

/// Class centers with entries uniform in `[0, center_scale]`, stored at
/// `f32` precision. Returned as a `class_count x dim` matrix.
pub fn synthetic_centers(config: &SyntheticConfig) -> Result<Array2<f32>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok(draw_centers(config, &mut rng))
}

fn draw_centers(config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Array2<f32> {
    Array2::from_shape_fn((config.class_count, config.dim), |_| {
        (rng.random::<f64>() * config.center_scale) as f32
    })
}

/// Rows are `max(0, center + N(0, sigma^2))`, grouped by class.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<FeatureSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let centers = draw_centers(config, &mut rng);
    let n = config.class_count * config.per_class;
    let mut features = Array2::<f32>::zeros((n, config.dim));
    let mut labels = Vec::with_capacity(n);
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let class = i / config.per_class;
        labels.push(class);
        for (x, &c) in row.iter_mut().zip(centers.row(class)) {
            let z: f64 = rng.sample(StandardNormal);
            *x = (c as f64 + config.noise_sigma * z).max(0.0) as f32;
        }
    }
    let name = format!(
        "synthetic(classes={}, per_class={}, dim={}, center_scale={}, noise_sigma={}, seed={})",
        config.class_count,
        config.per_class,
        config.dim,
        config.center_scale,
        config.noise_sigma,
        config.seed
    );
    FeatureSet::new(features, labels, config.class_count, name)
}
