//! Domain datasets: feature-CSV ingestion, pooled normalization, and a
//! seeded generator of shifted two-domain Gaussian mixtures.
//!
//! Feature matrices are stored column-major with one sample per column
//! (`D × N`). Class ids are the contiguous integers `1..=C`; the CSV sentinel
//! `-1` marks an unlabeled row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{GglsError, Module, Result};

/// Label written for unlabeled rows.
pub const UNLABELED: i64 = -1;

/// Labeled source samples, unlabeled target samples and the class count.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    source_features: DMatrix<f64>,
    source_labels: Vec<usize>,
    target_features: DMatrix<f64>,
    target_labels: Option<Vec<usize>>,
    class_count: usize,
}

impl DomainDataset {
    /// Validates and assembles a dataset. The class count is taken as the
    /// largest source label and every class in `1..=C` must occur in the
    /// source labels.
    pub fn new(
        source_features: DMatrix<f64>,
        source_labels: Vec<usize>,
        target_features: DMatrix<f64>,
        target_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let err = |m: String| Err(GglsError::data(Module::Data, m));
        if source_features.nrows() != target_features.nrows() {
            return err(format!(
                "source dimension {} differs from target dimension {}",
                source_features.nrows(),
                target_features.nrows()
            ));
        }
        if source_features.nrows() == 0 {
            return err("feature dimension must be at least 1".into());
        }
        if source_labels.len() != source_features.ncols() {
            return err(format!(
                "{} source labels for {} source samples",
                source_labels.len(),
                source_features.ncols()
            ));
        }
        if target_features.ncols() == 0 {
            return err("target domain has no samples".into());
        }
        if source_labels.is_empty() {
            return err("source domain has no samples".into());
        }
        if source_labels.contains(&0) {
            return err("source labels must be positive class ids".into());
        }
        let class_count = *source_labels.iter().max().unwrap_or(&0);
        let mut seen = vec![false; class_count];
        for &l in &source_labels {
            seen[l - 1] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return err(format!(
                "class ids must be contiguous 1..={class_count}; class {} is absent from the source",
                missing + 1
            ));
        }
        if let Some(t) = &target_labels {
            if t.len() != target_features.ncols() {
                return err(format!(
                    "{} target labels for {} target samples",
                    t.len(),
                    target_features.ncols()
                ));
            }
            if let Some(&bad) = t.iter().find(|&&l| l == 0 || l > class_count) {
                return err(format!("target label {bad} outside 1..={class_count}"));
            }
        }
        if source_features.iter().chain(target_features.iter()).any(|v| !v.is_finite()) {
            return err("feature entries must be finite".into());
        }
        Ok(Self {
            source_features,
            source_labels,
            target_features,
            target_labels,
            class_count,
        })
    }

    pub fn source_features(&self) -> &DMatrix<f64> {
        &self.source_features
    }

    pub fn source_labels(&self) -> &[usize] {
        &self.source_labels
    }

    pub fn target_features(&self) -> &DMatrix<f64> {
        &self.target_features
    }

    /// Ground-truth target labels, present only for evaluation.
    pub fn target_labels(&self) -> Option<&[usize]> {
        self.target_labels.as_deref()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dimension(&self) -> usize {
        self.source_features.nrows()
    }

    pub fn source_count(&self) -> usize {
        self.source_features.ncols()
    }

    pub fn target_count(&self) -> usize {
        self.target_features.ncols()
    }

    /// `[Xs, Xt]`, the `D × (Ns + Nt)` pooled feature matrix.
    pub fn pooled_features(&self) -> DMatrix<f64> {
        let (d, ns, nt) = (self.dimension(), self.source_count(), self.target_count());
        let mut x = DMatrix::zeros(d, ns + nt);
        x.columns_mut(0, ns).copy_from(&self.source_features);
        x.columns_mut(ns, nt).copy_from(&self.target_features);
        x
    }

    /// Drops the evaluation labels.
    pub fn without_target_labels(mut self) -> Self {
        self.target_labels = None;
        self
    }

    /// SHA-256 over shapes, labels and the raw bits of every feature.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for n in [self.dimension(), self.source_count(), self.target_count(), self.class_count] {
            h.update((n as u64).to_le_bytes());
        }
        for &l in &self.source_labels {
            h.update((l as u64).to_le_bytes());
        }
        match &self.target_labels {
            Some(t) => {
                h.update([1u8]);
                for &l in t {
                    h.update((l as u64).to_le_bytes());
                }
            }
            None => h.update([0u8]),
        }
        for v in self.source_features.iter().chain(self.target_features.iter()) {
            h.update(v.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Column `n` is the indicator of sample `n`'s class; unlabeled columns are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix(pub DMatrix<f64>);

impl LabelMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Builds the `C × N` indicator matrix with `labels` placed at columns
/// `offset..offset + labels.len()`.
pub fn one_hot(labels: &[usize], class_count: usize, total: usize, offset: usize) -> Result<LabelMatrix> {
    if offset + labels.len() > total {
        return Err(GglsError::data(
            Module::Data,
            format!("{} labels at offset {offset} exceed {total} columns", labels.len()),
        ));
    }
    let mut h = DMatrix::zeros(class_count, total);
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 || l > class_count {
            return Err(GglsError::data(
                Module::Data,
                format!("label {l} outside 1..={class_count}"),
            ));
        }
        h[(l - 1, offset + i)] = 1.0;
    }
    Ok(LabelMatrix(h))
}

struct FeatureFile {
    features: DMatrix<f64>,
    labels: Vec<i64>,
}

fn read_feature_csv(path: &Path) -> Result<FeatureFile> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| GglsError::Io {
        module: Module::Data,
        path: display.clone(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(file);
    let bad = |row: usize, m: String| GglsError::data(Module::Data, format!("{display}:{row}: {m}"));

    let mut labels = Vec::new();
    let mut values = Vec::new();
    let mut dim = None;
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| bad(row, e.to_string()))?;
        if record.len() < 2 {
            return Err(bad(row, "expected a label followed by at least one feature".into()));
        }
        match dim {
            None => dim = Some(record.len() - 1),
            Some(d) if d != record.len() - 1 => {
                return Err(bad(row, format!("expected {d} features, found {}", record.len() - 1)))
            }
            _ => {}
        }
        let label: i64 = record[0]
            .parse()
            .map_err(|_| bad(row, format!("label {:?} is not an integer", &record[0])))?;
        if label != UNLABELED && label < 1 {
            return Err(bad(row, format!("label {label} must be -1 or a class id >= 1")));
        }
        labels.push(label);
        for field in record.iter().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(row, format!("feature {field:?} is not a number")))?;
            if !v.is_finite() {
                return Err(bad(row, format!("non-finite feature {field:?}")));
            }
            values.push(v);
        }
    }
    let dim = dim.ok_or_else(|| GglsError::data(Module::Data, format!("{display}: no samples")))?;
    Ok(FeatureFile {
        features: DMatrix::from_column_slice(dim, labels.len(), &values),
        labels,
    })
}

/// Reads a source and a target feature CSV.
///
/// Every source row must carry a class id. Target rows must be either all
/// unlabeled (`-1`) or all labeled; labeled targets are kept for evaluation.
pub fn load_dataset(source_path: impl AsRef<Path>, target_path: impl AsRef<Path>) -> Result<DomainDataset> {
    let source = read_feature_csv(source_path.as_ref())?;
    let target = read_feature_csv(target_path.as_ref())?;
    if source.features.nrows() != target.features.nrows() {
        return Err(GglsError::data(
            Module::Data,
            format!(
                "source has {} features per sample but target has {}",
                source.features.nrows(),
                target.features.nrows()
            ),
        ));
    }
    if source.labels.contains(&UNLABELED) {
        return Err(GglsError::data(Module::Data, "source rows must all be labeled"));
    }
    let source_labels = source.labels.iter().map(|&l| l as usize).collect();
    let labeled = target.labels.iter().filter(|&&l| l != UNLABELED).count();
    let target_labels = match labeled {
        0 => None,
        n if n == target.labels.len() => Some(target.labels.iter().map(|&l| l as usize).collect()),
        _ => {
            return Err(GglsError::data(
                Module::Data,
                "target rows must be either all labeled or all -1",
            ))
        }
    };
    DomainDataset::new(source.features, source_labels, target.features, target_labels)
}

/// Writes one domain in the feature-CSV format. `labels == None` writes `-1`.
pub fn write_feature_csv(path: impl AsRef<Path>, features: &DMatrix<f64>, labels: Option<&[usize]>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| GglsError::Io {
        module: Module::Data,
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for (j, col) in features.column_iter().enumerate() {
        let label = labels.map_or(UNLABELED, |l| l[j] as i64);
        write!(w, "{label}").map_err(io)?;
        for v in col.iter() {
            write!(w, ",{v:.16e}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Per-feature z-score statistics computed over the pooled domains.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    mean: DVector<f64>,
    std: DVector<f64>,
}

impl FeatureScaler {
    pub fn fit(pooled: &DMatrix<f64>) -> Self {
        let n = pooled.ncols() as f64;
        let mean = pooled.column_mean();
        let std = DVector::from_iterator(
            pooled.nrows(),
            pooled.row_iter().zip(mean.iter()).map(|(row, &m)| {
                (row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
            }),
        );
        Self { mean, std }
    }

    /// Z-scores every column, then scales it to unit Euclidean norm.
    /// Zero-variance features are centered only; all-zero samples stay zero.
    pub fn transform(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = features.clone();
        for mut col in out.column_iter_mut() {
            for (i, v) in col.iter_mut().enumerate() {
                *v -= self.mean[i];
                if self.std[i] > 0.0 {
                    *v /= self.std[i];
                }
            }
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        out
    }
}

/// Pooled z-score followed by per-sample unit norm.
pub fn normalize(dataset: &DomainDataset) -> DomainDataset {
    normalize_with_scaler(dataset).0
}

/// As [`normalize`], also returning the fitted scaler for reuse on new data.
pub fn normalize_with_scaler(dataset: &DomainDataset) -> (DomainDataset, FeatureScaler) {
    let scaler = FeatureScaler::fit(&dataset.pooled_features());
    let normalized = DomainDataset {
        source_features: scaler.transform(&dataset.source_features),
        target_features: scaler.transform(&dataset.target_features),
        ..dataset.clone()
    };
    (normalized, scaler)
}

/// Parameters of a two-domain Gaussian mixture with a rigid shift.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticShiftSpec {
    pub class_count: usize,
    pub samples_per_class_source: usize,
    pub samples_per_class_target: usize,
    pub dimension: usize,
    pub rotation_angle_degrees: f64,
    pub translation_magnitude: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticShiftSpec {
    fn default() -> Self {
        Self {
            class_count: 3,
            samples_per_class_source: 20,
            samples_per_class_target: 20,
            dimension: 10,
            rotation_angle_degrees: 30.0,
            translation_magnitude: 1.0,
            noise_sigma: 0.3,
            seed: 7,
        }
    }
}

impl SyntheticShiftSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(GglsError::config(Module::Data, m));
        if self.class_count == 0 || self.samples_per_class_source == 0 || self.samples_per_class_target == 0 {
            return fail("class count and per-class sample counts must be positive");
        }
        if self.dimension < 2 {
            return fail("synthetic dimension must be at least 2");
        }
        if !(0.0..180.0).contains(&self.rotation_angle_degrees) {
            return fail("rotation angle must lie in [0, 180)");
        }
        if !self.translation_magnitude.is_finite() || !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("translation must be finite and noise sigma finite and non-negative");
        }
        Ok(())
    }

    /// Mean of class `c` (1-based): `4 · e_{c mod D}`.
    pub fn class_mean(&self, class: usize) -> DVector<f64> {
        let mut m = DVector::zeros(self.dimension);
        m[class % self.dimension] = 4.0;
        m
    }
}

/// Draws the source mixture, draws the target from the same mixture, then
/// rotates the target in the first two coordinates and translates it along
/// `(1, …, 1)/√D`. Samples are grouped by class in both domains.
pub fn generate_synthetic(spec: &SyntheticShiftSpec) -> Result<DomainDataset> {
    spec.validate()?;
    let d = spec.dimension;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| GglsError::config(Module::Data, format!("noise sigma: {e}")))?;

    let mut draw = |per_class: usize| {
        let mut x = DMatrix::zeros(d, per_class * spec.class_count);
        let mut labels = Vec::with_capacity(x.ncols());
        for c in 1..=spec.class_count {
            let mean = spec.class_mean(c);
            for _ in 0..per_class {
                let j = labels.len();
                for i in 0..d {
                    x[(i, j)] = mean[i] + noise.sample(&mut rng);
                }
                labels.push(c);
            }
        }
        (x, labels)
    };
    let (xs, ls) = draw(spec.samples_per_class_source);
    let (mut xt, lt) = draw(spec.samples_per_class_target);

    let (sin, cos) = spec.rotation_angle_degrees.to_radians().sin_cos();
    let shift = spec.translation_magnitude / (d as f64).sqrt();
    for mut col in xt.column_iter_mut() {
        let (a, b) = (col[0], col[1]);
        col[0] = cos * a - sin * b;
        col[1] = sin * a + cos * b;
        col.add_scalar_mut(shift);
    }
    DomainDataset::new(xs, ls, xt, Some(lt))
}
