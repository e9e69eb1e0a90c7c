//! Datasets, min-max normalization, splitting and per-island bootstrap views.

use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use alloc::{format, vec};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Labelled tabular data. After [`normalize`] every feature lies in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub feature_names: Vec<String>,
    pub instances: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        feature_names: Vec<String>,
        instances: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let ds = Self { name: name.into(), feature_names, instances, labels, num_classes };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances.cols() == 0 {
            return Err(Error::Shape("dataset needs at least one feature".into()));
        }
        if self.instances.rows() == 0 {
            return Err(Error::Empty("dataset has no instances"));
        }
        if self.labels.len() != self.instances.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} instances",
                self.labels.len(),
                self.instances.rows()
            )));
        }
        if self.feature_names.len() != self.instances.cols() {
            return Err(Error::Shape(format!(
                "{} feature names for {} features",
                self.feature_names.len(),
                self.instances.cols()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("fewer than 2 classes".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        if let Some(pos) = self.instances.as_slice().iter().position(|v| !v.is_finite()) {
            let d = self.instances.cols();
            return Err(Error::InvalidArgument(format!(
                "non-finite value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.instances.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.instances.rows() == 0
    }

    #[inline]
    pub fn num_features(&self) -> usize {
        self.instances.cols()
    }

    pub fn is_normalized(&self) -> bool {
        self.instances.as_slice().iter().all(|v| (0.0..=1.0).contains(v))
    }

    /// Subset of rows, in the given order.
    pub fn subset(&self, indices: &[usize], name: impl Into<String>) -> Dataset {
        Dataset {
            name: name.into(),
            feature_names: self.feature_names.clone(),
            instances: self.instances.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Per-feature `(min, max)` of the raw data, kept so that new raw data can be
/// mapped into the same unit cube.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScalingRecord {
    pub ranges: Vec<(f64, f64)>,
}

impl ScalingRecord {
    /// Maps a raw value of `feature` into `[0, 1]`, clamping values that fall
    /// outside the recorded range.
    pub fn scale(&self, feature: usize, value: f64) -> f64 {
        let (lo, hi) = self.ranges[feature];
        if hi > lo {
            ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }

    pub fn apply(&self, raw: &Dataset) -> Result<Dataset> {
        if raw.num_features() != self.ranges.len() {
            return Err(Error::Shape(format!(
                "scaling covers {} features, dataset has {}",
                self.ranges.len(),
                raw.num_features()
            )));
        }
        let mut out = raw.clone();
        let d = raw.num_features();
        for row in 0..raw.len() {
            for j in 0..d {
                let v = self.scale(j, raw.instances.get(row, j));
                out.instances.set(row, j, v);
            }
        }
        Ok(out)
    }
}

/// Min-max scales every feature to `[0, 1]`. Constant features map to `0.0`.
pub fn normalize(raw: &Dataset) -> (Dataset, ScalingRecord) {
    let d = raw.num_features();
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
    for row in raw.instances.iter_rows() {
        for (r, &v) in ranges.iter_mut().zip(row) {
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        }
    }
    let record = ScalingRecord { ranges };
    // Already-unit columns pass through untouched so normalization is idempotent.
    let mut out = raw.clone();
    for j in 0..d {
        let (lo, hi) = record.ranges[j];
        if lo == hi {
            for i in 0..raw.len() {
                out.instances.set(i, j, 0.0);
            }
        } else if lo == 0.0 && hi == 1.0 {
            continue;
        } else {
            for i in 0..raw.len() {
                out.instances.set(i, j, record.scale(j, raw.instances.get(i, j)));
            }
        }
    }
    (out, record)
}

/// An island's training set: `m` rows of the source drawn with replacement.
///
/// The selected rows are materialized once so that evaluation does not chase
/// indices on every prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapView {
    source: Arc<Dataset>,
    indices: Vec<usize>,
    instances: Matrix,
    labels: Vec<usize>,
}

impl BootstrapView {
    pub fn from_indices(source: Arc<Dataset>, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= source.len()) {
            return Err(Error::Shape(format!(
                "index {bad} out of range for {} instances",
                source.len()
            )));
        }
        let instances = source.instances.select_rows(&indices);
        let labels = indices.iter().map(|&i| source.labels[i]).collect();
        Ok(Self { source, indices, instances, labels })
    }

    /// The whole dataset in its original order.
    pub fn identity(source: Arc<Dataset>) -> Self {
        let indices: Vec<usize> = (0..source.len()).collect();
        Self {
            instances: source.instances.clone(),
            labels: source.labels.clone(),
            indices,
            source,
        }
    }

    pub fn source(&self) -> &Arc<Dataset> {
        &self.source
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn instances(&self) -> &Matrix {
        &self.instances
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.instances.cols()
    }
}

/// Draws `m = |source|` row indices uniformly with replacement.
pub fn bootstrap_sample<R: Rng + ?Sized>(source: Arc<Dataset>, rng: &mut R) -> BootstrapView {
    let m = source.len();
    let indices = (0..m).map(|_| rng.random_range(0..m)).collect();
    BootstrapView::from_indices(source, indices).expect("indices drawn below m")
}

/// Stratified split into `(train, test)`.
///
/// Within each class the rows are shuffled and `round(n_c * test_fraction)`
/// of them go to the test side. Both sides keep the source's row order.
pub fn train_test_split<R: Rng + ?Sized>(
    ds: &Dataset,
    test_fraction: f64,
    rng: &mut R,
) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let mut is_test = vec![false; ds.len()];
    for class in 0..ds.num_classes {
        let mut members: Vec<usize> =
            (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        members.shuffle(rng);
        let n_test = round_half_up(members.len() as f64 * test_fraction);
        for &i in &members[..n_test.min(members.len())] {
            is_test[i] = true;
        }
    }
    let train: Vec<usize> = (0..ds.len()).filter(|&i| !is_test[i]).collect();
    let test: Vec<usize> = (0..ds.len()).filter(|&i| is_test[i]).collect();
    if train.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "train split would have {} instances",
            train.len()
        )));
    }
    Ok((
        ds.subset(&train, ds.name.to_string()),
        ds.subset(&test, format!("{}-test", ds.name)),
    ))
}

fn round_half_up(x: f64) -> usize {
    let floor = x as usize;
    if x - floor as f64 >= 0.5 {
        floor + 1
    } else {
        floor
    }
}
