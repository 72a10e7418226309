//! Datasets: synthetic generators with manifold metadata, OoD cluster
//! placement, and IDX ingestion for MNIST-style images.

mod idx;
mod ood;
mod synthetic;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use idx::{downsample_images, load_idx, load_idx_labels, parse_idx, IdxArray};
pub use ood::{default_margin, place_ood_clusters, OodPlacement, OodSet, OodSource};
pub use synthetic::{make_half_moons, make_toy_manifold, LineParams, ManifoldMeta, ToyManifoldParams};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// The three benchmark datasets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    HalfMoons,
    ToyManifold,
    Mnist,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::HalfMoons, DatasetKind::ToyManifold, DatasetKind::Mnist];

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::HalfMoons => "half-moons",
            DatasetKind::ToyManifold => "toy-manifold",
            DatasetKind::Mnist => "mnist",
        }
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown dataset `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// Per-feature affine map `(x - mean) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits mean and standard deviation per column. Constant columns keep
    /// scale 1.
    pub fn fit(features: &Tensor) -> Self {
        let (n, d) = features.dims2();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v / n as f64;
            }
        }
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(features.row(i)).zip(&mean) {
                *s += (v - m).powi(2) / n as f64;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, features: &Tensor) -> Tensor {
        let mut out = features.clone();
        let d = out.cols();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn invert(&self, features: &Tensor) -> Tensor {
        let mut out = features.clone();
        let d = out.cols();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = *v * s + m;
            }
        }
        out
    }
}

/// Feature matrix with integer class labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Tensor,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
    standardization: Option<Standardizer>,
}

impl LabeledDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if features.rank() != 2 || features.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "features {:?} do not match {} labels",
                features.shape(),
                labels.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::invalid("non-finite feature"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::invalid(format!("label {bad} outside [0, {classes})")));
        }
        Ok(Self {
            features,
            labels,
            classes,
            split,
            standardization: None,
        })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn standardization(&self) -> Option<&Standardizer> {
        self.standardization.as_ref()
    }

    /// Applies `s` to the features. Fails if the dataset was already
    /// standardized.
    pub fn standardize(&mut self, s: Standardizer) -> Result<()> {
        if self.standardization.is_some() {
            return Err(Error::invalid("dataset is already standardized"));
        }
        if s.mean.len() != self.dim() {
            return Err(Error::invalid("standardizer dimension mismatch"));
        }
        self.features = s.apply(&self.features);
        self.standardization = Some(s);
        Ok(())
    }

    /// Takes the first `n` rows.
    pub fn truncate(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        self.subset(&idx)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            split: self.split,
            standardization: self.standardization.clone(),
        }
    }

    /// `x0,...,xD-1,label` with one row per point.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for j in 0..d {
            let _ = write!(out, "x{j},");
        }
        out.push_str("label\n");
        for (i, label) in self.labels.iter().enumerate() {
            for v in self.features.row(i) {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(out, "{label}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Smallest axis-aligned box around the rows, as `(min, max)` per column.
pub fn bounding_box(features: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let d = features.cols();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..features.rows() {
        for (j, &v) in features.row(i).iter().enumerate() {
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_labels_and_double_standardization() {
        let x = Tensor::from_rows(&[[0.0, 1.0], [2.0, 3.0]]).unwrap();
        assert!(LabeledDataset::new(x.clone(), vec![0, 2], 2, Split::Train).is_err());
        let mut ds = LabeledDataset::new(x, vec![0, 1], 2, Split::Train).unwrap();
        let s = Standardizer::fit(ds.features());
        ds.standardize(s.clone()).unwrap();
        assert!(ds.standardize(s).is_err());
    }

    #[test]
    fn csv_header_and_rows() {
        let x = Tensor::from_rows(&[[0.5, -1.0]]).unwrap();
        let ds = LabeledDataset::new(x, vec![1], 2, Split::Test).unwrap();
        assert_eq!(ds.to_csv(), "x0,x1,label\n0.5,-1,1\n");
    }

    proptest! {
        #[test]
        fn standardization_round_trips(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..40)) {
            let x = Tensor::from_rows(&rows).unwrap();
            let s = Standardizer::fit(&x);
            let back = s.invert(&s.apply(&x));
            for (a, b) in back.data().iter().zip(x.data()) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }
}
