use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, Split};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Two interleaved half circles of radius 1. Class 0 is the upper arc
/// centred at the origin; class 1 is the lower arc centred at `(1, 0.5)`.
/// Points alternate between classes so every prefix stays balanced.
pub fn make_half_moons(n: usize, noise: f64, seed: u64, split: Split) -> Result<LabeledDataset> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::invalid(format!("half moons needs an even n >= 2, got {n}")));
    }
    if !(noise >= 0.0) {
        return Err(Error::invalid("noise must be non-negative"));
    }
    let mut rng = seeded(seed);
    let jitter = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let t = rng.random_range(0.0..=PI);
        let (mut x, mut y) = if label == 0 {
            (t.cos(), t.sin())
        } else {
            (1.0 - t.cos(), 0.5 - t.sin())
        };
        if noise > 0.0 {
            x += jitter.sample(&mut rng);
            y += jitter.sample(&mut rng);
        }
        rows.push([x, y]);
        labels.push(label);
    }
    LabeledDataset::new(Tensor::from_rows(&rows)?, labels, 2, split)
}

/// Position of the 1-D manifold inside the plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct LineParams {
    /// Angle of the line direction in radians (0 = x-axis).
    pub angle: f64,
    /// Signed distance of the line from the origin along the normal.
    pub offset: f64,
    /// Distance between consecutive cluster centres.
    pub spacing: f64,
}

impl Default for LineParams {
    fn default() -> Self {
        Self {
            angle: 0.0,
            offset: 0.0,
            spacing: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ToyManifoldParams {
    pub clusters_per_class: usize,
    pub points_per_cluster: usize,
    pub line: LineParams,
    pub std_on: f64,
    pub std_off: f64,
}

impl Default for ToyManifoldParams {
    fn default() -> Self {
        Self {
            clusters_per_class: 3,
            points_per_cluster: 100,
            line: LineParams::default(),
            std_on: 0.15,
            std_off: 0.005,
        }
    }
}

/// Orthonormal frame of the toy manifold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldMeta {
    pub on_axis: [f64; 2],
    pub off_axis: [f64; 2],
    pub offset: f64,
}

impl ManifoldMeta {
    pub fn from_line(line: &LineParams) -> Self {
        let (s, c) = line.angle.sin_cos();
        Self {
            on_axis: [c, s],
            off_axis: [-s, c],
            offset: line.offset,
        }
    }

    pub fn on_coord(&self, p: &[f64]) -> f64 {
        p[0] * self.on_axis[0] + p[1] * self.on_axis[1]
    }

    pub fn off_coord(&self, p: &[f64]) -> f64 {
        p[0] * self.off_axis[0] + p[1] * self.off_axis[1]
    }

    /// Point with the given along-line and normal coordinates.
    pub fn point(&self, on: f64, off: f64) -> [f64; 2] {
        [
            on * self.on_axis[0] + off * self.off_axis[0],
            on * self.on_axis[1] + off * self.off_axis[1],
        ]
    }
}

/// Gaussian clusters with alternating labels centred along a line.
pub fn make_toy_manifold(
    params: &ToyManifoldParams,
    seed: u64,
    split: Split,
) -> Result<(LabeledDataset, ManifoldMeta)> {
    let clusters = 2 * params.clusters_per_class;
    if clusters < 2 {
        return Err(Error::invalid("toy manifold needs at least 2 clusters"));
    }
    if params.std_on < 0.0 || params.std_off < 0.0 || params.points_per_cluster == 0 {
        return Err(Error::invalid("toy manifold stds must be >= 0 and clusters non-empty"));
    }
    let meta = ManifoldMeta::from_line(&params.line);
    let mut rng = seeded(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::with_capacity(clusters * params.points_per_cluster);
    let mut labels = Vec::with_capacity(rows.capacity());
    let middle = (clusters as f64 - 1.0) / 2.0;
    for _ in 0..params.points_per_cluster {
        for k in 0..clusters {
            let centre = (k as f64 - middle) * params.line.spacing;
            let on = centre + params.std_on * std_normal.sample(&mut rng);
            let off = params.line.offset + params.std_off * std_normal.sample(&mut rng);
            rows.push(meta.point(on, off));
            labels.push(k % 2);
        }
    }
    let ds = LabeledDataset::new(Tensor::from_rows(&rows)?, labels, 2, split)?;
    Ok((ds, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_class_zero_on_unit_semicircle() {
        let ds = make_half_moons(200, 0.0, 1, Split::Train).unwrap();
        for (i, &l) in ds.labels().iter().enumerate() {
            if l == 0 {
                let p = ds.features().row(i);
                assert!((p[0].hypot(p[1]) - 1.0).abs() < 1e-9);
                assert!(p[1] >= -1e-12);
            }
        }
    }

    #[test]
    fn moons_are_deterministic_and_balanced() {
        let a = make_half_moons(1000, 0.1, 42, Split::Train).unwrap();
        let b = make_half_moons(1000, 0.1, 42, Split::Train).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels().iter().filter(|&&l| l == 0).count(), 500);
        assert!(make_half_moons(1, 0.1, 0, Split::Train).is_err());
        assert!(make_half_moons(0, 0.1, 0, Split::Train).is_err());
    }

    #[test]
    fn degenerate_off_axis_spread() {
        let params = ToyManifoldParams {
            std_off: 0.0,
            line: LineParams {
                offset: 0.75,
                ..LineParams::default()
            },
            ..ToyManifoldParams::default()
        };
        let (ds, meta) = make_toy_manifold(&params, 3, Split::Train).unwrap();
        for i in 0..ds.len() {
            assert_eq!(meta.off_coord(ds.features().row(i)), 0.75);
        }
    }

    #[test]
    fn off_axis_variance_is_small() {
        let params = ToyManifoldParams::default();
        let (ds, meta) = make_toy_manifold(&params, 9, Split::Train).unwrap();
        let var = |f: &dyn Fn(&[f64]) -> f64| {
            let v: Vec<f64> = (0..ds.len()).map(|i| f(ds.features().row(i))).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let off = var(&|p| meta.off_coord(p));
        let on = var(&|p| meta.on_coord(p));
        assert!(off / on < 0.01);
        assert!(off <= params.std_off.powi(2) * 1.5);
    }

    #[test]
    fn adjacent_clusters_alternate() {
        let params = ToyManifoldParams {
            std_on: 0.0,
            std_off: 0.0,
            ..ToyManifoldParams::default()
        };
        let (ds, meta) = make_toy_manifold(&params, 1, Split::Train).unwrap();
        let mut centres: Vec<(f64, usize)> = (0..6)
            .map(|i| (meta.on_coord(ds.features().row(i)), ds.labels()[i]))
            .collect();
        centres.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in centres.windows(2) {
            assert_ne!(w[0].1, w[1].1);
        }
        let none = ToyManifoldParams {
            clusters_per_class: 0,
            ..ToyManifoldParams::default()
        };
        assert!(make_toy_manifold(&none, 1, Split::Train).is_err());
    }

    #[test]
    fn frame_is_orthonormal() {
        let meta = ManifoldMeta::from_line(&LineParams {
            angle: 0.7,
            ..LineParams::default()
        });
        let dot = meta.on_axis[0] * meta.off_axis[0] + meta.on_axis[1] * meta.off_axis[1];
        assert!(dot.abs() < 1e-12);
        assert!((meta.on_axis[0].hypot(meta.on_axis[1]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generating_line_has_zero_slope_without_off_noise() {
        let params = ToyManifoldParams {
            std_off: 0.0,
            line: LineParams {
                angle: 0.3,
                offset: 0.2,
                spacing: 1.0,
            },
            ..ToyManifoldParams::default()
        };
        let (ds, meta) = make_toy_manifold(&params, 4, Split::Train).unwrap();
        let pts: Vec<(f64, f64)> = (0..ds.len())
            .map(|i| {
                let p = ds.features().row(i);
                (meta.on_coord(p), meta.off_coord(p))
            })
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        assert!((sxy / sxx).abs() < 1e-6);
    }
}
