use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{bounding_box, LabeledDataset, ManifoldMeta};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodSource {
    HandPlaced,
    FashionMnist,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodSet {
    pub features: Tensor,
    pub source: OodSource,
}

impl OodSet {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Where cluster centres go.
#[derive(Clone, Debug, PartialEq)]
pub enum OodPlacement {
    /// Equally spaced directions around the data centroid.
    Radial,
    /// Alternating sides of the manifold line, spread along its extent; every
    /// point keeps `|off-axis coordinate - offset| >= margin`.
    OffManifold(ManifoldMeta),
}

/// `0.75 ×` the bounding-box diagonal of the training features.
pub fn default_margin(features: &Tensor) -> f64 {
    let (lo, hi) = bounding_box(features);
    let diag = lo.iter().zip(&hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
    3.0 * diag * 0.25
}

fn nearest_distance(train: &Tensor, p: &[f64]) -> f64 {
    (0..train.rows())
        .map(|i| {
            train
                .row(i)
                .iter()
                .zip(p)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Places `count` Gaussian clusters of `points_per_cluster` points with
/// standard deviation `spread`, each point at least `margin` from every
/// training point. Centres are pushed outward until the margin holds; the
/// search gives up at ten bounding-box diagonals.
pub fn place_ood_clusters(
    data: &LabeledDataset,
    count: usize,
    points_per_cluster: usize,
    margin: f64,
    spread: f64,
    placement: &OodPlacement,
    seed: u64,
) -> Result<OodSet> {
    if !(margin > 0.0) {
        return Err(Error::invalid("OoD margin must be positive"));
    }
    if data.dim() != 2 {
        return Err(Error::invalid("hand-placed OoD clusters need 2-D features"));
    }
    if count == 0 || data.is_empty() {
        return Err(Error::invalid("need at least one cluster and one training point"));
    }
    let train = data.features();
    let (lo, hi) = bounding_box(train);
    let diag = lo.iter().zip(&hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt().max(1e-12);
    let n = train.rows() as f64;
    let centroid = [
        (0..train.rows()).map(|i| train.get(i, 0)).sum::<f64>() / n,
        (0..train.rows()).map(|i| train.get(i, 1)).sum::<f64>() / n,
    ];
    let limit = 10.0 * diag + margin;

    let mut rng = seeded(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let base_angle = rng.random_range(0.0..2.0 * PI);
    let mut rows: Vec<[f64; 2]> = Vec::with_capacity(count * points_per_cluster);

    for k in 0..count {
        // unit direction and base point the centre is pushed along
        let (origin, dir) = match placement {
            OodPlacement::Radial => {
                let theta = base_angle + 2.0 * PI * k as f64 / count as f64;
                (centroid, [theta.cos(), theta.sin()])
            }
            OodPlacement::OffManifold(meta) => {
                let ons: Vec<f64> = (0..train.rows()).map(|i| meta.on_coord(train.row(i))).collect();
                let (a, b) = ons.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                let along = if count == 1 {
                    0.5 * (a + b)
                } else {
                    a + (b - a) * k as f64 / (count - 1) as f64
                };
                let side = if k % 2 == 0 { 1.0 } else { -1.0 };
                (
                    meta.point(along, meta.offset),
                    [side * meta.off_axis[0], side * meta.off_axis[1]],
                )
            }
        };
        let offsets: Vec<[f64; 2]> = (0..points_per_cluster)
            .map(|_| [spread * noise.sample(&mut rng), spread * noise.sample(&mut rng)])
            .collect();
        let mut radius = margin + 3.0 * spread;
        loop {
            if radius > limit {
                return Err(Error::Placement(format!(
                    "cluster {k} violates margin {margin} within ten bounding-box diagonals"
                )));
            }
            let centre = [origin[0] + radius * dir[0], origin[1] + radius * dir[1]];
            let pts: Vec<[f64; 2]> = offsets.iter().map(|o| [centre[0] + o[0], centre[1] + o[1]]).collect();
            let ok = pts.iter().all(|p| {
                let clear = nearest_distance(train, p) >= margin;
                match placement {
                    OodPlacement::Radial => clear,
                    OodPlacement::OffManifold(meta) => clear && (meta.off_coord(p) - meta.offset).abs() >= margin,
                }
            });
            if ok {
                rows.extend(pts);
                break;
            }
            radius *= 1.1;
        }
    }
    Ok(OodSet {
        features: Tensor::from_rows(&rows)?,
        source: OodSource::HandPlaced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_half_moons, make_toy_manifold, Split, ToyManifoldParams};

    #[test]
    fn respects_margin_on_half_moons() {
        let ds = make_half_moons(400, 0.1, 1, Split::Train).unwrap();
        let ood = place_ood_clusters(&ds, 3, 40, 2.0, 0.3, &OodPlacement::Radial, 5).unwrap();
        assert_eq!(ood.len(), 120);
        for i in 0..ood.len() {
            assert!(nearest_distance(ds.features(), ood.features.row(i)) >= 2.0);
        }
    }

    #[test]
    fn single_cluster_spread_sets_std() {
        let ds = make_half_moons(400, 0.1, 1, Split::Train).unwrap();
        let ood = place_ood_clusters(&ds, 1, 4000, 2.0, 0.3, &OodPlacement::Radial, 5).unwrap();
        let n = ood.len() as f64;
        let m: f64 = (0..ood.len()).map(|i| ood.features.get(i, 0)).sum::<f64>() / n;
        let var: f64 = (0..ood.len()).map(|i| (ood.features.get(i, 0) - m).powi(2)).sum::<f64>() / n;
        assert!((var.sqrt() - 0.3).abs() < 0.02);
    }

    #[test]
    fn clusters_point_in_distinct_directions() {
        let ds = make_half_moons(400, 0.1, 1, Split::Train).unwrap();
        let count = 4;
        let ood = place_ood_clusters(&ds, count, 20, 2.0, 0.2, &OodPlacement::Radial, 8).unwrap();
        let c = [0.5, 0.25];
        let angles: Vec<f64> = (0..count)
            .map(|k| {
                let rows = (k * 20..(k + 1) * 20).map(|i| ood.features.row(i));
                let (sx, sy) = rows.fold((0.0, 0.0), |(a, b), r| (a + r[0], b + r[1]));
                (sy / 20.0 - c[1]).atan2(sx / 20.0 - c[0])
            })
            .collect();
        for i in 0..count {
            for j in i + 1..count {
                let mut d = (angles[i] - angles[j]).abs() % (2.0 * PI);
                d = d.min(2.0 * PI - d);
                assert!(d >= 2.0 * PI / (2.0 * count as f64), "{angles:?}");
            }
        }
    }

    #[test]
    fn off_manifold_points_clear_the_line() {
        let (ds, meta) = make_toy_manifold(&ToyManifoldParams::default(), 2, Split::Train).unwrap();
        let margin = default_margin(ds.features());
        let ood = place_ood_clusters(&ds, 4, 25, margin, 0.3, &OodPlacement::OffManifold(meta.clone()), 3).unwrap();
        for i in 0..ood.len() {
            assert!(meta.off_coord(ood.features.row(i)).abs() >= margin);
        }
    }

    #[test]
    fn rejects_bad_margin() {
        let ds = make_half_moons(10, 0.1, 1, Split::Train).unwrap();
        assert!(place_ood_clusters(&ds, 1, 1, 0.0, 0.1, &OodPlacement::Radial, 0).is_err());
        // spread so wide the margin cannot hold anywhere near the data
        assert!(matches!(
            place_ood_clusters(&ds, 1, 200, 1.0, 1e3, &OodPlacement::Radial, 0),
            Err(Error::Placement(_))
        ));
    }
}
