use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::bounding_box;
use crate::error::{Error, Result};
use crate::metrics::Channel;
use crate::models::Model;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct GridSpec {
    /// Cells per axis.
    pub resolution: usize,
    /// Factor applied to the data bounding box around its centre.
    pub expand: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            resolution: 200,
            expand: 1.5,
        }
    }
}

/// Uncertainty channels and predicted class over a regular 2-D grid.
///
/// Cell `(i, j)` sits at `x = lo[0] + j·step[0]`, `y = lo[1] + i·step[1]`;
/// values are stored row-major with `i` (the y index) outermost.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyField {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub resolution: usize,
    pub channels: Vec<(Channel, Vec<f64>)>,
    pub classes: Vec<usize>,
}

/// Grid points covering the expanded bounding box of `features`.
pub fn grid_points(features: &Tensor, spec: &GridSpec) -> Result<([f64; 2], [f64; 2], Tensor)> {
    if features.cols() != 2 {
        return Err(Error::invalid(format!("fields need 2-D inputs, got {}", features.cols())));
    }
    if spec.resolution < 2 || !(spec.expand > 0.0) {
        return Err(Error::invalid("grid needs resolution >= 2 and a positive expansion"));
    }
    let (lo, hi) = bounding_box(features);
    let mut a = [0.0; 2];
    let mut b = [0.0; 2];
    for k in 0..2 {
        let (c, half) = ((lo[k] + hi[k]) / 2.0, (hi[k] - lo[k]) / 2.0 * spec.expand);
        a[k] = c - half;
        b[k] = c + half;
    }
    let r = spec.resolution;
    let step = [(b[0] - a[0]) / (r - 1) as f64, (b[1] - a[1]) / (r - 1) as f64];
    let mut pts = Vec::with_capacity(2 * r * r);
    for i in 0..r {
        for j in 0..r {
            pts.extend([a[0] + j as f64 * step[0], a[1] + i as f64 * step[1]]);
        }
    }
    Ok((a, b, Tensor::matrix(r * r, 2, pts)?))
}

/// Evaluates `model`'s uncertainty report and class prediction on the grid.
pub fn uncertainty_field(model: &Model, train_features: &Tensor, spec: &GridSpec, seed: u64) -> Result<UncertaintyField> {
    let (lo, hi, pts) = grid_points(train_features, spec)?;
    let report = model.report(&pts, seed)?;
    let classes = model.predict(&pts, seed)?;
    let channels = report
        .available_channels()
        .into_iter()
        .map(|c| (c, report.channel(c).unwrap().to_vec()))
        .collect();
    Ok(UncertaintyField {
        lo,
        hi,
        resolution: spec.resolution,
        channels,
        classes,
    })
}

impl UncertaintyField {
    pub fn channel(&self, channel: Channel) -> Option<&[f64]> {
        self.channels.iter().find(|(c, _)| *c == channel).map(|(_, v)| v.as_slice())
    }

    /// Centre of cell `index`.
    pub fn point(&self, index: usize) -> [f64; 2] {
        let r = self.resolution;
        let (i, j) = (index / r, index % r);
        let t = |k: usize, n: usize| self.lo[k] + n as f64 * (self.hi[k] - self.lo[k]) / (r - 1) as f64;
        [t(0, j), t(1, i)]
    }

    /// The grid as a CSV matrix: one line per y row, no header.
    pub fn to_csv(values: &[f64], resolution: usize) -> String {
        let mut out = String::new();
        for row in values.chunks(resolution) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn write_csv(&self, channel: Channel, path: &Path) -> Result<()> {
        let values = self
            .channel(channel)
            .ok_or_else(|| Error::invalid(format!("field has no {} channel", channel.name())))?;
        std::fs::write(path, Self::to_csv(values, self.resolution)).map_err(|e| Error::io(path, e))
    }

    pub fn write_pgm(&self, channel: Channel, path: &Path) -> Result<()> {
        let values = self
            .channel(channel)
            .ok_or_else(|| Error::invalid(format!("field has no {} channel", channel.name())))?;
        std::fs::write(path, pgm(values, self.resolution)).map_err(|e| Error::io(path, e))
    }
}

/// Binary 8-bit PGM, min-max normalised, with the largest y at the top.
pub fn pgm(values: &[f64], resolution: usize) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let rows = values.len() / resolution.max(1);
    let mut out = format!("P5\n{resolution} {rows}\n255\n").into_bytes();
    for row in values.chunks(resolution).rev() {
        out.extend(row.iter().map(|v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        }));
    }
    out
}

/// `1 - cos(a, b)`; zero vectors are at distance zero from each other.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 && nb == 0.0 {
        0.0
    } else if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        // rounding can push the cosine of identical fields just past one
        (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
    }
}
