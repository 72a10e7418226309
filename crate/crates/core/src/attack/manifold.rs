use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::AdversarialBatch;
use crate::autodiff::Tensor;
use crate::data::{LabeledDataset, ManifoldMeta};
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Standard deviation of the perturbation magnitude around ε.
pub const MANIFOLD_NOISE_STD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    On,
    Off,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::On => "on",
            Direction::Off => "off",
        }
    }
}

/// Moves every point by `s · axis` with `s ~ N(ε, 0.5²)` and a fair random
/// sign, along the manifold (`On`) or orthogonal to it (`Off`).
pub fn manifold_perturb(
    data: &LabeledDataset,
    meta: &ManifoldMeta,
    epsilon: f64,
    direction: Direction,
    seed: u64,
) -> Result<AdversarialBatch> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("perturbation strength must be non-negative, got {epsilon}")));
    }
    if data.dim() != 2 {
        return Err(Error::invalid("manifold perturbation needs 2-D inputs"));
    }
    let axis = match direction {
        Direction::On => meta.on_axis,
        Direction::Off => meta.off_axis,
    };
    let magnitude = Normal::new(epsilon, MANIFOLD_NOISE_STD).unwrap();
    let mut rng = seeded(seed);
    let mut delta = Vec::with_capacity(2 * data.len());
    for _ in 0..data.len() {
        let s: f64 = magnitude.sample(&mut rng);
        let s = if rng.random_bool(0.5) { s } else { -s };
        delta.extend([s * axis[0], s * axis[1]]);
    }
    AdversarialBatch::new(
        data.features().clone(),
        Tensor::matrix(data.len(), 2, delta)?,
        data.labels().to_vec(),
    )
}
