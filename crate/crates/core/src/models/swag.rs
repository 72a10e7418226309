//! SWAG: a Gaussian fitted to SGD iterates, with diagonal plus low-rank
//! covariance.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ensemble::WeightEnsemble;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{fit_epochs, flatten, train_classifier, Mlp, NetworkSpec, TrainConfig};
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SwagConfig {
    pub hidden: Vec<usize>,
    pub pretrain: TrainConfig,
    pub explore_epochs: usize,
    pub explore_lr: f64,
    /// Momentum during exploration; inherits the pretraining value if unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explore_momentum: Option<f64>,
    /// Number of trailing epochs kept as deviation columns.
    pub rank: usize,
    pub samples: usize,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

/// Running moments of the iterates and the last `rank` deviations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwagState {
    pub spec: NetworkSpec,
    pub mean: Vec<f64>,
    pub sq_mean: Vec<f64>,
    pub deviations: Vec<Vec<f64>>,
    pub rank: usize,
    pub count: usize,
}

impl SwagState {
    pub fn new(spec: NetworkSpec, rank: usize) -> Self {
        let n = spec.param_count();
        Self {
            spec,
            mean: vec![0.0; n],
            sq_mean: vec![0.0; n],
            deviations: Vec::new(),
            rank,
            count: 0,
        }
    }

    /// Folds one iterate into the moments. Incremental means keep a constant
    /// iterate bitwise fixed.
    pub fn collect(&mut self, w: &[f64]) {
        self.count += 1;
        let k = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.sq_mean).zip(w) {
            *m += (x - *m) / k;
            *s += (x * x - *s) / k;
        }
        if self.rank > 0 {
            self.deviations.push(w.iter().zip(&self.mean).map(|(x, m)| x - m).collect());
            if self.deviations.len() > self.rank {
                self.deviations.remove(0);
            }
        }
    }

    /// `E[w²] − E[w]²`, clamped at zero.
    pub fn diag_variance(&self) -> Vec<f64> {
        self.mean.iter().zip(&self.sq_mean).map(|(m, s)| (s - m * m).max(0.0)).collect()
    }

    /// `w = mean + scale · (σ ∘ z₁ / √2 + D z₂ / √(2 (K − 1)))`. With fewer
    /// than two deviation columns only the diagonal term is used.
    pub fn sample(&self, count: usize, scale: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
        if self.count == 0 {
            return Err(Error::Untrained("SWAG has collected no iterates"));
        }
        if scale == 0.0 {
            return Ok(vec![self.mean.clone(); count]);
        }
        let mut rng = seeded(seed);
        let sd: Vec<f64> = self.diag_variance().into_iter().map(f64::sqrt).collect();
        let k = self.deviations.len();
        let low_rank = k >= 2;
        let lr_scale = if low_rank { 1.0 / (2.0 * (k as f64 - 1.0)).sqrt() } else { 0.0 };
        let diag_scale = if low_rank { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut w = self.mean.clone();
            for (wi, s) in w.iter_mut().zip(&sd) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *wi += scale * diag_scale * s * z;
            }
            if low_rank {
                for col in &self.deviations {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    for (wi, d) in w.iter_mut().zip(col) {
                        *wi += scale * lr_scale * d * z;
                    }
                }
            }
            out.push(w);
        }
        Ok(out)
    }
}

/// Pretrains a network, then explores at `explore_lr`, collecting the
/// weights at the end of every exploration epoch.
pub fn swag_fit(cfg: &SwagConfig, data: &LabeledDataset, seed: u64) -> Result<SwagState> {
    if cfg.rank > cfg.explore_epochs {
        return Err(Error::invalid(format!(
            "SWAG rank {} exceeds {} exploration epochs",
            cfg.rank, cfg.explore_epochs
        )));
    }
    let spec = NetworkSpec::new(data.dim(), cfg.hidden.clone(), data.classes())?;
    let mut net = Mlp::init(spec.clone(), derive_seed(seed, 0))?;
    train_classifier(&mut net, data.features(), data.labels(), &cfg.pretrain, 0.0, derive_seed(seed, 1))?;

    let mut explore = cfg.pretrain.clone();
    explore.optimizer.learning_rate = cfg.explore_lr;
    if let Some(m) = cfg.explore_momentum {
        explore.optimizer.momentum = m;
    }
    explore.epochs = cfg.explore_epochs;
    explore.patience = None;
    let mut state = SwagState::new(spec, cfg.rank);
    let names = net.param_names();
    let (x, labels) = (data.features(), data.labels());
    fit_epochs(
        net.params_mut(),
        &names,
        labels.len(),
        &explore,
        &mut seeded(derive_seed(seed, 2)),
        "swag exploration",
        |tape, vars, batch, _| {
            let xb = tape.constant(x.select_rows(batch));
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let logits = Mlp::forward(tape, vars, xb, None)?;
            tape.cross_entropy(logits, &yb)
        },
        |_| Ok(()),
        |_, params| {
            state.collect(&flatten(params));
            Ok(())
        },
    )?;
    Ok(state)
}

/// A fitted SWAG posterior together with the draws used for prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Swag {
    pub state: SwagState,
    pub samples: usize,
    pub scale: f64,
}

impl Swag {
    pub fn fit(cfg: &SwagConfig, data: &LabeledDataset, seed: u64) -> Result<Self> {
        Ok(Self {
            state: swag_fit(cfg, data, seed)?,
            samples: cfg.samples,
            scale: cfg.scale,
        })
    }

    pub fn weights(&self, seed: u64) -> Result<WeightEnsemble> {
        WeightEnsemble::new(self.state.spec.clone(), self.state.sample(self.samples, self.scale, seed)?)
    }
}
