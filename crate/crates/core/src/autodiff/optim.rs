//! First-order optimizers: SGD with momentum, Adam and RMSprop.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Rmsprop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Rescale the concatenated gradient to at most this L2 norm.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            momentum,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            momentum: 0.0,
            weight_decay: 0.0,
            clip_norm: None,
        }
    }

    pub fn rmsprop(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Rmsprop,
            ..Self::adam(learning_rate)
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    pub fn with_clip_norm(mut self, clip: f64) -> Self {
        self.clip_norm = Some(clip);
        self
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const RMS_RHO: f64 = 0.9;
const EPS: f64 = 1e-7;

/// Optimizer plus its per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    names: Vec<String>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &[(String, &Tensor)]) -> Result<Self> {
        if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and non-negative, got {}",
                config.learning_rate
            )));
        }
        if let Some(c) = config.clip_norm {
            if c <= 0.0 {
                return Err(Error::invalid("clip norm must be positive"));
            }
        }
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Ok(Self {
            config,
            names: params.iter().map(|(n, _)| n.clone()).collect(),
            first: zeros.clone(),
            second: zeros,
            steps: 0,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.first[i].len() || g.shape() != p.shape() {
                return Err(Error::shape("optimizer-step", &[p.shape(), g.shape()]));
            }
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(self.names[i].clone()));
            }
        }

        let scale = match self.config.clip_norm {
            Some(clip) => {
                let norm = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
                if norm > clip {
                    clip / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.steps += 1;
        let lr = self.config.learning_rate;
        let wd = self.config.weight_decay;
        let t = self.steps as i32;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let grad = gj * scale + wd * *w;
                match self.config.kind {
                    OptimizerKind::Sgd => {
                        if self.config.momentum > 0.0 {
                            m[j] = self.config.momentum * m[j] + grad;
                            *w -= lr * m[j];
                        } else {
                            *w -= lr * grad;
                        }
                    }
                    OptimizerKind::Adam => {
                        m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * grad;
                        v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * grad * grad;
                        let mh = m[j] / (1.0 - ADAM_BETA1.powi(t));
                        let vh = v[j] / (1.0 - ADAM_BETA2.powi(t));
                        *w -= lr * mh / (vh.sqrt() + EPS);
                    }
                    OptimizerKind::Rmsprop => {
                        v[j] = RMS_RHO * v[j] + (1.0 - RMS_RHO) * grad * grad;
                        *w -= lr * grad / (v[j].sqrt() + EPS);
                    }
                }
            }
        }
        Ok(())
    }
}
