use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::ProbEnsemble;
use crate::nn::{softmax_rows, train_classifier, DropoutCtx, Mlp, NetworkSpec, TrainConfig};
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct McDropoutConfig {
    pub hidden: Vec<usize>,
    pub rate: f64,
    pub train: TrainConfig,
    /// Stochastic forward passes at inference.
    pub passes: usize,
}

/// A network trained with dropout that keeps dropout on at inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McDropout {
    pub net: Mlp,
    pub rate: f64,
    pub passes: usize,
}

impl McDropout {
    pub fn train(cfg: &McDropoutConfig, data: &LabeledDataset, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.rate) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", cfg.rate)));
        }
        let spec = NetworkSpec::new(data.dim(), cfg.hidden.clone(), data.classes())?;
        let mut net = Mlp::init(spec, derive_seed(seed, 0))?;
        train_classifier(&mut net, data.features(), data.labels(), &cfg.train, cfg.rate, derive_seed(seed, 1))?;
        Ok(Self {
            net,
            rate: cfg.rate,
            passes: cfg.passes,
        })
    }

    /// `passes` dropout-enabled forward passes, one ensemble member each.
    pub fn predict_ensemble(&self, x: &Tensor, seed: u64) -> Result<ProbEnsemble> {
        mc_dropout_predict(&self.net, x, self.passes, self.rate, seed)
    }
}

pub fn mc_dropout_predict(net: &Mlp, x: &Tensor, passes: usize, rate: f64, seed: u64) -> Result<ProbEnsemble> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if passes == 0 {
        return Err(Error::invalid("MC dropout needs at least one pass"));
    }
    let mut rng = seeded(seed);
    let members: Vec<Tensor> = (0..passes)
        .map(|_| {
            let mut ctx = DropoutCtx { rate, rng: &mut rng };
            Ok(softmax_rows(&net.logits_with(x, Some(&mut ctx))?))
        })
        .collect::<Result<_>>()?;
    ProbEnsemble::from_members(&members)
}
