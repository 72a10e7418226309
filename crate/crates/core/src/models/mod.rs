//! The six uncertainty-aware classifiers behind one prediction contract.
//!
//! Every [`Model`] yields a [`ProbEnsemble`]: weight-sampling models map each
//! sample through the network, MC Dropout runs stochastic passes, SNGP draws
//! posterior logits, and DUQ returns a single member.

mod dropout;
mod duq;
mod ensemble;
mod hmc;
mod sngp;
mod swag;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use dropout::{mc_dropout_predict, McDropout, McDropoutConfig};
pub use duq::{normalize_kernels, rbf, Duq, DuqConfig, DuqPrediction};
pub use ensemble::{train_deep_ensemble, train_member, EnsembleConfig, WeightEnsemble};
pub use hmc::{
    effective_sample_size, hmc_sample, hmc_sample_bnn, hmc_step, kinetic, leapfrog, BnnPotential, DualAveraging,
    GaussianTarget, HmcConfig, HmcRun, PotentialEnergy, Transition,
};
pub use sngp::{mean_field_scale, sample_logits, spectral_normalize, Sngp, SngpConfig, SngpMode, MEAN_FIELD_LAMBDA};
pub use swag::{swag_fit, Swag, SwagConfig, SwagState};

use crate::autodiff::{OptimizerConfig, Tensor};
use crate::data::{DatasetKind, LabeledDataset};
use crate::error::{Error, Result};
use crate::metrics::{epistemic_entropy, ModelKind, ProbEnsemble, UncertaintyReport};
use crate::nn::TrainConfig;
use crate::rng::derive_seed;

/// Hyperparameters for all six models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelsConfig {
    pub bnn: HmcConfig,
    pub deep_ensemble: EnsembleConfig,
    pub mc_dropout: McDropoutConfig,
    pub swag: SwagConfig,
    pub duq: DuqConfig,
    pub sngp: SngpConfig,
}

impl ModelsConfig {
    /// Defaults for a dataset. The 2-D datasets share one set of values.
    pub fn defaults(dataset: DatasetKind) -> Self {
        match dataset {
            DatasetKind::HalfMoons | DatasetKind::ToyManifold => Self::toy(),
            DatasetKind::Mnist => Self::mnist(),
        }
    }

    fn toy() -> Self {
        let h = vec![20, 20];
        Self {
            bnn: HmcConfig {
                chains: 1,
                warmup: 1000,
                samples: 50,
                thin: 10,
                initial_step_size: 1e-6,
                target_accept: 0.95,
                max_tree_depth: 5,
                prior_std: 1.0,
                hidden: h.clone(),
                init_train: None,
                max_points: None,
            },
            deep_ensemble: EnsembleConfig {
                members: 20,
                hidden: h.clone(),
                train: TrainConfig::new(OptimizerConfig::sgd(0.001, 0.9), 500, 8),
            },
            mc_dropout: McDropoutConfig {
                hidden: vec![128, 128],
                rate: 0.2,
                train: TrainConfig::new(OptimizerConfig::adam(1e-4).with_clip_norm(0.5), 650, 32).with_patience(50),
                passes: 100,
            },
            swag: SwagConfig {
                hidden: h.clone(),
                pretrain: TrainConfig::new(OptimizerConfig::sgd(0.001, 0.9), 600, 8),
                explore_epochs: 30,
                explore_lr: 0.033,
                explore_momentum: None,
                rank: 5,
                samples: 30,
                scale: 1.0,
            },
            duq: DuqConfig {
                hidden: h.clone(),
                embedding_dim: 10,
                length_scale: 0.1,
                momentum: 0.99,
                gradient_penalty: 0.0,
                train: TrainConfig::new(OptimizerConfig::adam(1e-4), 500, 32),
            },
            sngp: SngpConfig {
                hidden: h,
                norm_bound: 0.9,
                power_iterations: 1,
                features: 1024,
                kernel_scale: 1.0,
                dropout: 0.1,
                train: TrainConfig::new(OptimizerConfig::adam(1e-4), 750, 32).with_patience(50),
                samples: 10,
            },
        }
    }

    fn mnist() -> Self {
        let h = vec![128, 128];
        let sgd = |lr: f64| OptimizerConfig::sgd(lr, 0.9).with_weight_decay(1e-5);
        Self {
            bnn: HmcConfig {
                chains: 5,
                warmup: 50,
                samples: 50,
                thin: 1,
                initial_step_size: 1e-6,
                target_accept: 0.95,
                max_tree_depth: 3,
                prior_std: 1.0,
                hidden: h.clone(),
                init_train: Some(TrainConfig::new(OptimizerConfig::rmsprop(1e-3), 10, 64)),
                max_points: None,
            },
            deep_ensemble: EnsembleConfig {
                members: 30,
                hidden: h.clone(),
                train: TrainConfig::new(sgd(0.01), 10, 32),
            },
            mc_dropout: McDropoutConfig {
                hidden: h.clone(),
                rate: 0.1,
                train: TrainConfig::new(OptimizerConfig::adam(1e-3), 20, 256),
                passes: 100,
            },
            swag: SwagConfig {
                hidden: h.clone(),
                pretrain: TrainConfig::new(sgd(0.01), 5, 32),
                explore_epochs: 30,
                explore_lr: 0.1,
                explore_momentum: None,
                rank: 10,
                samples: 30,
                scale: 1.0,
            },
            duq: DuqConfig {
                hidden: h.clone(),
                embedding_dim: 32,
                length_scale: 0.1,
                momentum: 0.99,
                gradient_penalty: 0.0,
                train: TrainConfig::new(sgd(0.01), 10, 32),
            },
            sngp: SngpConfig {
                hidden: h,
                norm_bound: 1.0,
                power_iterations: 1,
                features: 1024,
                kernel_scale: 1.0,
                dropout: 0.0,
                train: TrainConfig::new(OptimizerConfig::sgd(0.01, 0.9), 30, 64),
                samples: 10,
            },
        }
    }
}

/// A trained model of any kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state", rename_all = "kebab-case")]
pub enum Model {
    Bnn(WeightEnsemble),
    DeepEnsemble(WeightEnsemble),
    McDropout(McDropout),
    Swag(Swag),
    Duq(Duq),
    Sngp(Sngp),
}

/// Trains one model kind on `data`.
pub fn train(kind: ModelKind, cfg: &ModelsConfig, data: &LabeledDataset, seed: u64) -> Result<Model> {
    let seed = derive_seed(seed, kind as u64);
    Ok(match kind {
        ModelKind::Bnn => Model::Bnn(hmc_sample_bnn(&cfg.bnn, data, seed)?.0),
        ModelKind::DeepEnsemble => Model::DeepEnsemble(train_deep_ensemble(&cfg.deep_ensemble, data, seed)?),
        ModelKind::McDropout => Model::McDropout(McDropout::train(&cfg.mc_dropout, data, seed)?),
        ModelKind::Swag => Model::Swag(Swag::fit(&cfg.swag, data, seed)?),
        ModelKind::Duq => Model::Duq(Duq::train(&cfg.duq, data, seed)?),
        ModelKind::Sngp => Model::Sngp(Sngp::train(&cfg.sngp, data, seed)?),
    })
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Bnn(_) => ModelKind::Bnn,
            Model::DeepEnsemble(_) => ModelKind::DeepEnsemble,
            Model::McDropout(_) => ModelKind::McDropout,
            Model::Swag(_) => ModelKind::Swag,
            Model::Duq(_) => ModelKind::Duq,
            Model::Sngp(_) => ModelKind::Sngp,
        }
    }

    /// Non-fatal training diagnostics.
    pub fn warnings(&self) -> &[String] {
        match self {
            Model::Duq(d) => &d.warnings,
            Model::Sngp(s) => &s.warnings,
            _ => &[],
        }
    }

    /// `M × N × C` probabilities; `seed` drives every stochastic component
    /// (dropout masks, SWAG draws, SNGP logit samples).
    pub fn predict_ensemble(&self, x: &Tensor, seed: u64) -> Result<ProbEnsemble> {
        match self {
            Model::Bnn(w) | Model::DeepEnsemble(w) => w.predict_ensemble(x),
            Model::McDropout(m) => m.predict_ensemble(x, seed),
            Model::Swag(s) => s.weights(seed)?.predict_ensemble(x),
            Model::Duq(d) => ProbEnsemble::from_members(&[d.predict(x)?.probs]),
            Model::Sngp(s) => s.predict_ensemble(x, seed),
        }
    }

    /// Point prediction probabilities: member average, the kernel-normalised
    /// probabilities for DUQ, and the mean-field approximation for SNGP.
    pub fn predict_proba(&self, x: &Tensor, seed: u64) -> Result<Tensor> {
        match self {
            Model::Duq(d) => Ok(d.predict(x)?.probs),
            Model::Sngp(s) => s.mean_field(x),
            _ => Ok(self.predict_ensemble(x, seed)?.mean()),
        }
    }

    pub fn predict(&self, x: &Tensor, seed: u64) -> Result<Vec<usize>> {
        Ok(self.predict_proba(x, seed)?.argmax_rows())
    }

    /// Per-datum uncertainty. DUQ reports its centroid distance instead of
    /// the entropy-based epistemic channels.
    pub fn report(&self, x: &Tensor, seed: u64) -> Result<UncertaintyReport> {
        match self {
            Model::Duq(d) => {
                let pred = d.predict(x)?;
                let ens = ProbEnsemble::from_members(&[pred.probs])?;
                Ok(UncertaintyReport {
                    model: ModelKind::Duq,
                    h_a: crate::metrics::aleatoric_entropy(&ens),
                    h_e: None,
                    kl_e: None,
                    distance: Some(pred.distance),
                })
            }
            _ => {
                let ens = self.predict_ensemble(x, seed)?;
                let mut r = UncertaintyReport::from_ensemble(self.kind(), &ens);
                if ens.members() == 1 {
                    r.h_e = Some(epistemic_entropy(&ens));
                }
                Ok(r)
            }
        }
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned JSON container for a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub tool_version: String,
    pub dataset: DatasetKind,
    pub seed: u64,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(dataset: DatasetKind, seed: u64, model: Model) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            dataset,
            seed,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_half_moons, Split};

    fn quick() -> ModelsConfig {
        let mut cfg = ModelsConfig::defaults(DatasetKind::HalfMoons);
        let fast = TrainConfig::new(OptimizerConfig::adam(0.01), 3, 32);
        cfg.bnn.warmup = 20;
        cfg.bnn.samples = 3;
        cfg.bnn.max_tree_depth = 2;
        cfg.deep_ensemble.members = 2;
        cfg.deep_ensemble.train = fast.clone();
        cfg.mc_dropout.train = fast.clone();
        cfg.mc_dropout.passes = 4;
        cfg.swag.pretrain = fast.clone();
        cfg.swag.explore_epochs = 3;
        cfg.swag.rank = 2;
        cfg.swag.samples = 3;
        cfg.duq.train = fast.clone();
        cfg.sngp.train = fast;
        cfg.sngp.features = 32;
        cfg.sngp.samples = 4;
        cfg
    }

    #[test]
    fn every_model_honours_the_contract_and_round_trips() {
        let data = make_half_moons(64, 0.1, 1, Split::Train).unwrap();
        let cfg = quick();
        let dir = tempfile::tempdir().unwrap();
        for kind in ModelKind::ALL {
            let model = train(kind, &cfg, &data, 7).unwrap();
            assert_eq!(model.kind(), kind);
            let ens = model.predict_ensemble(data.features(), 1).unwrap();
            let expected_m = match kind {
                ModelKind::Bnn => 3,
                ModelKind::DeepEnsemble => 2,
                ModelKind::McDropout => 4,
                ModelKind::Swag => 3,
                ModelKind::Duq => 1,
                ModelKind::Sngp => 4,
            };
            assert_eq!(ens.members(), expected_m, "{kind}");
            assert_eq!(ens, model.predict_ensemble(data.features(), 1).unwrap(), "{kind} determinism");
            let report = model.report(data.features(), 1).unwrap();
            assert_eq!(report.kl_e.is_some(), kind != ModelKind::Duq);
            assert_eq!(report.distance.is_some(), kind == ModelKind::Duq);

            let path = dir.path().join(format!("{kind}.json"));
            let ck = Checkpoint::new(DatasetKind::HalfMoons, 7, model);
            ck.save(&path).unwrap();
            assert_eq!(Checkpoint::load(&path).unwrap(), ck, "{kind} checkpoint");
        }
        assert!(matches!(
            Checkpoint::load(&dir.path().join("absent.json")),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn training_is_reproducible() {
        let data = make_half_moons(64, 0.1, 1, Split::Train).unwrap();
        let cfg = quick();
        for kind in [ModelKind::Bnn, ModelKind::Sngp] {
            assert_eq!(train(kind, &cfg, &data, 3).unwrap(), train(kind, &cfg, &data, 3).unwrap());
        }
    }
}
