use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::ProbEnsemble;
use crate::nn::{train_classifier, Mlp, NetworkSpec, TrainConfig};
use crate::rng::derive_seed;

/// A list of flat weight vectors for one architecture: deep-ensemble
/// members, posterior draws or SWAG samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEnsemble {
    pub spec: NetworkSpec,
    pub samples: Vec<Vec<f64>>,
}

impl WeightEnsemble {
    pub fn new(spec: NetworkSpec, samples: Vec<Vec<f64>>) -> Result<Self> {
        let n = spec.param_count();
        for (m, s) in samples.iter().enumerate() {
            if s.len() != n {
                return Err(Error::invalid(format!("sample {m} has {} weights, expected {n}", s.len())));
            }
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("sample {m} has non-finite weights")));
            }
        }
        Ok(Self { spec, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn member(&self, m: usize) -> Result<Mlp> {
        Mlp::from_flat(self.spec.clone(), &self.samples[m])
    }

    /// Maps every sample through the network. Members are evaluated in
    /// parallel; the result does not depend on the thread count.
    pub fn predict_ensemble(&self, x: &Tensor) -> Result<ProbEnsemble> {
        if self.samples.is_empty() {
            return Err(Error::Untrained("weight ensemble has no samples"));
        }
        let members: Vec<Tensor> = (0..self.samples.len())
            .into_par_iter()
            .map(|m| self.member(m)?.predict_proba(x))
            .collect::<Result<_>>()?;
        ProbEnsemble::from_members(&members)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

/// One independently initialised and trained member.
pub fn train_member(spec: &NetworkSpec, data: &LabeledDataset, train: &TrainConfig, seed: u64) -> Result<Vec<f64>> {
    let mut net = Mlp::init(spec.clone(), derive_seed(seed, 0))?;
    train_classifier(&mut net, data.features(), data.labels(), train, 0.0, derive_seed(seed, 1))?;
    Ok(net.to_flat())
}

/// Trains `members` networks from independent seeded streams. Members share
/// nothing, so they train in parallel.
pub fn train_deep_ensemble(cfg: &EnsembleConfig, data: &LabeledDataset, seed: u64) -> Result<WeightEnsemble> {
    if cfg.members == 0 {
        return Err(Error::invalid("a deep ensemble needs at least one member"));
    }
    let spec = NetworkSpec::new(data.dim(), cfg.hidden.clone(), data.classes())?;
    let samples: Vec<Vec<f64>> = (0..cfg.members)
        .into_par_iter()
        .map(|m| {
            train_member(&spec, data, &cfg.train, derive_seed(seed, m as u64)).map_err(|e| match e {
                Error::Diverged { context } => Error::Diverged {
                    context: format!("deep-ensemble member {m}: {context}"),
                },
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    WeightEnsemble::new(spec, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::OptimizerConfig;
    use crate::data::{make_half_moons, Split};
    use crate::metrics::kl_uncertainty;

    fn cfg(members: usize) -> EnsembleConfig {
        EnsembleConfig {
            members,
            hidden: vec![8],
            train: TrainConfig::new(OptimizerConfig::adam(0.01), 5, 32),
        }
    }

    #[test]
    fn same_seed_members_are_identical() {
        let data = make_half_moons(64, 0.1, 0, Split::Train).unwrap();
        let spec = NetworkSpec::new(2, vec![8], 2).unwrap();
        let a = train_member(&spec, &data, &cfg(1).train, 9).unwrap();
        let b = train_member(&spec, &data, &cfg(1).train, 9).unwrap();
        let ens = WeightEnsemble::new(spec, vec![a, b]).unwrap();
        let p = ens.predict_ensemble(data.features()).unwrap();
        assert!(kl_uncertainty(&p).unwrap().iter().all(|&k| k == 0.0));
    }

    #[test]
    fn members_differ_and_shape_follows_count() {
        let data = make_half_moons(64, 0.1, 0, Split::Train).unwrap();
        let ens = train_deep_ensemble(&cfg(3), &data, 4).unwrap();
        assert_ne!(ens.samples[0], ens.samples[1]);
        let p = ens.predict_ensemble(data.features()).unwrap();
        assert_eq!((p.members(), p.points(), p.classes()), (3, 64, 2));
        let single = train_deep_ensemble(&cfg(1), &data, 4).unwrap();
        assert_eq!(single.predict_ensemble(data.features()).unwrap().members(), 1);
    }
}
