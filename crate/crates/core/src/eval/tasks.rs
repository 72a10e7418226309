use serde::{Deserialize, Serialize};

use super::auroc;
use crate::attack::{
    calibrate_alpha, evaluate_attack, fit_proxy, l2_pgd, manifold_perturb, AdversarialBatch, AttackMetrics,
    AttackSpec, Direction, ProxyConfig,
};
use crate::data::{LabeledDataset, ManifoldMeta, OodSet};
use crate::error::{Error, Result};
use crate::metrics::Channel;
use crate::models::Model;
use crate::nn::accuracy;
use crate::rng::derive_seed;

/// Optional search for α that keeps the proxy fooled to a fixed degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct CalibrationSpec {
    /// Acceptable proxy accuracy range on adversarial inputs.
    pub band: [f64; 2],
    pub rounds: usize,
}

/// Result of attacking one trained model.
#[derive(Clone, Debug)]
pub struct RobustnessOutcome {
    pub metrics: AttackMetrics,
    /// The attack actually run (α may differ after calibration).
    pub spec: AttackSpec,
    pub agreement: f64,
    pub monotone_fraction: f64,
    pub batch: AdversarialBatch,
    pub warnings: Vec<String>,
}

/// Fits a proxy to the target on `train` inputs, attacks the `test` inputs
/// with L2-PGD against the target's own predictions, and scores the target.
pub fn run_robustness(
    model: &Model,
    train: &LabeledDataset,
    test: &LabeledDataset,
    spec: &AttackSpec,
    proxy_cfg: &ProxyConfig,
    calibration: Option<&CalibrationSpec>,
    seed: u64,
) -> Result<RobustnessOutcome> {
    let proxy = fit_proxy(model, train.features(), test.features(), test.classes(), proxy_cfg, derive_seed(seed, 0))?;
    let predict_seed = derive_seed(seed, 1);
    let reference = model.predict(test.features(), predict_seed)?;
    let (spec, run) = match calibration {
        Some(c) => {
            let cal = calibrate_alpha(&proxy, test.features(), &reference, spec, (c.band[0], c.band[1]), c.rounds)?;
            (cal.spec, cal.run)
        }
        None => (spec.clone(), l2_pgd(&proxy, test.features(), &reference, spec)?),
    };
    let mut batch = run.batch.clone();
    let metrics = evaluate_attack(model, &mut batch, test.labels(), predict_seed)?;
    let mut warnings = proxy.warnings.clone();
    if batch.stopped_early {
        warnings.push("PGD stopped early on a non-finite gradient".into());
    }
    Ok(RobustnessOutcome {
        metrics,
        spec,
        agreement: proxy.agreement,
        monotone_fraction: run.monotone_fraction(),
        batch,
        warnings,
    })
}

/// Accuracy under manifold noise at each strength, averaged over `repeats`
/// independent draws.
pub fn run_manifold_sweep(
    model: &Model,
    data: &LabeledDataset,
    meta: &ManifoldMeta,
    epsilons: &[f64],
    direction: Direction,
    repeats: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if epsilons.is_empty() {
        return Err(Error::invalid("manifold sweep needs at least one strength"));
    }
    if repeats == 0 {
        return Err(Error::invalid("manifold sweep needs at least one repeat"));
    }
    epsilons
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let mut total = 0.0;
            for r in 0..repeats {
                let s = derive_seed(seed, (k * repeats + r) as u64);
                let batch = manifold_perturb(data, meta, eps, direction, s)?;
                total += accuracy(&model.predict(&batch.perturbed(), s)?, data.labels());
            }
            Ok((eps, total / repeats as f64))
        })
        .collect()
}

/// AUROC of every available channel, OoD points counted as positives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodAuroc {
    pub channels: Vec<(Channel, f64)>,
    /// AUROC of the model's epistemic score (centroid distance for DUQ,
    /// epistemic entropy otherwise).
    pub epistemic: f64,
}

impl OodAuroc {
    pub fn get(&self, channel: Channel) -> Option<f64> {
        self.channels.iter().find(|(c, _)| *c == channel).map(|&(_, v)| v)
    }

    /// Channel-wise mean; `None` for an empty slice.
    pub fn mean(all: &[OodAuroc]) -> Option<Self> {
        let n = all.len() as f64;
        let channels = all
            .first()?
            .channels
            .iter()
            .map(|&(c, _)| (c, all.iter().filter_map(|a| a.get(c)).sum::<f64>() / n))
            .collect();
        Some(Self {
            channels,
            epistemic: all.iter().map(|a| a.epistemic).sum::<f64>() / n,
        })
    }
}

pub fn ood_detection(model: &Model, in_dist: &LabeledDataset, ood: &OodSet, seed: u64) -> Result<OodAuroc> {
    if ood.is_empty() {
        return Err(Error::invalid("OoD set is empty"));
    }
    let inside = model.report(in_dist.features(), seed)?;
    let outside = model.report(&ood.features, seed)?;
    let channels = inside
        .available_channels()
        .into_iter()
        .map(|c| Ok((c, auroc(inside.channel(c).unwrap(), outside.channel(c).unwrap())?)))
        .collect::<Result<_>>()?;
    Ok(OodAuroc {
        channels,
        epistemic: auroc(inside.epistemic_score(), outside.epistemic_score())?,
    })
}
