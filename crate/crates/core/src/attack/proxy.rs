use serde::{Deserialize, Serialize};

use crate::autodiff::{OptimizerConfig, Tensor};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::nn::{accuracy, train_classifier, Mlp, NetworkSpec, TrainConfig};
use crate::rng::derive_seed;

/// Agreement below this marks the attack as suspect.
pub const MIN_AGREEMENT: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ProxyConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl ProxyConfig {
    pub fn new(hidden: Vec<usize>, epochs: usize) -> Self {
        Self {
            hidden,
            train: TrainConfig::new(OptimizerConfig::adam(1e-3), epochs, 32),
        }
    }
}

/// A deterministic imitator of a target's hard predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyModel {
    pub net: Mlp,
    /// Fraction of held-out inputs on which proxy and target agree.
    pub agreement: f64,
    pub warnings: Vec<String>,
}

/// Trains a proxy on `(inputs, targets)` and scores agreement on the
/// held-out pair.
pub fn fit_proxy_on_labels(
    inputs: &Tensor,
    targets: &[usize],
    classes: usize,
    holdout: (&Tensor, &[usize]),
    cfg: &ProxyConfig,
    seed: u64,
) -> Result<ProxyModel> {
    if inputs.rows() != targets.len() || holdout.0.rows() != holdout.1.len() {
        return Err(Error::invalid("proxy inputs and target labels differ in length"));
    }
    let spec = NetworkSpec::new(inputs.cols(), cfg.hidden.clone(), classes)?;
    let mut net = Mlp::init(spec, derive_seed(seed, 0))?;
    train_classifier(&mut net, inputs, targets, &cfg.train, 0.0, derive_seed(seed, 1))?;
    let agreement = accuracy(&net.predict_proba(holdout.0)?.argmax_rows(), holdout.1);
    let mut warnings = Vec::new();
    if agreement < MIN_AGREEMENT {
        warnings.push(format!(
            "proxy agrees with the target on only {:.1}% of held-out inputs; attack quality is suspect",
            100.0 * agreement
        ));
    }
    Ok(ProxyModel { net, agreement, warnings })
}

/// Queries `target` for hard labels on `fit_set` and `holdout`, then imitates them.
pub fn fit_proxy(
    target: &Model,
    fit_set: &Tensor,
    holdout: &Tensor,
    classes: usize,
    cfg: &ProxyConfig,
    seed: u64,
) -> Result<ProxyModel> {
    let query_seed = derive_seed(seed, 2);
    let fit_labels = target.predict(fit_set, query_seed)?;
    let hold_labels = target.predict(holdout, query_seed)?;
    fit_proxy_on_labels(fit_set, &fit_labels, classes, (holdout, &hold_labels), cfg, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_half_moons, Split};

    #[test]
    fn linearly_separable_labels_are_imitated() {
        let data = make_half_moons(400, 0.1, 3, Split::Train).unwrap();
        // a linear rule the proxy must recover
        let lab: Vec<usize> = (0..data.len()).map(|i| usize::from(data.features().get(i, 0) > 0.5)).collect();
        let hold = make_half_moons(200, 0.1, 4, Split::Test).unwrap();
        let hold_lab: Vec<usize> = (0..hold.len()).map(|i| usize::from(hold.features().get(i, 0) > 0.5)).collect();
        let cfg = ProxyConfig::new(vec![16], 300);
        let p = fit_proxy_on_labels(data.features(), &lab, 2, (hold.features(), &hold_lab), &cfg, 1).unwrap();
        assert!(p.agreement >= 0.99, "{}", p.agreement);
        assert!(p.warnings.is_empty());
    }

    #[test]
    fn disagreement_triggers_warning() {
        let data = make_half_moons(100, 0.1, 3, Split::Train).unwrap();
        // the proxy can only learn "always 0"; the held-out target says 1
        let cfg = ProxyConfig::new(vec![4], 20);
        let p = fit_proxy_on_labels(data.features(), &[0; 100], 2, (data.features(), &[1; 100]), &cfg, 1).unwrap();
        assert_eq!(p.agreement, 0.0);
        assert_eq!(p.warnings.len(), 1);
        assert!(fit_proxy_on_labels(data.features(), &[0; 5], 2, (data.features(), &[1; 100]), &cfg, 1).is_err());
    }
}
