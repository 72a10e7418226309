//! Black-box transfer attacks through a proxy network, and the Gaussian
//! on/off-manifold perturbations used on the toy manifold.

mod manifold;
mod pgd;
mod proxy;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use manifold::{manifold_perturb, Direction, MANIFOLD_NOISE_STD};
pub use pgd::{calibrate_alpha, l2_pgd, project_l2, Calibration, PgdRun};
pub use proxy::{fit_proxy, fit_proxy_on_labels, ProxyConfig, ProxyModel, MIN_AGREEMENT};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::nn::accuracy;

/// How each PGD step turns the loss gradient into a displacement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepRule {
    /// `α · g / ‖g‖₂` per datum.
    #[default]
    Normalized,
    /// `α · g`, the unnormalised update.
    RawGradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AttackSpec {
    pub epsilon: f64,
    pub alpha: f64,
    pub iterations: usize,
    #[serde(default)]
    pub step: StepRule,
}

impl AttackSpec {
    pub fn new(epsilon: f64, alpha: f64, iterations: usize) -> Self {
        Self {
            epsilon,
            alpha,
            iterations,
            step: StepRule::Normalized,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("attack needs at least one iteration"));
        }
        Ok(())
    }
}

/// Perturbed inputs and per-datum bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversarialBatch {
    pub clean: Tensor,
    pub delta: Tensor,
    /// Labels the perturbation was crafted against: the target's clean
    /// predictions for PGD, the true labels for manifold noise.
    pub reference: Vec<usize>,
    pub norms: Vec<f64>,
    /// Proxy prediction on `clean + delta` differs from `reference`.
    pub proxy_fooled: Option<Vec<bool>>,
    /// Target prediction on `clean + delta` differs from the true label.
    pub target_fooled: Option<Vec<bool>>,
    /// Set when a non-finite gradient ended the attack early.
    pub stopped_early: bool,
}

impl AdversarialBatch {
    pub(crate) fn new(clean: Tensor, delta: Tensor, reference: Vec<usize>) -> Result<Self> {
        if clean.shape() != delta.shape() || clean.rows() != reference.len() {
            return Err(Error::shape("adversarial batch", &[clean.shape(), delta.shape()]));
        }
        let d = delta.cols();
        let norms = delta.data().chunks(d).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        Ok(Self {
            clean,
            delta,
            reference,
            norms,
            proxy_fooled: None,
            target_fooled: None,
            stopped_early: false,
        })
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    pub fn perturbed(&self) -> Tensor {
        let mut out = self.clean.clone();
        out.data_mut().iter_mut().zip(self.delta.data()).for_each(|(x, d)| *x += d);
        out
    }

    pub fn max_norm(&self) -> f64 {
        self.norms.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean_norm(&self) -> f64 {
        self.norms.iter().sum::<f64>() / self.norms.len().max(1) as f64
    }

    /// `x0..,d0..,l2,proxy_fooled,target_fooled`; absent flags are empty cells.
    pub fn to_csv(&self) -> String {
        let d = self.clean.cols();
        let mut out = String::new();
        let xs: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        let ds: Vec<String> = (0..d).map(|j| format!("d{j}")).collect();
        let _ = writeln!(out, "{},{},l2,proxy_fooled,target_fooled", xs.join(","), ds.join(","));
        let flag = |f: &Option<Vec<bool>>, i: usize| f.as_ref().map(|v| u8::from(v[i]).to_string()).unwrap_or_default();
        for i in 0..self.len() {
            for v in self.clean.row(i).iter().chain(self.delta.row(i)) {
                let _ = write!(out, "{v},");
            }
            let _ = writeln!(
                out,
                "{},{},{}",
                self.norms[i],
                flag(&self.proxy_fooled, i),
                flag(&self.target_fooled, i)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// One row of the robustness table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackMetrics {
    pub clean_accuracy: f64,
    pub adversarial_accuracy: f64,
    /// Proxy accuracy against the target's clean predictions on the
    /// adversarial inputs; absent for proxy-free perturbations.
    pub proxy_accuracy: Option<f64>,
    pub mean_l2: f64,
    pub points: usize,
}

/// Scores a batch from precomputed target predictions.
pub fn attack_metrics(
    batch: &AdversarialBatch,
    clean_pred: &[usize],
    adv_pred: &[usize],
    labels: &[usize],
) -> Result<AttackMetrics> {
    let n = batch.len();
    if clean_pred.len() != n || adv_pred.len() != n || labels.len() != n {
        return Err(Error::invalid(format!(
            "batch of {n} scored against {} clean / {} adversarial predictions and {} labels",
            clean_pred.len(),
            adv_pred.len(),
            labels.len()
        )));
    }
    let proxy_accuracy = batch
        .proxy_fooled
        .as_ref()
        .map(|f| f.iter().filter(|&&x| !x).count() as f64 / n.max(1) as f64);
    Ok(AttackMetrics {
        clean_accuracy: accuracy(clean_pred, labels),
        adversarial_accuracy: accuracy(adv_pred, labels),
        proxy_accuracy,
        mean_l2: batch.mean_norm(),
        points: n,
    })
}

/// Queries `target` on clean and perturbed inputs, records which data
/// fooled it, and scores the batch.
pub fn evaluate_attack(target: &Model, batch: &mut AdversarialBatch, labels: &[usize], seed: u64) -> Result<AttackMetrics> {
    if labels.len() != batch.len() {
        return Err(Error::invalid(format!("{} labels for a batch of {}", labels.len(), batch.len())));
    }
    let clean = target.predict(&batch.clean, seed)?;
    let adv = target.predict(&batch.perturbed(), seed)?;
    batch.target_fooled = Some(adv.iter().zip(labels).map(|(p, y)| p != y).collect());
    attack_metrics(batch, &clean, &adv, labels)
}
