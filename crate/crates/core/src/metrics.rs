//! Aleatoric entropy, epistemic entropy and pairwise-KL disagreement over an
//! ensemble of predictive distributions. All logarithms are natural.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Probabilities are clamped to this inside KL logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// `M × N × C` class probabilities: one row per (member, datum).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbEnsemble {
    members: usize,
    points: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl ProbEnsemble {
    /// Validates that every row is a distribution (entries in `[0, 1]`, sum
    /// within `1e-9` of one).
    pub fn new(members: usize, points: usize, classes: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != members * points * classes || classes == 0 {
            return Err(Error::shape("prob-ensemble", &[&[members, points, classes], &[probs.len()]]));
        }
        for (r, row) in probs.chunks(classes).enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "row {r} (member {}, datum {}) is not a distribution: {row:?}",
                    r / points.max(1),
                    r % points.max(1)
                )));
            }
        }
        Ok(Self {
            members,
            points,
            classes,
            probs,
        })
    }

    /// Stacks per-member `N × C` probability matrices.
    pub fn from_members(members: &[Tensor]) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::invalid("an ensemble needs at least one member"));
        };
        let (n, c) = first.dims2();
        let mut probs = Vec::with_capacity(members.len() * n * c);
        for m in members {
            if m.dims2() != (n, c) {
                return Err(Error::shape("prob-ensemble", &[first.shape(), m.shape()]));
            }
            probs.extend_from_slice(m.data());
        }
        Self::new(members.len(), n, c, probs)
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, member: usize, point: usize) -> &[f64] {
        let start = (member * self.points + point) * self.classes;
        &self.probs[start..start + self.classes]
    }

    /// `N × C` member-averaged probabilities.
    pub fn mean(&self) -> Tensor {
        let mut out = vec![0.0; self.points * self.classes];
        let w = 1.0 / self.members as f64;
        for m in 0..self.members {
            for n in 0..self.points {
                for (o, p) in out[n * self.classes..].iter_mut().zip(self.row(m, n)) {
                    *o += w * p;
                }
            }
        }
        Tensor::matrix(self.points, self.classes, out).expect("shape is consistent")
    }

    /// Argmax of the member-averaged probabilities.
    pub fn predict(&self) -> Vec<usize> {
        self.mean().argmax_rows()
    }

    pub fn member(&self, m: usize) -> Tensor {
        let start = m * self.points * self.classes;
        let data = self.probs[start..start + self.points * self.classes].to_vec();
        Tensor::matrix(self.points, self.classes, data).expect("shape is consistent")
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let a = a.max(LOG_FLOOR);
            a * (a.ln() - b.max(LOG_FLOOR).ln())
        })
        .sum::<f64>()
        .max(0.0)
}

/// Member-averaged entropy per datum.
pub fn aleatoric_entropy(ens: &ProbEnsemble) -> Vec<f64> {
    (0..ens.points)
        .map(|n| (0..ens.members).map(|m| entropy(ens.row(m, n))).sum::<f64>() / ens.members as f64)
        .collect()
}

/// Entropy of the member-averaged distribution per datum.
pub fn epistemic_entropy(ens: &ProbEnsemble) -> Vec<f64> {
    let mean = ens.mean();
    (0..ens.points).map(|n| entropy(mean.row(n))).collect()
}

/// Mean KL divergence over all `M (M - 1)` ordered member pairs.
pub fn kl_uncertainty(ens: &ProbEnsemble) -> Result<Vec<f64>> {
    let m = ens.members;
    if m < 2 {
        return Err(Error::UndefinedForSinglePass("KL uncertainty needs at least two members"));
    }
    let pairs = (m * (m - 1)) as f64;
    Ok((0..ens.points)
        .map(|n| {
            let mut total = 0.0;
            for i in 0..m {
                for j in 0..m {
                    if i != j {
                        total += kl(ens.row(i, n), ens.row(j, n));
                    }
                }
            }
            total / pairs
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Bnn,
    DeepEnsemble,
    McDropout,
    Swag,
    Duq,
    Sngp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Bnn,
        ModelKind::DeepEnsemble,
        ModelKind::McDropout,
        ModelKind::Swag,
        ModelKind::Duq,
        ModelKind::Sngp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Bnn => "bnn",
            ModelKind::DeepEnsemble => "deep-ensemble",
            ModelKind::McDropout => "mc-dropout",
            ModelKind::Swag => "swag",
            ModelKind::Duq => "duq",
            ModelKind::Sngp => "sngp",
        }
    }

    /// Deterministic distance-aware models that produce uncertainty in one
    /// forward pass.
    pub fn is_single_pass(self) -> bool {
        matches!(self, ModelKind::Duq | ModelKind::Sngp)
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s || (s == "de" && *k == ModelKind::DeepEnsemble))
            .ok_or_else(|| Error::invalid(format!("unknown model `{s}`")))
    }
}

/// Uncertainty channels a score can be drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Channel {
    Aleatoric,
    Epistemic,
    Kl,
    /// Distance to the assigned centroid (DUQ only).
    Distance,
}

impl Channel {
    pub fn name(self) -> &'static str {
        match self {
            Channel::Aleatoric => "H_a",
            Channel::Epistemic => "H_e",
            Channel::Kl => "KL_e",
            Channel::Distance => "distance",
        }
    }
}

/// Per-datum uncertainty channels. Undefined channels are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub model: ModelKind,
    pub h_a: Vec<f64>,
    pub h_e: Option<Vec<f64>>,
    pub kl_e: Option<Vec<f64>>,
    pub distance: Option<Vec<f64>>,
}

impl UncertaintyReport {
    /// All three ensemble metrics; KL is omitted for a single member.
    pub fn from_ensemble(model: ModelKind, ens: &ProbEnsemble) -> Self {
        Self {
            model,
            h_a: aleatoric_entropy(ens),
            h_e: Some(epistemic_entropy(ens)),
            kl_e: kl_uncertainty(ens).ok(),
            distance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.h_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h_a.is_empty()
    }

    pub fn channel(&self, channel: Channel) -> Option<&[f64]> {
        match channel {
            Channel::Aleatoric => Some(&self.h_a),
            Channel::Epistemic => self.h_e.as_deref(),
            Channel::Kl => self.kl_e.as_deref(),
            Channel::Distance => self.distance.as_deref(),
        }
    }

    /// The epistemic score: centroid distance where there is one, otherwise
    /// the epistemic entropy.
    pub fn epistemic_score(&self) -> &[f64] {
        self.distance
            .as_deref()
            .or(self.h_e.as_deref())
            .unwrap_or(&self.h_a)
    }

    pub fn available_channels(&self) -> Vec<Channel> {
        [Channel::Aleatoric, Channel::Epistemic, Channel::Kl, Channel::Distance]
            .into_iter()
            .filter(|&c| self.channel(c).is_some())
            .collect()
    }

    /// `index,H_a,H_e,KL_e,extra` with empty cells for missing channels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,H_a,H_e,KL_e,extra\n");
        let cell = |v: Option<&Vec<f64>>, i: usize| v.map(|v| v[i].to_string()).unwrap_or_default();
        for i in 0..self.len() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{}",
                self.h_a[i],
                cell(self.h_e.as_ref(), i),
                cell(self.kl_e.as_ref(), i),
                cell(self.distance.as_ref(), i)
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ens(rows: &[&[f64]]) -> ProbEnsemble {
        let c = rows[0].len();
        ProbEnsemble::new(rows.len(), 1, c, rows.concat()).unwrap()
    }

    #[test]
    fn aleatoric_examples() {
        assert_abs_diff_eq!(aleatoric_entropy(&ens(&[&[0.5, 0.5]]))[0], 2f64.ln(), epsilon = 1e-15);
        assert_eq!(aleatoric_entropy(&ens(&[&[1.0, 0.0], &[0.0, 1.0]]))[0], 0.0);
        let h = |p: f64| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        let got = aleatoric_entropy(&ens(&[&[0.9, 0.1], &[0.6, 0.4]]))[0];
        assert_abs_diff_eq!(got, (h(0.9) + h(0.6)) / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 0.4990, epsilon = 1e-4);
    }

    #[test]
    fn epistemic_examples() {
        assert_abs_diff_eq!(epistemic_entropy(&ens(&[&[1.0, 0.0], &[0.0, 1.0]]))[0], 2f64.ln(), epsilon = 1e-15);
        let same = ens(&[&[0.8, 0.2], &[0.8, 0.2]]);
        assert_abs_diff_eq!(epistemic_entropy(&same)[0], 0.5004, epsilon = 1e-4);
        assert_abs_diff_eq!(epistemic_entropy(&same)[0], aleatoric_entropy(&same)[0], epsilon = 1e-15);
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_uncertainty(&ens(&[&[0.3, 0.7], &[0.3, 0.7]])).unwrap()[0], 0.0);
        let got = kl_uncertainty(&ens(&[&[0.9, 0.1], &[0.1, 0.9]])).unwrap()[0];
        assert_abs_diff_eq!(got, 0.8 * 9f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(got, 1.7578, epsilon = 1e-4);

        let (p, q) = ([0.7, 0.2, 0.1], [0.2, 0.5, 0.3]);
        let three = ens(&[&p, &p, &q]);
        let expected = 4.0 / 6.0 * (kl(&p, &q) + kl(&q, &p)) / 2.0;
        assert_abs_diff_eq!(kl_uncertainty(&three).unwrap()[0], expected, epsilon = 1e-12);

        assert!(matches!(
            kl_uncertainty(&ens(&[&[0.5, 0.5]])),
            Err(Error::UndefinedForSinglePass(_))
        ));
    }

    #[test]
    fn kl_zero_only_for_identical_members() {
        let close = ens(&[&[0.5, 0.5], &[0.5 + 1e-3, 0.5 - 1e-3]]);
        assert!(kl_uncertainty(&close).unwrap()[0] > 0.0);
        let same = ens(&[&[0.25, 0.75], &[0.25, 0.75], &[0.25, 0.75]]);
        assert!(kl_uncertainty(&same).unwrap()[0].abs() < 1e-12);
    }

    #[test]
    fn rejects_non_distributions() {
        assert!(ProbEnsemble::new(1, 1, 2, vec![0.6, 0.6]).is_err());
        assert!(ProbEnsemble::new(1, 1, 2, vec![1.5, -0.5]).is_err());
        assert!(ProbEnsemble::new(1, 2, 2, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn report_csv_leaves_missing_cells_empty() {
        let r = UncertaintyReport {
            model: ModelKind::Duq,
            h_a: vec![0.5],
            h_e: None,
            kl_e: None,
            distance: Some(vec![2.0]),
        };
        assert_eq!(r.to_csv(), "index,H_a,H_e,KL_e,extra\n0,0.5,,,2\n");
        assert_eq!(r.epistemic_score(), &[2.0]);
        let single = UncertaintyReport::from_ensemble(ModelKind::DeepEnsemble, &ens(&[&[0.5, 0.5]]));
        assert!(single.kl_e.is_none());
    }

    #[test]
    fn model_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("bayes".parse::<ModelKind>().is_err());
    }

    fn dist(c: usize) -> impl Strategy<Value = Vec<f64>> {
        // exponential spacings give a Dirichlet(1, …, 1) draw; occasional
        // zeros exercise the 0·log 0 convention
        prop::collection::vec(prop_oneof![9 => 1e-6f64..10.0, 1 => Just(0.0)], c).prop_map(|mut v| {
            if v.iter().all(|&x| x == 0.0) {
                v[0] = 1.0;
            }
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        })
    }

    fn ensemble() -> impl Strategy<Value = ProbEnsemble> {
        (1usize..6, 2usize..5, 1usize..4).prop_flat_map(|(m, c, n)| {
            prop::collection::vec(dist(c), m * n).prop_map(move |rows| ProbEnsemble::new(m, n, c, rows.concat()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn entropy_ordering(e in ensemble()) {
            let ha = aleatoric_entropy(&e);
            let he = epistemic_entropy(&e);
            let ln_c = (e.classes() as f64).ln();
            for (a, b) in ha.iter().zip(&he) {
                prop_assert!(*a >= -1e-9 && a <= &(b + 1e-9) && *b <= ln_c + 1e-9);
            }
            if let Ok(k) = kl_uncertainty(&e) {
                prop_assert!(k.iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn member_permutation_invariance(e in ensemble(), rot in 0usize..5) {
            let m = e.members();
            let members: Vec<Tensor> = (0..m).map(|i| e.member((i + rot) % m)).collect();
            let p = ProbEnsemble::from_members(&members).unwrap();
            for (a, b) in aleatoric_entropy(&e).iter().zip(aleatoric_entropy(&p)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in epistemic_entropy(&e).iter().zip(epistemic_entropy(&p)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            if let (Ok(a), Ok(b)) = (kl_uncertainty(&e), kl_uncertainty(&p)) {
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
