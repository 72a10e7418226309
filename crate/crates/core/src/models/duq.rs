//! Deterministic uncertainty quantification: an RBF kernel between a learned
//! embedding and one centroid per class.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{fit, Mlp, NetworkSpec, TrainConfig};
use crate::rng::{derive_seed, seeded};

/// Log-kernel values are floored at `ln(1e-12)` before normalisation.
const KERNEL_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DuqConfig {
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    /// Kernel length scale σ.
    pub length_scale: f64,
    /// Centroid EMA momentum γ.
    pub momentum: f64,
    /// Coefficient of the two-sided penalty `(‖∇ₓ Σ_c K_c‖ − 1)²`; 0 disables.
    #[serde(default)]
    pub gradient_penalty: f64,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Duq {
    pub net: Mlp,
    /// `C × E` class centroids.
    pub centroids: Tensor,
    pub length_scale: f64,
    pub warnings: Vec<String>,
}

/// Kernel values, assigned-centroid distance and normalised probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct DuqPrediction {
    pub kernels: Tensor,
    pub distance: Vec<f64>,
    pub probs: Tensor,
}

/// `K = exp(−d² / (2σ²))`.
pub fn rbf(sq_distance: f64, length_scale: f64) -> f64 {
    (-sq_distance / (2.0 * length_scale * length_scale)).exp()
}

/// `softmax(log k)` with the log argument clamped at `1e-12`; equals `k / Σk`
/// whenever no kernel underflows.
pub fn normalize_kernels(kernels: &[f64]) -> Vec<f64> {
    let logs: Vec<f64> = kernels.iter().map(|k| k.max(KERNEL_FLOOR).ln()).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        t.row_mut(i)[l] = 1.0;
    }
    t
}

/// Forward pass that also returns the ReLU masks of every hidden layer.
fn forward_with_masks(tape: &mut Tape, vars: &[Var], x: Var) -> Result<(Var, Vec<Tensor>)> {
    let layers = vars.len() / 2;
    let mut h = x;
    let mut masks = Vec::with_capacity(layers.saturating_sub(1));
    for l in 0..layers {
        let z = tape.matmul(h, vars[2 * l])?;
        let z = tape.add(z, vars[2 * l + 1])?;
        if l + 1 < layers {
            masks.push(tape.value(z)?.map(|v| if v > 0.0 { 1.0 } else { 0.0 }));
            h = tape.relu(z)?;
        } else {
            h = z;
        }
    }
    Ok((h, masks))
}

/// Row-wise squared distances between embeddings `f` and constant centroids.
fn sq_distances(tape: &mut Tape, f: Var, centroids: &Tensor) -> Result<Var> {
    let (c, _) = centroids.dims2();
    let et = tape.constant(centroids.transpose());
    let norms: Vec<f64> = (0..c).map(|i| centroids.row(i).iter().map(|v| v * v).sum()).collect();
    let ee = tape.constant(Tensor::matrix(1, c, norms)?);
    let f2 = tape.square(f)?;
    let ff = tape.sum_axis(f2, Axis::Cols)?;
    let fe = tape.matmul(f, et)?;
    let fe2 = tape.scale(fe, -2.0)?;
    let d = tape.add(fe2, ff)?;
    let d = tape.add(d, ee)?;
    tape.clamp(d, 0.0, f64::INFINITY)
}

impl Duq {
    pub fn train(cfg: &DuqConfig, data: &LabeledDataset, seed: u64) -> Result<Self> {
        if !(cfg.length_scale > 0.0) {
            return Err(Error::invalid("DUQ length scale must be positive"));
        }
        if !(0.0..1.0).contains(&cfg.momentum) {
            return Err(Error::invalid("centroid momentum must lie in [0, 1)"));
        }
        let classes = data.classes();
        let spec = NetworkSpec::new(data.dim(), cfg.hidden.clone(), cfg.embedding_dim)?;
        let mut net = Mlp::init(spec, derive_seed(seed, 0))?;
        let (x, labels) = (data.features(), data.labels());
        let mut centroids = class_means(&net.logits(x)?, labels, classes, None);
        let targets = one_hot(labels, classes);
        let sigma2 = cfg.length_scale * cfg.length_scale;
        let gamma = cfg.momentum;
        let names = net.param_names();

        fit(
            net.params_mut(),
            &names,
            labels.len(),
            &cfg.train,
            &mut seeded(derive_seed(seed, 1)),
            "duq",
            |tape, vars, batch, _| {
                let xb = tape.constant(x.select_rows(batch));
                let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let (f, masks) = forward_with_masks(tape, vars, xb)?;
                let d = sq_distances(tape, f, &centroids)?;
                let logk = tape.scale(d, -0.5 / sigma2)?;
                let k = tape.exp(logk)?;
                let y = tape.constant(targets.select_rows(batch));
                let not_y = tape.constant(targets.select_rows(batch).map(|v| 1.0 - v));
                let one_minus_k = tape.neg(k)?;
                let one_minus_k = tape.offset(one_minus_k, 1.0)?;
                let one_minus_k = tape.clamp(one_minus_k, KERNEL_FLOOR, 1.0)?;
                let log_neg = tape.log(one_minus_k)?;
                let pos = tape.mul(y, logk)?;
                let neg = tape.mul(not_y, log_neg)?;
                let ll = tape.add(pos, neg)?;
                let ll = tape.mean(ll)?;
                let mut loss = tape.neg(ll)?;

                if cfg.gradient_penalty > 0.0 {
                    let pen = gradient_penalty(tape, vars, f, k, &masks, &centroids, sigma2)?;
                    let pen = tape.scale(pen, cfg.gradient_penalty)?;
                    loss = tape.add(loss, pen)?;
                }

                let emb = tape.value(f)?.clone();
                centroids = class_means(&emb, &yb, classes, Some((&centroids, gamma)));
                Ok(loss)
            },
            |_| Ok(()),
        )?;

        let mut warnings = Vec::new();
        for a in 0..classes {
            for b in a + 1..classes {
                let d: f64 = centroids
                    .row(a)
                    .iter()
                    .zip(centroids.row(b))
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if d < 1e-6 {
                    warnings.push(format!("centroids {a} and {b} collapsed (distance {d:.3e})"));
                }
            }
        }
        Ok(Self {
            net,
            centroids,
            length_scale: cfg.length_scale,
            warnings,
        })
    }

    pub fn predict(&self, x: &Tensor) -> Result<DuqPrediction> {
        let emb = self.net.logits(x)?;
        let (n, c) = (emb.rows(), self.centroids.rows());
        let mut kernels = Tensor::zeros(&[n, c]);
        let mut probs = Tensor::zeros(&[n, c]);
        let mut distance = Vec::with_capacity(n);
        for i in 0..n {
            let sq: Vec<f64> = (0..c)
                .map(|k| emb.row(i).iter().zip(self.centroids.row(k)).map(|(a, b)| (a - b).powi(2)).sum())
                .collect();
            let kr: Vec<f64> = sq.iter().map(|&d| rbf(d, self.length_scale)).collect();
            // argmin distance is argmax kernel, and stays defined when kernels underflow
            let assigned = crate::autodiff::argmax(&sq.iter().map(|d| -d).collect::<Vec<_>>());
            distance.push(sq[assigned].sqrt());
            probs.row_mut(i).copy_from_slice(&normalize_kernels(&kr));
            kernels.row_mut(i).copy_from_slice(&kr);
        }
        Ok(DuqPrediction {
            kernels,
            distance,
            probs,
        })
    }
}

/// Class means of the rows, or an EMA step toward them when `prev` is given.
/// Classes absent from the batch keep their previous centroid.
fn class_means(emb: &Tensor, labels: &[usize], classes: usize, prev: Option<(&Tensor, f64)>) -> Tensor {
    let e = emb.cols();
    let mut sums = vec![vec![0.0; e]; classes];
    let mut counts = vec![0usize; classes];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(emb.row(i)) {
            *s += v;
        }
    }
    let mut out = match prev {
        Some((p, _)) => p.clone(),
        None => Tensor::zeros(&[classes, e]),
    };
    for c in 0..classes {
        if counts[c] == 0 {
            continue;
        }
        for (o, s) in out.row_mut(c).iter_mut().zip(&sums[c]) {
            let mean = s / counts[c] as f64;
            *o = match prev {
                Some((_, g)) => g * *o + (1.0 - g) * mean,
                None => mean,
            };
        }
    }
    out
}

/// `mean_i (‖∂/∂x_i Σ_c K_c(x_i)‖ − 1)²`, with the input gradient written out
/// by hand through the ReLU network so the tape can differentiate it again.
fn gradient_penalty(
    tape: &mut Tape,
    vars: &[Var],
    f: Var,
    k: Var,
    masks: &[Tensor],
    centroids: &Tensor,
    sigma2: f64,
) -> Result<Var> {
    // ∂(Σ_c K_c)/∂f = −(Σ_c K_c · f − K·E) / σ²
    let s = tape.sum_axis(k, Axis::Cols)?;
    let sf = tape.mul(s, f)?;
    let e = tape.constant(centroids.clone());
    let ke = tape.matmul(k, e)?;
    let g = tape.sub(sf, ke)?;
    let mut g = tape.scale(g, -1.0 / sigma2)?;
    let layers = vars.len() / 2;
    for l in (0..layers).rev() {
        let wt = tape.transpose(vars[2 * l])?;
        g = tape.matmul(g, wt)?;
        if l > 0 {
            let m = tape.constant(masks[l - 1].clone());
            g = tape.mul(g, m)?;
        }
    }
    let g2 = tape.square(g)?;
    let n2 = tape.sum_axis(g2, Axis::Cols)?;
    let n2 = tape.offset(n2, 1e-12)?;
    let norm = tape.sqrt(n2)?;
    let dev = tape.offset(norm, -1.0)?;
    let dev2 = tape.square(dev)?;
    tape.mean(dev2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{numeric_gradient, OptimizerConfig};
    use crate::data::{make_half_moons, Split};

    #[test]
    fn kernel_algebra() {
        assert_eq!(rbf(0.0, 0.1), 1.0);
        let sigma: f64 = 0.3;
        let r = sigma * (2.0 * 2f64.ln()).sqrt();
        assert!((rbf(r * r, sigma) - 0.5).abs() < 1e-12);
        assert_eq!(normalize_kernels(&[0.4, 0.4]), vec![0.5, 0.5]);
        let p = normalize_kernels(&[0.8, 0.2]);
        assert!((p[0] - 0.8).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12);
        let k = [0.03, 0.3, 0.1];
        let p = normalize_kernels(&k);
        let total: f64 = k.iter().sum();
        for (a, b) in p.iter().zip(k) {
            assert!((a - b / total).abs() < 1e-9);
        }
    }

    #[test]
    fn penalty_matches_numeric_input_gradient() {
        let spec = NetworkSpec::new(2, vec![5, 4], 3).unwrap();
        let net = Mlp::init(spec, 1).unwrap();
        let centroids = Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, -0.1, 0.4, 0.0]).unwrap();
        let sigma2: f64 = 0.5;
        let x = Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap();
        let ksum = |xs: &[Tensor]| -> Result<f64> {
            let emb = net.logits(&xs[0])?;
            Ok((0..2)
                .map(|c| {
                    let d: f64 = emb.row(0).iter().zip(centroids.row(c)).map(|(a, b)| (a - b).powi(2)).sum();
                    (-d / (2.0 * sigma2)).exp()
                })
                .sum())
        };
        let g = numeric_gradient(ksum, std::slice::from_ref(&x), 1e-6).unwrap();
        let expected = (g[0].norm_l2() - 1.0).powi(2);

        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let xv = tape.constant(x);
        let (f, masks) = forward_with_masks(&mut tape, &vars, xv).unwrap();
        let d = sq_distances(&mut tape, f, &centroids).unwrap();
        let logk = tape.scale(d, -0.5 / sigma2).unwrap();
        let k = tape.exp(logk).unwrap();
        let pen = gradient_penalty(&mut tape, &vars, f, k, &masks, &centroids, sigma2).unwrap();
        assert!((tape.value(pen).unwrap().item() - expected).abs() < 1e-7);
        // and the penalty itself is differentiable w.r.t. the weights
        assert!(tape.backward(pen).unwrap().wrt(vars[0]).unwrap().norm_l2() > 0.0);
    }

    #[test]
    fn trains_and_predicts_consistently() {
        let data = make_half_moons(128, 0.1, 3, Split::Train).unwrap();
        let cfg = DuqConfig {
            hidden: vec![16, 16],
            embedding_dim: 4,
            length_scale: 0.5,
            momentum: 0.9,
            gradient_penalty: 0.5,
            train: TrainConfig::new(OptimizerConfig::adam(0.01), 30, 32),
        };
        let duq = Duq::train(&cfg, &data, 1).unwrap();
        let pred = duq.predict(data.features()).unwrap();
        for i in 0..data.len() {
            let k = pred.kernels.row(i);
            assert!(k.iter().all(|&v| v > 0.0 && v <= 1.0));
            assert_eq!(crate::autodiff::argmax(k), crate::autodiff::argmax(pred.probs.row(i)));
        }
        let acc = crate::nn::accuracy(&pred.probs.argmax_rows(), data.labels());
        assert!(acc > 0.8, "accuracy {acc}");
    }
}
