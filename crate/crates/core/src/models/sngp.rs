//! Spectral-normalised residual network with a random-Fourier-feature
//! Gaussian-process output layer and a Laplace posterior over its weights.
//!
//! The input is lifted to the hidden width by a fixed random projection, so
//! directions the training data never varies along still move the hidden
//! representation; every trained layer is residual and spectrally bounded.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{matmul, Tape, Tensor, Var};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_inverse, cholesky_with_jitter, power_step};
use crate::metrics::ProbEnsemble;
use crate::nn::{fit, glorot_layers, softmax_rows, TrainConfig};
use crate::rng::{derive_seed, seeded, Rng};

/// Probit approximation constant for the mean-field softmax.
pub const MEAN_FIELD_LAMBDA: f64 = PI / 8.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SngpConfig {
    /// Widths of the residual layers; they must all be equal.
    pub hidden: Vec<usize>,
    pub norm_bound: f64,
    pub power_iterations: usize,
    pub features: usize,
    /// Length scale of the RBF kernel approximated by the random features.
    #[serde(default = "unit")]
    pub kernel_scale: f64,
    #[serde(default)]
    pub dropout: f64,
    pub train: TrainConfig,
    /// Posterior logit samples per input in sample mode.
    pub samples: usize,
}

fn unit() -> f64 {
    1.0
}

/// How to turn the Gaussian logit posterior into probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SngpMode {
    MeanField,
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sngp {
    /// Fixed `D × H` input projection (never trained).
    pub input_projection: Tensor,
    /// `[W₀, b₀, W₁, b₁, …]` of the residual layers.
    pub hidden: Vec<Tensor>,
    /// Persistent left singular vector estimate per hidden matrix.
    pub power_u: Vec<Vec<f64>>,
    /// `H × R` random projection and `1 × R` phases.
    pub omega: Tensor,
    pub phase: Tensor,
    pub kernel_scale: f64,
    /// `R × C` output weights.
    pub beta: Tensor,
    /// Posterior covariance of each output column, the inverse Laplace
    /// precision.
    pub covariance: Tensor,
    pub norm_bound: f64,
    pub samples: usize,
    pub warnings: Vec<String>,
}

const MAX_EXTRA_POWER_STEPS: usize = 500;

/// Rescales `w` to `w · min(1, bound / σ̂)`; σ̂ comes from at least
/// `iterations` power steps continuing from `u`.

pub fn spectral_normalize(w: &mut Tensor, u: &mut [f64], bound: f64, iterations: usize) -> f64 {
    let mut sigma = 0.0;
    for _ in 0..iterations.max(1) {
        sigma = power_step(w, u).0;
    }
    // a single step from a warm start under-estimates σ slightly; keep going
    // until the estimate settles so the bound holds after every update
    for _ in 0..MAX_EXTRA_POWER_STEPS {
        let next = power_step(w, u).0;
        let settled = (next - sigma).abs() <= 1e-10 * next.max(1e-300);
        sigma = next;
        if settled {
            break;
        }
    }
    if sigma > bound {
        let k = bound / sigma;
        w.data_mut().iter_mut().for_each(|v| *v *= k);
    }
    sigma
}

fn random_features(h: &Tensor, omega: &Tensor, phase: &Tensor, kernel_scale: f64) -> Result<Tensor> {
    let r = omega.cols();
    let z = matmul(h, omega)?;
    let amp = (2.0 / r as f64).sqrt();
    let mut out = z;
    let c = out.cols();
    for row in out.data_mut().chunks_mut(c) {
        for (v, b) in row.iter_mut().zip(phase.data()) {
            *v = amp * (*v / kernel_scale + b).cos();
        }
    }
    Ok(out)
}

impl Sngp {
    fn hidden_forward(
        tape: &mut Tape,
        projection: &Tensor,
        vars: &[Var],
        x: Var,
        dropout: Option<(f64, &mut Rng)>,
    ) -> Result<Var> {
        let p = tape.constant(projection.clone());
        let mut h = tape.matmul(x, p)?;
        let mut dropout = dropout;
        for l in 0..vars.len() / 2 {
            let z = tape.matmul(h, vars[2 * l])?;
            let z = tape.add(z, vars[2 * l + 1])?;
            let mut a = tape.relu(z)?;
            if let Some((rate, rng)) = dropout.as_mut() {
                a = tape.dropout(a, *rate, &mut **rng)?;
            }
            h = tape.add(h, a)?;
        }
        Ok(h)
    }

    pub fn train(cfg: &SngpConfig, data: &LabeledDataset, seed: u64) -> Result<Self> {
        Self::train_observed(cfg, data, seed, |_| {})
    }

    /// Trains and calls `observe` with the hidden parameters after every
    /// optimizer step (after spectral normalisation).
    pub fn train_observed(
        cfg: &SngpConfig,
        data: &LabeledDataset,
        seed: u64,
        mut observe: impl FnMut(&[Tensor]),
    ) -> Result<Self> {
        if !(cfg.norm_bound > 0.0) {
            return Err(Error::invalid("spectral norm bound must be positive"));
        }
        if cfg.hidden.is_empty() || cfg.hidden.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::invalid("SNGP needs at least one hidden layer and equal residual widths"));
        }
        if cfg.features == 0 || !(cfg.kernel_scale > 0.0) {
            return Err(Error::invalid("SNGP needs random features and a positive kernel scale"));
        }
        let width = cfg.hidden[0];
        let mut rng = seeded(derive_seed(seed, 0));
        let projection = glorot_layers(&[(data.dim(), width)], &mut rng).swap_remove(0);
        let hidden_dims = vec![(width, width); cfg.hidden.len()];
        let mut params = glorot_layers(&hidden_dims, &mut rng);
        let (r, c) = (cfg.features, data.classes());
        let omega = Tensor::new(vec![width, r], (0..width * r).map(|_| StandardNormal.sample(&mut rng)).collect())?;
        let phase = Tensor::new(vec![1, r], (0..r).map(|_| rng.random_range(0.0..2.0 * PI)).collect())?;
        let beta_scale = (1.0 / r as f64).sqrt();
        params.push(Tensor::new(
            vec![r, c],
            (0..r * c).map(|_| beta_scale * { let z: f64 = StandardNormal.sample(&mut rng); z } * 0.1).collect(),
        )?);

        // warm-start the singular vectors so the very first rescale is accurate
        let mut power_u: Vec<Vec<f64>> = Vec::new();
        for l in 0..hidden_dims.len() {
            let rows = params[2 * l].rows();
            let mut u: Vec<f64> = (0..rows).map(|_| StandardNormal.sample(&mut rng)).collect();
            spectral_normalize(&mut params[2 * l], &mut u, cfg.norm_bound, 50);
            power_u.push(u);
        }

        let names: Vec<String> = (0..hidden_dims.len())
            .flat_map(|l| [format!("layer{l}.weight"), format!("layer{l}.bias")])
            .chain(["gp.beta".to_string()])
            .collect();
        let (x, labels) = (data.features(), data.labels());
        let amp = (2.0 / r as f64).sqrt();
        let nh = 2 * hidden_dims.len();
        fit(
            &mut params,
            &names,
            labels.len(),
            &cfg.train,
            &mut seeded(derive_seed(seed, 1)),
            "sngp",
            |tape, vars, batch, rng| {
                let xb = tape.constant(x.select_rows(batch));
                let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let drop = (cfg.dropout > 0.0).then_some((cfg.dropout, rng));
                let h = Self::hidden_forward(tape, &projection, &vars[..nh], xb, drop)?;
                let om = tape.constant(omega.map(|v| v / cfg.kernel_scale));
                let z = tape.matmul(h, om)?;
                let ph = tape.constant(phase.clone());
                let z = tape.add(z, ph)?;
                let phi = tape.cos(z)?;
                let phi = tape.scale(phi, amp)?;
                let logits = tape.matmul(phi, vars[nh])?;
                tape.cross_entropy(logits, &yb)
            },
            |params| {
                for (l, u) in power_u.iter_mut().enumerate() {
                    spectral_normalize(&mut params[2 * l], u, cfg.norm_bound, cfg.power_iterations);
                }
                observe(&params[..nh]);
                Ok(())
            },
        )?;

        let beta = params.pop().expect("beta is the last parameter");
        let mut model = Self {
            input_projection: projection,
            hidden: params,
            power_u,
            omega,
            phase,
            kernel_scale: cfg.kernel_scale,
            beta,
            covariance: Tensor::zeros(&[0, 0]),
            norm_bound: cfg.norm_bound,
            samples: cfg.samples,
            warnings: Vec::new(),
        };
        model.fit_laplace(x)?;
        Ok(model)
    }

    /// `P = I + Σₙ pₙ (1 − pₙ) φₙ φₙᵀ` with `pₙ` the top class probability,
    /// then inverted through its Cholesky factor.
    pub fn fit_laplace(&mut self, x: &Tensor) -> Result<()> {
        let phi = self.features(x)?;
        let probs = softmax_rows(&matmul(&phi, &self.beta)?);
        let (n, r) = phi.dims2();
        let mut weighted = phi.clone();
        for i in 0..n {
            let p = probs.row(i).iter().copied().fold(0.0, f64::max);
            let w = (p * (1.0 - p)).sqrt();
            weighted.row_mut(i).iter_mut().for_each(|v| *v *= w);
        }
        let mut precision = matmul(&weighted.transpose(), &weighted)?;
        for i in 0..r {
            precision.data_mut()[i * r + i] += 1.0;
        }
        // symmetrise away round-off before factorising
        for i in 0..r {
            for j in i + 1..r {
                let m = 0.5 * (precision.get(i, j) + precision.get(j, i));
                precision.data_mut()[i * r + j] = m;
                precision.data_mut()[j * r + i] = m;
            }
        }
        let l = cholesky_with_jitter(&precision, 1e-6)?;
        self.covariance = cholesky_inverse(&l)?;
        Ok(())
    }

    pub fn hidden_representation(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.hidden.iter().map(|p| tape.constant(p.clone())).collect();
        let xv = tape.constant(x.clone());
        let h = Self::hidden_forward(&mut tape, &self.input_projection, &vars, xv, None)?;
        Ok(tape.value(h)?.clone())
    }

    /// Random Fourier features `√(2/R) cos(hΩ/ℓ + b)`.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        random_features(&self.hidden_representation(x)?, &self.omega, &self.phase, self.kernel_scale)
    }

    /// Posterior mean logits and the per-input logit variance `φᵀ P⁻¹ φ`.
    pub fn logits_and_variance(&self, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        if self.covariance.is_empty() {
            return Err(Error::Untrained("SNGP posterior covariance has not been fitted"));
        }
        let phi = self.features(x)?;
        let logits = matmul(&phi, &self.beta)?;
        let ps = matmul(&phi, &self.covariance)?;
        let var = (0..phi.rows())
            .map(|i| {
                let v: f64 = phi.row(i).iter().zip(ps.row(i)).map(|(a, b)| a * b).sum();
                v.max(0.0)
            })
            .collect();
        Ok((logits, var))
    }

    /// `softmax(logit / √(1 + λ·var))` with λ = π/8.
    pub fn mean_field(&self, x: &Tensor) -> Result<Tensor> {
        let (mut logits, var) = self.logits_and_variance(x)?;
        mean_field_scale(&mut logits, &var);
        Ok(softmax_rows(&logits))
    }

    /// `count` softmaxed draws from `N(logit, var)` per input, independent
    /// across classes.
    pub fn sample(&self, x: &Tensor, count: usize, seed: u64) -> Result<ProbEnsemble> {
        let (logits, var) = self.logits_and_variance(x)?;
        sample_logits(&logits, &var, count, seed)
    }

    pub fn predict_ensemble(&self, x: &Tensor, seed: u64) -> Result<ProbEnsemble> {
        self.sample(x, self.samples, seed)
    }
}

pub fn mean_field_scale(logits: &mut Tensor, var: &[f64]) {
    let c = logits.cols();
    for (row, v) in logits.data_mut().chunks_mut(c).zip(var) {
        let k = 1.0 / (1.0 + MEAN_FIELD_LAMBDA * v).sqrt();
        row.iter_mut().for_each(|l| *l *= k);
    }
}

pub fn sample_logits(logits: &Tensor, var: &[f64], count: usize, seed: u64) -> Result<ProbEnsemble> {
    if count == 0 {
        return Err(Error::invalid("sample mode needs at least one sample"));
    }
    let mut rng = seeded(seed);
    let members: Vec<Tensor> = (0..count)
        .map(|_| {
            let mut l = logits.clone();
            let c = l.cols();
            for (row, v) in l.data_mut().chunks_mut(c).zip(var) {
                let sd = v.max(0.0).sqrt();
                for x in row.iter_mut() {
                    *x += sd * { let z: f64 = StandardNormal.sample(&mut rng); z };
                }
            }
            softmax_rows(&l)
        })
        .collect();
    ProbEnsemble::from_members(&members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::OptimizerConfig;
    use crate::data::{make_half_moons, Split};
    use crate::linalg::top_singular_value;
    use crate::metrics::kl_uncertainty;

    fn cfg() -> SngpConfig {
        SngpConfig {
            hidden: vec![16, 16],
            norm_bound: 0.9,
            power_iterations: 1,
            features: 128,
            kernel_scale: 1.0,
            dropout: 0.1,
            train: TrainConfig::new(OptimizerConfig::adam(0.01), 20, 32),
            samples: 10,
        }
    }

    #[test]
    fn spectral_bound_holds_after_every_step() {
        let data = make_half_moons(128, 0.1, 1, Split::Train).unwrap();
        let mut worst: f64 = 0.0;
        let model = Sngp::train_observed(&cfg(), &data, 3, |hidden| {
            for w in hidden.iter().step_by(2) {
                worst = worst.max(top_singular_value(w, 200));
            }
        })
        .unwrap();
        assert!(worst <= 0.9 + 1e-3, "largest singular value {worst}");
        let (_, var) = model.logits_and_variance(data.features()).unwrap();
        let far = Tensor::matrix(1, 2, vec![30.0, 30.0]).unwrap();
        let (_, far_var) = model.logits_and_variance(&far).unwrap();
        let mean_train = var.iter().sum::<f64>() / var.len() as f64;
        assert!(far_var[0] > mean_train, "{} vs {mean_train}", far_var[0]);
        assert_eq!(model.features(&far).unwrap(), model.features(&far).unwrap());
    }

    #[test]
    fn zero_variance_sampling_matches_mean_field() {
        let logits = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.1, 0.2]).unwrap();
        let ens = sample_logits(&logits, &[0.0, 0.0], 5, 1).unwrap();
        let mut mf = logits.clone();
        mean_field_scale(&mut mf, &[0.0, 0.0]);
        let mf = softmax_rows(&mf);
        for m in 0..5 {
            assert_eq!(ens.member(m), mf);
        }
        assert!(kl_uncertainty(&ens).unwrap().iter().all(|&k| k == 0.0));
    }

    #[test]
    fn mean_field_tracks_monte_carlo_average() {
        let logits = Tensor::matrix(3, 2, vec![1.0, -0.5, 0.2, 0.0, -2.0, 1.5]).unwrap();
        let var = [0.3, 1.0, 0.7];
        let mc = sample_logits(&logits, &var, 10_000, 4).unwrap().mean();
        let mut mf = logits.clone();
        mean_field_scale(&mut mf, &var);
        let mf = softmax_rows(&mf);
        let mad = mc.data().iter().zip(mf.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 6.0;
        assert!(mad < 0.02, "{mad}");
    }
}
