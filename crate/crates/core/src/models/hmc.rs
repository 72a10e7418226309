//! Hamiltonian Monte Carlo with dual-averaging step-size adaptation.
//!
//! Trajectory lengths are drawn uniformly from `1..=2^max_tree_depth`
//! leapfrog steps per iteration rather than built as a NUTS tree.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::WeightEnsemble;
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{flatten, train_classifier, unflatten_into, Mlp, NetworkSpec, TrainConfig};
use crate::rng::{derive_seed, seeded, Rng};

/// Negative log density (up to a constant) and its gradient.
pub trait PotentialEnergy: Sync {
    fn dim(&self) -> usize;
    fn energy_and_grad(&self, q: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Isotropic Gaussian with standard deviation `std`, centred at the origin.
#[derive(Clone, Debug)]
pub struct GaussianTarget {
    pub dim: usize,
    pub std: f64,
}

impl PotentialEnergy for GaussianTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy_and_grad(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let s2 = self.std * self.std;
        let u = q.iter().map(|v| v * v).sum::<f64>() / (2.0 * s2);
        Ok((u, q.iter().map(|v| v / s2).collect()))
    }
}

/// Summed softmax cross-entropy over the whole dataset plus an isotropic
/// Gaussian prior on every weight.
pub struct BnnPotential<'a> {
    spec: NetworkSpec,
    x: &'a Tensor,
    labels: &'a [usize],
    prior_std: f64,
    template: Vec<Tensor>,
}

impl<'a> BnnPotential<'a> {
    pub fn new(spec: NetworkSpec, data: &'a LabeledDataset, prior_std: f64) -> Result<Self> {
        if !(prior_std > 0.0) {
            return Err(Error::invalid("prior std must be positive"));
        }
        let template = Mlp::init(spec.clone(), 0)?.params().to_vec();
        Ok(Self {
            spec,
            x: data.features(),
            labels: data.labels(),
            prior_std,
            template,
        })
    }
}

impl PotentialEnergy for BnnPotential<'_> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn energy_and_grad(&self, q: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut params = self.template.clone();
        unflatten_into(&mut params, q)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.into_iter().map(|p| tape.param(p)).collect();
        let x = tape.constant(self.x.clone());
        let logits = Mlp::forward(&mut tape, &vars, x, None)?;
        let ce = tape.cross_entropy(logits, self.labels)?;
        let nll = tape.scale(ce, self.labels.len() as f64)?;
        let grads = tape.backward(nll)?;
        let g: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect::<Result<_>>()?;
        let mut grad = flatten(&g);
        let s2 = self.prior_std * self.prior_std;
        let mut u = tape.value(nll)?.item();
        for (gi, qi) in grad.iter_mut().zip(q) {
            u += qi * qi / (2.0 * s2);
            *gi += qi / s2;
        }
        Ok((u, grad))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct HmcConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    /// Keep every `thin`-th post-warmup draw.
    #[serde(default = "one")]
    pub thin: usize,
    pub initial_step_size: f64,
    pub target_accept: f64,
    /// Leapfrog steps per trajectory are uniform on `1..=2^max_tree_depth`.
    pub max_tree_depth: u32,
    pub prior_std: f64,
    /// Hidden widths of the sampled network.
    #[serde(default)]
    pub hidden: Vec<usize>,
    /// Start each chain from a network trained with this schedule instead
    /// of a random initialisation.
    #[serde(default)]
    pub init_train: Option<TrainConfig>,
    /// Sample from the likelihood of at most this many training points.
    #[serde(default)]
    pub max_points: Option<usize>,
}

fn one() -> usize {
    1
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.samples == 0 || self.thin == 0 {
            return Err(Error::invalid("HMC chains, samples and thin must be positive"));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::invalid("target acceptance must lie in (0, 1)"));
        }
        if !(self.initial_step_size > 0.0) || !(self.prior_std > 0.0) {
            return Err(Error::invalid("step size and prior std must be positive"));
        }
        Ok(())
    }
}

/// Dual averaging of the log step size toward a target acceptance rate.
#[derive(Clone, Debug)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    t: f64,
}

const DA_GAMMA: f64 = 0.05;
const DA_T0: f64 = 10.0;
const DA_KAPPA: f64 = 0.75;

impl DualAveraging {
    pub fn new(initial: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * initial).ln(),
            target,
            h_bar: 0.0,
            log_eps: initial.ln(),
            log_eps_bar: 0.0,
            t: 0.0,
        }
    }

    /// Feeds one acceptance probability and returns the next step size.
    pub fn update(&mut self, accept: f64) -> f64 {
        self.t += 1.0;
        let w = 1.0 / (self.t + DA_T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        self.log_eps = self.mu - self.t.sqrt() / DA_GAMMA * self.h_bar;
        let eta = self.t.powf(-DA_KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp()
    }

    /// Shrinks the current iterate after a divergence.
    pub fn halve(&mut self) -> f64 {
        self.log_eps -= std::f64::consts::LN_2;
        self.log_eps.exp()
    }

    /// Step size to use after adaptation ends.
    pub fn final_step_size(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// `steps` leapfrog updates of position `q` and momentum `p`.
pub fn leapfrog<P: PotentialEnergy + ?Sized>(
    target: &P,
    q: &mut [f64],
    p: &mut [f64],
    grad: &mut Vec<f64>,
    eps: f64,
    steps: usize,
) -> Result<f64> {
    let mut u = f64::NAN;
    if steps == 0 {
        return Ok(target.energy_and_grad(q)?.0);
    }
    for (pi, gi) in p.iter_mut().zip(grad.iter()) {
        *pi -= 0.5 * eps * gi;
    }
    for s in 0..steps {
        for (qi, pi) in q.iter_mut().zip(p.iter()) {
            *qi += eps * pi;
        }
        let (ui, gi) = target.energy_and_grad(q)?;
        u = ui;
        *grad = gi;
        let k = if s + 1 == steps { 0.5 } else { 1.0 };
        for (pi, gi) in p.iter_mut().zip(grad.iter()) {
            *pi -= k * eps * gi;
        }
    }
    Ok(u)
}

pub fn kinetic(p: &[f64]) -> f64 {
    0.5 * p.iter().map(|v| v * v).sum::<f64>()
}

/// Outcome of one Metropolis-corrected trajectory.
#[derive(Clone, Copy, Debug)]
pub struct Transition {
    pub accept_prob: f64,
    pub accepted: bool,
    pub divergent: bool,
}

/// One HMC iteration from `q` (updated in place on acceptance). `state`
/// caches the energy and gradient at `q`.
pub fn hmc_step<P: PotentialEnergy + ?Sized>(
    target: &P,
    q: &mut Vec<f64>,
    state: &mut (f64, Vec<f64>),
    eps: f64,
    steps: usize,
    rng: &mut Rng,
) -> Result<Transition> {
    let p0: Vec<f64> = (0..q.len()).map(|_| StandardNormal.sample(rng)).collect();
    let h0 = state.0 + kinetic(&p0);
    let mut q1 = q.clone();
    let mut p1 = p0;
    let mut g1 = state.1.clone();
    let u1 = leapfrog(target, &mut q1, &mut p1, &mut g1, eps, steps)?;
    let h1 = u1 + kinetic(&p1);
    if !h1.is_finite() || !q1.iter().all(|v| v.is_finite()) {
        return Ok(Transition {
            accept_prob: 0.0,
            accepted: false,
            divergent: true,
        });
    }
    let accept_prob = (h0 - h1).exp().min(1.0);
    let accepted = rng.random::<f64>() < accept_prob;
    if accepted {
        *q = q1;
        *state = (u1, g1);
    }
    Ok(Transition {
        accept_prob,
        accepted,
        divergent: false,
    })
}

/// Draws and diagnostics from one or more chains.
#[derive(Clone, Debug, Default)]
pub struct HmcRun {
    pub samples: Vec<Vec<f64>>,
    /// Mean Metropolis acceptance probability after warmup.
    pub acceptance: f64,
    pub step_size: f64,
    pub divergences: usize,
}

const MAX_CONSECUTIVE_DIVERGENCES: usize = 50;

fn run_chain<P: PotentialEnergy + ?Sized>(target: &P, init: Vec<f64>, cfg: &HmcConfig, draws: usize, seed: u64) -> Result<HmcRun> {
    let mut rng = seeded(seed);
    let mut q = init;
    let mut state = target.energy_and_grad(&q)?;
    if !state.0.is_finite() {
        return Err(Error::Diverged {
            context: "HMC initial state has non-finite energy".into(),
        });
    }
    let max_steps = 1usize << cfg.max_tree_depth;
    let mut da = DualAveraging::new(cfg.initial_step_size, cfg.target_accept);
    let mut eps = cfg.initial_step_size;
    let mut run = HmcRun::default();
    let mut streak = 0;
    let mut accept_sum = 0.0;
    let mut post = 0usize;
    let total = cfg.warmup + draws * cfg.thin;
    for it in 0..total {
        let warm = it < cfg.warmup;
        if it == cfg.warmup {
            eps = da.final_step_size();
        }
        let steps = rng.random_range(1..=max_steps);
        let t = hmc_step(target, &mut q, &mut state, eps, steps, &mut rng)?;
        if t.divergent {
            run.divergences += 1;
            streak += 1;
            if streak >= MAX_CONSECUTIVE_DIVERGENCES {
                return Err(Error::Diverged {
                    context: format!("HMC: {streak} consecutive divergent trajectories"),
                });
            }
            eps = if warm { da.halve() } else { eps * 0.5 };
        } else {
            streak = 0;
        }
        if warm {
            if !t.divergent {
                eps = da.update(t.accept_prob);
            }
        } else {
            accept_sum += t.accept_prob;
            post += 1;
            if (it - cfg.warmup + 1) % cfg.thin == 0 {
                run.samples.push(q.clone());
            }
        }
    }
    run.acceptance = if post > 0 { accept_sum / post as f64 } else { f64::NAN };
    run.step_size = eps;
    Ok(run)
}

/// Runs `cfg.chains` chains in parallel from the given initial points and
/// returns `cfg.samples` draws in total.
pub fn hmc_sample<P: PotentialEnergy + ?Sized>(target: &P, inits: Vec<Vec<f64>>, cfg: &HmcConfig, seed: u64) -> Result<HmcRun> {
    cfg.validate()?;
    if inits.len() != cfg.chains || inits.iter().any(|q| q.len() != target.dim()) {
        return Err(Error::invalid("need one initial point of the target dimension per chain"));
    }
    let per_chain = cfg.samples.div_ceil(cfg.chains);
    let runs: Vec<HmcRun> = inits
        .into_par_iter()
        .enumerate()
        .map(|(c, init)| run_chain(target, init, cfg, per_chain, derive_seed(seed, c as u64)))
        .collect::<Result<_>>()?;
    let mut out = HmcRun {
        acceptance: runs.iter().map(|r| r.acceptance).sum::<f64>() / runs.len() as f64,
        step_size: runs.iter().map(|r| r.step_size).sum::<f64>() / runs.len() as f64,
        ..HmcRun::default()
    };
    for r in runs {
        out.divergences += r.divergences;
        out.samples.extend(r.samples);
    }
    out.samples.truncate(cfg.samples);
    Ok(out)
}

/// Effective sample size of a scalar series from its autocorrelations,
/// truncated at the first negative pair sum.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let rho = |lag: usize| {
        (0..n - lag).map(|i| (x[i] - mean) * (x[i + lag] - mean)).sum::<f64>() / (n as f64 * var)
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    (n as f64 / tau).min(n as f64)
}

/// Posterior draws for a classifier network.
pub fn hmc_sample_bnn(cfg: &HmcConfig, data: &LabeledDataset, seed: u64) -> Result<(WeightEnsemble, HmcRun)> {
    cfg.validate()?;
    let data = match cfg.max_points {
        Some(n) => data.truncate(n),
        None => data.clone(),
    };
    let spec = NetworkSpec::new(data.dim(), cfg.hidden.clone(), data.classes())?;
    let target = BnnPotential::new(spec.clone(), &data, cfg.prior_std)?;
    let inits: Vec<Vec<f64>> = (0..cfg.chains)
        .map(|c| {
            let s = derive_seed(seed, 1000 + c as u64);
            let mut net = Mlp::init(spec.clone(), s)?;
            if let Some(train) = &cfg.init_train {
                train_classifier(&mut net, data.features(), data.labels(), train, 0.0, derive_seed(s, 1))?;
            }
            Ok(net.to_flat())
        })
        .collect::<Result<_>>()?;
    let run = hmc_sample(&target, inits, cfg, seed)?;
    Ok((WeightEnsemble::new(spec, run.samples.clone())?, run))
}
