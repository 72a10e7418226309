//! Fully connected ReLU networks and the shared minibatch training loop.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Optimizer, OptimizerConfig, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

/// Layer widths of a ReLU multilayer perceptron.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            hidden,
            output_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::invalid(format!("network widths must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each dense layer, output layer last.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &w in self.hidden.iter().chain(std::iter::once(&self.output_dim)) {
            dims.push((prev, w));
            prev = w;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Glorot-uniform weights and zero biases, laid out `[W0, b0, W1, b1, ...]`
/// with `W` of shape `[fan_in, fan_out]` and `b` of shape `[1, fan_out]`.
pub fn glorot_layers(dims: &[(usize, usize)], rng: &mut Rng) -> Vec<Tensor> {
    let mut params = Vec::with_capacity(2 * dims.len());
    for &(fan_in, fan_out) in dims {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
        params.push(Tensor::matrix(fan_in, fan_out, w).unwrap());
        params.push(Tensor::zeros(&[1, fan_out]));
    }
    params
}

pub fn layer_param_names(layers: usize) -> Vec<String> {
    (0..layers)
        .flat_map(|l| [format!("layer{l}.weight"), format!("layer{l}.bias")])
        .collect()
}

/// Flattens parameter tensors into one vector.
pub fn flatten(params: &[Tensor]) -> Vec<f64> {
    params.iter().flat_map(|p| p.data().iter().copied()).collect()
}

/// Writes `flat` back into tensors shaped like `template`.
pub fn unflatten_into(template: &mut [Tensor], flat: &[f64]) -> Result<()> {
    let total: usize = template.iter().map(Tensor::len).sum();
    if total != flat.len() {
        return Err(Error::invalid(format!(
            "flat parameter vector has {} entries, expected {total}",
            flat.len()
        )));
    }
    let mut offset = 0;
    for p in template {
        let n = p.len();
        p.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
    Ok(())
}

/// Dropout applied after each hidden activation.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub rng: &'a mut Rng,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: NetworkSpec,
    params: Vec<Tensor>,
}

impl Mlp {
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let params = glorot_layers(&spec.layer_dims(), &mut seeded(seed));
        Ok(Self { spec, params })
    }

    pub fn from_flat(spec: NetworkSpec, flat: &[f64]) -> Result<Self> {
        spec.validate()?;
        let mut params: Vec<Tensor> = spec
            .layer_dims()
            .iter()
            .flat_map(|&(i, o)| [Tensor::zeros(&[i, o]), Tensor::zeros(&[1, o])])
            .collect();
        unflatten_into(&mut params, flat)?;
        if !flat.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("non-finite weight"));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<Tensor> {
        &mut self.params
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.params)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        unflatten_into(&mut self.params, flat)
    }

    pub fn param_names(&self) -> Vec<String> {
        layer_param_names(self.spec.hidden.len() + 1)
    }

    /// Registers the weights as tape parameters.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Forward pass over bound parameters, returning logits.
    pub fn forward(
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        mut dropout: Option<&mut DropoutCtx<'_>>,
    ) -> Result<Var> {
        let layers = vars.len() / 2;
        let mut h = x;
        for l in 0..layers {
            let z = tape.matmul(h, vars[2 * l])?;
            h = tape.add(z, vars[2 * l + 1])?;
            if l + 1 < layers {
                h = tape.relu(h)?;
                if let Some(ctx) = dropout.as_deref_mut() {
                    h = tape.dropout(h, ctx.rate, ctx.rng)?;
                }
            }
        }
        Ok(h)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.logits_with(x, None)
    }

    pub fn logits_with(&self, x: &Tensor, dropout: Option<&mut DropoutCtx<'_>>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let xv = tape.constant(x.clone());
        let out = Self::forward(&mut tape, &vars, xv, dropout)?;
        Ok(tape.value(out)?.clone())
    }

    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.logits(x)?))
    }
}

/// Row-wise softmax of a plain matrix.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let c = out.cols();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop when the epoch-mean loss has not improved for this many epochs.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerConfig, epochs: usize, batch_size: usize) -> Self {
        Self {
            optimizer,
            epochs,
            batch_size,
            patience: None,
        }
    }

    pub fn with_patience(mut self, patience: usize) -> Self {
        self.patience = Some(patience);
        self
    }
}

#[derive(Clone, Debug, Default)]
pub struct FitReport {
    pub epoch_losses: Vec<f64>,
}

impl FitReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// Minibatch loop shared by every trainer.
///
/// `loss` builds the batch loss on a fresh tape from the bound parameters and
/// the batch row indices. `after_step` runs on the parameters after each
/// optimizer update.
#[allow(clippy::too_many_arguments)]
pub fn fit<L, A>(
    params: &mut [Tensor],
    names: &[String],
    n: usize,
    config: &TrainConfig,
    rng: &mut Rng,
    context: &str,
    loss: L,
    after_step: A,
) -> Result<FitReport>
where
    L: FnMut(&mut Tape, &[Var], &[usize], &mut Rng) -> Result<Var>,
    A: FnMut(&mut [Tensor]) -> Result<()>,
{
    fit_epochs(params, names, n, config, rng, context, loss, after_step, |_, _| Ok(()))
}

/// [`fit`] with an extra hook called with the epoch index and parameters at
/// the end of every epoch.
#[allow(clippy::too_many_arguments)]
pub fn fit_epochs<L, A, E>(
    params: &mut [Tensor],
    names: &[String],
    n: usize,
    config: &TrainConfig,
    rng: &mut Rng,
    context: &str,
    mut loss: L,
    mut after_step: A,
    mut after_epoch: E,
) -> Result<FitReport>
where
    L: FnMut(&mut Tape, &[Var], &[usize], &mut Rng) -> Result<Var>,
    A: FnMut(&mut [Tensor]) -> Result<()>,
    E: FnMut(usize, &[Tensor]) -> Result<()>,
{
    if config.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let named: Vec<(String, &Tensor)> = names.iter().cloned().zip(params.iter()).collect();
    let mut opt = Optimizer::new(config.optimizer.clone(), &named)?;
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = FitReport::default();
    let mut best = f64::INFINITY;
    let mut stale = 0;

    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
            let l = loss(&mut tape, &vars, batch, rng)?;
            let value = tape.value(l)?.item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    context: context.to_string(),
                });
            }
            let grads = tape.backward(l)?;
            let grads: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect::<Result<_>>()?;
            opt.step(params, &grads)?;
            after_step(params)?;
            total += value;
            batches += 1;
        }
        let epoch_loss = total / batches.max(1) as f64;
        report.epoch_losses.push(epoch_loss);
        after_epoch(epoch, params)?;
        if let Some(patience) = config.patience {
            if epoch_loss < best {
                best = epoch_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    Ok(report)
}

/// Trains an MLP with softmax cross-entropy, optionally with dropout.
pub fn train_classifier(
    net: &mut Mlp,
    x: &Tensor,
    labels: &[usize],
    config: &TrainConfig,
    dropout_rate: f64,
    seed: u64,
) -> Result<FitReport> {
    if x.rows() != labels.len() {
        return Err(Error::invalid("feature/label count mismatch"));
    }
    let names = net.param_names();
    let mut rng = seeded(seed);
    let context = "classifier".to_string();
    fit(
        net.params_mut(),
        &names,
        labels.len(),
        config,
        &mut rng,
        &context,
        |tape, vars, batch, rng| {
            let xb = tape.constant(x.select_rows(batch));
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let logits = if dropout_rate > 0.0 {
                let mut ctx = DropoutCtx {
                    rate: dropout_rate,
                    rng,
                };
                Mlp::forward(tape, vars, xb, Some(&mut ctx))?
            } else {
                Mlp::forward(tape, vars, xb, None)?
            };
            tape.cross_entropy(logits, &yb)
        },
        |_| Ok(()),
    )
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return f64::NAN;
    }
    predicted.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64
}
