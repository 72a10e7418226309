use super::{AdversarialBatch, AttackSpec, ProxyModel, StepRule};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::Mlp;

/// Scales `delta` back onto the ball of radius `epsilon` if it lies outside.
pub fn project_l2(delta: &mut [f64], epsilon: f64) {
    let norm_of = |d: &[f64]| d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm = norm_of(delta);
    if norm > epsilon {
        let src = delta.to_vec();
        let mut k = epsilon / norm;
        // rounding can leave the result a hair outside; shrink until it is not
        loop {
            delta.iter_mut().zip(&src).for_each(|(v, s)| *v = s * k);
            if norm_of(delta) <= epsilon {
                break;
            }
            k = k.next_down();
        }
    }
}

/// A finished attack plus per-datum proxy losses after every iteration
/// (`trace[0]` is the clean loss).
#[derive(Clone, Debug)]
pub struct PgdRun {
    pub batch: AdversarialBatch,
    pub trace: Vec<Vec<f64>>,
}

impl PgdRun {
    /// Fraction of data whose proxy loss never decreased between iterations.
    pub fn monotone_fraction(&self) -> f64 {
        let n = self.batch.len();
        let ok = (0..n)
            .filter(|&i| self.trace.windows(2).all(|w| w[1][i] >= w[0][i]))
            .count();
        ok as f64 / n.max(1) as f64
    }

    /// Fraction of data whose final proxy loss is at least the clean loss.
    pub fn ascended_fraction(&self) -> f64 {
        let (first, last) = (&self.trace[0], self.trace.last().unwrap());
        let n = first.len();
        first.iter().zip(last).filter(|(a, b)| b >= a).count() as f64 / n.max(1) as f64
    }
}

/// Proxy forward on `x + delta`, returning the summed cross-entropy and the
/// per-datum losses. Summing keeps each row's gradient equal to the gradient
/// of its own loss.
fn proxy_loss(tape: &mut Tape, net: &Mlp, x: &Tensor, delta: Var, labels: &[usize]) -> Result<(Var, Vec<f64>)> {
    let vars: Vec<Var> = net.params().iter().map(|p| tape.constant(p.clone())).collect();
    let xv = tape.constant(x.clone());
    let input = tape.add(xv, delta)?;
    let logits = Mlp::forward(tape, &vars, input, None)?;
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick(lp, labels)?;
    let per_row = tape.value(picked)?.data().iter().map(|v| -v).collect();
    let total = tape.sum(picked)?;
    Ok((tape.neg(total)?, per_row))
}

/// L2 projected gradient ascent on the proxy's loss against `reference`,
/// starting from zero perturbation.
pub fn l2_pgd(proxy: &ProxyModel, inputs: &Tensor, reference: &[usize], spec: &AttackSpec) -> Result<PgdRun> {
    spec.validate()?;
    let (n, d) = inputs.dims2();
    if reference.len() != n {
        return Err(Error::invalid(format!("{} reference labels for {n} inputs", reference.len())));
    }
    let mut delta = Tensor::zeros(&[n, d]);
    let mut trace = Vec::with_capacity(spec.iterations + 1);
    let mut stopped_early = false;
    for _ in 0..spec.iterations {
        let mut tape = Tape::new();
        let dv = tape.param(delta.clone());
        let (loss, rows) = proxy_loss(&mut tape, &proxy.net, inputs, dv, reference)?;
        trace.push(rows);
        let grad = tape.backward(loss)?.wrt(dv)?;
        if !grad.is_finite() {
            stopped_early = true;
            break;
        }
        for (drow, grow) in delta.data_mut().chunks_mut(d).zip(grad.data().chunks(d)) {
            match spec.step {
                StepRule::Normalized => {
                    let g = grow.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if g > 0.0 {
                        drow.iter_mut().zip(grow).for_each(|(x, gi)| *x += spec.alpha * gi / g);
                    }
                }
                StepRule::RawGradient => drow.iter_mut().zip(grow).for_each(|(x, gi)| *x += spec.alpha * gi),
            }
            project_l2(drow, spec.epsilon);
        }
    }
    let mut tape = Tape::new();
    let dv = tape.constant(delta.clone());
    trace.push(proxy_loss(&mut tape, &proxy.net, inputs, dv, reference)?.1);

    let mut batch = AdversarialBatch::new(inputs.clone(), delta, reference.to_vec())?;
    let adv_pred = proxy.net.predict_proba(&batch.perturbed())?.argmax_rows();
    batch.proxy_fooled = Some(adv_pred.iter().zip(reference).map(|(p, y)| p != y).collect());
    batch.stopped_early = stopped_early;
    Ok(PgdRun { batch, trace })
}

/// Outcome of the step-size search.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub spec: AttackSpec,
    pub run: PgdRun,
    pub proxy_accuracy: f64,
    pub in_band: bool,
}

/// Adjusts α geometrically until the proxy's accuracy on the adversarial
/// inputs lands in `[band.0, band.1]`, keeping ε and the iteration count.
pub fn calibrate_alpha(
    proxy: &ProxyModel,
    inputs: &Tensor,
    reference: &[usize],
    spec: &AttackSpec,
    band: (f64, f64),
    max_rounds: usize,
) -> Result<Calibration> {
    if !(0.0..=1.0).contains(&band.0) || !(band.0..=1.0).contains(&band.1) {
        return Err(Error::invalid(format!("invalid proxy-accuracy band {band:?}")));
    }
    let (mut lo, mut hi) = (None::<f64>, None::<f64>);
    let mut spec = spec.clone();
    let mut best: Option<Calibration> = None;
    for _ in 0..max_rounds.max(1) {
        let run = l2_pgd(proxy, inputs, reference, &spec)?;
        let fooled = run.batch.proxy_fooled.as_ref().unwrap();
        let acc = fooled.iter().filter(|&&f| !f).count() as f64 / fooled.len().max(1) as f64;
        let in_band = (band.0..=band.1).contains(&acc);
        let gap = |a: f64| if a < band.0 { band.0 - a } else { (a - band.1).max(0.0) };
        if best.as_ref().is_none_or(|b| gap(acc) < gap(b.proxy_accuracy)) {
            best = Some(Calibration {
                spec: spec.clone(),
                run,
                proxy_accuracy: acc,
                in_band,
            });
        }
        if in_band {
            break;
        }
        // proxy not fooled enough → larger steps
        if acc > band.1 {
            lo = Some(spec.alpha);
        } else {
            hi = Some(spec.alpha);
        }
        spec.alpha = match (lo, hi) {
            (Some(l), Some(h)) => (l * h).sqrt(),
            (Some(l), None) => l * 2.0,
            (None, Some(h)) => h / 2.0,
            (None, None) => unreachable!(),
        };
    }
    Ok(best.unwrap())
}
