//! Random composite graphs for finite-difference gradient checks.

#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use uqbench::autodiff::{numeric_gradient, relative_error, Axis, Tape, Tensor, Var};
use uqbench::rng::{seeded, Rng};
use uqbench::Result;

#[derive(Clone, Copy, Debug)]
enum Unary {
    Relu,
    Exp,
    LogPos,
    Cos,
    Square,
    SqrtPos,
    Softmax,
    LogSoftmax,
    Neg,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    DivPos,
}

#[derive(Clone, Debug)]
enum Step {
    Unary(Unary),
    Scale(f64),
    Gather(Vec<usize>),
    SumAxis(Axis),
    Transpose,
    Binary(Binary, usize),
    MatMul(usize),
}

#[derive(Clone, Copy, Debug)]
enum Reduce {
    Sum,
    Mean,
    Norm,
}

#[derive(Clone, Debug)]
pub struct Graph {
    params: Vec<Tensor>,
    steps: Vec<Step>,
    reduce: Reduce,
}

fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
}

impl Graph {
    /// At most `max_steps` primitives on matrices with extents ≤ 4.
    pub fn random(rng: &mut Rng, max_steps: usize) -> Self {
        let (mut r, mut c) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let mut params = vec![normal(rng, &[r, c])];
        let mut steps = Vec::new();
        let unary = [
            Unary::Relu,
            Unary::Exp,
            Unary::LogPos,
            Unary::Cos,
            Unary::Square,
            Unary::SqrtPos,
            Unary::Softmax,
            Unary::LogSoftmax,
            Unary::Neg,
        ];
        for _ in 0..rng.random_range(1..=max_steps) {
            let step = match rng.random_range(0..7) {
                0 | 1 => Step::Unary(*unary.choose(rng).unwrap()),
                2 => Step::Scale(rng.random_range(-2.0..2.0)),
                3 => {
                    let k = rng.random_range(1..=4);
                    let idx: Vec<usize> = (0..k).map(|_| rng.random_range(0..r)).collect();
                    r = k;
                    Step::Gather(idx)
                }
                4 => match rng.random_range(0..3) {
                    0 => {
                        r = 1;
                        Step::SumAxis(Axis::Rows)
                    }
                    1 => {
                        c = 1;
                        Step::SumAxis(Axis::Cols)
                    }
                    _ => {
                        std::mem::swap(&mut r, &mut c);
                        Step::Transpose
                    }
                },
                5 => {
                    // same shape, row vector or column vector operand
                    let shape = match rng.random_range(0..3) {
                        0 => [r, c],
                        1 => [1, c],
                        _ => [r, 1],
                    };
                    params.push(normal(rng, &shape));
                    let op = [Binary::Add, Binary::Sub, Binary::Mul, Binary::DivPos][rng.random_range(0..4)];
                    Step::Binary(op, params.len() - 1)
                }
                _ => {
                    let k = rng.random_range(1..=4);
                    params.push(normal(rng, &[c, k]));
                    c = k;
                    Step::MatMul(params.len() - 1)
                }
            };
            steps.push(step);
        }
        let reduce = [Reduce::Sum, Reduce::Mean, Reduce::Norm][rng.random_range(0..3)];
        Self { params, steps, reduce }
    }

    /// Builds the graph; fails with `Ok(None)` when a ReLU input sits within
    /// `kink` of zero, where finite differences are meaningless.
    fn build(&self, tape: &mut Tape, vars: &[Var], kink: f64) -> Result<Option<Var>> {
        let mut h = vars[0];
        for step in &self.steps {
            h = match *step {
                Step::Unary(u) => match u {
                    Unary::Relu => {
                        if tape.value(h)?.data().iter().any(|v| v.abs() < kink) {
                            return Ok(None);
                        }
                        tape.relu(h)?
                    }
                    Unary::Exp => {
                        let s = tape.scale(h, 0.5)?;
                        tape.exp(s)?
                    }
                    Unary::LogPos => {
                        let sq = tape.square(h)?;
                        let o = tape.offset(sq, 1.0)?;
                        tape.log(o)?
                    }
                    Unary::Cos => tape.cos(h)?,
                    Unary::Square => tape.square(h)?,
                    Unary::SqrtPos => {
                        let sq = tape.square(h)?;
                        let o = tape.offset(sq, 1.0)?;
                        tape.sqrt(o)?
                    }
                    Unary::Softmax => tape.softmax(h)?,
                    Unary::LogSoftmax => tape.log_softmax(h)?,
                    Unary::Neg => tape.neg(h)?,
                },
                Step::Scale(k) => tape.scale(h, k)?,
                Step::Gather(ref idx) => tape.gather_rows(h, idx)?,
                Step::SumAxis(axis) => tape.sum_axis(h, axis)?,
                Step::Transpose => tape.transpose(h)?,
                Step::Binary(op, p) => {
                    let b = vars[p];
                    match op {
                        Binary::Add => tape.add(h, b)?,
                        Binary::Sub => tape.sub(h, b)?,
                        Binary::Mul => tape.mul(h, b)?,
                        Binary::DivPos => {
                            let sq = tape.square(b)?;
                            let d = tape.offset(sq, 0.5)?;
                            tape.div(h, d)?
                        }
                    }
                }
                Step::MatMul(p) => tape.matmul(h, vars[p])?,
            };
        }
        let out = match self.reduce {
            Reduce::Sum => tape.sum(h)?,
            Reduce::Mean => tape.mean(h)?,
            Reduce::Norm => {
                if tape.value(h)?.norm_l2() < kink {
                    return Ok(None);
                }
                tape.l2_norm(h)?
            }
        };
        Ok(Some(out))
    }

    /// Largest per-parameter relative error between tape and central
    /// differences, or `None` if the graph sits on a kink.
    pub fn check(&self, h: f64) -> Result<Option<f64>> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.param(p.clone())).collect();
        let Some(out) = self.build(&mut tape, &vars, 1e-3)? else {
            return Ok(None);
        };
        let grads = tape.backward(out)?;
        let numeric = numeric_gradient(
            |ps| {
                let mut t = Tape::new();
                let vs: Vec<Var> = ps.iter().map(|p| t.param(p.clone())).collect();
                let o = self.build(&mut t, &vs, 0.0)?.expect("no kink check");
                Ok(t.value(o)?.item())
            },
            &self.params,
            h,
        )?;
        let mut worst: f64 = 0.0;
        for (v, n) in vars.iter().zip(&numeric) {
            worst = worst.max(relative_error(&grads.wrt(*v)?, n, 1e-6));
        }
        Ok(Some(worst))
    }
}

/// Checks `count` random graphs; returns (checked, worst relative error).
pub fn gradcheck_sweep(seed: u64, count: usize) -> Result<(usize, f64)> {
    let mut rng = seeded(seed);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    while checked < count {
        let g = Graph::random(&mut rng, 5);
        if let Some(e) = g.check(1e-5)? {
            worst = worst.max(e);
            checked += 1;
        }
    }
    Ok((checked, worst))
}

/// A half-moons experiment small enough to run every model in seconds.
pub fn tiny_config(name: &str, out: &std::path::Path, tasks: &str) -> String {
    format!(
        r#"name = "{name}"
out = {out:?}
seeds = [12345, 99999]
tasks = [{tasks}]

[dataset]
kind = "half-moons"

[dataset.half-moons]
train-size = 120
test-size = 40

[dataset.ood]
points-per-cluster = 10

[attack]
iterations = 5

[attack.proxy.train]
epochs = 5

[field]
resolution = 12

[model.bnn]
warmup = 20
samples = 4
thin = 1
max-tree-depth = 3

[model.deep-ensemble]
members = 3

[model.deep-ensemble.train]
epochs = 3

[model.mc-dropout]
passes = 8

[model.mc-dropout.train]
epochs = 3

[model.swag]
explore-epochs = 3
rank = 2
samples = 4

[model.swag.pretrain]
epochs = 3

[model.duq.train]
epochs = 3

[model.sngp]
features = 32

[model.sngp.train]
epochs = 3
"#
    )
}
