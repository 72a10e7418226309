//! Dynamic reverse-mode tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each primitive appends one
//! node holding its value and the indices of its parents; [`Tape::backward`]
//! walks the nodes once in reverse order. Because nodes can only reference
//! earlier nodes, insertion order is already a topological order.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce over rows, producing `[1, cols]`.
    Rows,
    /// Reduce over columns, producing `[rows, 1]`.
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Cos(usize),
    Square(usize),
    Sqrt(usize),
    Clamp(usize, f64, f64),
    Softmax(usize),
    LogSoftmax(usize),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, Axis),
    L2Norm(usize),
    Dropout(usize, Vec<f64>),
    GatherRows(usize, Vec<usize>),
    Pick(usize, Vec<usize>),
    Transpose(usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when the loss
    /// does not depend on it.
    pub fn get(&self, var: Var) -> Option<Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads[var.index]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[var.index].clone(), g.clone()).unwrap())
    }

    /// Like [`get`](Self::get) but zero-filled for unreachable nodes.
    pub fn wrt(&self, var: Var) -> Result<Tensor> {
        if var.tape != self.tape {
            return Err(Error::ForeignNode(var.index));
        }
        let shape = &self.shapes[var.index];
        Ok(self.get(var).unwrap_or_else(|| Tensor::zeros(shape)))
    }
}

fn broadcast_shape(a: &Tensor, b: &Tensor) -> Option<Vec<usize>> {
    if a.shape() == b.shape() {
        return Some(a.shape().to_vec());
    }
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let r = join(ar, br)?;
    let c = join(ac, bc)?;
    if a.rank() <= 2 && b.rank() <= 2 {
        if a.rank().max(b.rank()) <= 1 && r == 1 {
            Some(vec![c])
        } else {
            Some(vec![r, c])
        }
    } else {
        None
    }
}

fn join(x: usize, y: usize) -> Option<usize> {
    match (x, y) {
        _ if x == y => Some(x),
        (1, _) => Some(y),
        (_, 1) => Some(x),
        _ => None,
    }
}

/// Row and column strides that map an output index of a broadcast result
/// back onto an operand.
fn strides(t: &Tensor) -> (usize, usize) {
    let (r, c) = t.dims2();
    (if r == 1 { 0 } else { c }, if c == 1 { 0 } else { 1 })
}

fn softmax_rows(x: &[f64], cols: usize, out: &mut [f64]) {
    for (xr, or) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - max).exp();
            total += *o;
        }
        for o in or.iter_mut() {
            *o /= total;
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor> {
        self.check(var)?;
        Ok(&self.nodes[var.index].value)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.tape != self.id || var.index >= self.nodes.len() {
            return Err(Error::ForeignNode(var.index));
        }
        Ok(())
    }

    fn node(&self, var: Var) -> Result<&Node> {
        self.check(var)?;
        Ok(&self.nodes[var.index])
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let node = self.node(a)?;
        let value = node.value.map(f);
        let rg = node.requires_grad;
        Ok(self.push(value, op, rg))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        let shape = broadcast_shape(&na.value, &nb.value)
            .ok_or_else(|| Error::shape(name, &[na.value.shape(), nb.value.shape()]))?;
        let (r, c) = {
            let (ar, ac) = na.value.dims2();
            let (br, bc) = nb.value.dims2();
            (ar.max(br), ac.max(bc))
        };
        let (ars, acs) = strides(&na.value);
        let (brs, bcs) = strides(&nb.value);
        let (ad, bd) = (na.value.data(), nb.value.data());
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                out.push(f(ad[i * ars + j * acs], bd[i * brs + j * bcs]));
            }
        }
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        let (m, k) = na.value.dims2();
        let (k2, n) = nb.value.dims2();
        if na.value.rank() != 2 || nb.value.rank() != 2 || k != k2 {
            return Err(Error::shape(
                "matmul",
                &[na.value.shape(), nb.value.shape()],
            ));
        }
        let mut out = vec![0.0; m * n];
        gemm(na.value.data(), (m, k), false, nb.value.data(), (k, n), false, &mut out);
        let rg = na.requires_grad || nb.requires_grad;
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a.index, b.index), rg))
    }

    /// Elementwise sum with row/column broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a.index, b.index), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a.index, b.index), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a.index, b.index), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a.index, b.index), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a.index, k), |x| k * x)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    /// `a + k` elementwise.
    pub fn offset(&mut self, a: Var, k: f64) -> Result<Var> {
        self.unary(a, Op::Offset(a.index), |x| x + k)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a.index), |x| x.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a.index), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Log(a.index), f64::ln)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Cos(a.index), f64::cos)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a.index), |x| x * x)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Sqrt(a.index), f64::sqrt)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, Op::Clamp(a.index, lo, hi), |x| x.clamp(lo, hi))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let node = self.node(a)?;
        let cols = node.value.cols();
        let mut out = vec![0.0; node.value.len()];
        softmax_rows(node.value.data(), cols, &mut out);
        let value = Tensor::new(node.value.shape().to_vec(), out)?;
        let rg = node.requires_grad;
        Ok(self.push(value, Op::Softmax(a.index), rg))
    }

    /// Numerically stable `log(softmax(a))` over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let node = self.node(a)?;
        let cols = node.value.cols();
        let mut out = Vec::with_capacity(node.value.len());
        for row in node.value.data().chunks(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|v| v - lse));
        }
        let value = Tensor::new(node.value.shape().to_vec(), out)?;
        let rg = node.requires_grad;
        Ok(self.push(value, Op::LogSoftmax(a.index), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let node = self.node(a)?;
        let s = node.value.data().iter().sum();
        let rg = node.requires_grad;
        Ok(self.push(Tensor::scalar(s), Op::Sum(a.index), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let node = self.node(a)?;
        if node.value.is_empty() {
            return Err(Error::shape("mean", &[node.value.shape()]));
        }
        let s = node.value.data().iter().sum::<f64>() / node.value.len() as f64;
        let rg = node.requires_grad;
        Ok(self.push(Tensor::scalar(s), Op::Mean(a.index), rg))
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let node = self.node(a)?;
        let (r, c) = node.value.dims2();
        let d = node.value.data();
        let value = match axis {
            Axis::Rows => {
                let mut out = vec![0.0; c];
                for row in d.chunks(c) {
                    for (o, v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                Tensor::matrix(1, c, out)?
            }
            Axis::Cols => Tensor::matrix(r, 1, d.chunks(c).map(|row| row.iter().sum()).collect())?,
        };
        let rg = node.requires_grad;
        Ok(self.push(value, Op::SumAxis(a.index, axis), rg))
    }

    /// Frobenius norm of the whole tensor.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let node = self.node(a)?;
        let n = node.value.norm_l2();
        let rg = node.requires_grad;
        Ok(self.push(Tensor::scalar(n), Op::L2Norm(a.index), rg))
    }

    /// Inverted dropout: each unit is zeroed with probability `rate` and
    /// survivors are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        let node = self.node(a)?;
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..node.value.len())
            .map(|_| {
                if rate > 0.0 && rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let out = node.value.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(node.value.shape().to_vec(), out)?;
        let rg = node.requires_grad;
        Ok(self.push(value, Op::Dropout(a.index, mask), rg))
    }

    /// Selects rows of a matrix (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let node = self.node(a)?;
        let rows = node.value.rows();
        if node.value.rank() != 2 || indices.iter().any(|&i| i >= rows) {
            return Err(Error::shape("gather_rows", &[node.value.shape(), &[indices.len()]]));
        }
        let value = node.value.select_rows(indices);
        let rg = node.requires_grad;
        Ok(self.push(value, Op::GatherRows(a.index, indices.to_vec()), rg))
    }

    /// Picks `a[i, indices[i]]` from every row, giving a vector.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let node = self.node(a)?;
        let (r, c) = node.value.dims2();
        if indices.len() != r || indices.iter().any(|&j| j >= c) {
            return Err(Error::shape("pick", &[node.value.shape(), &[indices.len()]]));
        }
        let out = indices.iter().enumerate().map(|(i, &j)| node.value.get(i, j)).collect();
        let rg = node.requires_grad;
        Ok(self.push(Tensor::vector(out), Op::Pick(a.index, indices.to_vec()), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let node = self.node(a)?;
        if node.value.rank() != 2 {
            return Err(Error::shape("transpose", &[node.value.shape()]));
        }
        let value = node.value.transpose();
        let rg = node.requires_grad;
        Ok(self.push(value, Op::Transpose(a.index), rg))
    }

    /// Mean softmax cross-entropy of `logits` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lp = self.log_softmax(logits)?;
        let picked = self.pick(lp, labels)?;
        let m = self.mean(picked)?;
        self.neg(m)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        let root = &self.nodes[loss.index];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(vec![1.0]);

        for idx in (0..=loss.index).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |i: usize| &self.nodes[i].value;
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).dims2();
                let n = val(*b).cols();
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    gemm(g, (m, n), false, val(*b).data(), (k, n), true, &mut ga);
                    self.accumulate(grads, *a, &ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    gemm(val(*a).data(), (m, k), true, g, (m, n), false, &mut gb);
                    self.accumulate(grads, *b, &gb);
                }
            }
            Op::Add(a, b) => self.broadcast_back(node, g, grads, *a, *b, |_, _| (1.0, 1.0)),
            Op::Sub(a, b) => self.broadcast_back(node, g, grads, *a, *b, |_, _| (1.0, -1.0)),
            Op::Mul(a, b) => self.broadcast_back(node, g, grads, *a, *b, |x, y| (y, x)),
            Op::Div(a, b) => {
                self.broadcast_back(node, g, grads, *a, *b, |x, y| (1.0 / y, -x / (y * y)))
            }
            Op::Scale(a, k) => self.elementwise_back(grads, *a, g, |gi, _, _| gi * k, y),
            Op::Offset(a) => self.elementwise_back(grads, *a, g, |gi, _, _| gi, y),
            Op::Relu(a) => self.elementwise_back(
                grads,
                *a,
                g,
                |gi, x, _| if x > 0.0 { gi } else { 0.0 },
                y,
            ),
            Op::Exp(a) => self.elementwise_back(grads, *a, g, |gi, _, yi| gi * yi, y),
            Op::Log(a) => self.elementwise_back(grads, *a, g, |gi, x, _| gi / x, y),
            Op::Cos(a) => self.elementwise_back(grads, *a, g, |gi, x, _| -gi * x.sin(), y),
            Op::Square(a) => self.elementwise_back(grads, *a, g, |gi, x, _| 2.0 * x * gi, y),
            Op::Sqrt(a) => self.elementwise_back(grads, *a, g, |gi, _, yi| gi / (2.0 * yi), y),
            Op::Clamp(a, lo, hi) => self.elementwise_back(
                grads,
                *a,
                g,
                |gi, x, _| if x >= *lo && x <= *hi { gi } else { 0.0 },
                y,
            ),
            Op::Softmax(a) => {
                let cols = node.value.cols();
                let mut ga = vec![0.0; y.len()];
                for ((yr, gr), out) in y.chunks(cols).zip(g.chunks(cols)).zip(ga.chunks_mut(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, yi), gi) in out.iter_mut().zip(yr).zip(gr) {
                        *o = yi * (gi - dot);
                    }
                }
                self.accumulate(grads, *a, &ga);
            }
            Op::LogSoftmax(a) => {
                let cols = node.value.cols();
                let mut ga = vec![0.0; y.len()];
                for ((yr, gr), out) in y.chunks(cols).zip(g.chunks(cols)).zip(ga.chunks_mut(cols)) {
                    let total: f64 = gr.iter().sum();
                    for ((o, yi), gi) in out.iter_mut().zip(yr).zip(gr) {
                        *o = gi - yi.exp() * total;
                    }
                }
                self.accumulate(grads, *a, &ga);
            }
            Op::Sum(a) => {
                let ga = vec![g[0]; val(*a).len()];
                self.accumulate(grads, *a, &ga);
            }
            Op::Mean(a) => {
                let n = val(*a).len();
                let ga = vec![g[0] / n as f64; n];
                self.accumulate(grads, *a, &ga);
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = val(*a).dims2();
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = match axis {
                            Axis::Rows => g[j],
                            Axis::Cols => g[i],
                        };
                    }
                }
                self.accumulate(grads, *a, &ga);
            }
            Op::L2Norm(a) => {
                let norm = y[0];
                let x = val(*a).data();
                let ga: Vec<f64> = if norm > 0.0 {
                    x.iter().map(|xi| g[0] * xi / norm).collect()
                } else {
                    vec![0.0; x.len()]
                };
                self.accumulate(grads, *a, &ga);
            }
            Op::Dropout(a, mask) => {
                let ga: Vec<f64> = g.iter().zip(mask).map(|(gi, m)| gi * m).collect();
                self.accumulate(grads, *a, &ga);
            }
            Op::GatherRows(a, indices) => {
                let c = val(*a).cols();
                let mut ga = vec![0.0; val(*a).len()];
                for (k, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        ga[i * c + j] += g[k * c + j];
                    }
                }
                self.accumulate(grads, *a, &ga);
            }
            Op::Pick(a, indices) => {
                let c = val(*a).cols();
                let mut ga = vec![0.0; val(*a).len()];
                for (i, &j) in indices.iter().enumerate() {
                    ga[i * c + j] = g[i];
                }
                self.accumulate(grads, *a, &ga);
            }
            Op::Transpose(a) => {
                let (r, c) = node.value.dims2();
                let gt = Tensor::matrix(r, c, g.to_vec()).unwrap().transpose();
                self.accumulate(grads, *a, gt.data());
            }
        }
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], i: usize, contribution: &[f64]) {
        if !self.wants(i) {
            return;
        }
        match &mut grads[i] {
            Some(acc) => {
                for (a, c) in acc.iter_mut().zip(contribution) {
                    *a += c;
                }
            }
            slot @ None => *slot = Some(contribution.to_vec()),
        }
    }

    fn elementwise_back(
        &self,
        grads: &mut [Option<Vec<f64>>],
        a: usize,
        g: &[f64],
        f: impl Fn(f64, f64, f64) -> f64,
        y: &[f64],
    ) {
        if !self.wants(a) {
            return;
        }
        let x = self.nodes[a].value.data();
        let ga: Vec<f64> = g
            .iter()
            .zip(x)
            .zip(y)
            .map(|((&gi, &xi), &yi)| f(gi, xi, yi))
            .collect();
        self.accumulate(grads, a, &ga);
    }

    /// Reverse of a broadcasting binary op; `local(x, y)` returns the partial
    /// derivatives with respect to each operand.
    fn broadcast_back(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        a: usize,
        b: usize,
        local: impl Fn(f64, f64) -> (f64, f64),
    ) {
        let (ta, tb) = (&self.nodes[a].value, &self.nodes[b].value);
        let (r, c) = node.value.dims2();
        let (ars, acs) = strides(ta);
        let (brs, bcs) = strides(tb);
        let (ad, bd) = (ta.data(), tb.data());
        let mut ga = self.wants(a).then(|| vec![0.0; ad.len()]);
        let mut gb = self.wants(b).then(|| vec![0.0; bd.len()]);
        for i in 0..r {
            for j in 0..c {
                let (ia, ib) = (i * ars + j * acs, i * brs + j * bcs);
                let (da, db) = local(ad[ia], bd[ib]);
                let gi = g[i * c + j];
                if let Some(ga) = ga.as_mut() {
                    ga[ia] += gi * da;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib] += gi * db;
                }
            }
        }
        if let Some(ga) = ga {
            self.accumulate(grads, a, &ga);
        }
        if let Some(gb) = gb {
            self.accumulate(grads, b, &gb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_clips_negatives() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn matmul_of_ones() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::full(&[2, 3], 1.0));
        let b = tape.constant(Tensor::full(&[3, 1], 1.0));
        let c = tape.matmul(a, b).unwrap();
        let v = tape.value(c).unwrap();
        assert_eq!(v.shape(), &[2, 1]);
        assert_eq!(v.data(), &[3.0, 3.0]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        let err = tape.add(a, c).unwrap_err().to_string();
        assert!(err.starts_with("add"), "{err}");
    }

    #[test]
    fn quadratic_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient_at_uniform_logits() {
        let mut tape = Tape::new();
        let z = tape.param(t(&[1, 2], &[0.0, 0.0]));
        let loss = tape.cross_entropy(z, &[0]).unwrap();
        let g = tape.backward(loss).unwrap().wrt(z).unwrap();
        assert_abs_diff_eq!(g.data()[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g.data()[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_nodes() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::NonScalarLoss(_))));
        let mut other = Tape::new();
        let s = other.param(Tensor::scalar(1.0));
        assert!(matches!(tape.backward(s), Err(Error::ForeignNode(_))));
    }

    #[test]
    fn broadcast_bias_gradient_sums_rows() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3, 2], &[1., 2., 3., 4., 5., 6.]));
        let b = tape.param(t(&[1, 2], &[0.5, -0.5]));
        let y = tape.add(x, b).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap().wrt(b).unwrap();
        assert_eq!(g.data(), &[3.0, 3.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let w = tape.param(Tensor::vector(vec![3.0, 4.0]));
        let y = tape.mul(x, w).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).is_none());
        assert_eq!(grads.wrt(w).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn dropout_rate_zero_is_identity_and_bad_rate_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![1.0, -2.0, 3.0]));
        let y = tape.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), &[1.0, -2.0, 3.0]);
        assert!(tape.dropout(x, 1.0, &mut rng).is_err());
        assert!(tape.dropout(x, -0.1, &mut rng).is_err());
    }

    #[test]
    fn dropout_zero_fraction_is_binomial() {
        let rate = 0.2;
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[n], 1.0));
        let y = tape.dropout(x, rate, &mut rng).unwrap();
        let zeros = tape.value(y).unwrap().data().iter().filter(|&&v| v == 0.0).count();
        let sd = (n as f64 * rate * (1.0 - rate)).sqrt();
        assert!((zeros as f64 - n as f64 * rate).abs() < 3.0 * sd, "{zeros}");
    }

    #[test]
    fn pick_and_gather() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let p = tape.pick(a, &[2, 0]).unwrap();
        assert_eq!(tape.value(p).unwrap().data(), &[3.0, 4.0]);
        let g = tape.gather_rows(a, &[1, 1]).unwrap();
        assert_eq!(tape.value(g).unwrap().data(), &[4., 5., 6., 4., 5., 6.]);
        let s = tape.sum(g).unwrap();
        let ga = tape.backward(s).unwrap().wrt(a).unwrap();
        assert_eq!(ga.data(), &[0., 0., 0., 2., 2., 2.]);
    }
}
