//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` walks it from the end. A tape is built
//! for one forward pass and dropped afterwards.

use crate::error::{Error, Result};
use crate::numeric::aft::{self, AftCache, AftDims};
use crate::numeric::kernels::{self, masked_softmax};
use crate::numeric::tensor::Tensor;

/// Variance guard of instance normalization.
pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    InstanceNorm(Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    Aafm {
        q: Var,
        k: Var,
        v: Var,
        a: Var,
        cache: Box<AftCache>,
    },
    SoftmaxMasked(Var, Vec<bool>),
    LogSoftmaxPick {
        logits: Var,
        mask: Vec<bool>,
        picks: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    WeightedSum(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(name: &str, data: &[f64]) -> Result<()> {
    if let Some(i) = data.iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("{name}: non-finite value {} at {i}", data[i])));
    }
    Ok(())
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src.to_vec()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, &data)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(Tensor::new(shape, data)?, op, requires_grad))
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::Dimension(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push("matmul", vec![m, n], out, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (n, k2) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::Dimension(format!("matmul_nt {m}x{k} by ({n}x{k2})ᵀ")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul_nt_acc(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        self.push("matmul_nt", vec![m, n], out, Op::MatMulNT(a, b), &[a, b])
    }

    /// Elementwise binary op. Shapes must be equal, or one side a single value.
    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = if ta.shape() == tb.shape() || tb.is_scalar() {
            ta.shape().to_vec()
        } else if ta.is_scalar() {
            tb.shape().to_vec()
        } else {
            return Err(Error::Dimension(format!(
                "{op:?}: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        };
        let n: usize = shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let ga = |i: usize| if da.len() == 1 { da[0] } else { da[i] };
        let gb = |i: usize| if db.len() == 1 { db[0] } else { db[i] };
        if op == Binary::Div && db.iter().any(|&x| x == 0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        let out: Vec<f64> = (0..n)
            .map(|i| match op {
                Binary::Add => ga(i) + gb(i),
                Binary::Sub => ga(i) - gb(i),
                Binary::Mul => ga(i) * gb(i),
                Binary::Div => ga(i) / gb(i),
            })
            .collect();
        self.push("binary", shape, out, Op::Binary(op, a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Result<Var> {
        let t = self.value(x);
        if op == Unary::Log && t.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Domain("log of non-positive value".into()));
        }
        let out: Vec<f64> = t
            .data()
            .iter()
            .map(|&v| match op {
                Unary::Neg => -v,
                Unary::Exp => v.exp(),
                Unary::Log => v.ln(),
                Unary::Sigmoid => kernels::sigmoid(v),
                Unary::Tanh => v.tanh(),
                Unary::Relu => v.max(0.0),
            })
            .collect();
        let shape = t.shape().to_vec();
        self.push("unary", shape, out, Op::Unary(op, x), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Neg, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let t = self.value(x);
        let out = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        self.push("scale", shape, out, Op::Scale(x, factor), &[x])
    }

    /// Adds vector `b` (length = columns of `x`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if self.value(b).numel() != c {
            return Err(Error::Dimension(format!("add_row: {r}x{c} with {}", self.value(b).numel())));
        }
        let (xd, bd) = (self.value(x).data(), self.value(b).data());
        let out = (0..r * c).map(|i| xd[i] + bd[i % c]).collect();
        let shape = self.value(x).shape().to_vec();
        self.push("add_row", shape, out, Op::AddRow(x, b), &[x, b])
    }

    /// Multiplies every row of `x` elementwise by vector `g`.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if self.value(g).numel() != c {
            return Err(Error::Dimension(format!("mul_row: {r}x{c} with {}", self.value(g).numel())));
        }
        let (xd, gd) = (self.value(x).data(), self.value(g).data());
        let out = (0..r * c).map(|i| xd[i] * gd[i % c]).collect();
        let shape = self.value(x).shape().to_vec();
        self.push("mul_row", shape, out, Op::MulRow(x, g), &[x, g])
    }

    /// Normalizes each column over the row (node) axis: `(h − mean)/sqrt(var + ε)`.
    pub fn instance_norm(&mut self, x: Var) -> Result<Var> {
        let (n, d) = self.dims2(x)?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * d];
        for c in 0..d {
            let mean = (0..n).map(|i| xd[i * d + c]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (xd[i * d + c] - mean).powi(2)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            for i in 0..n {
                out[i * d + c] = (xd[i * d + c] - mean) * inv;
            }
        }
        self.push("instance_norm", vec![n, d], out, Op::InstanceNorm(x), &[x])
    }

    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, d) = self.dims2(x)?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::Dimension(format!("gather_rows: row {bad} of {n}")));
        }
        let t = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(t.row(r));
        }
        self.push("gather_rows", vec![rows.len(), d], out, Op::GatherRows(x, rows.to_vec()), &[x])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims2(a)?;
        let (rb, cb) = self.dims2(b)?;
        if ra != rb {
            return Err(Error::Dimension(format!("concat_cols: {ra} vs {rb} rows")));
        }
        let (ta, tb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&ta.data()[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&tb.data()[i * cb..(i + 1) * cb]);
        }
        self.push("concat_cols", vec![ra, ca + cb], out, Op::ConcatCols(a, b), &[a, b])
    }

    /// Stacks `b` below `a`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims2(a)?;
        let (rb, cb) = self.dims2(b)?;
        if ca != cb {
            return Err(Error::Dimension(format!("concat_rows: {ca} vs {cb} columns")));
        }
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        self.push("concat_rows", vec![ra + rb, ca], out, Op::ConcatRows(a, b), &[a, b])
    }

    /// Adaptation attention-free pooling; see [`crate::numeric::aft`].
    pub fn aafm(&mut self, q: Var, k: Var, v: Var, a: Var) -> Result<Var> {
        let (nq, d) = self.dims2(q)?;
        let (nkv, dk) = self.dims2(k)?;
        let (nv, dv) = self.dims2(v)?;
        let (ar, ac) = self.dims2(a)?;
        if dk != d || dv != d || nv != nkv || ar != nq || ac != nkv {
            return Err(Error::Dimension(format!(
                "aafm: q {nq}x{d}, k {nkv}x{dk}, v {nv}x{dv}, a {ar}x{ac}"
            )));
        }
        let dims = AftDims { nq, nkv, d };
        let (out, cache) = aft::aft_forward(
            self.value(q).data(),
            self.value(k).data(),
            self.value(v).data(),
            self.value(a).data(),
            dims,
        )?;
        let op = Op::Aafm {
            q,
            k,
            v,
            a,
            cache: Box::new(cache),
        };
        self.push("aafm", vec![nq, d], out, op, &[q, k, v, a])
    }

    /// Row-wise softmax with masked entries forced to exactly zero.
    pub fn softmax_masked(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.dims2(logits)?;
        if mask.len() != r * c {
            return Err(Error::Dimension(format!("softmax_masked: mask {} for {r}x{c}", mask.len())));
        }
        let data = self.value(logits).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            masked_softmax(&data[i * c..(i + 1) * c], &mask[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c])
                .ok_or_else(|| Error::Infeasible(format!("softmax_masked: row {i} fully masked")))?;
        }
        let shape = self.value(logits).shape().to_vec();
        self.push("softmax_masked", shape, out, Op::SoftmaxMasked(logits, mask.to_vec()), &[logits])
    }

    /// Per-row `log p(pick)` under a masked softmax of `logits`.
    pub fn log_softmax_pick(&mut self, logits: Var, mask: &[bool], picks: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(logits)?;
        if mask.len() != r * c || picks.len() != r {
            return Err(Error::Dimension(format!(
                "log_softmax_pick: mask {} picks {} for {r}x{c}",
                mask.len(),
                picks.len()
            )));
        }
        let data = self.value(logits).data();
        let mut probs = vec![0.0; r * c];
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &data[i * c..(i + 1) * c];
            let mrow = &mask[i * c..(i + 1) * c];
            let p = picks[i];
            if p >= c || mrow[p] {
                return Err(Error::Contract(format!("log_softmax_pick: row {i} picks masked entry {p}")));
            }
            masked_softmax(row, mrow, &mut probs[i * c..(i + 1) * c])
                .ok_or_else(|| Error::Infeasible(format!("log_softmax_pick: row {i} fully masked")))?;
            let max = row
                .iter()
                .zip(mrow)
                .filter(|(_, &m)| !m)
                .map(|(&l, _)| l)
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = max
                + row
                    .iter()
                    .zip(mrow)
                    .filter(|(_, &m)| !m)
                    .map(|(&l, _)| (l - max).exp())
                    .sum::<f64>()
                    .ln();
            out[i] = row[p] - lse;
        }
        let op = Op::LogSoftmaxPick {
            logits,
            mask: mask.to_vec(),
            picks: picks.to_vec(),
            probs,
        };
        self.push("log_softmax_pick", vec![r], out, op, &[logits])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(x), &[x])
    }

    /// `Σ_i w_i x_i` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.value(x).numel() {
            return Err(Error::Dimension(format!(
                "weighted_sum: {} weights for {} values",
                weights.len(),
                self.value(x).numel()
            )));
        }
        let s = self.value(x).data().iter().zip(weights).map(|(a, b)| a * b).sum();
        self.push("weighted_sum", vec![1], vec![s], Op::WeightedSum(x, weights.to_vec()), &[x])
    }

    /// Accumulates `∂loss/∂node` into the gradient slot of every node that
    /// requires one. Calling it twice without [`Tape::zero_grad`] sums.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            add_into(&mut self.nodes[idx].value.grad, &g);
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).dims2().unwrap().1;
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_nt_acc(g, self.value(*b).data(), m, n, k, &mut da);
                    add_into(&mut grads[a.0], &da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_tn_acc(self.value(*a).data(), g, m, k, n, &mut db);
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).dims2().unwrap().0;
                if self.wants(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_acc(g, self.value(*b).data(), m, n, k, &mut da);
                    add_into(&mut grads[a.0], &da);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; n * k];
                    kernels::matmul_tn_acc(g, self.value(*a).data(), m, n, k, &mut db);
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::Binary(op, a, b) => {
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                let va = |i: usize| if da.len() == 1 { da[0] } else { da[i] };
                let vb = |i: usize| if db.len() == 1 { db[0] } else { db[i] };
                let n = g.len();
                let (ga, gb): (Vec<f64>, Vec<f64>) = (0..n)
                    .map(|i| match op {
                        Binary::Add => (g[i], g[i]),
                        Binary::Sub => (g[i], -g[i]),
                        Binary::Mul => (g[i] * vb(i), g[i] * va(i)),
                        Binary::Div => (g[i] / vb(i), -g[i] * va(i) / (vb(i) * vb(i))),
                    })
                    .unzip();
                let reduce = |full: Vec<f64>, len: usize| {
                    if len == 1 && full.len() != 1 {
                        vec![full.iter().sum()]
                    } else {
                        full
                    }
                };
                if self.wants(*a) {
                    add_into(&mut grads[a.0], &reduce(ga, da.len()));
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], &reduce(gb, db.len()));
                }
            }
            Op::Unary(op, x) => {
                if !self.wants(*x) {
                    return;
                }
                let xd = self.value(*x).data();
                let dx: Vec<f64> = (0..g.len())
                    .map(|i| match op {
                        Unary::Neg => -g[i],
                        Unary::Exp => g[i] * out[i],
                        Unary::Log => g[i] / xd[i],
                        Unary::Sigmoid => g[i] * out[i] * (1.0 - out[i]),
                        Unary::Tanh => g[i] * (1.0 - out[i] * out[i]),
                        Unary::Relu => {
                            if xd[i] > 0.0 {
                                g[i]
                            } else {
                                0.0
                            }
                        }
                    })
                    .collect();
                add_into(&mut grads[x.0], &dx);
            }
            Op::Scale(x, f) => {
                if self.wants(*x) {
                    let dx: Vec<f64> = g.iter().map(|v| v * f).collect();
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::AddRow(x, b) => {
                let c = self.value(*b).numel();
                if self.wants(*x) {
                    add_into(&mut grads[x.0], g);
                }
                if self.wants(*b) {
                    let mut db = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        db[i % c] += v;
                    }
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::MulRow(x, s) => {
                let c = self.value(*s).numel();
                let (xd, sd) = (self.value(*x).data(), self.value(*s).data());
                if self.wants(*x) {
                    let dx: Vec<f64> = g.iter().enumerate().map(|(i, v)| v * sd[i % c]).collect();
                    add_into(&mut grads[x.0], &dx);
                }
                if self.wants(*s) {
                    let mut ds = vec![0.0; c];
                    for (i, v) in g.iter().enumerate() {
                        ds[i % c] += v * xd[i];
                    }
                    add_into(&mut grads[s.0], &ds);
                }
            }
            Op::InstanceNorm(x) => {
                if !self.wants(*x) {
                    return;
                }
                let (n, d) = self.value(*x).dims2().unwrap();
                let xd = self.value(*x).data();
                let mut dx = vec![0.0; n * d];
                for c in 0..d {
                    let mean = (0..n).map(|i| xd[i * d + c]).sum::<f64>() / n as f64;
                    let var = (0..n).map(|i| (xd[i * d + c] - mean).powi(2)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + NORM_EPS).sqrt();
                    let gm = (0..n).map(|i| g[i * d + c]).sum::<f64>() / n as f64;
                    let gy = (0..n).map(|i| g[i * d + c] * out[i * d + c]).sum::<f64>() / n as f64;
                    for i in 0..n {
                        dx[i * d + c] = inv * (g[i * d + c] - gm - out[i * d + c] * gy);
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::GatherRows(x, rows) => {
                if !self.wants(*x) {
                    return;
                }
                let d = self.value(*x).dims2().unwrap().1;
                let mut dx = vec![0.0; self.value(*x).numel()];
                for (k, &r) in rows.iter().enumerate() {
                    for c in 0..d {
                        dx[r * d + c] += g[k * d + c];
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::ConcatCols(a, b) => {
                let (r, ca) = self.value(*a).dims2().unwrap();
                let cb = self.value(*b).dims2().unwrap().1;
                let w = ca + cb;
                if self.wants(*a) {
                    let da: Vec<f64> = (0..r).flat_map(|i| g[i * w..i * w + ca].to_vec()).collect();
                    add_into(&mut grads[a.0], &da);
                }
                if self.wants(*b) {
                    let db: Vec<f64> = (0..r).flat_map(|i| g[i * w + ca..(i + 1) * w].to_vec()).collect();
                    add_into(&mut grads[b.0], &db);
                }
            }
            Op::ConcatRows(a, b) => {
                let na = self.value(*a).numel();
                if self.wants(*a) {
                    add_into(&mut grads[a.0], &g[..na]);
                }
                if self.wants(*b) {
                    add_into(&mut grads[b.0], &g[na..]);
                }
            }
            Op::Aafm { q, k, v, a, cache } => {
                let gr = aft::aft_backward(
                    g,
                    self.value(*k).data(),
                    self.value(*v).data(),
                    self.value(*a).data(),
                    cache,
                );
                for (var, d) in [(q, gr.dq), (k, gr.dk), (v, gr.dv), (a, gr.da)] {
                    if self.wants(*var) {
                        add_into(&mut grads[var.0], &d);
                    }
                }
            }
            Op::SoftmaxMasked(x, mask) => {
                if !self.wants(*x) {
                    return;
                }
                let (r, c) = self.value(*x).dims2().unwrap();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let s: f64 = (0..c).map(|j| out[i * c + j] * g[i * c + j]).sum();
                    for j in 0..c {
                        if !mask[i * c + j] {
                            dx[i * c + j] = out[i * c + j] * (g[i * c + j] - s);
                        }
                    }
                }
                add_into(&mut grads[x.0], &dx);
            }
            Op::LogSoftmaxPick {
                logits,
                mask,
                picks,
                probs,
            } => {
                if !self.wants(*logits) {
                    return;
                }
                let (r, c) = self.value(*logits).dims2().unwrap();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        if !mask[i * c + j] {
                            let ind = if picks[i] == j { 1.0 } else { 0.0 };
                            dx[i * c + j] = g[i] * (ind - probs[i * c + j]);
                        }
                    }
                }
                add_into(&mut grads[logits.0], &dx);
            }
            Op::Sum(x) => {
                if self.wants(*x) {
                    let dx = vec![g[0]; self.value(*x).numel()];
                    add_into(&mut grads[x.0], &dx);
                }
            }
            Op::WeightedSum(x, w) => {
                if self.wants(*x) {
                    let dx: Vec<f64> = w.iter().map(|wi| wi * g[0]).collect();
                    add_into(&mut grads[x.0], &dx);
                }
            }
        }
    }
}
