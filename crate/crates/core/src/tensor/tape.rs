use std::sync::Arc;

use rand::Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::{matmul_into, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    StackRows(Vec<Var>),
    SelectRows(Var, Vec<usize>),
    Transpose(Var),
    Relu(Var),
    Sigmoid(Var),
    LogSigmoid(Var),
    Cos(Var),
    Log(Var),
    MaskedSoftmax(Var),
    Sum(Var),
    Mean(Var),
    Dropout(Var, Vec<f64>),
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// How the smaller operand of a binary elementwise op is repeated.
#[derive(Clone, Copy)]
enum Broadcast {
    Same,
    /// rhs is tiled over lhs.
    Rhs,
    /// lhs is tiled over rhs.
    Lhs,
}

fn trailing(shape: &[usize]) -> &[usize] {
    let lead = shape.iter().take_while(|&&d| d == 1).count();
    &shape[lead..]
}

fn broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        return Ok(Broadcast::Same);
    }
    let (ta, tb) = (trailing(a.shape()), trailing(b.shape()));
    if a.numel() >= b.numel() && a.shape().ends_with(tb) {
        return Ok(Broadcast::Rhs);
    }
    if b.numel() > a.numel() && b.shape().ends_with(ta) {
        return Ok(Broadcast::Lhs);
    }
    Err(Error::shape(op, a.shape(), b.shape()))
}

/// Sums a gradient of the broadcast result back onto the repeated operand.
fn reduce_repeats(grad: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for chunk in grad.chunks(len) {
        for (o, g) in out.iter_mut().zip(chunk) {
            *o += g;
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without forming the saturated sigmoid.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// A single-threaded record of operations for reverse-mode differentiation.
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    param_vars: Vec<Option<Var>>,
    training: bool,
    degenerate_softmax_rows: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_vars: Vec::new(),
            training: false,
            degenerate_softmax_rows: 0,
        }
    }

    /// A tape whose dropout ops are active.
    pub fn training() -> Self {
        Tape {
            training: true,
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn set_training(&mut self, training: bool) {
        self.training = training;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node and gradient.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.param_vars.clear();
        self.degenerate_softmax_rows = 0;
    }

    /// Rows seen by [`Tape::masked_softmax`] with no valid slot.
    pub fn degenerate_softmax_rows(&self) -> usize {
        self.degenerate_softmax_rows
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last [`Tape::backward`] call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.push_shared(Arc::new(value), op, requires_grad)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// The tape-side handle of a stored parameter; repeated calls return the
    /// same handle so gradients collect in one place.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push_shared(store.shared(id), Op::Param, true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn elementwise(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(Tensor, bool)> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = match broadcast(name, ta, tb)? {
            Broadcast::Same => ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Rhs => {
                let n = tb.numel();
                ta.data().iter().enumerate().map(|(i, &x)| f(x, tb.data()[i % n])).collect()
            }
            Broadcast::Lhs => {
                let n = ta.numel();
                tb.data().iter().enumerate().map(|(i, &y)| f(ta.data()[i % n], y)).collect()
            }
        };
        let shape = if ta.numel() >= tb.numel() { ta.shape() } else { tb.shape() };
        Ok((Tensor::new(shape.to_vec(), data)?, self.needs(&[a, b])))
    }

    /// Elementwise sum; the smaller operand broadcasts over leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.elementwise("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.elementwise("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.elementwise("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| x * factor).collect())
            .expect("same shape");
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    /// Concatenation along the last axis. All inputs share their leading
    /// shape.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of nothing".into()))?;
        let rows = self.value(*first).rows();
        let lead: Vec<usize> = {
            let s = self.shape(*first);
            s[..s.len().saturating_sub(1)].to_vec()
        };
        let mut width = 0;
        for &p in parts {
            let t = self.value(p);
            let s = t.shape();
            if s[..s.len().saturating_sub(1)] != lead[..] {
                return Err(Error::shape("concat", self.shape(*first), s));
            }
            width += t.cols();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let mut shape = lead;
        shape.push(width);
        let rg = self.needs(parts);
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Stacks `[r_i, n]` inputs into a `[Σ r_i, n]` matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack of nothing".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::shape("stack_rows", self.shape(*first), t.shape()));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let rg = self.needs(parts);
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::StackRows(parts.to_vec()), rg))
    }

    /// Gathers rows (with repetition allowed) into a new matrix.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (n, c) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if r >= n {
                return Err(Error::shape("select_rows", t.shape(), &[r]));
            }
            data.extend_from_slice(t.row_slice(r));
        }
        let rg = self.needs(&[a]);
        Ok(self.push(Tensor::new(vec![rows.len(), c], data)?, Op::SelectRows(a, rows.to_vec()), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.needs(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
            .expect("same shape");
        let rg = self.needs(&[a]);
        self.push(out, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Numerically stable `log(sigmoid(a))`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, log_sigmoid, Op::LogSigmoid(a))
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(a, f64::cos, Op::Cos(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    /// Softmax over the last axis restricted to slots whose mask bit is set.
    ///
    /// `mask` either covers every element or one row (then it applies to all
    /// rows). Masked slots get exactly zero weight. A row with no valid slot
    /// comes out all zero and is counted in
    /// [`Tape::degenerate_softmax_rows`].
    pub fn masked_softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = (t.rows(), t.cols());
        if let Some(m) = mask {
            if m.len() != cols && m.len() != t.numel() {
                return Err(Error::shape("masked_softmax", t.shape(), &[m.len()]));
            }
        }
        let valid = |r: usize, c: usize| match mask {
            None => true,
            Some(m) if m.len() == cols => m[c],
            Some(m) => m[r * cols + c],
        };
        let mut out = vec![0.0; rows * cols];
        let mut degenerate = 0;
        for r in 0..rows {
            let x = t.row_slice(r);
            let max = (0..cols)
                .filter(|&c| valid(r, c))
                .map(|c| x[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                degenerate += 1;
                continue;
            }
            let mut sum = 0.0;
            for c in (0..cols).filter(|&c| valid(r, c)) {
                let e = (x[c] - max).exp();
                out[r * cols + c] = e;
                sum += e;
            }
            for o in &mut out[r * cols..(r + 1) * cols] {
                *o /= sum;
            }
        }
        let out = Tensor::new(t.shape().to_vec(), out)?;
        self.degenerate_softmax_rows += degenerate;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::MaskedSoftmax(a), rg))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.masked_softmax(a, None)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel().max(1) as f64;
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Inverted dropout: at training time each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`. Identity
    /// when the tape is not training or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Var {
        if !self.training || p <= 0.0 {
            return a;
        }
        let keep = 1.0 - p;
        let t = self.value(a);
        let mask: Vec<f64> = (0..t.numel())
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = t.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(&[a]);
        self.push(out, Op::Dropout(a, mask), rg)
    }

    /// Reverse sweep from a scalar `loss`. Gradients from fan-out accumulate;
    /// leaves that require a gradient but do not reach the loss get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(&shape));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf | Op::Param) && grads[i].is_none()
            {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let send = |v: Var, delta: Tensor, grads: &mut [Option<Tensor>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let like = |v: Var, data: Vec<f64>| {
            Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape")
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.nodes[a.0].requires_grad {
                    // dA = G · Bᵀ
                    let bt = tb.transpose();
                    let mut da = vec![0.0; m * k];
                    matmul_into(gd, bt.data(), &mut da, m, n, k);
                    send(*a, like(*a, da), grads);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = Aᵀ · G
                    let at = ta.transpose();
                    let mut db = vec![0.0; k * n];
                    matmul_into(at.data(), gd, &mut db, k, m, n);
                    send(*b, like(*b, db), grads);
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                for (v, s) in [(*a, 1.0), (*b, sign)] {
                    let len = self.value(v).numel();
                    let mut d = if len == gd.len() {
                        gd.to_vec()
                    } else {
                        reduce_repeats(gd, len)
                    };
                    if s != 1.0 {
                        d.iter_mut().for_each(|x| *x *= s);
                    }
                    send(v, like(v, d), grads);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                for (v, other) in [(*a, tb), (*b, ta)] {
                    if !self.nodes[v.0].requires_grad {
                        continue;
                    }
                    let on = other.numel();
                    let full: Vec<f64> = gd
                        .iter()
                        .enumerate()
                        .map(|(j, g)| g * other.data()[j % on])
                        .collect();
                    let len = self.value(v).numel();
                    let d = if len == full.len() { full } else { reduce_repeats(&full, len) };
                    send(v, like(v, d), grads);
                }
            }
            Op::Scale(a, f) => send(*a, like(*a, gd.iter().map(|x| x * f).collect()), grads),
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                    send(p, like(p, d), grads);
                }
            }
            Op::StackRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    send(p, like(p, gd[offset..offset + n].to_vec()), grads);
                    offset += n;
                }
            }
            Op::SelectRows(a, rows) => {
                let c = g.cols();
                let mut d = vec![0.0; self.value(*a).numel()];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..c {
                        d[r * c + j] += gd[k * c + j];
                    }
                }
                send(*a, like(*a, d), grads);
            }
            Op::Transpose(a) => send(*a, g.transpose().into_data_with_shape(self.shape(*a)), grads),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect();
                send(*a, like(*a, d), grads);
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let d = gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                send(*a, like(*a, d), grads);
            }
            Op::LogSigmoid(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, &x)| g * sigmoid(-x)).collect();
                send(*a, like(*a, d), grads);
            }
            Op::Cos(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, x)| -g * x.sin()).collect();
                send(*a, like(*a, d), grads);
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let d = gd.iter().zip(x).map(|(g, x)| g / x).collect();
                send(*a, like(*a, d), grads);
            }
            Op::MaskedSoftmax(a) => {
                let y = &node.value;
                let (rows, cols) = (y.rows(), y.cols());
                let mut d = vec![0.0; rows * cols];
                for r in 0..rows {
                    let yr = y.row_slice(r);
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for c in 0..cols {
                        d[r * cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                send(*a, like(*a, d), grads);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                send(*a, like(*a, vec![gd[0]; n]), grads);
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                send(*a, like(*a, vec![gd[0] / n as f64; n]), grads);
            }
            Op::Dropout(a, mask) => {
                let d = gd.iter().zip(mask).map(|(g, m)| g * m).collect();
                send(*a, like(*a, d), grads);
            }
        }
        Ok(())
    }

    /// Gradients of every parameter that entered this tape, taken from the
    /// last backward sweep.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.param_vars.iter().enumerate().filter_map(move |(i, v)| {
            let v = (*v)?;
            self.grad(v).map(|g| (ParamId(i), g))
        })
    }

    /// Adds this tape's parameter gradients into `acc`.
    pub fn accumulate_into(&self, acc: &mut Gradients) {
        for (id, g) in self.param_grads() {
            acc.accumulate(id, g);
        }
    }
}

impl Tensor {
    fn into_data_with_shape(self, shape: &[usize]) -> Tensor {
        Tensor::new(shape.to_vec(), self.into_data()).expect("transpose gradient")
    }
}
