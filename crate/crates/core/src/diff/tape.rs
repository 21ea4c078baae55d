use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Max(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Gather { table: Var, ids: Vec<usize> },
    Relu(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Sum(Var),
    Mean(Var),
    Abs(Var),
    Ln(Var),
    Sigmoid(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Softmax(Var),
    LogSoftmax(Var),
    Log1mSoftmax(Var),
    Sort { x: Var, perm: Vec<usize> },
    Concat(Vec<Var>),
    Narrow { x: Var, start: usize },
    Reshape(Var),
    DepthwiseConv { x: Var, kernel: Var },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed in evaluation order, so every node's inputs precede it
/// and a single reverse sweep is a valid backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when the loss does not depend on it.
    pub fn of(&self, var: Var) -> Vec<f64> {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => vec![0.0; self.lens[var.0]],
        }
    }

    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}

/// `b` broadcasts against `a` when it is a single element or a trailing
/// sub-shape of `a` (e.g. a bias row against a matrix).
fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    let bn: usize = b.iter().product();
    if a == b || bn == 1 {
        return true;
    }
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1).max(1)
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn values(&self, var: Var) -> &[f64] {
        self.nodes[var.0].value.values()
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcastable(sa, sb) {
            return Err(shape_err(format!("{name}: {sa:?} vs {sb:?}")));
        }
        let av = self.values(a);
        let bv = self.values(b);
        let bn = bv.len();
        let out: Vec<f64> = av
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bv[i % bn]))
            .collect();
        let shape = sa.to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// Elementwise maximum; on ties the gradient goes to `a`.
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "max", f64::max, Op::Max(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.map(x, |v| v * factor);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(x);
        Tensor::new(t.shape().to_vec(), t.values().iter().map(|&v| f(v)).collect())
            .expect("same shape")
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err(format!("matmul: {sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = self.values(a);
        let bv = self.values(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let row = &bv[p * n..(p + 1) * n];
                for (o, &y) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                    *o += x * y;
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// Row lookup: `table[V, d]` and ids -> `[len(ids), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let shape = self.shape(table).to_vec();
        if shape.len() != 2 {
            return Err(shape_err(format!("gather: table shape {shape:?}")));
        }
        let (rows, d) = (shape[0], shape[1]);
        let tv = self.values(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::IndexOutOfRange {
                    index: id,
                    len: rows,
                });
            }
            out.extend_from_slice(&tv[id * d..(id + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::matrix(ids.len(), d, out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.map(x, |v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Inverted dropout. Returns `x` unchanged outside training or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        x: Var,
        p: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidDropout(p));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let out: Vec<f64> = t.values().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Dropout { x, mask }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.values(x).iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.values(x);
        let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.map(x, f64::abs);
        let rg = self.rg(x);
        self.push(value, Op::Abs(x), rg)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let value = self.map(x, f64::ln);
        let rg = self.rg(x);
        self.push(value, Op::Ln(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.map(x, sigmoid);
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    /// Clamp into `[lo, hi]`; zero gradient outside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.map(x, |v| v.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(value, Op::Clamp { x, lo, hi }, rg)
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err("softmax of empty tensor"));
        }
        let cols = last_dim(t.shape());
        let mut out = t.values().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Log-softmax over the last dimension.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err("log_softmax of empty tensor"));
        }
        let cols = last_dim(t.shape());
        let mut out = t.values().to_vec();
        for row in out.chunks_mut(cols) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::LogSoftmax(x), rg))
    }

    /// `ln(1 - softmax(x))` over the last dimension, computed without
    /// forming `1 - p`, so a near-certain entry gets its exact (very
    /// negative) log complement rather than `ln 0`.
    pub fn log1m_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err("log1m_softmax of empty tensor"));
        }
        let cols = last_dim(t.shape());
        let out: Vec<f64> = t
            .values()
            .chunks(cols)
            .flat_map(|row| {
                let r = Log1mRow::new(row);
                (0..row.len()).map(move |i| r.value(i))
            })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Log1mSoftmax(x), rg))
    }

    /// Flattens and sorts ascending. Returns the sorted values and, for each
    /// output position, the source index it came from. Equal values keep
    /// their original order.
    pub fn sort_ascending(&mut self, x: Var) -> (Var, Vec<usize>) {
        let v = self.values(x);
        let mut perm: Vec<usize> = (0..v.len()).collect();
        perm.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let out: Vec<f64> = perm.iter().map(|&i| v[i]).collect();
        let rg = self.rg(x);
        let var = self.push(
            Tensor::vector(out),
            Op::Sort {
                x,
                perm: perm.clone(),
            },
            rg,
        );
        (var, perm)
    }

    /// Concatenation along the first axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| shape_err("concat of nothing"))?;
        let tail: Vec<usize> = self.shape(first).iter().skip(1).copied().collect();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(shape_err(format!("concat: {s:?} vs trailing {tail:?}")));
            }
            rows += s[0];
            out.extend_from_slice(self.values(p));
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(parts.to_vec()), rg))
    }

    /// Rows `start..start + len` along the first axis.
    pub fn narrow(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(shape_err(format!("narrow {start}+{len} of {shape:?}")));
        }
        let row: usize = shape[1..].iter().product();
        let out = self.values(x)[start * row..(start + len) * row].to_vec();
        let mut new_shape = shape;
        new_shape[0] = len;
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(new_shape, out)?, Op::Narrow { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(shape_err(format!(
                "reshape {:?} -> {shape:?}",
                self.shape(x)
            )));
        }
        let value = self.value(x).clone().with_shape(shape.to_vec());
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Per-channel 1-D convolution over the first axis with zero padding.
    /// `x` is `[n, d]`, `kernel` is `[w, d]` with odd `w`; output is `[n, d]`.
    pub fn depthwise_conv1d(&mut self, x: Var, kernel: Var) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sk = self.shape(kernel).to_vec();
        if sx.len() != 2 || sk.len() != 2 || sx[1] != sk[1] || sk[0] % 2 == 0 {
            return Err(shape_err(format!("depthwise_conv1d: {sx:?} with {sk:?}")));
        }
        let (n, d, w) = (sx[0], sx[1], sk[0]);
        let half = w / 2;
        let xv = self.values(x);
        let kv = self.values(kernel);
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            for t in 0..w {
                let Some(src) = (i + t).checked_sub(half).filter(|&s| s < n) else {
                    continue;
                };
                for c in 0..d {
                    out[i * d + c] += kv[t * d + c] * xv[src * d + c];
                }
            }
        }
        let rg = self.rg(x) || self.rg(kernel);
        Ok(self.push(
            Tensor::matrix(n, d, out)?,
            Op::DepthwiseConv { x, kernel },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let lens: Vec<usize> = self.nodes.iter().map(|n| n.value.len()).collect();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads, lens })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = self.nodes[idx].value.values();
        let val = |v: Var| self.nodes[v.0].value.values();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        // Broadcast rhs: element i of the output reads b[i % len(b)].
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |gb| {
                    let n = gb.len();
                    g.iter().enumerate().for_each(|(i, y)| gb[i % n] += y)
                });
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                acc(*b, &mut |gb| {
                    let n = gb.len();
                    g.iter().enumerate().for_each(|(i, y)| gb[i % n] -= y)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let bn = bv.len();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i % bn];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        gb[i % bn] += g[i] * av[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let bn = bv.len();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] / bv[i % bn];
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        let d = bv[i % bn];
                        gb[i % bn] -= g[i] * av[i] / (d * d);
                    }
                });
            }
            Op::Max(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let bn = bv.len();
                acc(*a, &mut |ga| {
                    for i in 0..ga.len() {
                        if av[i] >= bv[i % bn] {
                            ga[i] += g[i];
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..g.len() {
                        if av[i] < bv[i % bn] {
                            gb[i % bn] += g[i];
                        }
                    }
                });
            }
            Op::Scale(x, f) => acc(*x, &mut |gx| {
                gx.iter_mut().zip(g).for_each(|(a, b)| *a += f * b)
            }),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let (av, bv) = (val(*a), val(*b));
                acc(*a, &mut |ga| {
                    for i in 0..m {
                        for p in 0..k {
                            let row = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] +=
                                g[i * n..(i + 1) * n].iter().zip(row).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for i in 0..m {
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += x * g[i * n + j];
                            }
                        }
                    }
                });
            }
            Op::Gather { table, ids } => {
                let d = self.shape(*table)[1];
                acc(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..d {
                            gt[id * d + c] += g[r * d + c];
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        if xv[i] > 0.0 {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            Op::Dropout { x, mask } => acc(*x, &mut |gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] * mask[i];
                }
            }),
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => acc(*x, &mut |gx| {
                let n = gx.len() as f64;
                gx.iter_mut().for_each(|v| *v += g[0] / n)
            }),
            Op::Abs(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] * sign(xv[i]);
                    }
                });
            }
            Op::Ln(x) => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        gx[i] += g[i] / xv[i];
                    }
                });
            }
            Op::Sigmoid(x) => acc(*x, &mut |gx| {
                for i in 0..gx.len() {
                    gx[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::Clamp { x, lo, hi } => {
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for i in 0..gx.len() {
                        if xv[i] >= *lo && xv[i] <= *hi {
                            gx[i] += g[i];
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let cols = last_dim(self.shape(*x));
                acc(*x, &mut |gx| {
                    for ((gr, yr), xr) in g.chunks(cols).zip(out.chunks(cols)).zip(gx.chunks_mut(cols)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            xr[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let cols = last_dim(self.shape(*x));
                acc(*x, &mut |gx| {
                    for ((gr, yr), xr) in g.chunks(cols).zip(out.chunks(cols)).zip(gx.chunks_mut(cols)) {
                        let total: f64 = gr.iter().sum();
                        for j in 0..cols {
                            xr[j] += gr[j] - yr[j].exp() * total;
                        }
                    }
                });
            }
            Op::Log1mSoftmax(x) => {
                let cols = last_dim(self.shape(*x));
                let xv = val(*x);
                acc(*x, &mut |gx| {
                    for ((gr, xr), gxr) in g.chunks(cols).zip(xv.chunks(cols)).zip(gx.chunks_mut(cols)) {
                        Log1mRow::new(xr).backward(gr, gxr);
                    }
                });
            }
            Op::Sort { x, perm } => acc(*x, &mut |gx| {
                for (pos, &src) in perm.iter().enumerate() {
                    gx[src] += g[pos];
                }
            }),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    acc(p, &mut |gp| {
                        gp.iter_mut().zip(&g[offset..offset + n]).for_each(|(a, b)| *a += b)
                    });
                    offset += n;
                }
            }
            Op::Narrow { x, start } => {
                let row: usize = self.shape(*x)[1..].iter().product();
                let base = start * row;
                acc(*x, &mut |gx| {
                    gx[base..base + g.len()].iter_mut().zip(g).for_each(|(a, b)| *a += b)
                });
            }
            Op::Reshape(x) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, b)| *a += b)),
            Op::DepthwiseConv { x, kernel } => {
                let (n, d) = (self.shape(*x)[0], self.shape(*x)[1]);
                let w = self.shape(*kernel)[0];
                let half = w / 2;
                let (xv, kv) = (val(*x), val(*kernel));
                acc(*x, &mut |gx| {
                    for i in 0..n {
                        for t in 0..w {
                            if let Some(src) = (i + t).checked_sub(half).filter(|&s| s < n) {
                                for c in 0..d {
                                    gx[src * d + c] += g[i * d + c] * kv[t * d + c];
                                }
                            }
                        }
                    }
                });
                acc(*kernel, &mut |gk| {
                    for i in 0..n {
                        for t in 0..w {
                            if let Some(src) = (i + t).checked_sub(half).filter(|&s| s < n) {
                                for c in 0..d {
                                    gk[t * d + c] += g[i * d + c] * xv[src * d + c];
                                }
                            }
                        }
                    }
                });
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row statistics for `ln(1 - softmax)`. Only the largest entry can have
/// probability above one half; its complement is summed directly.
struct Log1mRow<'a> {
    x: &'a [f64],
    lse: f64,
    top: usize,
    lse_rest: f64,
}

impl<'a> Log1mRow<'a> {
    fn new(x: &'a [f64]) -> Self {
        let lse = log_sum_exp(x);
        let top = (0..x.len()).fold(0, |b, i| if x[i] > x[b] { i } else { b });
        let rest: Vec<f64> = x
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != top)
            .map(|(_, &v)| v)
            .collect();
        Self {
            x,
            lse,
            top,
            lse_rest: log_sum_exp(&rest),
        }
    }

    fn p(&self, i: usize) -> f64 {
        (self.x[i] - self.lse).exp()
    }

    fn value(&self, i: usize) -> f64 {
        if i == self.top {
            self.lse_rest - self.lse
        } else {
            (-self.p(i)).ln_1p()
        }
    }

    /// d y_i / d x_j = [i != j] exp(x_j - lse_without_i) - p_j.
    fn backward(&self, g: &[f64], gx: &mut [f64]) {
        let m = self.top;
        let total: f64 = g.iter().sum();
        let a: f64 = (0..g.len())
            .filter(|&i| i != m)
            .map(|i| g[i] / (1.0 - self.p(i)))
            .sum();
        for j in 0..g.len() {
            let p = self.p(j);
            gx[j] += if j == m {
                p * a - p * total
            } else {
                let via_top = if self.lse_rest == f64::NEG_INFINITY {
                    0.0
                } else {
                    g[m] * (self.x[j] - self.lse_rest).exp()
                };
                p * (a - g[j] / (1.0 - p)) + via_top - p * total
            };
        }
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
