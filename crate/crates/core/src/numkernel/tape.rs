//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive in execution order. Operands always
//! precede results, so a single reverse sweep over the record computes the
//! total derivative of a scalar loss with respect to every trainable leaf.

use std::fmt;

use super::tensor::{gemm, Tensor};
use super::KernelError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive kinds, used for diagnostics and fault injection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    Add,
    Mul,
    AddRow,
    Scale,
    Sum,
    Sigmoid,
    Tanh,
    Clip,
    SliceCols,
    ConcatCols,
    ConcatRows,
    GatherRows,
    LayerNorm,
    SoftmaxXent,
}

impl OpKind {
    pub const ALL: [OpKind; 16] = [
        OpKind::Leaf,
        OpKind::MatMul,
        OpKind::Add,
        OpKind::Mul,
        OpKind::AddRow,
        OpKind::Scale,
        OpKind::Sum,
        OpKind::Sigmoid,
        OpKind::Tanh,
        OpKind::Clip,
        OpKind::SliceCols,
        OpKind::ConcatCols,
        OpKind::ConcatRows,
        OpKind::GatherRows,
        OpKind::LayerNorm,
        OpKind::SoftmaxXent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::AddRow => "add_row",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Clip => "clip",
            OpKind::SliceCols => "slice_cols",
            OpKind::ConcatCols => "concat_cols",
            OpKind::ConcatRows => "concat_rows",
            OpKind::GatherRows => "gather_rows",
            OpKind::LayerNorm => "layer_norm",
            OpKind::SoftmaxXent => "softmax_xent",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Sigmoid(Var),
    Tanh(Var),
    Clip(Var, f64),
    SliceCols { src: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    LayerNorm { x: Var, gamma: Var, xhat: Vec<f64>, rstd: Vec<f64>, beta: Var },
    SoftmaxXent { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::AddRow(..) => OpKind::AddRow,
            Op::Scale(..) => OpKind::Scale,
            Op::Sum(..) => OpKind::Sum,
            Op::Sigmoid(..) => OpKind::Sigmoid,
            Op::Tanh(..) => OpKind::Tanh,
            Op::Clip(..) => OpKind::Clip,
            Op::SliceCols { .. } => OpKind::SliceCols,
            Op::ConcatCols(..) => OpKind::ConcatCols,
            Op::ConcatRows(..) => OpKind::ConcatRows,
            Op::GatherRows(..) => OpKind::GatherRows,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::SoftmaxXent { .. } => OpKind::SoftmaxXent,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    trainable: bool,
}

/// Gradients of one backward sweep, keyed by trainable leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<(Var, Tensor)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads
            .binary_search_by_key(&v, |(k, _)| *k)
            .ok()
            .map(|i| &self.grads[i].1)
    }

    /// Removes and returns the gradient of `v`.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        let i = self.grads.binary_search_by_key(&v, |(k, _)| *k).ok()?;
        Some(std::mem::replace(&mut self.grads[i].1, Tensor::scalar(0.0)))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Ordered record of primitive applications for one training stream.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<OpKind>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Corrupts the backward rule of one primitive kind (its incoming
    /// gradient is scaled by 1.5). Only meant for negative-control checks.
    #[doc(hidden)]
    pub fn inject_fault(&mut self, kind: Option<OpKind>) {
        self.fault = kind;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false, false)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool, trainable: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad, trainable });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, operands: &[Var]) -> Result<Var, KernelError> {
        let kind = op.kind();
        if !value.is_finite() {
            return Err(KernelError::NonFinite { op: kind.name() });
        }
        let needs_grad = operands.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push_raw(value, op, needs_grad, false))
    }

    fn dims2(&self, v: Var, op: &str) -> Result<(usize, usize), KernelError> {
        let t = self.value(v);
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            s => Err(KernelError::Shape(format!("{op}: expected a matrix, got {s:?}"))),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<(), KernelError> {
        if self.shape(a) != self.shape(b) {
            return Err(KernelError::Shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(KernelError::Shape(format!("matmul: {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, 0.0, &mut out);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.same_shape(a, b, "add")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        self.push(t, Op::Add(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.same_shape(a, b, "mul")?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        self.push(t, Op::Mul(a, b), &[a, b])
    }

    /// Adds a length-`c` vector to every row of an `r × c` value.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, KernelError> {
        let x = self.value(a);
        let r = self.value(row);
        if r.len() != x.cols() {
            return Err(KernelError::Shape(format!(
                "add_row: row of {} for width {}",
                r.len(),
                x.cols()
            )));
        }
        let mut data = x.data().to_vec();
        for chunk in data.chunks_exact_mut(r.len()) {
            for (v, b) in chunk.iter_mut().zip(r.data()) {
                *v += b;
            }
        }
        let t = Tensor::new(x.shape().to_vec(), data)?;
        self.push(t, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Result<Var, KernelError> {
        let t = self.value(a).map(|v| v * alpha);
        self.push(t, Op::Scale(a, alpha), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, KernelError> {
        let t = Tensor::scalar(self.value(a).sum());
        self.push(t, Op::Sum(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, KernelError> {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, KernelError> {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a), &[a])
    }

    /// Elementwise clamp to `[-c, c]`.
    pub fn clip(&mut self, a: Var, c: f64) -> Result<Var, KernelError> {
        if c.is_nan() || c <= 0.0 {
            return Err(KernelError::InvalidArgument(format!("clip bound must be positive, got {c}")));
        }
        let t = self.value(a).map(|v| v.clamp(-c, c));
        self.push(t, Op::Clip(a, c), &[a])
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, KernelError> {
        let (r, c) = self.dims2(a, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(KernelError::Shape(format!("slice_cols: {start}+{len} of width {c}")));
        }
        let x = self.value(a).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&x[i * c + start..i * c + start + len]);
        }
        self.push(Tensor::new(vec![r, len], data)?, Op::SliceCols { src: a, start }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let mut rows = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if *rows.get_or_insert(r) != r {
                return Err(KernelError::Shape("concat_cols: row counts differ".into()));
            }
            widths.push(c);
        }
        let rows = rows.ok_or_else(|| KernelError::Shape("concat_cols: no inputs".into()))?;
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![rows, total], data)?;
        self.push(t, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let mut cols = None;
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if *cols.get_or_insert(c) != c {
                return Err(KernelError::Shape("concat_rows: widths differ".into()));
            }
            rows += r;
        }
        let cols = cols.ok_or_else(|| KernelError::Shape("concat_rows: no inputs".into()))?;
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(vec![rows, cols], data)?;
        self.push(t, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Selects rows by index (embedding lookup, position selection, reordering).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, KernelError> {
        let x = self.value(a);
        let (r, c) = (x.rows(), x.cols());
        if idx.is_empty() {
            return Err(KernelError::Shape("gather_rows: empty index".into()));
        }
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(KernelError::Index(format!("gather_rows: row {i} of {r}")));
            }
            data.extend_from_slice(x.row(i));
        }
        let t = Tensor::new(vec![idx.len(), c], data)?;
        self.push(t, Op::GatherRows(a, idx.to_vec()), &[a])
    }

    /// Row-wise normalization to zero mean, unit variance, then `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var, KernelError> {
        let xv = self.value(x);
        let d = xv.cols();
        if self.value(gamma).len() != d || self.value(beta).len() != d {
            return Err(KernelError::Shape(format!(
                "layer_norm: width {d}, gamma {}, beta {}",
                self.value(gamma).len(),
                self.value(beta).len()
            )));
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.rows();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for i in 0..rows {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd.push(rs);
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta])
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`. Also returns the per-row negative log-likelihoods.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<(Var, Tensor), KernelError> {
        let (p, v) = self.dims2(logits, "softmax_xent")?;
        if targets.len() != p {
            return Err(KernelError::Shape(format!("softmax_xent: {p} rows, {} targets", targets.len())));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(KernelError::Index(format!("softmax_xent: target {bad} out of range {v}")));
        }
        let x = self.value(logits);
        let mut probs = Vec::with_capacity(p * v);
        let mut nll = Vec::with_capacity(p);
        for (i, &t) in targets.iter().enumerate() {
            let row = x.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|r| (r - max).exp()).sum();
            let lse = max + z.ln();
            nll.push(lse - row[t]);
            probs.extend(row.iter().map(|r| (r - lse).exp()));
        }
        let loss = nll.iter().sum::<f64>() / p as f64;
        let nll = Tensor::vector(nll);
        let var = self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent { logits, targets: targets.to_vec(), probs },
            &[logits],
        )?;
        Ok((var, nll))
    }

    /// Reverse sweep from a scalar `loss`. Every trainable leaf gets an
    /// entry; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients, KernelError> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(KernelError::NotOnTape);
        };
        if node.value.len() != 1 {
            return Err(KernelError::NonScalarLoss(node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(node.value.shape(), 1.0));
        let mut out = Vec::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(mut g) = grads[i].take() else {
                if node.trainable {
                    out.push((Var(i), Tensor::zeros(node.value.shape())));
                }
                continue;
            };
            if node.trainable {
                out.push((Var(i), g));
                continue;
            }
            if self.fault == Some(node.op.kind()) {
                g.scale_in_place(1.5);
            }
            self.apply_rule(node, &g, &mut grads)?;
        }
        for (i, node) in self.nodes.iter().enumerate().skip(loss.0 + 1) {
            if node.trainable {
                out.push((Var(i), Tensor::zeros(node.value.shape())));
            }
        }
        out.sort_by_key(|(v, _)| *v);
        Ok(Gradients { grads: out })
    }

    fn apply_rule(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), KernelError> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let n = self.value(*b).shape()[1];
                if self.wants(*a) {
                    let buf = self.buf(grads, *a);
                    gemm(m, n, k, gd, false, self.value(*b).data(), true, 1.0, buf);
                }
                if self.wants(*b) {
                    let buf = self.buf(grads, *b);
                    gemm(k, m, n, self.value(*a).data(), true, gd, false, 1.0, buf);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        axpy(self.buf(grads, v), gd, 1.0);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if self.wants(v) {
                        let o = self.value(other).data();
                        let buf = self.buf(grads, v);
                        for ((d, gi), oi) in buf.iter_mut().zip(gd).zip(o) {
                            *d += gi * oi;
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.wants(*a) {
                    axpy(self.buf(grads, *a), gd, 1.0);
                }
                if self.wants(*row) {
                    let buf = self.buf(grads, *row);
                    let c = buf.len();
                    for chunk in gd.chunks_exact(c) {
                        axpy(buf, chunk, 1.0);
                    }
                }
            }
            Op::Scale(a, alpha) => {
                if self.wants(*a) {
                    axpy(self.buf(grads, *a), gd, *alpha);
                }
            }
            Op::Sum(a) => {
                if self.wants(*a) {
                    let s = gd[0];
                    self.buf(grads, *a).iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Sigmoid(a) => {
                if self.wants(*a) {
                    let y = node.value.data();
                    let buf = self.buf(grads, *a);
                    for ((d, gi), yi) in buf.iter_mut().zip(gd).zip(y) {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Tanh(a) => {
                if self.wants(*a) {
                    let y = node.value.data();
                    let buf = self.buf(grads, *a);
                    for ((d, gi), yi) in buf.iter_mut().zip(gd).zip(y) {
                        *d += gi * (1.0 - yi * yi);
                    }
                }
            }
            Op::Clip(a, c) => {
                if self.wants(*a) {
                    let x = self.value(*a).data();
                    let buf = self.buf(grads, *a);
                    for ((d, gi), xi) in buf.iter_mut().zip(gd).zip(x) {
                        if xi.abs() <= *c {
                            *d += gi;
                        }
                    }
                }
            }
            Op::SliceCols { src, start } => {
                if self.wants(*src) {
                    let c = self.value(*src).cols();
                    let len = node.value.cols();
                    let buf = self.buf(grads, *src);
                    for (i, chunk) in gd.chunks_exact(len).enumerate() {
                        axpy(&mut buf[i * c + start..i * c + start + len], chunk, 1.0);
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let buf = self.buf(grads, p);
                        for (i, chunk) in buf.chunks_exact_mut(w).enumerate() {
                            axpy(chunk, &gd[i * total + offset..i * total + offset + w], 1.0);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.wants(p) {
                        axpy(self.buf(grads, p), &gd[offset..offset + n], 1.0);
                    }
                    offset += n;
                }
            }
            Op::GatherRows(a, idx) => {
                if self.wants(*a) {
                    let c = node.value.cols();
                    let buf = self.buf(grads, *a);
                    for (k, &i) in idx.iter().enumerate() {
                        axpy(&mut buf[i * c..(i + 1) * c], &gd[k * c..(k + 1) * c], 1.0);
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = node.value.cols();
                let gam = self.value(*gamma).data();
                if self.wants(*gamma) {
                    let buf = self.buf(grads, *gamma);
                    for (gr, hr) in gd.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            buf[j] += gr[j] * hr[j];
                        }
                    }
                }
                if self.wants(*beta) {
                    let buf = self.buf(grads, *beta);
                    for gr in gd.chunks_exact(d) {
                        axpy(buf, gr, 1.0);
                    }
                }
                if self.wants(*x) {
                    let buf = self.buf(grads, *x);
                    let mut dxhat = vec![0.0; d];
                    for (i, ((gr, hr), out)) in gd
                        .chunks_exact(d)
                        .zip(xhat.chunks_exact(d))
                        .zip(buf.chunks_exact_mut(d))
                        .enumerate()
                    {
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for j in 0..d {
                            dxhat[j] = gr[j] * gam[j];
                            mean_d += dxhat[j];
                            mean_dh += dxhat[j] * hr[j];
                        }
                        mean_d /= d as f64;
                        mean_dh /= d as f64;
                        for j in 0..d {
                            out[j] += rstd[i] * (dxhat[j] - mean_d - hr[j] * mean_dh);
                        }
                    }
                }
            }
            Op::SoftmaxXent { logits, targets, probs } => {
                if self.wants(*logits) {
                    let v = self.value(*logits).cols();
                    let scale = gd[0] / targets.len() as f64;
                    let buf = self.buf(grads, *logits);
                    for (i, &t) in targets.iter().enumerate() {
                        let row = &mut buf[i * v..(i + 1) * v];
                        axpy(row, &probs[i * v..(i + 1) * v], scale);
                        row[t] -= scale;
                    }
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn buf<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut [f64] {
        grads[v.0]
            .get_or_insert_with(|| Tensor::zeros(self.nodes[v.0].value.shape()))
            .data_mut()
    }
}

fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
