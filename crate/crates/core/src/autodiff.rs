//! Tape-style reverse-mode differentiation over dense row-major `f64` tensors.
//!
//! A [`Graph`] is an arena of nodes. Every op appends a node whose parents
//! already live in the arena, so insertion order is a topological order and
//! [`Graph::backward`] can walk indices in reverse. Graphs are cheap and meant
//! to be rebuilt for each training step.

use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major tensor. Scalars have shape `[1]`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::dim("tensor", format!("invalid shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Rows and columns, treating a 1-D tensor as a single row.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            s => (s[..s.len() - 1].iter().product(), s[s.len() - 1]),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.rows_cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    GradReverse(NodeId, f64),
    LogClamped(NodeId, f64),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    GatherRows(NodeId, Vec<usize>),
    Pick(NodeId, Vec<usize>),
    ColMean(NodeId),
    ConcatRows(NodeId, NodeId),
}

impl Op {
    fn parents(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | AddBias(a, b) | Add(a, b) | Sub(a, b) | ConcatRows(a, b) => {
                vec![*a, *b]
            }
            Scale(a, _)
            | AddScalar(a)
            | Relu(a)
            | Sigmoid(a)
            | Softmax(a)
            | GradReverse(a, _)
            | LogClamped(a, _)
            | Square(a)
            | Sum(a)
            | Mean(a)
            | GatherRows(a, _)
            | Pick(a, _)
            | ColMean(a) => vec![*a],
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            MatMul(..) => "matmul",
            AddBias(..) => "add_bias",
            Add(..) => "add",
            Sub(..) => "sub",
            Scale(..) => "scale",
            AddScalar(..) => "add_scalar",
            Relu(..) => "relu",
            Sigmoid(..) => "sigmoid",
            Softmax(..) => "softmax",
            GradReverse(..) => "grad_reverse",
            LogClamped(..) => "log",
            Square(..) => "square",
            Sum(..) => "sum",
            Mean(..) => "mean",
            GatherRows(..) => "gather_rows",
            Pick(..) => "pick",
            ColMean(..) => "col_mean",
            ConcatRows(..) => "concat_rows",
        }
    }
}

struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

/// Arena of differentiable nodes.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn softmax_rows(x: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d /= total;
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::Numeric { op: op.name() });
        }
        let grad = Tensor::zeros(value.shape());
        self.nodes.push(Node { value, grad, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Inserts a leaf (parameter or constant input).
    pub fn leaf(&mut self, value: Tensor) -> Result<NodeId> {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.data.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn v(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.v(a), self.v(b));
        let (m, k) = match av.shape() {
            [m, k] => (*m, *k),
            s => return Err(Error::dim("matmul", format!("lhs must be 2-D, got {s:?}"))),
        };
        let (k2, n) = match bv.shape() {
            [k2, n] => (*k2, *n),
            s => return Err(Error::dim("matmul", format!("rhs must be 2-D, got {s:?}"))),
        };
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner dimensions {k} and {k2} differ"),
            ));
        }
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b))
    }

    /// Row-wise bias addition: `x[m×n] + b[n]`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (xv, bv) = (self.v(x), self.v(b));
        let (_, n) = xv.rows_cols();
        if xv.shape().len() != 2 || bv.len() != n {
            return Err(Error::dim(
                "add_bias",
                format!("bias {:?} does not fit {:?}", bv.shape(), xv.shape()),
            ));
        }
        let mut out = xv.data.clone();
        for row in out.chunks_mut(n) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let shape = xv.shape.clone();
        self.push(Tensor { shape, data: out }, Op::AddBias(x, b))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.v(a).shape() != self.v(b).shape() {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.v(a).shape(), self.v(b).shape()),
            ));
        }
        Ok(())
    }

    fn map(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let av = self.v(a);
        let t = Tensor {
            shape: av.shape.clone(),
            data: av.data.iter().map(|&x| f(x)).collect(),
        };
        self.push(t, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self.v(a).data.iter().zip(&self.v(b).data).map(|(x, y)| x + y).collect();
        let shape = self.v(a).shape.clone();
        self.push(Tensor { shape, data }, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let data = self.v(a).data.iter().zip(&self.v(b).data).map(|(x, y)| x - y).collect();
        let shape = self.v(a).shape.clone();
        self.push(Tensor { shape, data }, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.map(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, Op::Sigmoid(a), sigmoid_scalar)
    }

    /// Softmax along the last axis (each row of a matrix, or the whole vector).
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.v(a);
        let (_, c) = av.rows_cols();
        let t = Tensor {
            shape: av.shape.clone(),
            data: softmax_rows(&av.data, c),
        };
        self.push(t, Op::Softmax(a))
    }

    /// Identity forward; multiplies the incoming gradient by `-lambda` on the way back.
    pub fn grad_reverse(&mut self, a: NodeId, lambda: f64) -> Result<NodeId> {
        if !(lambda >= 0.0) {
            return Err(Error::contract(format!(
                "gradient reversal coefficient must be >= 0, got {lambda}"
            )));
        }
        let t = self.v(a).clone();
        self.push(t, Op::GradReverse(a, lambda))
    }

    /// `ln(max(a, eps))`; the gradient is zero wherever the clamp is active.
    pub fn log_clamped(&mut self, a: NodeId, eps: f64) -> Result<NodeId> {
        self.map(a, Op::LogClamped(a, eps), |x| x.max(eps).ln())
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.v(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.v(a);
        let s = av.data.iter().sum::<f64>() / av.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Selects rows of a 2-D tensor. Indices may repeat; the list must be non-empty.
    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let av = self.v(a);
        if av.shape().len() != 2 {
            return Err(Error::dim("gather_rows", format!("need 2-D, got {:?}", av.shape())));
        }
        let (m, n) = av.rows_cols();
        if rows.is_empty() {
            return Err(Error::contract("gather_rows needs at least one row"));
        }
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            if r >= m {
                return Err(Error::dim("gather_rows", format!("row {r} out of {m}")));
            }
            data.extend_from_slice(av.row(r));
        }
        let t = Tensor::matrix(rows.len(), n, data)?;
        self.push(t, Op::GatherRows(a, rows.to_vec()))
    }

    /// `out[i] = a[i, cols[i]]`.
    pub fn pick(&mut self, a: NodeId, cols: &[usize]) -> Result<NodeId> {
        let av = self.v(a);
        let (m, n) = av.rows_cols();
        if cols.len() != m {
            return Err(Error::dim("pick", format!("{} indices for {m} rows", cols.len())));
        }
        let mut data = Vec::with_capacity(m);
        for (i, &c) in cols.iter().enumerate() {
            if c >= n {
                return Err(Error::dim("pick", format!("column {c} out of {n}")));
            }
            data.push(av.data[i * n + c]);
        }
        self.push(Tensor::vector(data), Op::Pick(a, cols.to_vec()))
    }

    pub fn col_mean(&mut self, a: NodeId) -> Result<NodeId> {
        let av = self.v(a);
        let (m, n) = av.rows_cols();
        let mut data = vec![0.0; n];
        for row in av.data.chunks(n) {
            for (d, &x) in data.iter_mut().zip(row) {
                *d += x;
            }
        }
        data.iter_mut().for_each(|d| *d /= m as f64);
        self.push(Tensor::vector(data), Op::ColMean(a))
    }

    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.v(a), self.v(b));
        let ((ma, na), (mb, nb)) = (av.rows_cols(), bv.rows_cols());
        if av.shape().len() != 2 || bv.shape().len() != 2 || na != nb {
            return Err(Error::dim(
                "concat_rows",
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let mut data = av.data.clone();
        data.extend_from_slice(&bv.data);
        let t = Tensor::matrix(ma + mb, na, data)?;
        self.push(t, Op::ConcatRows(a, b))
    }

    /// Accumulates `d loss / d node` into every node reachable from `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.v(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.v(loss).shape()
            )));
        }
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        pending[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            debug_assert!(self.nodes[i].op.parents().iter().all(|p| p.0 < i));
            let contributions = self.local_backward(i, &g);
            for (parent, delta) in contributions {
                match &mut pending[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
            for (dst, src) in self.nodes[i].grad.data.iter_mut().zip(&g) {
                *dst += src;
            }
        }
        Ok(())
    }

    fn local_backward(&self, i: usize, g: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (self.v(*a), self.v(*b));
                let (m, k) = av.rows_cols();
                let (_, n) = bv.rows_cols();
                // dA = G·Bᵀ, dB = Aᵀ·G
                let mut da = vec![0.0; m * k];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let brow = &bv.data[p * n..(p + 1) * n];
                        da[r * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                let mut db = vec![0.0; k * n];
                for r in 0..m {
                    let grow = &g[r * n..(r + 1) * n];
                    for p in 0..k {
                        let av_rp = av.data[r * k + p];
                        if av_rp == 0.0 {
                            continue;
                        }
                        for (d, &gg) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += av_rp * gg;
                        }
                    }
                }
                vec![(*a, da), (*b, db)]
            }
            Op::AddBias(x, b) => {
                let (_, n) = out.rows_cols();
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    db.iter_mut().zip(row).for_each(|(d, &x)| *d += x);
                }
                vec![(*x, g.to_vec()), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::Scale(a, c) => vec![(*a, g.iter().map(|x| c * x).collect())],
            Op::AddScalar(a) => vec![(*a, g.to_vec())],
            Op::Relu(a) => {
                let av = self.v(*a);
                let d = av
                    .data
                    .iter()
                    .zip(g)
                    .map(|(&x, &gg)| if x > 0.0 { gg } else { 0.0 })
                    .collect();
                vec![(*a, d)]
            }
            Op::Sigmoid(a) => {
                let d = out.data.iter().zip(g).map(|(&s, &gg)| gg * s * (1.0 - s)).collect();
                vec![(*a, d)]
            }
            Op::Softmax(a) => {
                let (_, c) = out.rows_cols();
                let mut d = vec![0.0; g.len()];
                for ((p, gg), dd) in out.data.chunks(c).zip(g.chunks(c)).zip(d.chunks_mut(c)) {
                    let dot: f64 = p.iter().zip(gg).map(|(x, y)| x * y).sum();
                    for ((o, &pi), &gi) in dd.iter_mut().zip(p).zip(gg) {
                        *o = pi * (gi - dot);
                    }
                }
                vec![(*a, d)]
            }
            Op::GradReverse(a, lambda) => vec![(*a, g.iter().map(|x| -lambda * x).collect())],
            Op::LogClamped(a, eps) => {
                let av = self.v(*a);
                let d = av
                    .data
                    .iter()
                    .zip(g)
                    .map(|(&x, &gg)| if x > *eps { gg / x } else { 0.0 })
                    .collect();
                vec![(*a, d)]
            }
            Op::Square(a) => {
                let av = self.v(*a);
                let d = av.data.iter().zip(g).map(|(&x, &gg)| 2.0 * x * gg).collect();
                vec![(*a, d)]
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.v(*a).len()])],
            Op::Mean(a) => {
                let n = self.v(*a).len();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::GatherRows(a, rows) => {
                let av = self.v(*a);
                let (_, n) = av.rows_cols();
                let mut d = vec![0.0; av.len()];
                for (k, &r) in rows.iter().enumerate() {
                    for (dst, &src) in d[r * n..(r + 1) * n].iter_mut().zip(&g[k * n..(k + 1) * n]) {
                        *dst += src;
                    }
                }
                vec![(*a, d)]
            }
            Op::Pick(a, cols) => {
                let av = self.v(*a);
                let (_, n) = av.rows_cols();
                let mut d = vec![0.0; av.len()];
                for (r, &c) in cols.iter().enumerate() {
                    d[r * n + c] += g[r];
                }
                vec![(*a, d)]
            }
            Op::ColMean(a) => {
                let av = self.v(*a);
                let (m, n) = av.rows_cols();
                let mut d = vec![0.0; av.len()];
                for row in d.chunks_mut(n) {
                    row.iter_mut().zip(g).for_each(|(o, &gg)| *o = gg / m as f64);
                }
                vec![(*a, d)]
            }
            Op::ConcatRows(a, b) => {
                let split = self.v(*a).len();
                vec![(*a, g[..split].to_vec()), (*b, g[split..].to_vec())]
            }
        }
    }
}
