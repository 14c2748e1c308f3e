//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the tape once in reverse order and returns the
//! gradient of a scalar loss with respect to every parameter leaf.

use std::collections::BTreeMap;

use super::tensor::{matmul, matmul_at, matmul_bt, transpose, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies a trainable parameter across graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Gelu(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm(Var, f64),
    Gather(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    BroadcastRows(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        smoothing: f64,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::Tanh(_) => "tanh",
            Op::Gelu(_) => "gelu",
            Op::Relu(_) => "relu",
            Op::Softmax(_) => "softmax",
            Op::LayerNorm(..) => "layer_norm",
            Op::Gather(..) => "gather",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::Sum(_) => "sum",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    params: BTreeMap<ParamId, Tensor>,
    nodes: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor> {
        self.params
    }

    /// Gradient with respect to any recorded node that requires grad.
    pub fn node(&self, var: Var) -> Option<&Tensor> {
        self.nodes.get(var.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = (C * (x + 0.044_715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044_715 * x * x)
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Input, value, false)
    }

    /// Differentiable input that is not a parameter (e.g. an image feature
    /// whose gradient is inspected).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Input, value, true)
    }

    pub fn param(&mut self, id: ParamId, value: &Tensor, requires_grad: bool) -> Var {
        self.push_unchecked(Op::Param(id), value.clone(), requires_grad)
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.backward_done = false;
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric {
                node: self.nodes.len(),
                op: op.name(),
            });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(op, value, requires_grad))
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension {
            op,
            left: self.nodes[a.0].value.shape().to_vec(),
            right: self.nodes[b.0].value.shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let data = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Op::MatMul(a, b), Tensor::with_shape(vec![m, n], data), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let data = transpose(self.value(a).data(), m, n);
        self.push(Op::Transpose(a), Tensor::with_shape(vec![n, m], data), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.mismatch("add", a, b));
        }
        let (m, n) = self.dims(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add(a, b), Tensor::with_shape(vec![m, n], data), &[a, b])
    }

    /// Adds a 1×n row to every row of an m×n matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return Err(self.mismatch("add_row", a, row));
        }
        let r = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        self.push(Op::AddRow(a, row), Tensor::with_shape(vec![m, n], data), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.dims(a) != self.dims(b) {
            return Err(self.mismatch("mul", a, b));
        }
        let (m, n) = self.dims(a);
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        self.push(Op::Mul(a, b), Tensor::with_shape(vec![m, n], data), &[a, b])
    }

    /// Multiplies every row of an m×n matrix elementwise by a 1×n row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return Err(self.mismatch("mul_row", a, row));
        }
        let r = self.value(row).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x *= b;
            }
        }
        self.push(Op::MulRow(a, row), Tensor::with_shape(vec![m, n], data), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let (m, n) = self.dims(a);
        let data = self.value(a).data().iter().map(|x| x * c).collect();
        self.push(Op::Scale(a, c), Tensor::with_shape(vec![m, n], data), &[a])
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let (m, n) = self.dims(a);
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        self.push(op, Tensor::with_shape(vec![m, n], data), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Gelu(a), gelu)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for (row, out) in src.chunks(n).zip(data.chunks_mut(n)) {
            softmax_row(row, out);
        }
        self.push(Op::Softmax(a), Tensor::with_shape(vec![m, n], data), &[a])
    }

    /// Row-wise normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.dims(a);
        let src = self.value(a).data();
        let mut data = vec![0.0; m * n];
        for (row, out) in src.chunks(n).zip(data.chunks_mut(n)) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, x) in out.iter_mut().zip(row) {
                *o = (x - mean) * inv;
            }
        }
        self.push(Op::LayerNorm(a, eps), Tensor::with_shape(vec![m, n], data), &[a])
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::input("gather with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::input(format!("row id {bad} out of range for table of {v} rows")));
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        self.push(
            Op::Gather(table, ids.to_vec()),
            Tensor::with_shape(vec![ids.len(), d], data),
            &[table],
        )
    }

    /// Concatenates matrices with equal row counts along the feature axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let m = self.dims(parts[0]).0;
        for &p in &parts[1..] {
            if self.dims(p).0 != m {
                return Err(self.mismatch("concat_cols", parts[0], p));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.dims(p).1).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::with_shape(vec![m, total], data),
            parts,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > n {
            return Err(Error::Dimension {
                op: "slice_cols",
                left: vec![m, n],
                right: vec![start, len],
            });
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        self.push(Op::SliceCols(a, start, len), Tensor::with_shape(vec![m, len], data), &[a])
    }

    /// Repeats a 1×n row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if m != 1 || rows == 0 {
            return Err(Error::Dimension {
                op: "broadcast_rows",
                left: vec![m, n],
                right: vec![rows],
            });
        }
        let data = self.value(a).data().repeat(rows);
        self.push(Op::BroadcastRows(a), Tensor::with_shape(vec![rows, n], data), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(total), &[a])
    }

    /// Summed label-smoothed cross-entropy over rows whose target is `Some`.
    ///
    /// The smoothed target distribution is `(1 - ε)·onehot + ε/V`.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        smoothing: f64,
    ) -> Result<Var> {
        let (m, v) = self.dims(logits);
        if targets.len() != m {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: vec![m, v],
                right: vec![targets.len()],
            });
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= v) {
            return Err(Error::input(format!("target {bad} outside vocabulary of {v}")));
        }
        let src = self.value(logits).data();
        let mut total = 0.0;
        for (row, t) in src.chunks(v).zip(targets) {
            let Some(t) = *t else { continue };
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            let mean_z = row.iter().sum::<f64>() / v as f64;
            total += lse - (1.0 - smoothing) * row[t] - smoothing * mean_z;
        }
        self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
            },
            Tensor::scalar(total),
            &[logits],
        )
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this graph; rebuild the forward pass first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut params: BTreeMap<ParamId, Tensor> = BTreeMap::new();
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                if !node.requires_grad {
                    continue;
                }
                match params.get_mut(id) {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    None => {
                        params.insert(*id, g.clone());
                    }
                }
            }
        }
        self.backward_done = true;
        Ok(Gradients {
            params,
            nodes: grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Vec<f64>) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(&delta) {
                    *a += b;
                }
            }
            slot @ None => {
                let shape = self.nodes[var.0].value.shape().to_vec();
                *slot = Some(Tensor::with_shape(shape, delta));
            }
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[idx].value;
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.nodes[a.0].requires_grad {
                    let da = matmul_bt(gd, self.value(*b).data(), m, n, k);
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let db = matmul_at(self.value(*a).data(), gd, m, k, n);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = self.dims(*a);
                self.accumulate(grads, *a, transpose(gd, n, m));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gd.to_vec());
                self.accumulate(grads, *b, gd.to_vec());
            }
            Op::AddRow(a, row) => {
                let n = self.dims(*a).1;
                self.accumulate(grads, *a, gd.to_vec());
                let mut dr = vec![0.0; n];
                for chunk in gd.chunks(n) {
                    for (d, x) in dr.iter_mut().zip(chunk) {
                        *d += x;
                    }
                }
                self.accumulate(grads, *row, dr);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, gd.iter().zip(bv).map(|(x, y)| x * y).collect());
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, gd.iter().zip(av).map(|(x, y)| x * y).collect());
                }
            }
            Op::MulRow(a, row) => {
                let n = self.dims(*a).1;
                let av = self.value(*a).data();
                let rv = self.value(*row).data();
                if self.nodes[a.0].requires_grad {
                    let mut da = gd.to_vec();
                    for chunk in da.chunks_mut(n) {
                        for (d, r) in chunk.iter_mut().zip(rv) {
                            *d *= r;
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.nodes[row.0].requires_grad {
                    let mut dr = vec![0.0; n];
                    for (gc, ac) in gd.chunks(n).zip(av.chunks(n)) {
                        for ((d, x), y) in dr.iter_mut().zip(gc).zip(ac) {
                            *d += x * y;
                        }
                    }
                    self.accumulate(grads, *row, dr);
                }
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, gd.iter().map(|x| x * c).collect());
            }
            Op::Tanh(a) => {
                let d = gd
                    .iter()
                    .zip(out.data())
                    .map(|(x, y)| x * (1.0 - y * y))
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Gelu(a) => {
                let d = gd
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(x, z)| x * gelu_grad(*z))
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let d = gd
                    .iter()
                    .zip(self.value(*a).data())
                    .map(|(x, z)| if *z > 0.0 { *x } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::Softmax(a) => {
                let n = self.dims(*a).1;
                let mut d = vec![0.0; gd.len()];
                for ((gc, yc), dc) in gd.chunks(n).zip(out.data().chunks(n)).zip(d.chunks_mut(n)) {
                    let dot: f64 = gc.iter().zip(yc).map(|(x, y)| x * y).sum();
                    for ((o, x), y) in dc.iter_mut().zip(gc).zip(yc) {
                        *o = y * (x - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::LayerNorm(a, eps) => {
                let n = self.dims(*a).1;
                let xv = self.value(*a).data();
                let mut d = vec![0.0; gd.len()];
                for (((gc, yc), xc), dc) in gd
                    .chunks(n)
                    .zip(out.data().chunks(n))
                    .zip(xv.chunks(n))
                    .zip(d.chunks_mut(n))
                {
                    let mean = xc.iter().sum::<f64>() / n as f64;
                    let var = xc.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    let mean_g = gc.iter().sum::<f64>() / n as f64;
                    let mean_gy = gc.iter().zip(yc).map(|(x, y)| x * y).sum::<f64>() / n as f64;
                    for ((o, x), y) in dc.iter_mut().zip(gc).zip(yc) {
                        *o = inv * (x - mean_g - y * mean_gy);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Gather(table, ids) => {
                let (v, d) = self.dims(*table);
                let mut dt = vec![0.0; v * d];
                for (r, &i) in ids.iter().enumerate() {
                    for (t, x) in dt[i * d..(i + 1) * d].iter_mut().zip(&gd[r * d..(r + 1) * d]) {
                        *t += x;
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::ConcatCols(parts) => {
                let (m, total) = out.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if self.nodes[p.0].requires_grad {
                        let mut dp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            dp.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(grads, p, dp);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start, len) => {
                let (m, n) = self.dims(*a);
                let mut da = vec![0.0; m * n];
                for r in 0..m {
                    da[r * n + start..r * n + start + len]
                        .copy_from_slice(&gd[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *a, da);
            }
            Op::BroadcastRows(a) => {
                let n = self.dims(*a).1;
                let mut da = vec![0.0; n];
                for chunk in gd.chunks(n) {
                    for (d, x) in da.iter_mut().zip(chunk) {
                        *d += x;
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                self.accumulate(grads, *a, vec![gd[0]; n]);
            }
            Op::CrossEntropy {
                logits,
                targets,
                smoothing,
            } => {
                let v = self.dims(*logits).1;
                let zv = self.value(*logits).data();
                let scale = gd[0];
                let mut dz = vec![0.0; zv.len()];
                for ((row, t), dr) in zv.chunks(v).zip(targets).zip(dz.chunks_mut(v)) {
                    let Some(t) = *t else { continue };
                    softmax_row(row, dr);
                    for d in dr.iter_mut() {
                        *d -= smoothing / v as f64;
                    }
                    dr[t] -= 1.0 - smoothing;
                    for d in dr.iter_mut() {
                        *d *= scale;
                    }
                }
                self.accumulate(grads, *logits, dz);
            }
        }
    }
}
