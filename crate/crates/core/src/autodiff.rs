//! Reverse-mode differentiation on a tape of dense matrices.
//!
//! Every op appends a node holding its value; `backward` walks the tape in
//! reverse insertion order, which is a valid reverse topological order since
//! a node can only reference earlier nodes.

use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Visibility pattern for a row softmax.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mask {
    /// Every column is visible.
    Full,
    /// Row `i` (0-based) sees columns `0..=i`.
    Causal,
}

impl Mask {
    fn visible(self, row: usize, cols: usize) -> usize {
        match self {
            Mask::Full => cols,
            Mask::Causal => (row + 1).min(cols),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    RowScale(Var, Var),
    Softmax(Var, Mask),
    LogSoftmax(Var),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    Log(Var),
    Exp(Var),
    L2Norm(Var),
    Sum(Var),
    Mean(Var),
    RowNormalize(Var),
    GatherRows(Var, Vec<usize>),
    Select(Var, Vec<(usize, usize)>),
    BlockScores(Var, Var),
    BlockMix(Var, Var),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by `Var`.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// `None` when the output does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, zeros when unreachable.
    pub fn wrt(&self, v: Var) -> Matrix {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn gelu(x: f64) -> f64 {
    x * std_normal_cdf(x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row softmax honouring `mask`; masked entries are exactly zero.
pub fn softmax_rows(logits: &Matrix, mask: Mask) -> Matrix {
    let (rows, cols) = logits.shape();
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let n = mask.visible(r, cols);
        let row = &logits.row(r)[..n];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out.row_mut(r)[..n];
        let mut z = 0.0;
        for (oi, x) in o.iter_mut().zip(row) {
            *oi = (x - max).exp();
            z += *oi;
        }
        for oi in o.iter_mut() {
            *oi /= z;
        }
    }
    out
}

fn log_softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        for x in row.iter_mut() {
            *x -= lse;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// The single entry of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.get(0, 0)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, parents: &[Var], name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.value(a).shape(),
            right: self.value(b).shape(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), &[a, b], "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a), &[a], "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        self.push(v, Op::Add(a, b), &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        self.push(v, Op::Sub(a, b), &[a, b], "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        self.push(v, Op::Mul(a, b), &[a, b], "mul")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a, c), &[a], "scale")
    }

    /// Row `i` of `m` times `s[i]`; `s` is an `m.rows`-long row or column vector.
    pub fn row_scale(&mut self, m: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        let (sr, sc) = sv.shape();
        if (sr != 1 && sc != 1) || sv.len() != self.value(m).rows() {
            return Err(self.shape_err("row_scale", m, s));
        }
        let v = self.value(m).row_scaled(sv.data())?;
        self.push(v, Op::RowScale(m, s), &[m, s], "row_scale")
    }

    pub fn softmax(&mut self, logits: Var, mask: Mask) -> Result<Var> {
        let x = self.value(logits);
        x.ensure_finite("softmax input")?;
        let v = softmax_rows(x, mask);
        self.push(v, Op::Softmax(logits, mask), &[logits], "softmax")
    }

    pub fn causal_softmax(&mut self, logits: Var) -> Result<Var> {
        self.softmax(logits, Mask::Causal)
    }

    /// Row-wise log-softmax over all columns.
    pub fn log_softmax(&mut self, logits: Var) -> Result<Var> {
        let v = log_softmax_rows(self.value(logits));
        self.push(v, Op::LogSoftmax(logits), &[logits], "log_softmax")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), &[a], "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a], "sigmoid")
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(gelu);
        self.push(v, Op::Gelu(a), &[a], "gelu")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(bad) = x.data().iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive entry {bad}")));
        }
        let v = x.map(f64::ln);
        self.push(v, Op::Log(a), &[a], "log")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a], "exp")
    }

    /// Frobenius norm as a 1×1 node.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let v = Matrix::scalar(self.value(a).frobenius_norm());
        self.push(v, Op::L2Norm(a), &[a], "l2_norm")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a), &[a], "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Usage("mean of an empty matrix".into()));
        }
        let v = Matrix::scalar(x.sum() / x.len() as f64);
        self.push(v, Op::Mean(a), &[a], "mean")
    }

    /// Divides every row by its L2 norm.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let mut v = x.clone();
        for r in 0..x.rows() {
            let n = dot(x.row(r), x.row(r)).sqrt();
            if n == 0.0 {
                return Err(Error::Numeric(format!("row {r} has zero norm")));
            }
            for e in v.row_mut(r) {
                *e /= n;
            }
        }
        self.push(v, Op::RowNormalize(a), &[a], "row_normalize")
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let cols = x.cols();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= x.rows() {
                return Err(Error::Lookup(format!("row {i} of a {}-row matrix", x.rows())));
            }
            data.extend_from_slice(x.row(i));
        }
        let v = Matrix::new(idx.len(), cols, data)?;
        self.push(v, Op::GatherRows(a, idx.to_vec()), &[a], "gather_rows")
    }

    /// Column vector of the entries at `idx`.
    pub fn select(&mut self, a: Var, idx: &[(usize, usize)]) -> Result<Var> {
        let x = self.value(a);
        let mut data = Vec::with_capacity(idx.len());
        for &(r, c) in idx {
            if r >= x.rows() || c >= x.cols() {
                return Err(Error::Lookup(format!("entry ({r}, {c}) of a {:?} matrix", x.shape())));
            }
            data.push(x.get(r, c));
        }
        let v = Matrix::column(&data);
        self.push(v, Op::Select(a, idx.to_vec()), &[a], "select")
    }

    /// Per-sequence scores of one query against its own block of keys.
    ///
    /// `q` is B×d and `keys` is (B·L)×d with sequence `b` occupying rows
    /// `b·L..(b+1)·L`. Output is B×L with `out[b][i] = q_b · keys[b·L + i]`.
    pub fn block_scores(&mut self, q: Var, keys: Var) -> Result<Var> {
        let (qv, kv) = (self.value(q), self.value(keys));
        let b = qv.rows();
        if qv.cols() != kv.cols() || b == 0 || kv.rows() % b != 0 {
            return Err(self.shape_err("block_scores", q, keys));
        }
        let l = kv.rows() / b;
        let mut data = Vec::with_capacity(b * l);
        for s in 0..b {
            for i in 0..l {
                data.push(dot(qv.row(s), kv.row(s * l + i)));
            }
        }
        let v = Matrix::new(b, l, data)?;
        self.push(v, Op::BlockScores(q, keys), &[q, keys], "block_scores")
    }

    /// Per-sequence weighted sum of value rows: `out_b = Σ_i w[b][i] · values[b·L + i]`.
    pub fn block_mix(&mut self, weights: Var, values: Var) -> Result<Var> {
        let (wv, vv) = (self.value(weights), self.value(values));
        let (b, l) = wv.shape();
        if vv.rows() != b * l {
            return Err(self.shape_err("block_mix", weights, values));
        }
        let d = vv.cols();
        let mut out = Matrix::zeros(b, d);
        for s in 0..b {
            for i in 0..l {
                let w = wv.get(s, i);
                if w == 0.0 {
                    continue;
                }
                let src = vv.row(s * l + i);
                for (o, x) in out.row_mut(s).iter_mut().zip(src) {
                    *o += w * x;
                }
            }
        }
        self.push(out, Op::BlockMix(weights, values), &[weights, values], "block_mix")
    }

    /// Reverse sweep from a 1×1 output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a 1x1 output, got {out_shape:?}"
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Matrix>> = vec![None; n];
        grads[output.0] = Some(Matrix::scalar(1.0));

        for id in (0..n).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }

        let shapes = self.nodes[..n].iter().map(|nd| nd.value.shape()).collect();
        for (id, g) in grads.iter_mut().enumerate() {
            if !self.nodes[id].requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        debug_assert_eq!(g.shape(), self.value(v).shape());
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot => *slot = Some(g),
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let y = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let da = g.matmul_t(self.value(*b))?;
                    self.accumulate(grads, *a, da)?;
                }
                if self.needs(*b) {
                    let db = self.value(*a).t_matmul(g)?;
                    self.accumulate(grads, *b, db)?;
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose())?,
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.hadamard(self.value(*b))?)?;
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.hadamard(self.value(*a))?)?;
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c))?,
            Op::RowScale(m, s) => {
                let (mv, sv) = (self.value(*m), self.value(*s));
                if self.needs(*m) {
                    self.accumulate(grads, *m, g.row_scaled(sv.data())?)?;
                }
                if self.needs(*s) {
                    let ds: Vec<f64> = (0..mv.rows()).map(|r| dot(g.row(r), mv.row(r))).collect();
                    let ds = Matrix::new(sv.rows(), sv.cols(), ds)?;
                    self.accumulate(grads, *s, ds)?;
                }
            }
            Op::Softmax(a, mask) => {
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let n = mask.visible(r, y.cols());
                    let (yr, gr) = (&y.row(r)[..n], &g.row(r)[..n]);
                    let inner = dot(yr, gr);
                    for (j, o) in dx.row_mut(r)[..n].iter_mut().enumerate() {
                        *o = yr[j] * (gr[j] - inner);
                    }
                }
                self.accumulate(grads, *a, dx)?;
            }
            Op::LogSoftmax(a) => {
                let mut dx = g.clone();
                for r in 0..y.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for (o, ly) in dx.row_mut(r).iter_mut().zip(y.row(r)) {
                        *o -= ly.exp() * total;
                    }
                }
                self.accumulate(grads, *a, dx)?;
            }
            Op::Tanh(a) => {
                let d = y.map(|t| 1.0 - t * t);
                self.accumulate(grads, *a, g.hadamard(&d)?)?;
            }
            Op::Sigmoid(a) => {
                let d = y.map(|s| s * (1.0 - s));
                self.accumulate(grads, *a, g.hadamard(&d)?)?;
            }
            Op::Gelu(a) => {
                let d = self.value(*a).map(|x| std_normal_cdf(x) + x * std_normal_pdf(x));
                self.accumulate(grads, *a, g.hadamard(&d)?)?;
            }
            Op::Log(a) => {
                let d = self.value(*a).map(|x| 1.0 / x);
                self.accumulate(grads, *a, g.hadamard(&d)?)?;
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.hadamard(y)?)?,
            Op::L2Norm(a) => {
                let norm = y.get(0, 0);
                let x = self.value(*a);
                let d = if norm == 0.0 {
                    Matrix::zeros(x.rows(), x.cols())
                } else {
                    x.scale(g.get(0, 0) / norm)
                };
                self.accumulate(grads, *a, d)?;
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Matrix::filled(r, c, g.get(0, 0)))?;
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                let k = g.get(0, 0) / (r * c) as f64;
                self.accumulate(grads, *a, Matrix::filled(r, c, k))?;
            }
            Op::RowNormalize(a) => {
                let x = self.value(*a);
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let n = dot(x.row(r), x.row(r)).sqrt();
                    let inner = dot(y.row(r), g.row(r));
                    for ((o, gi), yi) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *o = (gi - yi * inner) / n;
                    }
                }
                self.accumulate(grads, *a, dx)?;
            }
            Op::GatherRows(a, idx) => {
                let x = self.value(*a);
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, gi) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += gi;
                    }
                }
                self.accumulate(grads, *a, dx)?;
            }
            Op::Select(a, idx) => {
                let x = self.value(*a);
                let mut dx = Matrix::zeros(x.rows(), x.cols());
                for (k, &(r, c)) in idx.iter().enumerate() {
                    let cur = dx.get(r, c);
                    dx.set(r, c, cur + g.get(k, 0));
                }
                self.accumulate(grads, *a, dx)?;
            }
            Op::BlockScores(q, keys) => {
                let (qv, kv) = (self.value(*q), self.value(*keys));
                let (b, l) = g.shape();
                if self.needs(*q) {
                    let mut dq = Matrix::zeros(qv.rows(), qv.cols());
                    for s in 0..b {
                        for i in 0..l {
                            let w = g.get(s, i);
                            for (o, k) in dq.row_mut(s).iter_mut().zip(kv.row(s * l + i)) {
                                *o += w * k;
                            }
                        }
                    }
                    self.accumulate(grads, *q, dq)?;
                }
                if self.needs(*keys) {
                    let mut dk = Matrix::zeros(kv.rows(), kv.cols());
                    for s in 0..b {
                        for i in 0..l {
                            let w = g.get(s, i);
                            for (o, x) in dk.row_mut(s * l + i).iter_mut().zip(qv.row(s)) {
                                *o = w * x;
                            }
                        }
                    }
                    self.accumulate(grads, *keys, dk)?;
                }
            }
            Op::BlockMix(weights, values) => {
                let (wv, vv) = (self.value(*weights), self.value(*values));
                let (b, l) = wv.shape();
                if self.needs(*weights) {
                    let mut dw = Matrix::zeros(b, l);
                    for s in 0..b {
                        for i in 0..l {
                            dw.set(s, i, dot(g.row(s), vv.row(s * l + i)));
                        }
                    }
                    self.accumulate(grads, *weights, dw)?;
                }
                if self.needs(*values) {
                    let mut dv = Matrix::zeros(vv.rows(), vv.cols());
                    for s in 0..b {
                        for i in 0..l {
                            let w = wv.get(s, i);
                            for (o, x) in dv.row_mut(s * l + i).iter_mut().zip(g.row(s)) {
                                *o = w * x;
                            }
                        }
                    }
                    self.accumulate(grads, *values, dv)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn causal_softmax_hand_values() {
        let mut t = Tape::new();
        let x = t.constant(
            Matrix::from_rows(&[[5.0, 1.0, 2.0], [2f64.ln(), 0.0, 9.0], [0.0, 0.0, 0.0]]).unwrap(),
        );
        let s = t.causal_softmax(x).unwrap();
        let v = t.value(s);
        assert_eq!(v.row(0), &[1.0, 0.0, 0.0]);
        assert!((v.get(1, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((v.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(v.get(1, 2), 0.0);
        for c in 0..3 {
            assert!((v.get(2, c) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_rows(&[[1.0, -2.0], [3.0, 0.5]]).unwrap());
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x), Matrix::ones(2, 2));
    }

    #[test]
    fn backward_of_zero_times_f_is_zero() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_rows(&[[0.3, -1.2]]).unwrap());
        let y = t.tanh(x).unwrap();
        let z = t.scale(y, 0.0).unwrap();
        let s = t.sum(z).unwrap();
        assert_eq!(t.backward(s).unwrap().wrt(x), Matrix::zeros(1, 2));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 1));
        assert!(matches!(t.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut t = Tape::new();
        let x = t.param(Matrix::row_vector(&[1.0, 0.0]));
        assert!(matches!(t.log(x), Err(Error::Domain(_))));
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(gelu(0.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        let mut t = Tape::new();
        let x = t.constant(Matrix::scalar(0.0));
        let y = t.tanh(x).unwrap();
        assert_eq!(t.scalar(y), 0.0);
    }

    #[test]
    fn overflow_is_an_error() {
        let mut t = Tape::new();
        let x = t.param(Matrix::scalar(1000.0));
        assert!(matches!(t.exp(x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn row_scale_checks_length() {
        let mut t = Tape::new();
        let m = t.param(Matrix::zeros(3, 2));
        let s = t.param(Matrix::column(&[1.0, 2.0]));
        assert!(t.row_scale(m, s).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::scalar(2.0));
        let x = t.param(Matrix::scalar(3.0));
        let y = t.mul(c, x).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(x).get(0, 0), 2.0);
    }
}
