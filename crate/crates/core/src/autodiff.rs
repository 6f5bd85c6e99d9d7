//! A small reverse-mode automatic differentiation engine over dense `f64`
//! tensors of rank 0, 1 or 2.
//!
//! Values live on a [`Tape`]; every primitive appends one entry and returns a
//! [`Var`] handle. [`Tape::backward`] walks the tape once in reverse and
//! accumulates exact gradients for every entry that depends on a leaf
//! created with `requires_grad`.

use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Row-major tensor. Rejects length mismatches, zero dimensions and
    /// non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        if shape.len() > 2 || shape.contains(&0) {
            return Err(Error::Shape(format!("unsupported shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("tensor entries must be finite".into()));
        }
        Ok(Tensor { shape, data })
    }

    fn raw(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::raw(vec![], vec![v])
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor::raw(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::raw(shape.to_vec(), vec![0.0; shape.iter().product()])
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|d| *d == 1)
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        match self.shape.as_slice() {
            [r, _] => *r,
            [n] => *n,
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.as_slice() {
            [_, c] => *c,
            _ => 1,
        }
    }

    /// Row `i` of a matrix.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse matrix used to mix rows: `out[o] += w * x[i]` for each
/// `(o, i, w)` entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMix {
    out_rows: usize,
    in_rows: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl RowMix {
    pub fn new(out_rows: usize, in_rows: usize, entries: Vec<(usize, usize, f64)>) -> Result<RowMix> {
        if let Some(&(o, i, _)) = entries.iter().find(|(o, i, _)| *o >= out_rows || *i >= in_rows) {
            return Err(Error::Shape(format!(
                "row mix entry ({o}, {i}) outside {out_rows}x{in_rows}"
            )));
        }
        Ok(RowMix {
            out_rows,
            in_rows,
            entries,
        })
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Dense `out_rows x in_rows` form.
    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.out_rows, self.in_rows]);
        for &(o, i, w) in &self.entries {
            t.data[o * self.in_rows + i] += w;
        }
        t
    }
}

#[derive(Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var, usize),
    Lookup(Var, Vec<usize>),
    Sum(Var, Option<usize>),
    Max(Var, Vec<usize>),
    WeightedSum(Var, Var),
    CrossEntropy(Var, usize, Vec<f64>),
    Concat(Var, Var),
    RowMix(Arc<RowMix>, Var),
    Map(Var, fn(f64) -> f64),
}

struct Entry {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Tape {
    entries: Vec<Entry>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

/// `c[m x n] (+)= a[m x k] * b[k x n]`, each operand optionally transposed
/// (a transposed operand is stored as its transpose, row-major).
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], accumulate: bool) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slices are sized m*k, k*n and m*n by every caller and the
    // strides above stay inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Views an operand of matmul as a matrix. A vector on the left is a row,
/// on the right a column.
fn as_matrix(shape: &[usize], left: bool) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        [n] if left => Some((1, *n)),
        [n] => Some((*n, 1)),
        _ => None,
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.entries[v.0].needs_grad);
        self.entries.push(Entry {
            value,
            op,
            needs_grad,
        });
        Var(self.entries.len() - 1)
    }

    /// Adds an input tensor. Gradients are only tracked for leaves created
    /// with `requires_grad` and the values that depend on them.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.entries.push(Entry {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.entries.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.entries[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.entries[v.0].needs_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        let (Some((m, k)), Some((k2, n))) = (as_matrix(&sa, true), as_matrix(&sb, false)) else {
            return shape_err(format!("matmul of {sa:?} and {sb:?}"));
        };
        if k != k2 {
            return shape_err(format!("matmul of {sa:?} and {sb:?}"));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, false);
        let shape = match (sa.len(), sb.len()) {
            (2, 2) => vec![m, n],
            (2, 1) => vec![m],
            (1, 2) => vec![n],
            _ => vec![],
        };
        Ok(self.push(Tensor::raw(shape, out), Op::MatMul(a, b), &[a, b]))
    }

    /// Elementwise sum. A vector on the right is broadcast over the rows of a
    /// matrix on the left.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = if ta.shape() == tb.shape() {
            ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect()
        } else if ta.shape().len() == 2 && tb.shape() == [ta.cols()] {
            let c = ta.cols();
            ta.data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + tb.data()[i % c])
                .collect()
        } else {
            return shape_err(format!("add of {:?} and {:?}", ta.shape(), tb.shape()));
        };
        let shape = ta.shape().to_vec();
        Ok(self.push(Tensor::raw(shape, data), Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::raw(t.shape().to_vec(), t.data().iter().map(|x| x * c).collect());
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::raw(t.shape().to_vec(), t.data().iter().map(|x| x.tanh()).collect());
        self.push(out, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::raw(t.shape().to_vec(), t.data().iter().map(|x| sigmoid(*x)).collect());
        self.push(out, Op::Sigmoid(a), &[a])
    }

    /// Elementwise `f` with caller-supplied derivative `df`.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let out = Tensor::raw(t.shape().to_vec(), t.data().iter().map(|x| f(*x)).collect());
        self.push(out, Op::Map(a, df), &[a])
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let lanes = lanes(t.shape(), axis)?;
        let mut out = t.data().to_vec();
        for lane in &lanes {
            let max = lane.iter().map(|&i| out[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &i in lane {
                out[i] = (out[i] - max).exp();
                z += out[i];
            }
            for &i in lane {
                out[i] /= z;
            }
        }
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::raw(shape, out), Op::Softmax(a, axis), &[a]))
    }

    /// Gathers rows of `matrix`.
    pub fn embedding_lookup(&mut self, matrix: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(matrix);
        if t.shape().len() != 2 {
            return shape_err(format!("embedding lookup on {:?}", t.shape()));
        }
        if indices.is_empty() {
            return shape_err("embedding lookup with no indices".into());
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::IndexOutOfRange { index: i, len: rows });
            }
            out.extend_from_slice(t.row(i));
        }
        let value = Tensor::raw(vec![indices.len(), cols], out);
        Ok(self.push(value, Op::Lookup(matrix, indices.to_vec()), &[matrix]))
    }

    /// Sum along `axis`, or of everything when `axis` is `None`.
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let t = self.value(a);
        let value = match axis {
            None => Tensor::scalar(t.data().iter().sum()),
            Some(ax) => {
                let lanes = lanes(t.shape(), ax)?;
                let data = lanes.iter().map(|l| l.iter().map(|&i| t.data()[i]).sum()).collect();
                Tensor::raw(reduced_shape(t.shape(), ax), data)
            }
        };
        Ok(self.push(value, Op::Sum(a, axis), &[a]))
    }

    /// Maximum along `axis`. Ties go to the lowest index, which also receives
    /// the whole gradient.
    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        let lanes = lanes(t.shape(), axis)?;
        let mut arg = Vec::with_capacity(lanes.len());
        let mut data = Vec::with_capacity(lanes.len());
        for lane in &lanes {
            let mut best = lane[0];
            for &i in &lane[1..] {
                if t.data()[i] > t.data()[best] {
                    best = i;
                }
            }
            arg.push(best);
            data.push(t.data()[best]);
        }
        let value = Tensor::raw(reduced_shape(t.shape(), axis), data);
        Ok(self.push(value, Op::Max(a, arg), &[a]))
    }

    /// `sum_i weights[i] * rows[i]` for weights of shape `[n]` or `[n, 1]`
    /// and rows of shape `[n, d]`.
    pub fn weighted_sum(&mut self, weights: Var, rows: Var) -> Result<Var> {
        let (w, r) = (self.value(weights), self.value(rows));
        if r.shape().len() != 2 || w.numel() != r.rows() || w.shape().len() > 2 || w.cols() != 1 {
            return shape_err(format!("weighted sum of {:?} and {:?}", w.shape(), r.shape()));
        }
        let d = r.cols();
        let mut out = vec![0.0; d];
        for (i, wi) in w.data().iter().enumerate() {
            for (o, x) in out.iter_mut().zip(r.row(i)) {
                *o += wi * x;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::WeightedSum(weights, rows), &[weights, rows]))
    }

    /// `-ln softmax(logits)[label]` for a logit vector.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 1 {
            return shape_err(format!("cross entropy on {:?}", t.shape()));
        }
        if label >= t.numel() {
            return Err(Error::IndexOutOfRange {
                index: label,
                len: t.numel(),
            });
        }
        let probs = softmax_slice(t.data());
        let loss = -probs[label].ln();
        // ln of the stable form avoids underflow to ln(0).
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + t.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = if loss.is_finite() { lse - t.data()[label] } else { loss };
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, label, probs), &[logits]))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = match (ta.shape(), tb.shape()) {
            ([n1], [n2]) => {
                let mut d = ta.data().to_vec();
                d.extend_from_slice(tb.data());
                Tensor::raw(vec![n1 + n2], d)
            }
            ([r1, c1], [r2, c2]) if r1 == r2 => {
                let mut d = Vec::with_capacity(r1 * (c1 + c2));
                for i in 0..*r1 {
                    d.extend_from_slice(ta.row(i));
                    d.extend_from_slice(tb.row(i));
                }
                Tensor::raw(vec![*r1, c1 + c2], d)
            }
            (sa, sb) => return shape_err(format!("concat of {sa:?} and {sb:?}")),
        };
        Ok(self.push(value, Op::Concat(a, b), &[a, b]))
    }

    /// Left-multiplies a matrix by a constant sparse matrix.
    pub fn row_mix(&mut self, mix: Arc<RowMix>, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 || t.rows() != mix.in_rows {
            return shape_err(format!("row mix {}x{} on {:?}", mix.out_rows, mix.in_rows, t.shape()));
        }
        let d = t.cols();
        let mut out = vec![0.0; mix.out_rows * d];
        for &(o, i, w) in &mix.entries {
            for (dst, src) in out[o * d..(o + 1) * d].iter_mut().zip(t.row(i)) {
                *dst += w * src;
            }
        }
        let value = Tensor::raw(vec![mix.out_rows, d], out);
        Ok(self.push(value, Op::RowMix(mix, x), &[x]))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return shape_err(format!("backward from non-scalar {:?}", self.value(loss).shape()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let entry = &self.entries[idx];
            if !entry.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let out = &entry.value;
            match &entry.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = as_matrix(ta.shape(), true).expect("checked in forward");
                    let n = as_matrix(tb.shape(), false).expect("checked in forward").1;
                    if self.requires_grad(*a) {
                        // dA = dC * B^T
                        let ga = grad_slot(&mut grads, *a, ta.numel());
                        gemm(m, n, k, &g, false, tb.data(), true, ga, true);
                    }
                    if self.requires_grad(*b) {
                        // dB = A^T * dC
                        let gb = grad_slot(&mut grads, *b, tb.numel());
                        gemm(k, m, n, ta.data(), true, &g, false, gb, true);
                    }
                }
                Op::Add(a, b) => {
                    if self.requires_grad(*a) {
                        add_into(grad_slot(&mut grads, *a, g.len()), &g);
                    }
                    if self.requires_grad(*b) {
                        let nb = self.value(*b).numel();
                        let gb = grad_slot(&mut grads, *b, nb);
                        for (i, gi) in g.iter().enumerate() {
                            gb[i % nb] += gi;
                        }
                    }
                }
                Op::Scale(a, c) => {
                    let ga = grad_slot(&mut grads, *a, g.len());
                    for (d, gi) in ga.iter_mut().zip(&g) {
                        *d += c * gi;
                    }
                }
                Op::Tanh(a) => {
                    let ga = grad_slot(&mut grads, *a, g.len());
                    for ((d, gi), y) in ga.iter_mut().zip(&g).zip(out.data()) {
                        *d += gi * (1.0 - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = grad_slot(&mut grads, *a, g.len());
                    for ((d, gi), y) in ga.iter_mut().zip(&g).zip(out.data()) {
                        *d += gi * y * (1.0 - y);
                    }
                }
                Op::Map(a, df) => {
                    let xs = self.value(*a).data();
                    let ga = grad_slot(&mut grads, *a, g.len());
                    for ((d, gi), x) in ga.iter_mut().zip(&g).zip(xs) {
                        *d += gi * df(*x);
                    }
                }
                Op::Softmax(a, axis) => {
                    let lanes = lanes(out.shape(), *axis)?;
                    let y = out.data();
                    let ga = grad_slot(&mut grads, *a, g.len());
                    for lane in &lanes {
                        let dot: f64 = lane.iter().map(|&i| g[i] * y[i]).sum();
                        for &i in lane {
                            ga[i] += y[i] * (g[i] - dot);
                        }
                    }
                }
                Op::Lookup(m, indices) => {
                    let tm = self.value(*m);
                    let cols = tm.cols();
                    let gm = grad_slot(&mut grads, *m, tm.numel());
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut gm[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
                Op::Sum(a, axis) => {
                    let ta = self.value(*a);
                    let ga = grad_slot(&mut grads, *a, ta.numel());
                    match axis {
                        None => ga.iter_mut().for_each(|d| *d += g[0]),
                        Some(ax) => {
                            for (o, lane) in lanes(ta.shape(), *ax)?.iter().enumerate() {
                                for &i in lane {
                                    ga[i] += g[o];
                                }
                            }
                        }
                    }
                }
                Op::Max(a, arg) => {
                    let na = self.value(*a).numel();
                    let ga = grad_slot(&mut grads, *a, na);
                    for (o, &i) in arg.iter().enumerate() {
                        ga[i] += g[o];
                    }
                }
                Op::WeightedSum(w, r) => {
                    let (tw, tr) = (self.value(*w), self.value(*r));
                    if self.requires_grad(*w) {
                        let gw = grad_slot(&mut grads, *w, tw.numel());
                        for (i, d) in gw.iter_mut().enumerate() {
                            *d += tr.row(i).iter().zip(&g).map(|(x, gi)| x * gi).sum::<f64>();
                        }
                    }
                    if self.requires_grad(*r) {
                        let d = tr.cols();
                        let gr = grad_slot(&mut grads, *r, tr.numel());
                        for (i, wi) in tw.data().iter().enumerate() {
                            for (dst, gi) in gr[i * d..(i + 1) * d].iter_mut().zip(&g) {
                                *dst += wi * gi;
                            }
                        }
                    }
                }
                Op::CrossEntropy(logits, label, probs) => {
                    let gl = grad_slot(&mut grads, *logits, probs.len());
                    for (i, (d, p)) in gl.iter_mut().zip(probs).enumerate() {
                        let target = if i == *label { 1.0 } else { 0.0 };
                        *d += g[0] * (p - target);
                    }
                }
                Op::Concat(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (ca, cb) = (ta.cols_last(), tb.cols_last());
                    let rows = ta.numel() / ca;
                    if self.requires_grad(*a) {
                        let ga = grad_slot(&mut grads, *a, ta.numel());
                        for r in 0..rows {
                            add_into(&mut ga[r * ca..(r + 1) * ca], &g[r * (ca + cb)..r * (ca + cb) + ca]);
                        }
                    }
                    if self.requires_grad(*b) {
                        let gb = grad_slot(&mut grads, *b, tb.numel());
                        for r in 0..rows {
                            add_into(
                                &mut gb[r * cb..(r + 1) * cb],
                                &g[r * (ca + cb) + ca..(r + 1) * (ca + cb)],
                            );
                        }
                    }
                }
                Op::RowMix(mix, x) => {
                    let tx = self.value(*x);
                    let d = tx.cols();
                    let gx = grad_slot(&mut grads, *x, tx.numel());
                    for &(o, i, w) in &mix.entries {
                        for (dst, gi) in gx[i * d..(i + 1) * d].iter_mut().zip(&g[o * d..(o + 1) * d]) {
                            *dst += w * gi;
                        }
                    }
                }
            }
        }

        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                let entry = &self.entries[i];
                match (&entry.op, g) {
                    (Op::Leaf, Some(g)) => Some(Tensor::raw(entry.value.shape().to_vec(), g)),
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }
}

impl Tensor {
    fn cols_last(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
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

/// Stable softmax of a slice.
pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Flat index groups along `axis`, one group per output position.
fn lanes(shape: &[usize], axis: usize) -> Result<Vec<Vec<usize>>> {
    match (shape, axis) {
        ([n], 0) => Ok(vec![(0..*n).collect()]),
        ([r, c], 0) => Ok((0..*c).map(|j| (0..*r).map(|i| i * c + j).collect()).collect()),
        ([r, c], 1) => Ok((0..*r).map(|i| (0..*c).map(|j| i * c + j).collect()).collect()),
        _ => shape_err(format!("axis {axis} invalid for shape {shape:?}")),
    }
}

fn reduced_shape(shape: &[usize], axis: usize) -> Vec<usize> {
    match (shape, axis) {
        ([_, c], 0) => vec![*c],
        ([r, _], 1) => vec![*r],
        _ => vec![],
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub passed: bool,
}

/// Floor on the denominator of the relative error so that entries whose
/// true gradient is ~0 are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERROR_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`.
pub fn gradient_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let loss = f(&mut tape, xv)?;
    let grads = tape.backward(loss)?;
    let analytic = grads
        .get(xv)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(probe.clone(), false);
        let out = f(&mut t, v)?;
        Ok(t.value(out).item())
    };
    let mut numeric = Vec::with_capacity(x.numel());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data[i] = orig;
        numeric.push((plus - minus) / (2.0 * h));
    }
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
        worst_index,
        passed: max_rel_error <= tol,
    })
}
