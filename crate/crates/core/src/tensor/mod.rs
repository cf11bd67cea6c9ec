//! Reverse-mode automatic differentiation over dense row-major arrays.
//!
//! A [`Tape`] records every operation eagerly: values are computed when the
//! op is called and a node is appended. Node order is a topological order,
//! so [`Tape::backward`] walks the nodes once in reverse.
//!
//! Most ops treat a tensor as a matrix of `rows × cols` where `cols` is the
//! last extent.

mod adam;
mod attention;
mod backward;
mod gradcheck;
pub mod kernels;
mod params;

pub use adam::{Adam, AdamConfig};
pub use backward::Grads;
pub use gradcheck::{gradcheck, GradcheckReport};
pub use params::{load_checkpoint, manifest_path, Bound, save_checkpoint, Checkpoint, ParamId, ParamStore};

use crate::error::{Error, Result};
use crate::real::Real;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    Offset(Var),
    MulConst(Var, Vec<T>),
    MatMul(Var, Var, usize, usize, usize),
    Transpose(Var, usize, usize),
    Reshape(Var),
    ConcatCols(Vec<(Var, usize)>, usize),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize, usize),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>, usize),
    BroadcastRows(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        cols: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Clamp(Var, T, T),
    NormalizeRows(Var, usize),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    NeighborAttention {
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        idx: Vec<usize>,
        kn: usize,
        heads: usize,
        probs: Vec<T>,
    },
    Mse(Var, Var),
    Sum(Var),
    Mean(Var),
}

pub(crate) struct Node<T> {
    pub value: Vec<T>,
    pub shape: Vec<usize>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Gradient tape. One tape per forward/backward step.
pub struct Tape<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: {a:?} vs {b:?}"))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, shape: &[usize], value: Vec<T>, requires_grad: bool) -> Result<Var> {
        if value.len() != numel(shape) {
            return Err(Error::Shape(format!(
                "leaf: {} values for shape {shape:?}",
                value.len()
            )));
        }
        self.nodes.push(Node {
            value,
            shape: shape.to_vec(),
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable input.
    pub fn var(&mut self, shape: &[usize], value: Vec<T>) -> Result<Var> {
        self.leaf(shape, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, shape: &[usize], value: Vec<T>) -> Result<Var> {
        self.leaf(shape, value, false)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// `(rows, cols)` view with `cols` the last extent.
    pub fn dims2(&self, v: Var) -> (usize, usize) {
        let s = &self.nodes[v.0].shape;
        let cols = s.last().copied().unwrap_or(1);
        let n = numel(s);
        (if cols == 0 { 0 } else { n / cols }, cols)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(value, shape, op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(value, shape, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x - *y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(value, shape, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(value, shape, Op::Mul(a, b), &[a, b]))
    }

    fn row_check(&self, op: &str, x: Var, row: Var) -> Result<usize> {
        let (_, cols) = self.dims2(x);
        if numel(self.shape(row)) != cols {
            return Err(shape_err(op, self.shape(x), self.shape(row)));
        }
        Ok(cols)
    }

    /// `x[r, c] + b[c]`
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let cols = self.row_check("add_row", x, b)?;
        let bv = self.value(b);
        let value = self.value(x).iter().enumerate().map(|(i, v)| *v + bv[i % cols]).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(value, shape, Op::AddRow(x, b), &[x, b]))
    }

    /// `x[r, c] · g[c]`
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let cols = self.row_check("mul_row", x, g)?;
        let gv = self.value(g);
        let value = self.value(x).iter().enumerate().map(|(i, v)| *v * gv[i % cols]).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(value, shape, Op::MulRow(x, g), &[x, g]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let s = T::of(s);
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    /// `x + c` for a constant array `c` of the same length.
    pub fn add_const(&mut self, x: Var, c: &[T]) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::Shape(format!(
                "add_const: {:?} vs {} constants",
                self.shape(x),
                c.len()
            )));
        }
        let value = self.value(x).iter().zip(c).map(|(a, b)| *a + *b).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(value, shape, Op::Offset(x), &[x]))
    }

    /// `x ⊙ c` for a constant array `c` of the same length.
    pub fn mul_const(&mut self, x: Var, c: Vec<T>) -> Result<Var> {
        if c.len() != self.value(x).len() {
            return Err(Error::Shape(format!(
                "mul_const: {:?} vs {} constants",
                self.shape(x),
                c.len()
            )));
        }
        let value = self.value(x).iter().zip(&c).map(|(a, b)| *a * *b).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(value, shape, Op::MulConst(x, c), &[x]))
    }

    /// `[m, k] · [k, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(out, vec![m, n], Op::MatMul(a, b, m, k, n), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose: expected 2-d, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let xv = self.value(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xv[i * c + j];
            }
        }
        Ok(self.push(out, vec![c, r], Op::Transpose(x, r, c), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let value = self.value(x).to_vec();
        Ok(self.push(value, shape.to_vec(), Op::Reshape(x), &[x]))
    }

    /// Concatenate along the last axis; all inputs share the row count.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Shape("concat_cols: no inputs".into()));
        };
        let rows = self.dims2(first).0;
        let mut parts = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = self.dims2(x);
            if r != rows {
                return Err(shape_err("concat_cols", self.shape(first), self.shape(x)));
            }
            parts.push((x, c));
        }
        let total: usize = parts.iter().map(|p| p.1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(x, c) in &parts {
                out.extend_from_slice(&self.value(x)[r * c..(r + 1) * c]);
            }
        }
        Ok(self.push(out, vec![rows, total], Op::ConcatCols(parts, total), xs))
    }

    /// Stack along the first axis; all inputs share the column count.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Shape("concat_rows: no inputs".into()));
        };
        let cols = self.dims2(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &x in xs {
            let (r, c) = self.dims2(x);
            if c != cols {
                return Err(shape_err("concat_rows", self.shape(first), self.shape(x)));
            }
            rows += r;
            out.extend_from_slice(self.value(x));
        }
        Ok(self.push(out, vec![rows, cols], Op::ConcatRows(xs.to_vec()), xs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        if start + width > cols {
            return Err(Error::Shape(format!(
                "slice_cols: [{start}, {}) out of {:?}",
                start + width,
                self.shape(x)
            )));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(rows * width);
        for r in 0..rows {
            out.extend_from_slice(&xv[r * cols + start..r * cols + start + width]);
        }
        Ok(self.push(out, vec![rows, width], Op::SliceCols(x, start, width, cols), &[x]))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        if start + count > rows {
            return Err(Error::Shape(format!(
                "slice_rows: [{start}, {}) out of {:?}",
                start + count,
                self.shape(x)
            )));
        }
        let out = self.value(x)[start * cols..(start + count) * cols].to_vec();
        Ok(self.push(out, vec![count, cols], Op::SliceRows(x, start), &[x]))
    }

    /// Select rows by index (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Shape(format!(
                "gather_rows: index {bad} out of {rows} rows"
            )));
        }
        let xv = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            out.extend_from_slice(&xv[i * cols..(i + 1) * cols]);
        }
        Ok(self.push(out, vec![idx.len(), cols], Op::GatherRows(x, idx.to_vec(), cols), &[x]))
    }

    /// Repeat a row vector `n` times: `[c] → [n, c]`.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Var {
        let xv = self.value(x).to_vec();
        let cols = xv.len();
        let mut out = Vec::with_capacity(n * cols);
        for _ in 0..n {
            out.extend_from_slice(&xv);
        }
        self.push(out, vec![n, cols], Op::BroadcastRows(x), &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (rows, cols) = self.dims2(x);
        let mut out = self.value(x).to_vec();
        for r in 0..rows {
            softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
        }
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::Softmax(x, cols), &[x])
    }

    /// Layer normalization over the last axis with variance epsilon 1e-5,
    /// followed by the affine `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let cols = self.row_check("layer_norm", x, gain)?;
        self.row_check("layer_norm", x, bias)?;
        let rows = self.dims2(x).0;
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let mut xhat = vec![T::zero(); rows * cols];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); rows * cols];
        let n = T::of(cols as f64);
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let is = T::one() / (var + T::of(1e-5)).sqrt();
            inv_std[r] = is;
            for c in 0..cols {
                let h = (row[c] - mean) * is;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * gv[c] + bv[c];
            }
        }
        let shape = self.shape(x).to_vec();
        Ok(self.push(
            out,
            shape,
            Op::LayerNorm {
                x,
                gain,
                bias,
                cols,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu_value, Op::Gelu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid_value, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        self.unary(x, |v| v.max(lo).min(hi), Op::Clamp(x, lo, hi))
    }

    /// L2-normalize each row.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let (rows, cols) = self.dims2(x);
        let mut out = self.value(x).to_vec();
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let n = row.iter().map(|v| *v * *v).sum::<T>().sqrt().max(T::of(1e-12));
            row.iter_mut().for_each(|v| *v /= n);
        }
        let shape = self.shape(x).to_vec();
        self.push(out, shape, Op::NormalizeRows(x, cols), &[x])
    }

    /// `x·W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// `mean((x − y)²)` as a scalar.
    pub fn mse(&mut self, x: Var, y: Var) -> Result<Var> {
        self.same_shape("mse", x, y)?;
        let n = self.value(x).len().max(1);
        let s = self
            .value(x)
            .iter()
            .zip(self.value(y))
            .map(|(a, b)| (*a - *b) * (*a - *b))
            .sum::<T>()
            / T::of(n as f64);
        Ok(self.push(vec![s], vec![1], Op::Mse(x, y), &[x, y]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![s], vec![1], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let s = self.value(x).iter().copied().sum::<T>() / T::of(n as f64);
        self.push(vec![s], vec![1], Op::Mean(x), &[x])
    }

    /// Largest deviation from 1 of any attention-probability row recorded on
    /// this tape, or `None` if no attention op ran.
    pub fn attention_row_sum_error(&self) -> Option<f64> {
        let mut worst: Option<f64> = None;
        for node in &self.nodes {
            let (probs, width) = match &node.op {
                Op::Attention { probs, k, .. } => (probs, self.nodes[k.0].shape[0]),
                Op::NeighborAttention { probs, kn, .. } => (probs, *kn),
                _ => continue,
            };
            for row in probs.chunks(width.max(1)) {
                let e = (row.iter().copied().sum::<T>().to64() - 1.0).abs();
                worst = Some(worst.map_or(e, |w: f64| w.max(e)));
            }
        }
        worst
    }

    /// Number of attention ops recorded on this tape.
    pub fn attention_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Attention { .. } | Op::NeighborAttention { .. }))
            .count()
    }
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4;

// 0.5·(1 + tanh(u)) = σ(2u), which needs one exp instead of tanh.
fn gelu_gate<T: Real>(x: T) -> T {
    let u = T::of(GELU_K) * (x + T::of(0.044715) * x * x * x);
    T::one() / (T::one() + (T::of(-2.0) * u).exp())
}

pub(crate) fn gelu_value<T: Real>(x: T) -> T {
    x * gelu_gate(x)
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let s = gelu_gate(x);
    let du = T::of(GELU_K) * (T::one() + T::of(3.0 * 0.044715) * x * x);
    s + x * T::of(2.0) * s * (T::one() - s) * du
}

pub(crate) fn sigmoid_value<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests;
