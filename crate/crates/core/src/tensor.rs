//! Dense row-major tensors and a tape-based reverse-mode differentiation
//! engine.
//!
//! Every primitive appends one node to a [`Tape`]. Nodes are only ever
//! appended, so creation order is already a topological order and
//! [`Tape::backward`] replays adjoints by walking the node list backwards.
//!
//! Gradient policy: a tape may be differentiated once. A second call to
//! `backward` on the same tape is an error; build a new tape per step.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use thiserror::Error;

/// Floating point element type of the engine. Training runs in `f32`,
/// gradient checking in `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is not connected to any tracked tensor")]
    UntrackedLoss,
    #[error("backward already ran on this tape")]
    BackwardTwice,
    #[error("gradients from a previous backward pass were never cleared")]
    PendingGradients,
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

fn dim_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Dimension {
        op,
        detail: detail.into(),
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(dim_err("tensor", format!("extents must be positive, got {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(dim_err(
                "tensor",
                format!("shape {shape:?} holds {len} values, data has {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, T::one())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Element `(row, col)` of a rank-2 tensor.
    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.shape[1] + col]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::of(v.to_f64_lossy()))
                .collect(),
        }
    }

    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(dim_err(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }
}

/// Plain matrix product on row-major buffers, `out += a[m×k] · b[k×n]`.
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

fn transpose_buf<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Nonlinearity used inside encoder MLPs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Gelu(Var),
    Log(Var),
    Clamp(Var, T, T),
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of executed primitives, replayed in reverse by [`Tape::backward`].
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    differentiated: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `(outer, extent, inner)` strides for iterating a tensor along `axis`.
fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            differentiated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tracked leaf: receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Some(Tensor {
            shape: self.nodes[v.0].value.shape.clone(),
            data: g.clone(),
        })
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Tensor<T>,
        op: Op<T>,
        inputs: &[Var],
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(value, op, requires_grad))
    }

    fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn map_unary(&mut self, name: &'static str, x: Var, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let value = Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&v| f(v)).collect(),
        };
        self.push_checked(name, value, op, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).matrix_dims("matmul")?;
        let (k2, n) = self.value(b).matrix_dims("matmul")?;
        if k != k2 {
            return Err(dim_err(
                "matmul",
                format!("cannot multiply {:?} by {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(&self.value(a).data, &self.value(b).data, &mut out, m, k, n);
        let value = Tensor {
            shape: vec![m, n],
            data: out,
        };
        self.push_checked("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        self.push_checked("add", value, Op::Add(a, b), &[a, b])
    }

    /// `x[m×n] + bias[n]`, bias repeated over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, n) = self.value(x).matrix_dims("add_bias")?;
        if self.shape(bias) != [n] {
            return Err(dim_err(
                "add_bias",
                format!("bias {:?} does not match rows of {:?}", self.shape(bias), self.shape(x)),
            ));
        }
        let b = &self.value(bias).data;
        let data = self
            .value(x)
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        let value = Tensor {
            shape: self.shape(x).to_vec(),
            data,
        };
        self.push_checked("add_bias", value, Op::AddBias(x, bias), &[x, bias])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor {
            shape: self.shape(a).to_vec(),
            data,
        };
        self.push_checked("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        self.map_unary("scale", x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.map_unary("relu", x, Op::Relu(x), |v| v.max(T::zero()))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.map_unary("gelu", x, Op::Gelu(x), gelu_value)
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        match act {
            Activation::Relu => self.relu(x),
            Activation::Gelu => self.gelu(x),
        }
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if self.value(x).data.iter().any(|&v| v <= T::zero()) {
            return Err(TensorError::NonFinite { op: "log" });
        }
        self.map_unary("log", x, Op::Log(x), |v| v.ln())
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        self.map_unary("clamp", x, Op::Clamp(x, lo, hi), |v| v.max(lo).min(hi))
    }

    /// Softmax along `axis`. Each slice is shifted by its maximum before
    /// exponentiation.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(dim_err("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, n, inner) = axis_strides(&shape, axis);
        let src = &self.value(x).data;
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| src[idx(k)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for k in 0..n {
                    let e = (src[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total = total + e;
                }
                for k in 0..n {
                    out[idx(k)] = out[idx(k)] / total;
                }
            }
        }
        let value = Tensor { shape, data: out };
        self.push_checked("softmax", value, Op::Softmax { x, axis }, &[x])
    }

    /// Normalizes each vector along the last axis to zero mean and unit
    /// variance, then applies `gain` and `bias`. Both affine parameters have
    /// either the length of the last axis or length 1 (shared).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("tensors have rank >= 1");
        for (what, p) in [("gain", gain), ("bias", bias)] {
            let ps = self.shape(p);
            if ps != [d] && ps != [1] {
                return Err(dim_err(
                    "layer_norm",
                    format!("{what} {ps:?} must be [{d}] or [1] for input {shape:?}"),
                ));
            }
        }
        let src = &self.value(x).data;
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        let rows = src.len() / d;
        let dt = T::of(d as f64);
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dt;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                let gj = if g.len() == 1 { g[0] } else { g[j] };
                let bj = if b.len() == 1 { b[0] } else { b[j] };
                out[r * d + j] = xh * gj + bj;
            }
        }
        let value = Tensor { shape, data: out };
        let op = Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        };
        self.push_checked("layer_norm", value, op, &[x, gain, bias])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).matrix_dims("transpose")?;
        let data = transpose_buf(&self.value(x).data, r, c);
        let value = Tensor {
            shape: vec![c, r],
            data,
        };
        self.push_checked("transpose", value, Op::Transpose(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        if len != self.value(x).len() || shape.contains(&0) {
            return Err(dim_err(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape(x)),
            ));
        }
        let value = Tensor {
            shape: shape.to_vec(),
            data: self.value(x).data.clone(),
        };
        self.push_checked("reshape", value, Op::Reshape(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).data.iter().copied().sum();
        self.push_checked("sum", Tensor::scalar(total), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let src = self.value(x);
        let total: T = src.data.iter().copied().sum();
        let mean = total / T::of(src.len() as f64);
        self.push_checked("mean", Tensor::scalar(mean), Op::Mean(x), &[x])
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| dim_err("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(dim_err("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut extent = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(dim_err(
                    "concat",
                    format!("{s:?} incompatible with {base:?} along axis {axis}"),
                ));
            }
            extent += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = extent;
        let (outer, _, inner) = axis_strides(&shape, axis);
        let mut data = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for &p in parts {
                let n = self.shape(p)[axis];
                let chunk = n * inner;
                data.extend_from_slice(&self.value(p).data[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor { shape, data };
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        self.push_checked("concat", value, op, parts)
    }

    /// Sub-range `[start, end)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let src_shape = self.shape(x).to_vec();
        if axis >= src_shape.len() || start >= end || end > src_shape[axis] {
            return Err(dim_err(
                "slice",
                format!("range {start}..{end} on axis {axis} invalid for {src_shape:?}"),
            ));
        }
        let (outer, n, inner) = axis_strides(&src_shape, axis);
        let width = end - start;
        let src = &self.value(x).data;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            data.extend_from_slice(&src[from..from + width * inner]);
        }
        let mut shape = src_shape;
        shape[axis] = width;
        let value = Tensor { shape, data };
        self.push_checked("slice", value, Op::Slice { x, axis, start }, &[x])
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err(
                op,
                format!("shapes {:?} and {:?} differ", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    /// Populates gradients of `loss` for every tracked node. Allowed once
    /// per tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.differentiated {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::UntrackedLoss);
        }
        self.differentiated = true;
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            self.propagate(idx, &g);
            if !g.iter().all(|v| v.is_finite()) {
                return Err(TensorError::NonFinite { op: "backward" });
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, delta: impl IntoIterator<Item = T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        for (s, d) in slot.iter_mut().zip(delta) {
            *s = *s + d;
        }
    }

    fn propagate(&mut self, idx: usize, g: &[T]) {
        // Ops own small index data only, so cloning is cheap apart from the
        // layer-norm caches, which are borrowed below instead.
        let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.requires_grad(a) {
                    let bt = transpose_buf(&self.value(b).data, k, n);
                    let mut da = vec![T::zero(); m * k];
                    gemm_acc(g, &bt, &mut da, m, n, k);
                    self.accumulate(a, da);
                }
                if self.requires_grad(b) {
                    let at = transpose_buf(&self.value(a).data, m, k);
                    let mut db = vec![T::zero(); k * n];
                    gemm_acc(&at, g, &mut db, k, m, n);
                    self.accumulate(b, db);
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(a, g.iter().copied());
                self.accumulate(b, g.iter().copied());
            }
            &Op::AddBias(x, bias) => {
                self.accumulate(x, g.iter().copied());
                let n = self.shape(bias)[0];
                let mut db = vec![T::zero(); n];
                for (i, &gv) in g.iter().enumerate() {
                    db[i % n] = db[i % n] + gv;
                }
                self.accumulate(bias, db);
            }
            &Op::Mul(a, b) => {
                let da: Vec<T> = g
                    .iter()
                    .zip(&self.value(b).data)
                    .map(|(&gv, &bv)| gv * bv)
                    .collect();
                let db: Vec<T> = g
                    .iter()
                    .zip(&self.value(a).data)
                    .map(|(&gv, &av)| gv * av)
                    .collect();
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            &Op::Scale(x, factor) => {
                self.accumulate(x, g.iter().map(|&gv| gv * factor));
            }
            &Op::Relu(x) => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(&self.value(x).data)
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(x, dx);
            }
            &Op::Gelu(x) => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(&self.value(x).data)
                    .map(|(&gv, &xv)| gv * gelu_derivative(xv))
                    .collect();
                self.accumulate(x, dx);
            }
            &Op::Log(x) => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(&self.value(x).data)
                    .map(|(&gv, &xv)| gv / xv)
                    .collect();
                self.accumulate(x, dx);
            }
            &Op::Clamp(x, lo, hi) => {
                let dx: Vec<T> = g
                    .iter()
                    .zip(&self.value(x).data)
                    .map(|(&gv, &xv)| if xv < lo || xv > hi { T::zero() } else { gv })
                    .collect();
                self.accumulate(x, dx);
            }
            &Op::Softmax { x, axis } => {
                let y = &self.nodes[idx].value;
                let (outer, n, inner) = axis_strides(&y.shape, axis);
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |k: usize| (o * n + k) * inner + i;
                        let dot: T = (0..n).map(|k| g[at(k)] * y.data[at(k)]).sum();
                        for k in 0..n {
                            dx[at(k)] = y.data[at(k)] * (g[at(k)] - dot);
                        }
                    }
                }
                self.accumulate(x, dx);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (x, gain, bias) = (*x, *gain, *bias);
                let d = *self.shape(x).last().expect("rank >= 1");
                let gvals = self.value(gain).data.clone();
                let shared = gvals.len() == 1;
                let rows = xhat.len() / d;
                let dt = T::of(d as f64);
                let mut dx = vec![T::zero(); xhat.len()];
                let mut dgain = vec![T::zero(); gvals.len()];
                let mut dbias = vec![T::zero(); gvals.len().max(self.value(bias).len())];
                for r in 0..rows {
                    let span = r * d..(r + 1) * d;
                    let (gr, xr) = (&g[span.clone()], &xhat[span]);
                    let mut mean_dxh = T::zero();
                    let mut mean_dxh_xh = T::zero();
                    for j in 0..d {
                        let gj = if shared { gvals[0] } else { gvals[j] };
                        let dxh = gr[j] * gj;
                        mean_dxh = mean_dxh + dxh;
                        mean_dxh_xh = mean_dxh_xh + dxh * xr[j];
                        let slot = if shared { 0 } else { j };
                        dgain[slot] = dgain[slot] + gr[j] * xr[j];
                    }
                    mean_dxh = mean_dxh / dt;
                    mean_dxh_xh = mean_dxh_xh / dt;
                    for j in 0..d {
                        let gj = if shared { gvals[0] } else { gvals[j] };
                        let dxh = gr[j] * gj;
                        dx[r * d + j] = rstd[r] * (dxh - mean_dxh - xr[j] * mean_dxh_xh);
                    }
                    let bias_shared = self.value(bias).len() == 1;
                    for j in 0..d {
                        let slot = if bias_shared { 0 } else { j };
                        dbias[slot] = dbias[slot] + gr[j];
                    }
                }
                dbias.truncate(self.value(bias).len());
                self.accumulate(x, dx);
                self.accumulate(gain, dgain);
                self.accumulate(bias, dbias);
            }
            &Op::Transpose(x) => {
                let (r, c) = (self.shape(x)[0], self.shape(x)[1]);
                self.accumulate(x, transpose_buf(g, c, r));
            }
            &Op::Reshape(x) => {
                self.accumulate(x, g.iter().copied());
            }
            &Op::Sum(x) => {
                let len = self.value(x).len();
                self.accumulate(x, std::iter::repeat_n(g[0], len));
            }
            &Op::Mean(x) => {
                let len = self.value(x).len();
                let share = g[0] / T::of(len as f64);
                self.accumulate(x, std::iter::repeat_n(share, len));
            }
            Op::Concat { parts, axis } => {
                let axis = *axis;
                let shape = self.nodes[idx].value.shape.clone();
                let (outer, _, inner) = axis_strides(&shape, axis);
                let mut offset = 0;
                let total = shape[axis];
                for &p in parts {
                    let n = self.shape(p)[axis];
                    let mut dp = Vec::with_capacity(outer * n * inner);
                    for o in 0..outer {
                        let from = (o * total + offset) * inner;
                        dp.extend_from_slice(&g[from..from + n * inner]);
                    }
                    self.accumulate(p, dp);
                    offset += n;
                }
            }
            &Op::Slice { x, axis, start } => {
                let src_shape = self.shape(x).to_vec();
                let (outer, n, inner) = axis_strides(&src_shape, axis);
                let width = self.nodes[idx].value.shape[axis];
                let mut dx = vec![T::zero(); outer * n * inner];
                for o in 0..outer {
                    let to = (o * n + start) * inner;
                    let from = o * width * inner;
                    dx[to..to + width * inner].copy_from_slice(&g[from..from + width * inner]);
                }
                self.accumulate(x, dx);
            }
        }
        self.nodes[idx].op = op;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu_value<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(0.044_715);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_derivative<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(0.044_715);
    let half = T::of(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::of(3.0) * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn tensor_rejects_mismatched_data() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn matmul_identity_and_projector() {
        let mut tape = Tape::new();
        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let out = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let proj = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
        let m = tape.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let out = tape.matmul(proj, m).unwrap();
        assert_eq!(tape.value(out).data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = tape.softmax(x, 0).unwrap();
        for &v in tape.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = tape.constant(t(&[2], &[0.0, 2f64.ln()]));
        let y = tape.softmax(x, 0).unwrap();
        assert!((tape.value(y).data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((tape.value(y).data()[1] - 2.0 / 3.0).abs() < 1e-15);

        let big = tape.constant(t(&[2], &[1000.0, 1001.0]));
        let small = tape.constant(t(&[2], &[0.0, 1.0]));
        let yb = tape.softmax(big, 0).unwrap();
        let ys = tape.softmax(small, 0).unwrap();
        assert_eq!(tape.value(yb).data(), tape.value(ys).data());
    }

    #[test]
    fn softmax_rejects_bad_axis() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(tape.softmax(x, 2).is_err());
    }

    #[test]
    fn softmax_along_first_axis() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2, 2], &[0.0, 1.0, 0.0, 3.0]));
        let y = tape.softmax(x, 0).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 0.5).abs() < 1e-15 && (d[2] - 0.5).abs() < 1e-15);
        assert!((d[1] + d[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_examples() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::ones(&[4]));
        let b = tape.constant(Tensor::zeros(&[4]));
        let x = tape.constant(t(&[4], &[5.0; 4]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let x = tape.constant(t(&[2], &[1.0, -1.0]));
        let y = tape.layer_norm(x, g, b, 1e-12).unwrap();
        let d = tape.value(y).data();
        assert!((d[0] - 1.0).abs() < 1e-9 && (d[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn layer_norm_rejects_wrong_gain() {
        let mut tape = Tape::<f64>::new();
        let g = tape.constant(Tensor::ones(&[3]));
        let b = tape.constant(Tensor::zeros(&[4]));
        let x = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(tape.layer_norm(x, g, b, 1e-5).is_err());
    }

    #[test]
    fn backward_sum_and_square() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().data().iter().all(|&v| v == 1.0));

        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        assert_eq!(tape.backward(x), Err(TensorError::NonScalarLoss(vec![2])));

        let c = tape.constant(t(&[1], &[1.0]));
        assert_eq!(tape.backward(c), Err(TensorError::UntrackedLoss));

        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.backward(s), Err(TensorError::BackwardTwice));
    }

    #[test]
    fn log_of_nonpositive_is_an_error() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn concat_and_slice_invert() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = tape.param(t(&[2, 1], &[5.0, 6.0]));
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let back = tape.slice(c, 1, 0, 2).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(a).data());
        let rows = tape.concat(&[a, a], 0).unwrap();
        assert_eq!(tape.value(rows).shape(), &[4, 2]);
    }
}
