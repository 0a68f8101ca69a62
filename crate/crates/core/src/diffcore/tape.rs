//! Define-by-run reverse-mode differentiation over dense f64 arrays.
//!
//! A [`Tape`] is built fresh for every forward pass. Each operation appends a
//! node holding its forward value and enough bookkeeping to replay the chain
//! rule; [`Tape::backward`] walks the nodes in reverse and writes parameter
//! gradients back into the owning [`ParamStore`].
//!
//! Shape conventions: arrays are row-major. Ops that act on "rows" treat every
//! leading axis as a flattened row index and the last axis as columns.

use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::DiffError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn node_id(self) -> usize {
        self.0
    }
}

/// Dense array with an optional gradient buffer of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffArray {
    pub(crate) shape: Vec<usize>,
    pub(crate) values: Vec<f64>,
    pub(crate) grad: Option<Vec<f64>>,
}

impl DiffArray {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, DiffError> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(DiffError::ShapeMismatch {
                op: "array",
                left: shape,
                right: vec![values.len()],
            });
        }
        Ok(Self { shape, values, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, values: vec![0.0; n], grad: None }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Unary {
    Neg,
    Sin,
    Exp,
    /// `-|x|`, subgradient 0 at the origin.
    NegAbs,
    LeakyRelu(f64),
    Softplus,
    Sigmoid,
    Tanh,
    Square,
    Recip,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Sin => x.sin(),
            Unary::Exp => x.exp(),
            Unary::NegAbs => -x.abs(),
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Unary::Softplus => softplus(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Square => x * x,
            Unary::Recip => 1.0 / x,
        }
    }

    /// Derivative given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Sin => x.cos(),
            Unary::Exp => y,
            Unary::NegAbs => {
                if x > 0.0 {
                    -1.0
                } else if x < 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Unary::Softplus => sigmoid(x),
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Square => 2.0 * x,
            Unary::Recip => -y * y,
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `b` repeats over the leading axes of `a`.
    AddBcast(Var, Var),
    MulBcast(Var, Var),
    Scale(Var, f64),
    MatMul { a: Var, b: Var, rows: usize, inner: usize, cols: usize },
    Bmm { a: Var, b: Var, groups: usize, m: usize, k: usize, n: usize },
    TransposeLast2 { a: Var, outer: usize, m: usize, n: usize },
    Reshape(Var),
    Concat { parts: Vec<Var>, outer: usize, widths: Vec<usize> },
    Narrow { a: Var, outer: usize, src_width: usize, offset: usize, width: usize },
    Unary(Var, Unary),
    Softmax { a: Var, outer: usize, mid: usize, inner: usize },
    Mean { a: Var, outer: usize, mid: usize, inner: usize },
    SumAll(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, cols: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    BatchNorm { x: Var, gamma: Var, beta: Var, cols: usize, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    Conv1d { x: Var, w: Var, bias: Var, geom: ConvGeom, cols: Vec<f64> },
    AvgPool1d { x: Var, batch: usize, len_in: usize, len_out: usize, channels: usize, kernel: usize, stride: usize },
    Embedding { table: Var, indices: Vec<usize>, dim: usize },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64>, classes: usize },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    len_in: usize,
    len_out: usize,
    cin: usize,
    cout: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
}

#[derive(Debug)]
struct Node {
    array: DiffArray,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Pending update to a non-trainable buffer (e.g. batch-norm running stats).
#[derive(Debug, Clone, PartialEq)]
pub struct BufferUpdate {
    pub param: ParamId,
    pub values: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    buffer_updates: Vec<BufferUpdate>,
    backward_done: bool,
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> DiffError {
    DiffError::ShapeMismatch { op, left: left.to_vec(), right: right.to_vec() }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// `c (m x n) += a (m x k) * b (k x n)` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c[..m * n].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every element addressed by the given extents
    // and strides; callers pass row-major buffers of exactly these sizes.
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

fn accumulate<'g>(grads: &'g mut [Option<Vec<f64>>], v: Var, len: usize) -> &'g mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
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

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node {
            array: DiffArray { shape, values, grad: None },
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn array(&self, v: Var) -> &DiffArray {
        &self.nodes[v.0].array
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].array.values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].array.shape
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].array.grad.as_deref()
    }

    /// Constant input; no gradient flows into it.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var, DiffError> {
        self.leaf(shape, values, false)
    }

    /// Input leaf. With `requires_grad`, its gradient is kept after backward.
    pub fn leaf(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<Var, DiffError> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(mismatch("leaf", &shape, &[values.len()]));
        }
        Ok(self.push(shape, values, Op::Leaf, requires_grad))
    }

    /// Loads a parameter onto the tape; repeated loads return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.array.shape.clone(), p.array.values.clone(), Op::Leaf, p.trainable);
        self.nodes[v.0].param = Some(id);
        self.param_vars.insert(id, v);
        v
    }

    pub fn queue_buffer_update(&mut self, param: ParamId, values: Vec<f64>) {
        self.buffer_updates.push(BufferUpdate { param, values });
    }

    pub fn take_buffer_updates(&mut self) -> Vec<BufferUpdate> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, mk: Op) -> Result<Var, DiffError> {
        self.same_shape(op, a, b)?;
        let values = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), values, mk, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn bcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    /// `a + b` where `b`'s shape equals the trailing axes of `a`.
    pub fn add_bcast(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.bcast_check("add_bcast", a, b)?;
        let bv = self.value(b);
        let m = bv.len().max(1);
        let values = self.value(a).iter().enumerate().map(|(i, x)| x + bv[i % m]).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), values, Op::AddBcast(a, b), rg))
    }

    /// `a * b` where `b`'s shape equals the trailing axes of `a`.
    pub fn mul_bcast(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.bcast_check("mul_bcast", a, b)?;
        let bv = self.value(b);
        let m = bv.len().max(1);
        let values = self.value(a).iter().enumerate().map(|(i, x)| x * bv[i % m]).collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), values, Op::MulBcast(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let values = self.value(a).iter().map(|x| x * c).collect();
        self.push(self.shape(a).to_vec(), values, Op::Scale(a, c), self.rg(a))
    }

    pub fn unary(&mut self, a: Var, kind: Unary) -> Var {
        let values = self.value(a).iter().map(|&x| kind.apply(x)).collect();
        self.push(self.shape(a).to_vec(), values, Op::Unary(a, kind), self.rg(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Neg)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sin)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Exp)
    }

    pub fn neg_abs(&mut self, a: Var) -> Var {
        self.unary(a, Unary::NegAbs)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Unary::LeakyRelu(slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Unary::LeakyRelu(0.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Softplus)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Tanh)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Square)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Unary::Recip)
    }

    /// Matrix product. `a` is `[.., inner]` (leading axes flattened into
    /// rows), `b` is `[inner, cols]`; the result is `[.., cols]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let inner = sb[0];
        let cols = sb[1];
        let rows = if inner == 0 { sa[..sa.len() - 1].iter().product() } else { self.value(a).len() / inner };
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(cols);
        let mut out = vec![0.0; rows * cols];
        gemm(rows, inner, cols, self.value(a), inner as isize, 1, self.value(b), cols as isize, 1, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, out, Op::MatMul { a, b, rows, inner, cols }, rg))
    }

    /// Batched matrix product of `[g, m, k]` and `[g, k, n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch("bmm", sa, sb));
        }
        let (groups, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; groups * m * n];
        let (av, bv) = (self.value(a), self.value(b));
        for g in 0..groups {
            gemm(
                m,
                k,
                n,
                &av[g * m * k..],
                k as isize,
                1,
                &bv[g * k * n..],
                n as isize,
                1,
                &mut out[g * m * n..(g + 1) * m * n],
                0.0,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![groups, m, n], out, Op::Bmm { a, b, groups, m, k, n }, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, a: Var) -> Result<Var, DiffError> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(mismatch("transpose", &s, &[]));
        }
        let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
        let outer: usize = s[..s.len() - 2].iter().product();
        let av = self.value(a);
        let mut out = vec![0.0; av.len()];
        for o in 0..outer {
            let base = o * m * n;
            for i in 0..m {
                for j in 0..n {
                    out[base + j * m + i] = av[base + i * n + j];
                }
            }
        }
        let mut shape = s.clone();
        let r = shape.len();
        shape.swap(r - 1, r - 2);
        Ok(self.push(shape, out, Op::TransposeLast2 { a, outer, m, n }, self.rg(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, DiffError> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(mismatch("reshape", self.shape(a), &shape));
        }
        let values = self.value(a).to_vec();
        Ok(self.push(shape, values, Op::Reshape(a), self.rg(a)))
    }

    /// Collapses everything after the first axis.
    pub fn flatten(&mut self, a: Var) -> Result<Var, DiffError> {
        let s = self.shape(a);
        if s.is_empty() {
            return self.reshape(a, vec![1]);
        }
        let first = s[0];
        let rest = s[1..].iter().product();
        self.reshape(a, vec![first, rest])
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, DiffError> {
        let first = *parts.first().ok_or_else(|| DiffError::Invalid("concat of zero arrays".into()))?;
        let s0 = self.shape(first).to_vec();
        if axis >= s0.len() {
            return Err(DiffError::Invalid(format!("concat axis {axis} out of range for shape {s0:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == s0.len() && s.iter().zip(&s0).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(mismatch("concat", &s0, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&s0, axis);
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p)[axis] * inner).collect();
        let row: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(shape, out, Op::Concat { parts: parts.to_vec(), outer, widths }, rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, DiffError> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(DiffError::Invalid(format!("narrow [{start}, {}) on axis {axis} of shape {s:?}", start + len)));
        }
        let (outer, mid, inner) = split_axis(&s, axis);
        let src_width = mid * inner;
        let offset = start * inner;
        let width = len * inner;
        let av = self.value(a);
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            out.extend_from_slice(&av[o * src_width + offset..o * src_width + offset + width]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(shape, out, Op::Narrow { a, outer, src_width, offset, width }, self.rg(a)))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, DiffError> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(DiffError::Invalid(format!("softmax axis {axis} out of range for shape {s:?}")));
        }
        let (outer, mid, inner) = split_axis(&s, axis);
        let av = self.value(a);
        let mut out = vec![0.0; av.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * mid + j) * inner + i;
                let max = (0..mid).map(|j| av[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..mid {
                    let e = (av[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    sum += e;
                }
                for j in 0..mid {
                    out[idx(j)] /= sum;
                }
            }
        }
        Ok(self.push(s, out, Op::Softmax { a, outer, mid, inner }, self.rg(a)))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var, DiffError> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || s[axis] == 0 {
            return Err(DiffError::Invalid(format!("mean over axis {axis} of shape {s:?}")));
        }
        let (outer, mid, inner) = split_axis(&s, axis);
        let av = self.value(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..mid {
                let src = &av[(o * mid + j) * inner..(o * mid + j + 1) * inner];
                for (d, x) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += x;
                }
            }
        }
        let inv = 1.0 / mid as f64;
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = s;
        shape.remove(axis);
        Ok(self.push(shape, out, Op::Mean { a, outer, mid, inner }, self.rg(a)))
    }

    /// Sum of every element, as a scalar (shape `[]`).
    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![], vec![s], Op::SumAll(a), self.rg(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Layer normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, DiffError> {
        let s = self.shape(x).to_vec();
        let cols = *s.last().ok_or_else(|| mismatch("layer_norm", &s, &[]))?;
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] {
            return Err(mismatch("layer_norm", &s, self.shape(gamma)));
        }
        let xv = self.value(x);
        let rows = xv.len() / cols.max(1);
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[r] = inv;
            for c in 0..cols {
                xhat[r * cols + c] = (row[c] - mean) * inv;
            }
        }
        let (g, b) = (self.value(gamma), self.value(beta));
        let out = xhat.iter().enumerate().map(|(i, h)| h * g[i % cols] + b[i % cols]).collect();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(s, out, Op::LayerNorm { x, gamma, beta, cols, xhat, inv_std }, rg))
    }

    /// Batch normalization over rows (all leading axes) per column.
    ///
    /// In training mode the batch statistics are used and returned as
    /// `(mean, unbiased variance)` so the caller can update running buffers.
    /// In eval mode `running` supplies the statistics and nothing is returned.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (&[f64], &[f64]),
        train: bool,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>), DiffError> {
        let s = self.shape(x).to_vec();
        let cols = *s.last().ok_or_else(|| mismatch("batch_norm", &s, &[]))?;
        if self.shape(gamma) != [cols] || self.shape(beta) != [cols] || running.0.len() != cols || running.1.len() != cols {
            return Err(mismatch("batch_norm", &s, self.shape(gamma)));
        }
        let xv = self.value(x);
        let rows = xv.len() / cols.max(1);
        let (mean, var, stats) = if train {
            if rows < 2 {
                return Err(DiffError::Invalid("batch_norm in training mode needs at least 2 rows".into()));
            }
            let mut mean = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    mean[c] += xv[r * cols + c];
                }
            }
            mean.iter_mut().for_each(|m| *m /= rows as f64);
            let mut var = vec![0.0; cols];
            for r in 0..rows {
                for c in 0..cols {
                    let d = xv[r * cols + c] - mean[c];
                    var[c] += d * d;
                }
            }
            let unbiased: Vec<f64> = var.iter().map(|v| v / (rows - 1) as f64).collect();
            var.iter_mut().for_each(|v| *v /= rows as f64);
            (mean.clone(), var, Some((mean, unbiased)))
        } else {
            (running.0.to_vec(), running.1.to_vec(), None)
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let xhat: Vec<f64> = xv.iter().enumerate().map(|(i, v)| (v - mean[i % cols]) * inv_std[i % cols]).collect();
        let (g, b) = (self.value(gamma), self.value(beta));
        let out = xhat.iter().enumerate().map(|(i, h)| h * g[i % cols] + b[i % cols]).collect();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let v = self.push(s, out, Op::BatchNorm { x, gamma, beta, cols, xhat, inv_std, train }, rg);
        Ok((v, stats))
    }

    /// 1-D convolution over `[batch, len, cin]` with weights `[kernel, cin,
    /// cout]` and bias `[cout]`. `pad_left` zeros are prepended; with
    /// `pad_left = kernel - 1` and stride 1 the output keeps the input length
    /// and position `t` only sees inputs at positions `<= t`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var, stride: usize, pad_left: usize) -> Result<Var, DiffError> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[2] != sw[1] || self.shape(bias) != [sw[2]] {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        if stride == 0 {
            return Err(DiffError::Invalid("conv1d stride must be positive".into()));
        }
        let (batch, len_in, cin) = (sx[0], sx[1], sx[2]);
        let (kernel, cout) = (sw[0], sw[2]);
        if len_in + pad_left < kernel {
            return Err(DiffError::Invalid(format!("conv1d kernel {kernel} longer than padded input {}", len_in + pad_left)));
        }
        let len_out = (len_in + pad_left - kernel) / stride + 1;
        let geom = ConvGeom { batch, len_in, len_out, cin, cout, kernel, stride, pad: pad_left };
        let xv = self.value(x);
        let width = kernel * cin;
        let mut cols = vec![0.0; batch * len_out * width];
        for bi in 0..batch {
            for t in 0..len_out {
                let row = &mut cols[(bi * len_out + t) * width..(bi * len_out + t + 1) * width];
                for j in 0..kernel {
                    let src = t * stride + j;
                    if src < pad_left || src - pad_left >= len_in {
                        continue;
                    }
                    let s = (bi * len_in + src - pad_left) * cin;
                    row[j * cin..(j + 1) * cin].copy_from_slice(&xv[s..s + cin]);
                }
            }
        }
        let rows = batch * len_out;
        let bv = self.value(bias);
        let mut out: Vec<f64> = (0..rows * cout).map(|i| bv[i % cout]).collect();
        gemm(rows, width, cout, &cols, width as isize, 1, self.value(w), cout as isize, 1, &mut out, 1.0);
        let rg = self.rg(x) || self.rg(w) || self.rg(bias);
        Ok(self.push(vec![batch, len_out, cout], out, Op::Conv1d { x, w, bias, geom, cols }, rg))
    }

    /// Average pooling along axis 1 of `[batch, len, channels]` without padding.
    pub fn avg_pool1d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var, DiffError> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || kernel == 0 || stride == 0 || kernel > s[1] {
            return Err(DiffError::Invalid(format!("avg_pool1d kernel {kernel} stride {stride} on shape {s:?}")));
        }
        let (batch, len_in, channels) = (s[0], s[1], s[2]);
        let len_out = (len_in - kernel) / stride + 1;
        let xv = self.value(x);
        let mut out = vec![0.0; batch * len_out * channels];
        let inv = 1.0 / kernel as f64;
        for b in 0..batch {
            for t in 0..len_out {
                let dst = &mut out[(b * len_out + t) * channels..(b * len_out + t + 1) * channels];
                for j in 0..kernel {
                    let src = &xv[(b * len_in + t * stride + j) * channels..][..channels];
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d += v * inv;
                    }
                }
            }
        }
        let op = Op::AvgPool1d { x, batch, len_in, len_out, channels, kernel, stride };
        Ok(self.push(vec![batch, len_out, channels], out, op, self.rg(x)))
    }

    /// Row lookup into a `[vocab, dim]` table.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var, DiffError> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(mismatch("embedding", &s, &[]));
        }
        let (vocab, dim) = (s[0], s[1]);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            if i >= vocab {
                return Err(DiffError::IndexOutOfVocab { index: i, vocab });
            }
            out.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let op = Op::Embedding { table, indices: indices.to_vec(), dim };
        Ok(self.push(vec![indices.len(), dim], out, op, self.rg(table)))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits` (`[rows, classes]`).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, DiffError> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(mismatch("cross_entropy", &s, &[labels.len()]));
        }
        let classes = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(DiffError::IndexOutOfVocab { index: bad, vocab: classes });
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; lv.len()];
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &lv[r * classes..(r + 1) * classes];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            loss += log_z - row[label];
            for c in 0..classes {
                probs[r * classes + c] = (row[c] - log_z).exp();
            }
        }
        loss /= labels.len() as f64;
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), probs, classes };
        Ok(self.push(vec![], vec![loss], op, self.rg(logits)))
    }

    /// Clears gradients so that backward may run again on this tape.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.array.grad = None;
        }
        self.backward_done = false;
    }

    /// Reverse pass from a scalar `loss`. Gradients of every parameter loaded
    /// on this tape are accumulated into `store` (zeros when unreachable from
    /// the loss), and every reached node keeps its gradient for inspection.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<(), DiffError> {
        if self.backward_done {
            return Err(DiffError::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(DiffError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop_node(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            node.array.grad = g;
        }
        for (&id, &v) in &self.param_vars {
            let node = &self.nodes[v.0].array;
            let g = node.grad.clone().unwrap_or_else(|| vec![0.0; node.values.len()]);
            store.accumulate_grad(id, &g);
        }
        self.backward_done = true;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].array.values.as_slice();
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if rg(v) {
                        let d = accumulate(grads, v, g.len());
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if rg(v) {
                        let d = accumulate(grads, v, g.len());
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += sign * g);
                    }
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    let bv = val(*b);
                    let d = accumulate(grads, *a, g.len());
                    for k in 0..g.len() {
                        d[k] += g[k] * bv[k];
                    }
                }
                if rg(*b) {
                    let av = val(*a);
                    let d = accumulate(grads, *b, g.len());
                    for k in 0..g.len() {
                        d[k] += g[k] * av[k];
                    }
                }
            }
            Op::AddBcast(a, b) => {
                if rg(*a) {
                    let d = accumulate(grads, *a, g.len());
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
                if rg(*b) {
                    let m = val(*b).len();
                    let d = accumulate(grads, *b, m);
                    for (k, gv) in g.iter().enumerate() {
                        d[k % m] += gv;
                    }
                }
            }
            Op::MulBcast(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let m = bv.len();
                if rg(*a) {
                    let d = accumulate(grads, *a, g.len());
                    for k in 0..g.len() {
                        d[k] += g[k] * bv[k % m];
                    }
                }
                if rg(*b) {
                    let d = accumulate(grads, *b, m);
                    for k in 0..g.len() {
                        d[k % m] += g[k] * av[k];
                    }
                }
            }
            Op::Scale(a, c) => {
                let d = accumulate(grads, *a, g.len());
                d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g);
            }
            Op::MatMul { a, b, rows, inner, cols } => {
                let (rows, inner, cols) = (*rows, *inner, *cols);
                if rg(*a) {
                    let bv = val(*b);
                    let d = accumulate(grads, *a, rows * inner);
                    // dA = G B^T
                    gemm(rows, cols, inner, g, cols as isize, 1, bv, 1, cols as isize, d, 1.0);
                }
                if rg(*b) {
                    let av = val(*a);
                    let d = accumulate(grads, *b, inner * cols);
                    // dB = A^T G
                    gemm(inner, rows, cols, av, 1, inner as isize, g, cols as isize, 1, d, 1.0);
                }
            }
            Op::Bmm { a, b, groups, m, k, n } => {
                let (groups, m, k, n) = (*groups, *m, *k, *n);
                if rg(*a) {
                    let bv = val(*b);
                    let d = accumulate(grads, *a, groups * m * k);
                    for gi in 0..groups {
                        gemm(
                            m,
                            n,
                            k,
                            &g[gi * m * n..],
                            n as isize,
                            1,
                            &bv[gi * k * n..],
                            1,
                            n as isize,
                            &mut d[gi * m * k..(gi + 1) * m * k],
                            1.0,
                        );
                    }
                }
                if rg(*b) {
                    let av = val(*a);
                    let d = accumulate(grads, *b, groups * k * n);
                    for gi in 0..groups {
                        gemm(
                            k,
                            m,
                            n,
                            &av[gi * m * k..],
                            1,
                            k as isize,
                            &g[gi * m * n..],
                            n as isize,
                            1,
                            &mut d[gi * k * n..(gi + 1) * k * n],
                            1.0,
                        );
                    }
                }
            }
            Op::TransposeLast2 { a, outer, m, n } => {
                let (m, n) = (*m, *n);
                let d = accumulate(grads, *a, g.len());
                for o in 0..*outer {
                    let base = o * m * n;
                    for i in 0..m {
                        for j in 0..n {
                            d[base + i * n + j] += g[base + j * m + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                let d = accumulate(grads, *a, g.len());
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            Op::Concat { parts, outer, widths } => {
                let row: usize = widths.iter().sum();
                let mut offset = 0;
                for (&p, &w) in parts.iter().zip(widths) {
                    if rg(p) {
                        let d = accumulate(grads, p, outer * w);
                        for o in 0..*outer {
                            let src = &g[o * row + offset..o * row + offset + w];
                            d[o * w..(o + 1) * w].iter_mut().zip(src).for_each(|(d, g)| *d += g);
                        }
                    }
                    offset += w;
                }
            }
            Op::Narrow { a, outer, src_width, offset, width } => {
                let d = accumulate(grads, *a, outer * src_width);
                for o in 0..*outer {
                    let dst = &mut d[o * src_width + offset..o * src_width + offset + width];
                    dst.iter_mut().zip(&g[o * width..(o + 1) * width]).for_each(|(d, g)| *d += g);
                }
            }
            Op::Unary(a, kind) => {
                let (xv, yv) = (val(*a), node.array.values.as_slice());
                let d = accumulate(grads, *a, g.len());
                for k in 0..g.len() {
                    d[k] += g[k] * kind.derivative(xv[k], yv[k]);
                }
            }
            Op::Softmax { a, outer, mid, inner } => {
                let (outer, mid, inner) = (*outer, *mid, *inner);
                let y = node.array.values.as_slice();
                let d = accumulate(grads, *a, g.len());
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * mid + j) * inner + i;
                        let dot: f64 = (0..mid).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..mid {
                            d[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
            }
            Op::Mean { a, outer, mid, inner } => {
                let (outer, mid, inner) = (*outer, *mid, *inner);
                let inv = 1.0 / mid as f64;
                let d = accumulate(grads, *a, outer * mid * inner);
                for o in 0..outer {
                    for j in 0..mid {
                        for i in 0..inner {
                            d[(o * mid + j) * inner + i] += g[o * inner + i] * inv;
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                let n = val(*a).len();
                let d = accumulate(grads, *a, n);
                d.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::LayerNorm { x, gamma, beta, cols, xhat, inv_std } => {
                let cols = *cols;
                let rows = xhat.len() / cols.max(1);
                let gam = val(*gamma);
                if rg(*gamma) {
                    let d = accumulate(grads, *gamma, cols);
                    for k in 0..xhat.len() {
                        d[k % cols] += g[k] * xhat[k];
                    }
                }
                if rg(*beta) {
                    let d = accumulate(grads, *beta, cols);
                    for k in 0..g.len() {
                        d[k % cols] += g[k];
                    }
                }
                if rg(*x) {
                    let d = accumulate(grads, *x, xhat.len());
                    let n = cols as f64;
                    for r in 0..rows {
                        let range = r * cols..(r + 1) * cols;
                        let gh: Vec<f64> = range.clone().map(|k| g[k] * gam[k % cols]).collect();
                        let sum_gh: f64 = gh.iter().sum();
                        let sum_ghx: f64 = gh.iter().zip(&xhat[range.clone()]).map(|(a, b)| a * b).sum();
                        for (c, k) in range.enumerate() {
                            d[k] += inv_std[r] / n * (n * gh[c] - sum_gh - xhat[k] * sum_ghx);
                        }
                    }
                }
            }
            Op::BatchNorm { x, gamma, beta, cols, xhat, inv_std, train } => {
                let cols = *cols;
                let rows = xhat.len() / cols.max(1);
                let gam = val(*gamma);
                if rg(*gamma) {
                    let d = accumulate(grads, *gamma, cols);
                    for k in 0..xhat.len() {
                        d[k % cols] += g[k] * xhat[k];
                    }
                }
                if rg(*beta) {
                    let d = accumulate(grads, *beta, cols);
                    for k in 0..g.len() {
                        d[k % cols] += g[k];
                    }
                }
                if rg(*x) {
                    let d = accumulate(grads, *x, xhat.len());
                    if *train {
                        let n = rows as f64;
                        let mut sum_gh = vec![0.0; cols];
                        let mut sum_ghx = vec![0.0; cols];
                        for k in 0..g.len() {
                            let gh = g[k] * gam[k % cols];
                            sum_gh[k % cols] += gh;
                            sum_ghx[k % cols] += gh * xhat[k];
                        }
                        for k in 0..g.len() {
                            let c = k % cols;
                            let gh = g[k] * gam[c];
                            d[k] += inv_std[c] / n * (n * gh - sum_gh[c] - xhat[k] * sum_ghx[c]);
                        }
                    } else {
                        for k in 0..g.len() {
                            let c = k % cols;
                            d[k] += g[k] * gam[c] * inv_std[c];
                        }
                    }
                }
            }
            Op::Conv1d { x, w, bias, geom, cols } => {
                let ConvGeom { batch, len_in, len_out, cin, cout, kernel, stride, pad } = *geom;
                let rows = batch * len_out;
                let width = kernel * cin;
                if rg(*bias) {
                    let d = accumulate(grads, *bias, cout);
                    for k in 0..g.len() {
                        d[k % cout] += g[k];
                    }
                }
                if rg(*w) {
                    let d = accumulate(grads, *w, width * cout);
                    // dW = cols^T G
                    gemm(width, rows, cout, cols, 1, width as isize, g, cout as isize, 1, d, 1.0);
                }
                if rg(*x) {
                    let wv = val(*w);
                    let mut dcols = vec![0.0; rows * width];
                    // dcols = G W^T
                    gemm(rows, cout, width, g, cout as isize, 1, wv, 1, cout as isize, &mut dcols, 0.0);
                    let d = accumulate(grads, *x, batch * len_in * cin);
                    for bi in 0..batch {
                        for t in 0..len_out {
                            let row = &dcols[(bi * len_out + t) * width..(bi * len_out + t + 1) * width];
                            for j in 0..kernel {
                                let src = t * stride + j;
                                if src < pad || src - pad >= len_in {
                                    continue;
                                }
                                let s = (bi * len_in + src - pad) * cin;
                                d[s..s + cin].iter_mut().zip(&row[j * cin..(j + 1) * cin]).for_each(|(d, g)| *d += g);
                            }
                        }
                    }
                }
            }
            Op::AvgPool1d { x, batch, len_in, len_out, channels, kernel, stride } => {
                let (len_in, len_out, channels) = (*len_in, *len_out, *channels);
                let inv = 1.0 / *kernel as f64;
                let d = accumulate(grads, *x, batch * len_in * channels);
                for b in 0..*batch {
                    for t in 0..len_out {
                        let src = &g[(b * len_out + t) * channels..(b * len_out + t + 1) * channels];
                        for j in 0..*kernel {
                            let off = (b * len_in + t * stride + j) * channels;
                            d[off..off + channels].iter_mut().zip(src).for_each(|(d, g)| *d += g * inv);
                        }
                    }
                }
            }
            Op::Embedding { table, indices, dim } => {
                let dim = *dim;
                let n = val(*table).len();
                let d = accumulate(grads, *table, n);
                for (r, &idx) in indices.iter().enumerate() {
                    d[idx * dim..(idx + 1) * dim]
                        .iter_mut()
                        .zip(&g[r * dim..(r + 1) * dim])
                        .for_each(|(d, g)| *d += g);
                }
            }
            Op::CrossEntropy { logits, labels, probs, classes } => {
                let scale = g[0] / labels.len() as f64;
                let d = accumulate(grads, *logits, probs.len());
                for (r, &label) in labels.iter().enumerate() {
                    for c in 0..*classes {
                        let k = r * classes + c;
                        let target = if c == label { 1.0 } else { 0.0 };
                        d[k] += scale * (probs[k] - target);
                    }
                }
            }
        }
    }
}
