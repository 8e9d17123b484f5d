use std::cell::{Ref, RefCell};

use super::array::{self as k, Array, ConvGeom, Real};
use crate::error::{contract, Error, Result};

/// A recorded primitive. Saved intermediates live next to the op that needs
/// them for its vector-Jacobian product.
#[derive(Clone, Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Constant,
    Add,
    Sub,
    Mul,
    /// rhs shape is a suffix of lhs shape
    AddBroadcast,
    /// `[lead.., inner..] -> [inner..]`
    SumLeading,
    /// `[inner..] -> [lead.., inner..]`
    ExpandLeading(Vec<usize>),
    Scale(T),
    Shift(T),
    MatMul,
    Transpose,
    Conv1d(ConvGeom),
    ConvInputGrad(ConvGeom),
    ConvWeightGrad(ConvGeom),
    BatchNormTime {
        xhat: Array<T>,
        inv_std: Vec<T>,
    },
    Softmax,
    LogSoftmax,
    Log(T),
    Exp,
    Sigmoid,
    LogSigmoid,
    Relu,
    Sqrt,
    SumAll,
    MeanAll,
    ExpandScalar,
    SumAxis(usize),
    MeanAxis(usize),
    ExpandAxis(usize),
    SquaredNorm,
    Concat(usize),
    Slice(usize, usize, usize),
    PadSlice(usize, usize, usize),
    GatherRows(Vec<usize>),
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::AddBroadcast => "add_broadcast",
            Op::SumLeading => "sum_leading",
            Op::ExpandLeading(_) => "expand_leading",
            Op::Scale(_) => "scale",
            Op::Shift(_) => "shift",
            Op::MatMul => "matmul",
            Op::Transpose => "transpose",
            Op::Conv1d(_) => "conv1d",
            Op::ConvInputGrad(_) => "conv1d_input_grad",
            Op::ConvWeightGrad(_) => "conv1d_weight_grad",
            Op::BatchNormTime { .. } => "batchnorm_time",
            Op::Softmax => "softmax",
            Op::LogSoftmax => "log_softmax",
            Op::Log(_) => "log",
            Op::Exp => "exp",
            Op::Sigmoid => "sigmoid",
            Op::LogSigmoid => "log_sigmoid",
            Op::Relu => "relu",
            Op::Sqrt => "sqrt",
            Op::SumAll => "sum",
            Op::MeanAll => "mean",
            Op::ExpandScalar => "expand_scalar",
            Op::SumAxis(_) => "sum_axis",
            Op::MeanAxis(_) => "mean_axis",
            Op::ExpandAxis(_) => "expand_axis",
            Op::SquaredNorm => "squared_norm",
            Op::Concat(_) => "concat",
            Op::Slice(..) => "slice",
            Op::PadSlice(..) => "pad_slice",
            Op::GatherRows(_) => "gather_rows",
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) op: Op<T>,
    pub(crate) parents: Vec<usize>,
    pub(crate) value: Array<T>,
    pub(crate) needs_grad: bool,
}

/// Append-only record of a computation. Node ids are assigned in creation
/// order, which is a topological order by construction.
pub struct Tape<T: Real> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Value<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Value<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Value")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input (parameter or data we want gradients for).
    pub fn leaf(&self, value: Array<T>) -> Value<'_, T> {
        self.push(Op::Leaf, Vec::new(), value)
    }

    pub fn constant(&self, value: Array<T>) -> Value<'_, T> {
        self.push(Op::Constant, Vec::new(), value)
    }

    pub fn scalar(&self, v: T) -> Value<'_, T> {
        self.constant(Array::scalar(v))
    }

    /// `[labels.len(), classes]` constant with a single 1 per row.
    pub fn one_hot(&self, labels: &[usize], classes: usize) -> Result<Value<'_, T>> {
        let mut data = vec![T::zero(); labels.len() * classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return contract(format!("one_hot label {l} out of range for {classes} classes"));
            }
            data[i * classes + l] = T::one();
        }
        Ok(self.constant(Array::from_vec(&[labels.len(), classes], data)?))
    }

    pub fn concat<'t>(&'t self, parts: &[Value<'t, T>], axis: usize) -> Result<Value<'t, T>> {
        let Some(first) = parts.first() else {
            return contract("concat of zero values");
        };
        let out = {
            let nodes = self.nodes.borrow();
            let shape0 = nodes[first.id].value.shape().to_vec();
            if axis >= shape0.len() {
                return contract(format!("concat axis {axis} out of range for {shape0:?}"));
            }
            let mut total = 0;
            for p in parts {
                let s = nodes[p.id].value.shape();
                let mismatch = s.len() != shape0.len()
                    || s.iter()
                        .zip(&shape0)
                        .enumerate()
                        .any(|(a, (x, y))| a != axis && x != y);
                if mismatch {
                    return Err(Error::Shape {
                        op: "concat",
                        lhs: shape0,
                        rhs: s.to_vec(),
                    });
                }
                total += s[axis];
            }
            let (outer, _, inner) = k::axis_split(&shape0, axis);
            let mut data = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for p in parts {
                    let v = &nodes[p.id].value;
                    let n = v.shape()[axis];
                    data.extend_from_slice(&v.data()[o * n * inner..(o + 1) * n * inner]);
                }
            }
            let mut shape = shape0;
            shape[axis] = total;
            Array::from_vec(&shape, data)?
        };
        for p in parts {
            self.check_same_tape(p)?;
        }
        Ok(self.push(Op::Concat(axis), parts.iter().map(|p| p.id).collect(), out))
    }

    pub(crate) fn push(&self, op: Op<T>, parents: Vec<usize>, value: Array<T>) -> Value<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = match op {
            Op::Leaf => true,
            Op::Constant => false,
            _ => parents.iter().any(|&p| nodes[p].needs_grad),
        };
        nodes.push(Node {
            op,
            parents,
            value,
            needs_grad,
        });
        Value {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_at(&self, id: usize) -> Value<'_, T> {
        Value { tape: self, id }
    }

    fn check_same_tape(&self, v: &Value<'_, T>) -> Result<()> {
        if std::ptr::eq(self, v.tape) {
            Ok(())
        } else {
            contract("values belong to different tapes")
        }
    }

    /// Reverse-mode gradients of scalar `root` with respect to each of `wrt`.
    /// Inputs that `root` does not depend on get a zero array.
    pub fn gradient(&self, root: Value<'_, T>, wrt: &[Value<'_, T>]) -> Result<Vec<Array<T>>> {
        self.check_same_tape(&root)?;
        for w in wrt {
            self.check_same_tape(w)?;
        }
        let nodes = self.nodes.borrow();
        let rshape = nodes[root.id].value.shape();
        if !rshape.is_empty() {
            return Err(Error::Contract(format!(
                "gradient root must be a scalar, got shape {rshape:?}"
            )));
        }
        let mut grads: Vec<Option<Array<T>>> = Vec::new();
        grads.resize_with(root.id + 1, || None);
        grads[root.id] = Some(Array::scalar(T::one()));
        for id in (0..=root.id).rev() {
            if !nodes[id].needs_grad || nodes[id].parents.is_empty() {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            for (p, contrib) in vjp(&nodes, id, &g) {
                if !nodes[p].needs_grad {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[id] = Some(g);
        }
        Ok(wrt
            .iter()
            .map(|w| {
                grads
                    .get(w.id)
                    .and_then(Option::clone)
                    .unwrap_or_else(|| Array::zeros(nodes[w.id].value.shape()))
            })
            .collect())
    }
}

impl<'t, T: Real> Value<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Array<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Borrow the forward value without cloning. Do not create new nodes
    /// while the borrow is alive.
    pub fn value_ref(&self) -> Ref<'t, Array<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    fn unary(self, op: Op<T>, f: impl FnOnce(&Array<T>) -> Array<T>) -> Self {
        let out = f(&self.tape.nodes.borrow()[self.id].value);
        self.tape.push(op, vec![self.id], out)
    }

    fn binary_same_shape(
        self,
        other: Self,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Self> {
        self.tape.check_same_tape(&other)?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.shape() != b.shape() {
                return Err(Error::Shape {
                    op: op.name(),
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            a.zip_map(b, f)
        };
        Ok(self.tape.push(op, vec![self.id, other.id], out))
    }

    pub fn add(self, other: Self) -> Result<Self> {
        self.binary_same_shape(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.binary_same_shape(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        self.binary_same_shape(other, Op::Mul, |a, b| a * b)
    }

    pub fn square(self) -> Result<Self> {
        self.mul(self)
    }

    /// `self + rhs`, where `rhs` is broadcast over the leading axes of `self`
    /// (e.g. a `[C]` bias added to every row of `[T, C]`).
    pub fn add_bias(self, rhs: Self) -> Result<Self> {
        self.tape.check_same_tape(&rhs)?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            let (sa, sb) = (a.shape(), b.shape());
            if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
                return Err(Error::Shape {
                    op: "add_broadcast",
                    lhs: sa.to_vec(),
                    rhs: sb.to_vec(),
                });
            }
            let inner = b.len();
            let mut data = a.data().to_vec();
            if inner > 0 {
                for chunk in data.chunks_mut(inner) {
                    for (x, &y) in chunk.iter_mut().zip(b.data()) {
                        *x += y;
                    }
                }
            }
            Array::from_vec(sa, data)?
        };
        Ok(self.tape.push(Op::AddBroadcast, vec![self.id, rhs.id], out))
    }

    pub(crate) fn sum_leading(self, inner_shape: &[usize]) -> Result<Self> {
        let out = {
            let v = self.value_ref();
            let inner: usize = inner_shape.iter().product();
            let outer = if inner == 0 { 0 } else { v.len() / inner };
            Array::from_vec(inner_shape, k::sum_axis(v.data(), 1, outer, inner))?
        };
        Ok(self.tape.push(Op::SumLeading, vec![self.id], out))
    }

    pub(crate) fn expand_leading(self, lead: &[usize]) -> Result<Self> {
        let out = {
            let v = self.value_ref();
            let outer: usize = lead.iter().product();
            let mut shape = lead.to_vec();
            shape.extend_from_slice(v.shape());
            Array::from_vec(&shape, k::expand_axis(v.data(), 1, outer, v.len()))?
        };
        Ok(self
            .tape
            .push(Op::ExpandLeading(lead.to_vec()), vec![self.id], out))
    }

    pub fn scale(self, c: T) -> Self {
        self.unary(Op::Scale(c), |a| a.map(|x| x * c))
    }

    pub fn shift(self, c: T) -> Self {
        self.unary(Op::Shift(c), |a| a.map(|x| x + c))
    }

    pub fn neg(self) -> Self {
        self.scale(-T::one())
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(self, other: Self) -> Result<Self> {
        self.tape.check_same_tape(&other)?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            if a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows() {
                return Err(Error::Shape {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let (m, kk, n) = (a.rows(), a.cols(), b.cols());
            Array::from_vec(&[m, n], k::matmul(a.data(), m, kk, b.data(), n))?
        };
        Ok(self.tape.push(Op::MatMul, vec![self.id, other.id], out))
    }

    pub fn transpose(self) -> Result<Self> {
        let out = {
            let a = self.value_ref();
            if a.rank() != 2 {
                return contract(format!("transpose needs rank 2, got {:?}", a.shape()));
            }
            let (m, n) = (a.rows(), a.cols());
            Array::from_vec(&[n, m], k::transpose(a.data(), m, n))?
        };
        Ok(self.tape.push(Op::Transpose, vec![self.id], out))
    }

    /// `x [T, I] · w [I, O] + b [O]`.
    pub fn linear(self, w: Self, b: Self) -> Result<Self> {
        self.matmul(w)?.add_bias(b)
    }

    /// 1-D convolution over time: `self [T, Cin]`, `w [K, Cin, Cout]`.
    pub fn conv1d(self, w: Self, geom: ConvGeom) -> Result<Self> {
        self.tape.check_same_tape(&w)?;
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (x, wv) = (&nodes[self.id].value, &nodes[w.id].value);
            if x.rank() != 2 || wv.rank() != 3 || wv.shape()[1] != x.cols() || wv.shape()[0] != geom.kernel
            {
                return Err(Error::Shape {
                    op: "conv1d",
                    lhs: x.shape().to_vec(),
                    rhs: wv.shape().to_vec(),
                });
            }
            let (t_in, cin, cout) = (x.rows(), x.cols(), wv.shape()[2]);
            let Some(t_out) = geom.out_len(t_in) else {
                return contract(format!(
                    "conv1d input of length {t_in} shorter than kernel {} after padding",
                    geom.kernel
                ));
            };
            Array::from_vec(
                &[t_out, cout],
                k::conv1d_forward(x.data(), t_in, cin, wv.data(), cout, geom, t_out),
            )?
        };
        Ok(self.tape.push(Op::Conv1d(geom), vec![self.id, w.id], out))
    }

    /// Adjoint of conv1d in its input; `self` is the upstream gradient
    /// `[To, Cout]`, result is `[t_in, Cin]`.
    pub(crate) fn conv1d_input_grad(self, w: Self, geom: ConvGeom, t_in: usize) -> Result<Self> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (g, wv) = (&nodes[self.id].value, &nodes[w.id].value);
            let (t_out, cout) = (g.rows(), g.cols());
            let cin = wv.shape()[1];
            debug_assert_eq!(wv.shape()[2], cout);
            Array::from_vec(
                &[t_in, cin],
                k::conv1d_input_grad(g.data(), t_out, cout, wv.data(), cin, geom, t_in),
            )?
        };
        Ok(self
            .tape
            .push(Op::ConvInputGrad(geom), vec![self.id, w.id], out))
    }

    /// Adjoint of conv1d in its weights; `self` is the input `[T, Cin]`, `g`
    /// the upstream gradient `[To, Cout]`.
    pub(crate) fn conv1d_weight_grad(self, g: Self, geom: ConvGeom) -> Result<Self> {
        let out = {
            let nodes = self.tape.nodes.borrow();
            let (x, gv) = (&nodes[self.id].value, &nodes[g.id].value);
            let (t_in, cin, t_out, cout) = (x.rows(), x.cols(), gv.rows(), gv.cols());
            Array::from_vec(
                &[geom.kernel, cin, cout],
                k::conv1d_weight_grad(x.data(), t_in, cin, gv.data(), t_out, cout, geom),
            )?
        };
        Ok(self
            .tape
            .push(Op::ConvWeightGrad(geom), vec![self.id, g.id], out))
    }

    /// Per-channel normalization over the time axis followed by an affine
    /// map: `self [T, C]`, `scale [C]`, `bias [C]`.
    pub fn batchnorm_time(self, scale: Self, bias: Self, eps: T) -> Result<Self> {
        self.tape.check_same_tape(&scale)?;
        self.tape.check_same_tape(&bias)?;
        let (out, xhat, inv_std) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let (s, b) = (&nodes[scale.id].value, &nodes[bias.id].value);
            if x.rank() != 2 || s.shape() != [x.cols()] || b.shape() != [x.cols()] {
                return Err(Error::Shape {
                    op: "batchnorm_time",
                    lhs: x.shape().to_vec(),
                    rhs: s.shape().to_vec(),
                });
            }
            let (t, c) = (x.rows(), x.cols());
            if t == 0 {
                return contract("batchnorm_time over an empty sequence");
            }
            let n = T::from_usize(t).unwrap();
            let mut mean = vec![T::zero(); c];
            for i in 0..t {
                for (m, &v) in mean.iter_mut().zip(x.row(i)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            let mut var = vec![T::zero(); c];
            for i in 0..t {
                for ((vv, &v), &m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                    *vv += (v - m) * (v - m);
                }
            }
            let inv_std: Vec<T> = var.iter().map(|&v| (v / n + eps).sqrt().recip()).collect();
            let mut xhat = vec![T::zero(); t * c];
            let mut y = vec![T::zero(); t * c];
            for i in 0..t {
                for j in 0..c {
                    let h = (x.data()[i * c + j] - mean[j]) * inv_std[j];
                    xhat[i * c + j] = h;
                    y[i * c + j] = h * s.data()[j] + b.data()[j];
                }
            }
            (
                Array::from_vec(&[t, c], y)?,
                Array::from_vec(&[t, c], xhat)?,
                inv_std,
            )
        };
        Ok(self.tape.push(
            Op::BatchNormTime { xhat, inv_std },
            vec![self.id, scale.id, bias.id],
            out,
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Self {
        self.unary(Op::Softmax, softmax_rows)
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(self) -> Self {
        self.unary(Op::LogSoftmax, |a| {
            let c = *a.shape().last().unwrap_or(&1);
            let mut out = a.clone();
            if c > 0 {
                for row in out.data_mut().chunks_mut(c) {
                    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
                    row.iter_mut().for_each(|v| *v -= lse);
                }
            }
            out
        })
    }

    /// `ln(max(x, floor))`; the gradient is zero where the floor is active.
    pub fn log(self, floor: T) -> Self {
        self.unary(Op::Log(floor), |a| a.map(|x| x.max(floor).ln()))
    }

    pub fn exp(self) -> Self {
        self.unary(Op::Exp, |a| a.map(T::exp))
    }

    pub fn sigmoid(self) -> Self {
        self.unary(Op::Sigmoid, |a| a.map(sigmoid))
    }

    /// `ln σ(x)`, evaluated without forming σ(x).
    pub fn log_sigmoid(self) -> Self {
        self.unary(Op::LogSigmoid, |a| a.map(log_sigmoid))
    }

    pub fn relu(self) -> Self {
        self.unary(Op::Relu, |a| a.map(|x| x.max(T::zero())))
    }

    pub fn sqrt(self) -> Self {
        self.unary(Op::Sqrt, |a| a.map(T::sqrt))
    }

    /// Smooth GELU approximation `x · σ(1.702 x)`, built from primitives so
    /// that it supports double differentiation.
    pub fn smooth_gelu(self) -> Result<Self> {
        self.mul(self.scale(T::lit(1.702)).sigmoid())
    }

    pub fn sum(self) -> Self {
        self.unary(Op::SumAll, |a| Array::scalar(a.data().iter().copied().sum()))
    }

    pub fn mean(self) -> Result<Self> {
        if self.value_ref().is_empty() {
            return contract("mean of an empty array");
        }
        Ok(self.unary(Op::MeanAll, |a| {
            Array::scalar(a.data().iter().copied().sum::<T>() / T::from_usize(a.len()).unwrap())
        }))
    }

    pub(crate) fn expand_scalar(self, shape: &[usize]) -> Self {
        self.unary(Op::ExpandScalar, |a| Array::full(shape, a.item()))
    }

    fn reduce_axis(self, axis: usize, mean: bool) -> Result<Self> {
        let out = {
            let a = self.value_ref();
            if axis >= a.rank() {
                return contract(format!("axis {axis} out of range for {:?}", a.shape()));
            }
            let (outer, n, inner) = k::axis_split(a.shape(), axis);
            if mean && n == 0 {
                return contract("mean over an empty axis");
            }
            let mut data = k::sum_axis(a.data(), outer, n, inner);
            if mean {
                let d = T::from_usize(n).unwrap();
                data.iter_mut().for_each(|x| *x /= d);
            }
            let mut shape = a.shape().to_vec();
            shape.remove(axis);
            Array::from_vec(&shape, data)?
        };
        let op = if mean { Op::MeanAxis(axis) } else { Op::SumAxis(axis) };
        Ok(self.tape.push(op, vec![self.id], out))
    }

    pub fn sum_axis(self, axis: usize) -> Result<Self> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(self, axis: usize) -> Result<Self> {
        self.reduce_axis(axis, true)
    }

    /// Inserts a new axis of length `n` at `axis`, repeating the data.
    pub(crate) fn expand_axis(self, axis: usize, n: usize) -> Result<Self> {
        let out = {
            let a = self.value_ref();
            let mut shape = a.shape().to_vec();
            if axis > shape.len() {
                return contract("expand axis out of range");
            }
            shape.insert(axis, n);
            let (outer, _, inner) = k::axis_split(&shape, axis);
            Array::from_vec(&shape, k::expand_axis(a.data(), outer, n, inner))?
        };
        Ok(self.tape.push(Op::ExpandAxis(axis), vec![self.id], out))
    }

    /// Sum of squares of all entries.
    pub fn squared_norm(self) -> Self {
        self.unary(Op::SquaredNorm, |a| {
            Array::scalar(a.data().iter().map(|&x| x * x).sum())
        })
    }

    /// `[start, end)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Self> {
        let out = {
            let a = self.value_ref();
            if axis >= a.rank() || start > end || end > a.shape()[axis] {
                return contract(format!(
                    "slice [{start}, {end}) on axis {axis} out of range for {:?}",
                    a.shape()
                ));
            }
            let (outer, n, inner) = k::axis_split(a.shape(), axis);
            let mut data = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                data.extend_from_slice(&a.data()[(o * n + start) * inner..(o * n + end) * inner]);
            }
            let mut shape = a.shape().to_vec();
            shape[axis] = end - start;
            Array::from_vec(&shape, data)?
        };
        Ok(self
            .tape
            .push(Op::Slice(axis, start, end), vec![self.id], out))
    }

    /// Places `self` at offset `start` along `axis` inside zeros of length `full`.
    pub(crate) fn pad_slice(self, axis: usize, start: usize, full: usize) -> Result<Self> {
        let out = {
            let a = self.value_ref();
            let (outer, n, inner) = k::axis_split(a.shape(), axis);
            let mut shape = a.shape().to_vec();
            shape[axis] = full;
            let mut data = vec![T::zero(); outer * full * inner];
            for o in 0..outer {
                data[(o * full + start) * inner..(o * full + start + n) * inner]
                    .copy_from_slice(&a.data()[o * n * inner..(o + 1) * n * inner]);
            }
            Array::from_vec(&shape, data)?
        };
        Ok(self
            .tape
            .push(Op::PadSlice(axis, start, full), vec![self.id], out))
    }

    /// Selects rows of a rank-2 value; indices may repeat.
    pub fn gather_rows(self, idx: &[usize]) -> Result<Self> {
        let out = {
            let a = self.value_ref();
            if a.rank() != 2 {
                return contract("gather_rows needs rank 2");
            }
            let mut data = Vec::with_capacity(idx.len() * a.cols());
            for &i in idx {
                if i >= a.rows() {
                    return contract(format!("row {i} out of range for {:?}", a.shape()));
                }
                data.extend_from_slice(a.row(i));
            }
            Array::from_vec(&[idx.len(), a.cols()], data)?
        };
        Ok(self
            .tape
            .push(Op::GatherRows(idx.to_vec()), vec![self.id], out))
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn log_sigmoid<T: Real>(x: T) -> T {
    // -softplus(-x)
    if x >= T::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub(crate) fn softmax_rows<T: Real>(a: &Array<T>) -> Array<T> {
    let c = *a.shape().last().unwrap_or(&1);
    let mut out = a.clone();
    if c > 0 {
        for row in out.data_mut().chunks_mut(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
    }
    out
}

/// Numeric vector-Jacobian product of node `id` given upstream gradient `g`.
fn vjp<T: Real>(nodes: &[Node<T>], id: usize, g: &Array<T>) -> Vec<(usize, Array<T>)> {
    let node = &nodes[id];
    let p = &node.parents;
    let val = |i: usize| &nodes[p[i]].value;
    let y = &node.value;
    let sh = |a: &Array<T>, data: Vec<T>| Array::from_vec(a.shape(), data).expect("shape");
    match &node.op {
        Op::Leaf | Op::Constant => Vec::new(),
        Op::Add => vec![(p[0], g.clone()), (p[1], g.clone())],
        Op::Sub => vec![(p[0], g.clone()), (p[1], g.map(|x| -x))],
        Op::Mul => vec![
            (p[0], g.zip_map(val(1), |a, b| a * b)),
            (p[1], g.zip_map(val(0), |a, b| a * b)),
        ],
        Op::AddBroadcast => {
            let b = val(1);
            let inner = b.len();
            let outer = if inner == 0 { 0 } else { g.len() / inner };
            vec![
                (p[0], g.clone()),
                (p[1], sh(b, k::sum_axis(g.data(), 1, outer, inner))),
            ]
        }
        Op::SumLeading => {
            let x = val(0);
            let outer = x.len() / g.len().max(1);
            vec![(p[0], sh(x, k::expand_axis(g.data(), 1, outer, g.len())))]
        }
        Op::ExpandLeading(lead) => {
            let outer: usize = lead.iter().product();
            let x = val(0);
            vec![(p[0], sh(x, k::sum_axis(g.data(), 1, outer, x.len())))]
        }
        Op::Scale(c) => vec![(p[0], g.map(|x| x * *c))],
        Op::Shift(_) => vec![(p[0], g.clone())],
        Op::MatMul => {
            let (a, b) = (val(0), val(1));
            let (m, kk, n) = (a.rows(), a.cols(), b.cols());
            let bt = k::transpose(b.data(), kk, n);
            let at = k::transpose(a.data(), m, kk);
            vec![
                (p[0], sh(a, k::matmul(g.data(), m, n, &bt, kk))),
                (p[1], sh(b, k::matmul(&at, kk, m, g.data(), n))),
            ]
        }
        Op::Transpose => {
            let (r, c) = (g.rows(), g.cols());
            vec![(p[0], sh(val(0), k::transpose(g.data(), r, c)))]
        }
        Op::Conv1d(geom) => {
            let (x, w) = (val(0), val(1));
            let (t_in, cin, cout, t_out) = (x.rows(), x.cols(), w.shape()[2], g.rows());
            vec![
                (
                    p[0],
                    sh(x, k::conv1d_input_grad(g.data(), t_out, cout, w.data(), cin, *geom, t_in)),
                ),
                (
                    p[1],
                    sh(w, k::conv1d_weight_grad(x.data(), t_in, cin, g.data(), t_out, cout, *geom)),
                ),
            ]
        }
        Op::ConvInputGrad(geom) => {
            // y = cig(gy, w); upstream g has the shape of the conv input.
            let (gy, w) = (val(0), val(1));
            let (t_out, cout) = (gy.rows(), gy.cols());
            let (t_in, cin) = (g.rows(), g.cols());
            vec![
                (
                    p[0],
                    sh(gy, k::conv1d_forward(g.data(), t_in, cin, w.data(), cout, *geom, t_out)),
                ),
                (
                    p[1],
                    sh(w, k::conv1d_weight_grad(g.data(), t_in, cin, gy.data(), t_out, cout, *geom)),
                ),
            ]
        }
        Op::ConvWeightGrad(geom) => {
            // y = cwg(x, gy); upstream g has the shape of the weights.
            let (x, gy) = (val(0), val(1));
            let (t_in, cin) = (x.rows(), x.cols());
            let (t_out, cout) = (gy.rows(), gy.cols());
            vec![
                (
                    p[0],
                    sh(x, k::conv1d_input_grad(gy.data(), t_out, cout, g.data(), cin, *geom, t_in)),
                ),
                (
                    p[1],
                    sh(gy, k::conv1d_forward(x.data(), t_in, cin, g.data(), cout, *geom, t_out)),
                ),
            ]
        }
        Op::BatchNormTime { xhat, inv_std } => {
            let scale = val(1);
            let (t, c) = (g.rows(), g.cols());
            let n = T::from_usize(t).unwrap();
            let mut dscale = vec![T::zero(); c];
            let mut dbias = vec![T::zero(); c];
            let mut sum_dxhat = vec![T::zero(); c];
            let mut sum_dxhat_xhat = vec![T::zero(); c];
            for i in 0..t {
                for j in 0..c {
                    let gv = g.data()[i * c + j];
                    let h = xhat.data()[i * c + j];
                    dbias[j] += gv;
                    dscale[j] += gv * h;
                    let dh = gv * scale.data()[j];
                    sum_dxhat[j] += dh;
                    sum_dxhat_xhat[j] += dh * h;
                }
            }
            let mut dx = vec![T::zero(); t * c];
            for i in 0..t {
                for j in 0..c {
                    let dh = g.data()[i * c + j] * scale.data()[j];
                    let h = xhat.data()[i * c + j];
                    dx[i * c + j] =
                        inv_std[j] / n * (n * dh - sum_dxhat[j] - h * sum_dxhat_xhat[j]);
                }
            }
            vec![
                (p[0], sh(g, dx)),
                (p[1], sh(scale, dscale)),
                (p[2], sh(scale, dbias)),
            ]
        }
        Op::Softmax => {
            let c = *y.shape().last().unwrap_or(&1);
            let mut dx = vec![T::zero(); y.len()];
            for ((dr, yr), gr) in dx
                .chunks_mut(c)
                .zip(y.data().chunks(c))
                .zip(g.data().chunks(c))
            {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *d = yv * (gv - dot);
                }
            }
            vec![(p[0], sh(y, dx))]
        }
        Op::LogSoftmax => {
            let c = *y.shape().last().unwrap_or(&1);
            let mut dx = vec![T::zero(); y.len()];
            for ((dr, yr), gr) in dx
                .chunks_mut(c)
                .zip(y.data().chunks(c))
                .zip(g.data().chunks(c))
            {
                let gsum: T = gr.iter().copied().sum();
                for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
                    *d = gv - yv.exp() * gsum;
                }
            }
            vec![(p[0], sh(y, dx))]
        }
        Op::Log(floor) => vec![(
            p[0],
            g.zip_map(val(0), |gv, x| if x > *floor { gv / x } else { T::zero() }),
        )],
        Op::Exp => vec![(p[0], g.zip_map(y, |gv, yv| gv * yv))],
        Op::Sigmoid => vec![(p[0], g.zip_map(y, |gv, s| gv * s * (T::one() - s)))],
        Op::LogSigmoid => vec![(p[0], g.zip_map(val(0), |gv, x| gv * sigmoid(-x)))],
        Op::Relu => vec![(
            p[0],
            g.zip_map(val(0), |gv, x| if x > T::zero() { gv } else { T::zero() }),
        )],
        Op::Sqrt => vec![(
            p[0],
            g.zip_map(y, |gv, s| {
                if s > T::zero() {
                    gv / (s + s)
                } else {
                    T::zero()
                }
            }),
        )],
        Op::SumAll => vec![(p[0], Array::full(val(0).shape(), g.item()))],
        Op::MeanAll => {
            let x = val(0);
            let n = T::from_usize(x.len()).unwrap();
            vec![(p[0], Array::full(x.shape(), g.item() / n))]
        }
        Op::ExpandScalar => vec![(p[0], Array::scalar(g.data().iter().copied().sum()))],
        Op::SumAxis(axis) | Op::MeanAxis(axis) => {
            let x = val(0);
            let (outer, n, inner) = k::axis_split(x.shape(), *axis);
            let mut d = k::expand_axis(g.data(), outer, n, inner);
            if matches!(node.op, Op::MeanAxis(_)) {
                let nn = T::from_usize(n).unwrap();
                d.iter_mut().for_each(|v| *v /= nn);
            }
            vec![(p[0], sh(x, d))]
        }
        Op::ExpandAxis(axis) => {
            let (outer, n, inner) = k::axis_split(g.shape(), *axis);
            vec![(p[0], sh(val(0), k::sum_axis(g.data(), outer, n, inner)))]
        }
        Op::SquaredNorm => {
            let gv = g.item();
            vec![(p[0], val(0).map(|x| (x + x) * gv))]
        }
        Op::Concat(axis) => {
            let (outer, total, inner) = k::axis_split(g.shape(), *axis);
            let mut offset = 0;
            p.iter()
                .map(|&pid| {
                    let x = &nodes[pid].value;
                    let n = x.shape()[*axis];
                    let mut d = Vec::with_capacity(x.len());
                    for o in 0..outer {
                        let base = (o * total + offset) * inner;
                        d.extend_from_slice(&g.data()[base..base + n * inner]);
                    }
                    offset += n;
                    (pid, sh(x, d))
                })
                .collect()
        }
        Op::Slice(axis, start, end) => {
            let x = val(0);
            let (outer, n, inner) = k::axis_split(x.shape(), *axis);
            let len = end - start;
            let mut d = vec![T::zero(); x.len()];
            for o in 0..outer {
                d[(o * n + start) * inner..(o * n + end) * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![(p[0], sh(x, d))]
        }
        Op::PadSlice(axis, start, full) => {
            let x = val(0);
            let (outer, n, inner) = k::axis_split(x.shape(), *axis);
            let mut d = Vec::with_capacity(x.len());
            for o in 0..outer {
                d.extend_from_slice(&g.data()[(o * full + start) * inner..(o * full + start + n) * inner]);
            }
            vec![(p[0], sh(x, d))]
        }
        Op::GatherRows(idx) => {
            let x = val(0);
            let c = x.cols();
            let mut d = vec![T::zero(); x.len()];
            for (r, &i) in idx.iter().enumerate() {
                for (dv, &gv) in d[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                    *dv += gv;
                }
            }
            vec![(p[0], sh(x, d))]
        }
    }
}
