use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Scalar type the engine computes in. Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Dense row-major array with up to three axes.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Array<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "from_vec",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        if shape.len() > 3 {
            return Err(Error::Contract(format!(
                "arrays have at most 3 axes, got shape {shape:?}"
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a `rows × cols` matrix from row slices.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged rows".into()));
        }
        Self::from_vec(&[rows.len(), cols], rows.concat())
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

    /// The single element of a scalar (or any one-element) array.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Row `i` of a rank-2 array.
    pub fn row(&self, i: usize) -> &[T] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert_eq!(self.shape, other.shape);
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::lit(x.as_f64())).collect(),
        }
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Geometry of a 1-D convolution over the time axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl ConvGeom {
    pub fn valid(kernel: usize, stride: usize) -> Self {
        Self {
            kernel,
            stride,
            pad_left: 0,
            pad_right: 0,
        }
    }

    /// Total padding `kernel - 1`, with the extra element on the right for
    /// even kernels.
    pub fn same(kernel: usize, stride: usize) -> Self {
        let total = kernel.saturating_sub(1);
        Self {
            kernel,
            stride,
            pad_left: total / 2,
            pad_right: total - total / 2,
        }
    }

    /// `floor((T + pl + pr - kernel) / stride) + 1`, or `None` when the
    /// padded input is shorter than the kernel.
    pub fn out_len(&self, t_in: usize) -> Option<usize> {
        let padded = t_in + self.pad_left + self.pad_right;
        if self.stride == 0 || padded < self.kernel {
            None
        } else {
            Some((padded - self.kernel) / self.stride + 1)
        }
    }

    /// Half-open span of input frames that feed output frame `t`, clipped to
    /// `[0, t_in)`.
    pub fn receptive_span(&self, t: usize, t_in: usize) -> (usize, usize) {
        let start = (t * self.stride) as isize - self.pad_left as isize;
        let end = start + self.kernel as isize;
        (
            start.clamp(0, t_in as isize) as usize,
            end.clamp(0, t_in as isize) as usize,
        )
    }

    #[inline]
    fn input_index(&self, t: usize, k: usize, t_in: usize) -> Option<usize> {
        let i = (t * self.stride + k) as isize - self.pad_left as isize;
        (i >= 0 && (i as usize) < t_in).then_some(i as usize)
    }
}

// Raw kernels. Layouts: x [T, Cin], w [K, Cin, Cout], y [To, Cout].

pub(crate) fn conv1d_forward<T: Real>(
    x: &[T],
    t_in: usize,
    cin: usize,
    w: &[T],
    cout: usize,
    g: ConvGeom,
    t_out: usize,
) -> Vec<T> {
    let mut y = vec![T::zero(); t_out * cout];
    for t in 0..t_out {
        let yrow = &mut y[t * cout..(t + 1) * cout];
        for k in 0..g.kernel {
            let Some(i) = g.input_index(t, k, t_in) else {
                continue;
            };
            let xrow = &x[i * cin..(i + 1) * cin];
            let wk = &w[k * cin * cout..(k + 1) * cin * cout];
            for (c, &xv) in xrow.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                let wrow = &wk[c * cout..(c + 1) * cout];
                for (yo, &wv) in yrow.iter_mut().zip(wrow) {
                    *yo += xv * wv;
                }
            }
        }
    }
    y
}

/// Adjoint of [`conv1d_forward`] in its input: maps `gy [To, Cout]` to `[T, Cin]`.
pub(crate) fn conv1d_input_grad<T: Real>(
    gy: &[T],
    t_out: usize,
    cout: usize,
    w: &[T],
    cin: usize,
    g: ConvGeom,
    t_in: usize,
) -> Vec<T> {
    let mut gx = vec![T::zero(); t_in * cin];
    for t in 0..t_out {
        let grow = &gy[t * cout..(t + 1) * cout];
        for k in 0..g.kernel {
            let Some(i) = g.input_index(t, k, t_in) else {
                continue;
            };
            let wk = &w[k * cin * cout..(k + 1) * cin * cout];
            let gxrow = &mut gx[i * cin..(i + 1) * cin];
            for (c, gxv) in gxrow.iter_mut().enumerate() {
                let wrow = &wk[c * cout..(c + 1) * cout];
                let mut acc = T::zero();
                for (&gv, &wv) in grow.iter().zip(wrow) {
                    acc += gv * wv;
                }
                *gxv += acc;
            }
        }
    }
    gx
}

/// Adjoint of [`conv1d_forward`] in its weights: `x [T, Cin]`, `gy [To, Cout]`
/// to `[K, Cin, Cout]`.
pub(crate) fn conv1d_weight_grad<T: Real>(
    x: &[T],
    t_in: usize,
    cin: usize,
    gy: &[T],
    t_out: usize,
    cout: usize,
    g: ConvGeom,
) -> Vec<T> {
    let mut gw = vec![T::zero(); g.kernel * cin * cout];
    for t in 0..t_out {
        let grow = &gy[t * cout..(t + 1) * cout];
        for k in 0..g.kernel {
            let Some(i) = g.input_index(t, k, t_in) else {
                continue;
            };
            let xrow = &x[i * cin..(i + 1) * cin];
            let gwk = &mut gw[k * cin * cout..(k + 1) * cin * cout];
            for (c, &xv) in xrow.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                let gwrow = &mut gwk[c * cout..(c + 1) * cout];
                for (gwv, &gv) in gwrow.iter_mut().zip(grow) {
                    *gwv += xv * gv;
                }
            }
        }
    }
    gw
}

/// `a [m, k] · b [k, n]`.
pub(crate) fn matmul<T: Real>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub(crate) fn transpose<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

/// `(outer, n, inner)` decomposition of `shape` around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn sum_axis<T: Real>(x: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); outer * inner];
    for o in 0..outer {
        for j in 0..n {
            let src = &x[(o * n + j) * inner..(o * n + j + 1) * inner];
            for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    out
}

pub(crate) fn expand_axis<T: Real>(x: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(outer * n * inner);
    for o in 0..outer {
        for _ in 0..n {
            out.extend_from_slice(&x[o * inner..(o + 1) * inner]);
        }
    }
    out
}
