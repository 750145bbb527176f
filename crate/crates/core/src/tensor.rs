//! Dense row-major n-d arrays, generic over the working precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{bail, Result};

/// Scalar type a [`Tensor`] can hold. Implemented for `f32` (inference
/// precision) and `f64` (gradient checking).
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const NAME: &'static str;

    /// `c = alpha * a·b + beta * c` with arbitrary strides.
    ///
    /// # Safety
    /// Every element addressed by the (m, k, n) extents and the given strides
    /// must lie inside the respective slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        // Products are accumulated in f64 and rounded once, so long reductions
        // (A² taps of an angular kernel) stay within an ulp of the exact sum.
        let (wa, rsa, csa) = widen(a, m, k, rsa, csa);
        let (wb, rsb, csb) = widen(b, k, n, rsb, csb);
        let (mut wc, rsw, csw) = if beta == 0.0 {
            (vec![0.0; m * n], n as isize, 1)
        } else {
            widen(c, m, n, rsc, csc)
        };
        matrixmultiply::dgemm(
            m,
            k,
            n,
            f64::from(alpha),
            wa.as_ptr(),
            rsa,
            csa,
            wb.as_ptr(),
            rsb,
            csb,
            f64::from(beta),
            wc.as_mut_ptr(),
            rsw,
            csw,
        );
        if (rsw, csw) == (rsc, csc) && dense(m, n, rsc, csc) {
            let out = std::slice::from_raw_parts_mut(c, m * n);
            for (o, w) in out.iter_mut().zip(&wc) {
                *o = *w as f32;
            }
        } else {
            for i in 0..m as isize {
                for j in 0..n as isize {
                    *c.offset(i * rsc + j * csc) = wc[(i * rsw + j * csw) as usize] as f32;
                }
            }
        }
    }
}

/// True when a `rows×cols` operand with these strides tiles `rows·cols`
/// consecutive elements (row- or column-major).
fn dense(rows: usize, cols: usize, rs: isize, cs: isize) -> bool {
    (cs == 1 && (rs == cols as isize || rows <= 1)) || (rs == 1 && (cs == rows as isize || cols <= 1))
}

/// f64 copy of an f32 operand and the strides to read it with. Dense
/// operands are converted linearly and keep their layout.
///
/// # Safety
/// Same contract as [`Element::gemm_raw`] for the operand.
unsafe fn widen(p: *const f32, rows: usize, cols: usize, rs: isize, cs: isize) -> (Vec<f64>, isize, isize) {
    if dense(rows, cols, rs, cs) {
        let src = std::slice::from_raw_parts(p, rows * cols);
        return (src.iter().map(|&v| f64::from(v)).collect(), rs, cs);
    }
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows as isize {
        for j in 0..cols as isize {
            out.push(f64::from(*p.offset(i * rs + j * cs)));
        }
    }
    (out, cols as isize, 1)
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix operand: either stored as-is or read transposed.
#[derive(Clone, Copy, Debug)]
pub(crate) enum MatRef<'a, T> {
    N(&'a [T], usize, usize),
    T(&'a [T], usize, usize),
}

impl<T> MatRef<'_, T> {
    /// (rows, cols, row stride, col stride) of the logical operand.
    fn geometry(&self) -> (usize, usize, isize, isize) {
        match *self {
            MatRef::N(_, r, c) => (r, c, c as isize, 1),
            MatRef::T(_, r, c) => (c, r, 1, c as isize),
        }
    }

    fn slice(&self) -> &[T] {
        match *self {
            MatRef::N(s, _, _) | MatRef::T(s, _, _) => s,
        }
    }
}

/// `out (m×n, row-major) = a·b + beta·out`.
pub(crate) fn gemm<T: Element>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, out: &mut [T]) {
    let (m, k, rsa, csa) = a.geometry();
    let (k2, n, rsb, csb) = b.geometry();
    assert_eq!(k, k2, "gemm inner extents differ");
    assert!(a.slice().len() >= m * k && b.slice().len() >= k * n);
    assert!(out.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: extents and strides above address only in-bounds elements.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.slice().as_ptr(),
            rsa,
            csa,
            b.slice().as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const PREVIEW: usize = 8;
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &&self.data[..self.data.len().min(PREVIEW)])
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        bail!(Shape, "tensor needs at least one axis");
    }
    if shape.contains(&0) {
        bail!(Shape, "zero extent in shape {shape:?}");
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        if numel(&shape) != data.len() {
            bail!(
                Shape,
                "shape {shape:?} needs {} values, got {}",
                numel(&shape),
                data.len()
            );
        }
        Ok(Self { shape, data })
    }

    /// Construct without validation; callers guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        check_shape(shape).expect("valid shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Fill by calling `f` with each multi-index in row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> T) -> Self {
        check_shape(shape).expect("valid shape");
        let n = numel(shape);
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for ax in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[ax] = strides[ax + 1] * self.shape[ax + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        if numel(shape) != self.data.len() {
            bail!(
                Shape,
                "cannot reshape {:?} into {shape:?}",
                self.shape
            );
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            bail!(Shape, "{:?} vs {:?}", self.shape, other.shape);
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    /// Largest absolute element-wise difference; `inf` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .fold(0.0, f64::max)
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true))
        {
            bail!(InvalidArgument, "{axes:?} is not a permutation of {nd} axes");
        }
        let in_strides = self.strides();
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; nd];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[src]);
            for ax in (0..nd).rev() {
                idx[ax] += 1;
                src += strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                src -= strides[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Self {
            shape: out_shape,
            data,
        })
    }

    /// Reverse the listed axes.
    pub fn flip(&self, axes: &[usize]) -> Self {
        let shape = self.shape.clone();
        Self::from_fn(&shape, |idx| {
            let mut src = idx.to_vec();
            for &a in axes {
                src[a] = shape[a] - 1 - src[a];
            }
            self.get(&src)
        })
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| crate::Error::InvalidArgument("concat of nothing".into()))?;
        let nd = first.ndim();
        if axis >= nd {
            bail!(InvalidArgument, "concat axis {axis} for {nd}-d tensors");
        }
        for p in parts {
            if p.ndim() != nd
                || p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .any(|(ax, (a, b))| ax != axis && a != b)
            {
                bail!(
                    Shape,
                    "concat along {axis}: {:?} vs {:?}",
                    first.shape,
                    p.shape
                );
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total_axis: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut shape = first.shape.clone();
        shape[axis] = total_axis;
        let mut data = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for p in parts {
                let chunk = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(Self { shape, data })
    }

    /// Inverse of [`Tensor::concat`]: split `axis` into pieces of the given sizes.
    pub fn split(&self, axis: usize, sizes: &[usize]) -> Result<Vec<Self>> {
        if axis >= self.ndim() || sizes.iter().sum::<usize>() != self.shape[axis] {
            bail!(
                Shape,
                "cannot split axis {axis} of {:?} into {sizes:?}",
                self.shape
            );
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let full = self.shape[axis] * inner;
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            let mut shape = self.shape.clone();
            shape[axis] = s;
            let mut data = Vec::with_capacity(outer * s * inner);
            for o in 0..outer {
                let base = o * full + start * inner;
                data.extend_from_slice(&self.data[base..base + s * inner]);
            }
            out.push(Self { shape, data });
            start += s;
        }
        Ok(out)
    }

    /// Sub-tensor at `index` along axis 0.
    pub fn slice0(&self, index: usize) -> Self {
        let inner: usize = self.shape[1..].iter().product();
        let shape = if self.ndim() > 1 {
            self.shape[1..].to_vec()
        } else {
            vec![1]
        };
        Self {
            shape,
            data: self.data[index * inner..(index + 1) * inner].to_vec(),
        }
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor<T>]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| crate::Error::InvalidArgument("stack of nothing".into()))?;
        if parts.iter().any(|p| p.shape != first.shape) {
            bail!(Shape, "stack needs identical shapes");
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(parts.len() * first.len());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self { shape, data })
    }
}
