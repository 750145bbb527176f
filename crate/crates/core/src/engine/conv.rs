//! Strided, dilated, zero-padded cross-correlation in 2D and 3D.
//!
//! Both ranks share one implementation: a 2D convolution is a 3D one over a
//! depth-1 volume. Each batch item is lowered with im2col and multiplied by
//! the weight matrix; batch items run in parallel and every reduction across
//! them is summed in batch order, so results are bit-reproducible.

use rayon::prelude::*;

use crate::error::{bail, Result};
use crate::tensor::{gemm, Element, MatRef, Tensor};

/// Convolution geometry over `N` spatial axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec<const N: usize> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; N],
    pub stride: [usize; N],
    pub dilation: [usize; N],
    pub pad_lo: [usize; N],
    pub pad_hi: [usize; N],
}

pub type Conv2dSpec = ConvSpec<2>;
pub type Conv3dSpec = ConvSpec<3>;

impl<const N: usize> ConvSpec<N> {
    /// Stride 1, dilation 1, no padding.
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; N]) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: [1; N],
            dilation: [1; N],
            pad_lo: [0; N],
            pad_hi: [0; N],
        }
    }

    pub fn with_stride(mut self, stride: [usize; N]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: [usize; N]) -> Self {
        self.dilation = dilation;
        self
    }

    /// Same zero padding on both sides of every axis.
    pub fn with_padding(mut self, pad: [usize; N]) -> Self {
        self.pad_lo = pad;
        self.pad_hi = pad;
        self
    }

    pub fn with_asymmetric_padding(mut self, lo: [usize; N], hi: [usize; N]) -> Self {
        self.pad_lo = lo;
        self.pad_hi = hi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            bail!(InvalidArgument, "channel counts must be positive: {self:?}");
        }
        for ax in 0..N {
            if self.kernel[ax] == 0 || self.stride[ax] == 0 || self.dilation[ax] == 0 {
                bail!(InvalidArgument, "kernel/stride/dilation must be >= 1: {self:?}");
            }
        }
        Ok(())
    }

    /// `floor((in + pad_lo + pad_hi - dilation·(k-1) - 1) / stride) + 1` per axis.
    pub fn output_extent(&self, input: [usize; N]) -> Result<[usize; N]> {
        self.validate()?;
        let mut out = [0; N];
        for ax in 0..N {
            let padded = (input[ax] + self.pad_lo[ax] + self.pad_hi[ax]) as i64;
            let span = (self.dilation[ax] * (self.kernel[ax] - 1) + 1) as i64;
            if padded < span {
                bail!(
                    Shape,
                    "axis {ax}: padded extent {padded} shorter than dilated kernel {span}"
                );
            }
            out[ax] = ((padded - span) / self.stride[ax] as i64) as usize + 1;
        }
        Ok(out)
    }

    /// `[out_channels, in_channels, k...]`.
    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend_from_slice(&self.kernel);
        s
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }
}

impl Conv2dSpec {
    pub fn to_3d(&self) -> Conv3dSpec {
        let lift = |a: [usize; 2], fill: usize| [fill, a[0], a[1]];
        Conv3dSpec {
            in_channels: self.in_channels,
            out_channels: self.out_channels,
            kernel: lift(self.kernel, 1),
            stride: lift(self.stride, 1),
            dilation: lift(self.dilation, 1),
            pad_lo: lift(self.pad_lo, 0),
            pad_hi: lift(self.pad_hi, 0),
        }
    }

    /// Spec acting on the transposed image (H and W swapped).
    pub fn transposed(&self) -> Self {
        let sw = |a: [usize; 2]| [a[1], a[0]];
        Self {
            kernel: sw(self.kernel),
            stride: sw(self.stride),
            dilation: sw(self.dilation),
            pad_lo: sw(self.pad_lo),
            pad_hi: sw(self.pad_hi),
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    dilation: [usize; 3],
    pad: [usize; 3],
}

impl Geometry {
    fn in_len(&self) -> usize {
        self.channels * self.input.iter().product::<usize>()
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1]
            && self.stride == [1, 1, 1]
            && self.pad == [0, 0, 0]
            && self.output == self.input
    }

    /// Input coordinate along `ax` sampled by kernel tap `k` at output `o`.
    #[inline]
    fn source(&self, ax: usize, o: usize, k: usize) -> Option<usize> {
        let p = (o * self.stride[ax] + k * self.dilation[ax]) as i64 - self.pad[ax] as i64;
        (p >= 0 && (p as usize) < self.input[ax]).then_some(p as usize)
    }

    /// Calls `f(col_index, input_index)` for every in-bounds sample.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let [id, ih, iw] = self.input;
        let [od, oh, ow] = self.output;
        let [kd, kh, kw] = self.kernel;
        let p = self.positions();
        let mut row = 0;
        for c in 0..self.channels {
            for zd in 0..kd {
                for zh in 0..kh {
                    for zw in 0..kw {
                        let base = row * p;
                        for d in 0..od {
                            let Some(sd) = self.source(0, d, zd) else { continue };
                            for h in 0..oh {
                                let Some(sh) = self.source(1, h, zh) else { continue };
                                let src_row = ((c * id + sd) * ih + sh) * iw;
                                let dst_row = base + (d * oh + h) * ow;
                                for w in 0..ow {
                                    if let Some(sw) = self.source(2, w, zw) {
                                        f(dst_row + w, src_row + sw);
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col<T: Element>(&self, x: &[T], col: &mut [T]) {
        col.fill(T::zero());
        self.for_each_tap(|dst, src| col[dst] = x[src]);
    }

    fn col2im<T: Element>(&self, col: &[T], gx: &mut [T]) {
        self.for_each_tap(|dst, src| gx[src] += col[dst]);
    }
}

fn geometry(x_shape: &[usize], spec: &Conv3dSpec) -> Result<Geometry> {
    let &[_, c, d, h, w] = x_shape else {
        bail!(Shape, "conv input must be [N, C, D, H, W], got {x_shape:?}");
    };
    if c != spec.in_channels {
        bail!(
            Shape,
            "conv expects {} input channels, got {c}",
            spec.in_channels
        );
    }
    let output = spec.output_extent([d, h, w])?;
    Ok(Geometry {
        channels: c,
        input: [d, h, w],
        output,
        kernel: spec.kernel,
        stride: spec.stride,
        dilation: spec.dilation,
        pad: spec.pad_lo,
    })
}

fn check_params<T: Element>(
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv3dSpec,
) -> Result<()> {
    if weight.shape() != spec.weight_shape() {
        bail!(
            Shape,
            "weight {:?} does not match {:?}",
            weight.shape(),
            spec.weight_shape()
        );
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            bail!(Shape, "bias {:?} for {} outputs", b.shape(), spec.out_channels);
        }
    }
    Ok(())
}

/// Forward pass on `[N, C, D, H, W]` input.
pub fn conv3d_forward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv3dSpec,
) -> Result<Tensor<T>> {
    let geo = geometry(x.shape(), spec)?;
    check_params(weight, bias, spec)?;
    let n = x.shape()[0];
    let (oc, k, p) = (spec.out_channels, geo.rows(), geo.positions());
    let mut out = vec![T::zero(); n * oc * p];
    out.par_chunks_mut(oc * p)
        .zip(x.data().par_chunks(geo.in_len()))
        .for_each(|(out_n, x_n)| {
            let mut beta = T::zero();
            if let Some(b) = bias {
                for (o, &bv) in b.data().iter().enumerate() {
                    out_n[o * p..(o + 1) * p].fill(bv);
                }
                beta = T::one();
            }
            if geo.is_pointwise() {
                gemm(MatRef::N(weight.data(), oc, k), MatRef::N(x_n, k, p), beta, out_n);
            } else {
                let mut col = vec![T::zero(); k * p];
                geo.im2col(x_n, &mut col);
                gemm(MatRef::N(weight.data(), oc, k), MatRef::N(&col, k, p), beta, out_n);
            }
        });
    let [od, oh, ow] = geo.output;
    Ok(Tensor::from_parts(vec![n, oc, od, oh, ow], out))
}

pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Vector-Jacobian products of [`conv3d_forward`] given upstream `grad_out`.
pub fn conv3d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &Conv3dSpec,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let geo = geometry(x.shape(), spec)?;
    check_params(weight, None, spec)?;
    let n = x.shape()[0];
    let (oc, k, p) = (spec.out_channels, geo.rows(), geo.positions());
    if grad_out.len() != n * oc * p {
        bail!(Shape, "upstream gradient {:?} does not match conv output", grad_out.shape());
    }

    let partials: Vec<(Vec<T>, Vec<T>, Option<Vec<T>>)> = x
        .data()
        .par_chunks(geo.in_len())
        .zip(grad_out.data().par_chunks(oc * p))
        .map(|(x_n, gy_n)| {
            let owned;
            let col: &[T] = if geo.is_pointwise() {
                x_n
            } else {
                let mut c = vec![T::zero(); k * p];
                geo.im2col(x_n, &mut c);
                owned = c;
                &owned
            };
            let mut gw = vec![T::zero(); oc * k];
            gemm(MatRef::N(gy_n, oc, p), MatRef::T(col, k, p), T::zero(), &mut gw);
            let gb = (0..oc)
                .map(|o| gy_n[o * p..(o + 1) * p].iter().copied().sum())
                .collect();
            let gx = need_input.then(|| {
                let mut gcol = vec![T::zero(); k * p];
                gemm(MatRef::T(weight.data(), oc, k), MatRef::N(gy_n, oc, p), T::zero(), &mut gcol);
                if geo.is_pointwise() {
                    gcol
                } else {
                    let mut gx = vec![T::zero(); geo.in_len()];
                    geo.col2im(&gcol, &mut gx);
                    gx
                }
            });
            (gw, gb, gx)
        })
        .collect();

    let mut gw = vec![T::zero(); oc * k];
    let mut gb = vec![T::zero(); oc];
    let mut gx = need_input.then(|| Vec::with_capacity(x.len()));
    for (pw, pb, px) in partials {
        gw.iter_mut().zip(&pw).for_each(|(a, &b)| *a += b);
        gb.iter_mut().zip(&pb).for_each(|(a, &b)| *a += b);
        if let (Some(acc), Some(px)) = (gx.as_mut(), px) {
            acc.extend_from_slice(&px);
        }
    }
    Ok(ConvGrads {
        input: gx.map(|d| Tensor::from_parts(x.shape().to_vec(), d)),
        weight: Tensor::from_parts(weight.shape().to_vec(), gw),
        bias: Tensor::from_parts(vec![oc], gb),
    })
}

fn lift_2d<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let &[n, c, h, w] = x.shape() else {
        bail!(Shape, "conv2d input must be [N, C, H, W], got {:?}", x.shape());
    };
    x.clone().reshape(&[n, c, 1, h, w])
}

fn lift_weight<T: Element>(w: &Tensor<T>) -> Result<Tensor<T>> {
    let &[o, i, kh, kw] = w.shape() else {
        bail!(Shape, "conv2d weight must be [O, I, KH, KW], got {:?}", w.shape());
    };
    w.clone().reshape(&[o, i, 1, kh, kw])
}

/// Forward pass on `[N, C, H, W]` input.
pub fn conv2d_forward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &Conv2dSpec,
) -> Result<Tensor<T>> {
    let y = conv3d_forward(&lift_2d(x)?, &lift_weight(weight)?, bias, &spec.to_3d())?;
    let s = y.shape().to_vec();
    y.reshape(&[s[0], s[1], s[3], s[4]])
}

pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: &Conv2dSpec,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let g = conv3d_backward(&lift_2d(x)?, &lift_weight(weight)?, grad_out, &spec.to_3d(), need_input)?;
    Ok(ConvGrads {
        input: g.input.map(|t| t.reshape(x.shape())).transpose()?,
        weight: g.weight.reshape(weight.shape())?,
        bias: g.bias,
    })
}
