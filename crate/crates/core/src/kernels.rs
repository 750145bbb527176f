//! Convolutions on macro-pixel images that stay inside one light-field
//! subspace, plus the explicit shift-and-concat cost volume they replace.
//!
//! Angular weights are laid out `[out_c, in_c, u, v]` for every A×A kernel,
//! so AFE, DS-AFE and the shift-and-concat route accept the same tensor.

use crate::engine::conv::{self, Conv2dSpec};
use crate::error::{bail, Result};
use crate::lightfield::EpiOrientation;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ExtractorKind {
    Spatial,
    Angular,
    EpiHorizontal,
    EpiVertical,
    DisparitySelective,
}

/// Whether an EPI extractor may be built for an even angular resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EvenAngular {
    #[default]
    Reject,
    /// Pad `A·⌊(A-1)/2⌋` before and `A·⌈(A-1)/2⌉` after, keeping windows
    /// aligned to macro-pixel boundaries.
    Asymmetric,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub ang_res: usize,
    pub disparity: Option<i64>,
    pub conv: Conv2dSpec,
}

fn check_ang(a: usize) -> Result<()> {
    if a == 0 {
        bail!(InvalidArgument, "angular resolution must be at least 1");
    }
    Ok(())
}

/// 3×3 kernel with dilation `A` and padding `A`; output stays `AH×AW`.
pub fn make_sfe(a: usize, in_ch: usize, out_ch: usize) -> Result<ExtractorSpec> {
    check_ang(a)?;
    let conv = Conv2dSpec::new(in_ch, out_ch, [3, 3])
        .with_dilation([a, a])
        .with_padding([a, a]);
    conv.validate()?;
    Ok(ExtractorSpec {
        kind: ExtractorKind::Spatial,
        ang_res: a,
        disparity: None,
        conv,
    })
}

/// A×A kernel with stride `A`; one output pixel per macro-pixel.
pub fn make_afe(a: usize, in_ch: usize, out_ch: usize) -> Result<ExtractorSpec> {
    check_ang(a)?;
    let conv = Conv2dSpec::new(in_ch, out_ch, [a, a]).with_stride([a, a]);
    conv.validate()?;
    Ok(ExtractorSpec {
        kind: ExtractorKind::Angular,
        ang_res: a,
        disparity: None,
        conv,
    })
}

/// `1×A²` kernel with stride `(1, A)` for horizontal EPIs, or its transpose.
pub fn make_efe(
    a: usize,
    orientation: EpiOrientation,
    in_ch: usize,
    out_ch: usize,
    even: EvenAngular,
) -> Result<ExtractorSpec> {
    check_ang(a)?;
    if a % 2 == 0 && even == EvenAngular::Reject {
        bail!(InvalidArgument, "EPI extractor needs odd angular resolution, got {a}");
    }
    let (lo, hi) = (a * ((a - 1) / 2), a * (a / 2));
    let horizontal = Conv2dSpec::new(in_ch, out_ch, [1, a * a])
        .with_stride([1, a])
        .with_asymmetric_padding([0, lo], [0, hi]);
    horizontal.validate()?;
    let (kind, conv) = match orientation {
        EpiOrientation::Horizontal => (ExtractorKind::EpiHorizontal, horizontal),
        EpiOrientation::Vertical => (ExtractorKind::EpiVertical, horizontal.transposed()),
    };
    Ok(ExtractorSpec {
        kind,
        ang_res: a,
        disparity: None,
        conv,
    })
}

/// Dilation and padding of a disparity-selective extractor.
pub fn ds_afe_geometry(a: usize, d: i64) -> Result<(usize, usize)> {
    if a < 2 {
        bail!(InvalidArgument, "disparity-selective extractor needs A >= 2, got {a}");
    }
    let a = a as i64;
    let (dila, pad) = if d > 0 {
        (d * a - 1, d * a * (a - 1) / 2 - a + 1)
    } else {
        (-d * a + 1, -d * a * (a - 1) / 2)
    };
    if pad < 0 {
        bail!(InvalidArgument, "A={a}, d={d} gives negative padding {pad}");
    }
    Ok((dila as usize, pad as usize))
}

/// A×A stride-A kernel whose dilation and padding make macro-pixel `(h, w)`
/// read view `(u, v)` at `(h, w) + compute_view_offset(u, v, c, c, d)`.
///
/// For `d > 0` the taps visit views in reverse order; [`apply_extractor`]
/// and [`angular_weight_for`] flip the weight so callers always pass the
/// `[out_c, in_c, u, v]` layout.
pub fn make_ds_afe(a: usize, d: i64, in_ch: usize, out_ch: usize) -> Result<ExtractorSpec> {
    let (dila, pad) = ds_afe_geometry(a, d)?;
    let conv = Conv2dSpec::new(in_ch, out_ch, [a, a])
        .with_stride([a, a])
        .with_dilation([dila, dila])
        .with_padding([pad, pad]);
    conv.validate()?;
    Ok(ExtractorSpec {
        kind: ExtractorKind::DisparitySelective,
        ang_res: a,
        disparity: Some(d),
        conv,
    })
}

impl ExtractorSpec {
    /// True when the kernel's tap order is the reverse of the `(u, v)` layout.
    pub fn taps_reversed(&self) -> bool {
        self.kind == ExtractorKind::DisparitySelective && self.disparity.is_some_and(|d| d > 0)
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        self.conv.weight_shape()
    }

    /// Output `(rows, cols)` for an `rows×cols` MacPI input.
    pub fn output_size(&self, rows: usize, cols: usize) -> Result<(usize, usize)> {
        let a = self.ang_res;
        if rows % a != 0 || cols % a != 0 {
            bail!(Layout, "{rows}x{cols} MacPI not divisible by angular resolution {a}");
        }
        let [r, c] = self.conv.output_extent([rows, cols])?;
        Ok((r, c))
    }
}

/// Converts a `[out_c, in_c, u, v]` angular weight into the kernel order the
/// convolution of `spec` consumes.
pub fn angular_weight_for<T: Element>(spec: &ExtractorSpec, weight: &Tensor<T>) -> Tensor<T> {
    if spec.taps_reversed() {
        weight.flip(&[2, 3])
    } else {
        weight.clone()
    }
}

/// Runs `spec` on a batched MacPI tensor `[N, C, A·H, A·W]`.
///
/// Output layout: spatial extractor `[N, C', AH, AW]` (MacPI); angular and
/// disparity-selective `[N, C', H, W]`; horizontal EPI `[N, C', AH, W]`;
/// vertical EPI `[N, C', H, AW]`.
pub fn apply_extractor<T: Element>(
    spec: &ExtractorSpec,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let &[_, _, rows, cols] = x.shape() else {
        bail!(Shape, "extractor input must be [N, C, AH, AW], got {:?}", x.shape());
    };
    spec.output_size(rows, cols)?;
    let w = angular_weight_for(spec, weight);
    conv::conv2d_forward(x, &w, bias, &spec.conv)
}

/// Pixel offset of view `(u, v)` relative to the centre view `(uc, vc)` for
/// a scene at disparity `d`.
pub fn compute_view_offset(u: usize, v: usize, uc: usize, vc: usize, d: i64) -> (i64, i64) {
    (d * (uc as i64 - u as i64), d * (vc as i64 - v as i64))
}

/// Ordered set of integer disparity hypotheses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DisparityLevelSet(Vec<i64>);

impl DisparityLevelSet {
    pub fn new(levels: Vec<i64>) -> Result<Self> {
        if levels.is_empty() {
            bail!(InvalidArgument, "disparity level set is empty");
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            bail!(InvalidArgument, "disparity levels must be strictly increasing: {levels:?}");
        }
        Ok(Self(levels))
    }

    /// `lo, lo+1, ..., hi`.
    pub fn range(lo: i64, hi: i64) -> Result<Self> {
        Self::new((lo..=hi).collect())
    }

    pub fn levels(&self) -> &[i64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn min(&self) -> i64 {
        self.0[0]
    }

    pub fn max(&self) -> i64 {
        self.0[self.0.len() - 1]
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&d| d as f64).collect()
    }
}

impl Default for DisparityLevelSet {
    fn default() -> Self {
        Self((-4..=4).collect())
    }
}

/// Matching features per disparity level, `[B, |D|, C, H, W]` in level order.
#[derive(Clone, Debug, PartialEq)]
pub struct CostVolume<T> {
    pub levels: DisparityLevelSet,
    pub data: Tensor<T>,
}

impl<T: Element> CostVolume<T> {
    pub fn new(levels: DisparityLevelSet, data: Tensor<T>) -> Result<Self> {
        match *data.shape() {
            [_, d, _, _, _] if d == levels.len() => Ok(Self { levels, data }),
            ref s => bail!(Shape, "cost volume {s:?} does not match {} levels", levels.len()),
        }
    }

    /// Features of one level, `[B, C, H, W]`.
    pub fn level(&self, index: usize) -> Tensor<T> {
        let s = self.data.shape();
        let (b, d, inner) = (s[0], s[1], s[2] * s[3] * s[4]);
        let mut out = Vec::with_capacity(b * inner);
        for i in 0..b {
            let o = (i * d + index) * inner;
            out.extend_from_slice(&self.data.data()[o..o + inner]);
        }
        Tensor::from_parts(vec![b, s[2], s[3], s[4]], out)
    }
}

/// One level per slice: DS-AFE on the MacPI with a weight shared by all
/// levels.
pub fn ds_afe_cost_volume<T: Element>(
    x: &Tensor<T>,
    ang_res: usize,
    levels: &DisparityLevelSet,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<CostVolume<T>> {
    let (cin, cout) = (weight.shape()[1], weight.shape()[0]);
    let slices = levels
        .levels()
        .iter()
        .map(|&d| {
            let spec = make_ds_afe(ang_res, d, cin, cout)?;
            apply_extractor(&spec, x, weight, bias)
        })
        .collect::<Result<Vec<_>>>()?;
    stack_levels(levels, &slices)
}

fn stack_levels<T: Element>(levels: &DisparityLevelSet, slices: &[Tensor<T>]) -> Result<CostVolume<T>> {
    let s = slices[0].shape().to_vec();
    let expanded: Vec<Tensor<T>> = slices
        .iter()
        .map(|t| t.clone().reshape(&[s[0], 1, s[1], s[2], s[3]]))
        .collect::<Result<_>>()?;
    let refs: Vec<&Tensor<T>> = expanded.iter().collect();
    CostVolume::new(levels.clone(), Tensor::concat(&refs, 1)?)
}

/// Output of the explicit shift-and-concat construction.
pub struct ShiftAndConcat<T> {
    pub volume: CostVolume<T>,
    /// Number of non-trivial view shifts performed.
    pub shifts: usize,
}

/// `view` shifted so that `out[h, w] = view[h + dh, w + dw]`, zero outside.
fn shift_view<T: Element>(view: &[T], rows: usize, cols: usize, dh: i64, dw: i64) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for h in 0..rows {
        let sh = h as i64 + dh;
        if sh < 0 || sh >= rows as i64 {
            continue;
        }
        for w in 0..cols {
            let sw = w as i64 + dw;
            if (0..cols as i64).contains(&sw) {
                out[h * cols + w] = view[sh as usize * cols + sw as usize];
            }
        }
    }
    out
}

/// Reference cost volume: for every level, each view is shifted by its
/// offset (one separate operation per view), the shifted views are
/// concatenated and re-tiled into a MacPI, and an ordinary A×A stride-A
/// convolution is applied.
pub fn oracle_shift_and_concat<T: Element>(
    x: &Tensor<T>,
    ang_res: usize,
    levels: &DisparityLevelSet,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<ShiftAndConcat<T>> {
    let a = ang_res;
    let &[b, c, rows, cols] = x.shape() else {
        bail!(Shape, "features must be [N, C, AH, AW], got {:?}", x.shape());
    };
    if a == 0 || rows % a != 0 || cols % a != 0 {
        bail!(Layout, "{rows}x{cols} MacPI not divisible by angular resolution {a}");
    }
    let (h, w) = (rows / a, cols / a);
    let center = (a - 1) / 2;
    let afe = make_afe(a, weight.shape()[1], weight.shape()[0])?;

    // views[(u·A + v)] holds [B, C, H, W]
    let mut views = vec![vec![T::zero(); b * c * h * w]; a * a];
    for (plane, src) in x.data().chunks_exact(rows * cols).enumerate() {
        for y in 0..rows {
            for z in 0..cols {
                let (u, hh, v, ww) = (y % a, y / a, z % a, z / a);
                views[u * a + v][plane * h * w + hh * w + ww] = src[y * cols + z];
            }
        }
    }

    let mut shifts = 0;
    let mut slices = Vec::with_capacity(levels.len());
    for &d in levels.levels() {
        let mut shifted = Vec::with_capacity(a * a);
        for u in 0..a {
            for v in 0..a {
                let (dh, dw) = compute_view_offset(u, v, center, center, d);
                let view = &views[u * a + v];
                if dh == 0 && dw == 0 {
                    shifted.push(view.clone());
                    continue;
                }
                shifts += 1;
                let moved: Vec<T> = view
                    .chunks_exact(h * w)
                    .flat_map(|p| shift_view(p, h, w, dh, dw))
                    .collect();
                shifted.push(moved);
            }
        }
        let mut macpi = vec![T::zero(); b * c * rows * cols];
        for (idx, view) in shifted.iter().enumerate() {
            let (u, v) = (idx / a, idx % a);
            for plane in 0..b * c {
                for hh in 0..h {
                    for ww in 0..w {
                        macpi[plane * rows * cols + (a * hh + u) * cols + a * ww + v] =
                            view[plane * h * w + hh * w + ww];
                    }
                }
            }
        }
        let macpi = Tensor::from_parts(vec![b, c, rows, cols], macpi);
        slices.push(apply_extractor(&afe, &macpi, weight, bias)?);
    }
    Ok(ShiftAndConcat {
        volume: stack_levels(levels, &slices)?,
        shifts,
    })
}
