use super::LightField;
use crate::error::Result;
use crate::tensor::Element;

/// Joint spatial/angular augmentation. Spatial and angular axes are always
/// transformed together so the parallax structure survives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugmentOp {
    /// Reverses `w` and `v`.
    FlipHorizontal,
    /// Reverses `h` and `u`.
    FlipVertical,
    /// Counter-clockwise quarter turn of both the `(h, w)` and `(u, v)` planes.
    Rotate90,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 3] = [
        AugmentOp::FlipHorizontal,
        AugmentOp::FlipVertical,
        AugmentOp::Rotate90,
    ];

    /// Sequence of ops undoing `self`.
    pub fn inverse(self) -> Vec<AugmentOp> {
        match self {
            AugmentOp::Rotate90 => vec![AugmentOp::Rotate90; 3],
            flip => vec![flip],
        }
    }
}

pub fn augment<T: Element>(lf: &LightField<T>, op: AugmentOp) -> Result<LightField<T>> {
    let a = lf.ang_res()?;
    let (hn, wn, c) = (lf.height, lf.width, lf.channels);
    let (out_h, out_w) = match op {
        AugmentOp::Rotate90 => (wn, hn),
        _ => (hn, wn),
    };
    let mut data = Vec::with_capacity(lf.data.len());
    for u in 0..a {
        for v in 0..a {
            for h in 0..out_h {
                for w in 0..out_w {
                    let (su, sv, sh, sw) = match op {
                        AugmentOp::FlipHorizontal => (u, a - 1 - v, h, wn - 1 - w),
                        AugmentOp::FlipVertical => (a - 1 - u, v, hn - 1 - h, w),
                        AugmentOp::Rotate90 => (v, a - 1 - u, w, wn - 1 - h),
                    };
                    let src = lf.index(su, sv, sh, sw, 0);
                    data.extend_from_slice(&lf.data[src..src + c]);
                }
            }
        }
    }
    LightField::new(a, a, out_h, out_w, c, data)
}

pub fn invert_augment<T: Element>(lf: &LightField<T>, op: AugmentOp) -> Result<LightField<T>> {
    op.inverse()
        .into_iter()
        .try_fold(lf.clone(), |acc, step| augment(&acc, step))
}
