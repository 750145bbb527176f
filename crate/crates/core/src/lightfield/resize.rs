use crate::error::{bail, Result};
use crate::tensor::{Element, Tensor};

/// Positive rational resize factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scale {
    pub num: usize,
    pub den: usize,
}

impl Scale {
    pub fn new(num: usize, den: usize) -> Result<Self> {
        if num == 0 || den == 0 {
            bail!(InvalidArgument, "scale {num}/{den} must be positive");
        }
        Ok(Self { num, den })
    }

    pub fn integer(factor: usize) -> Result<Self> {
        Self::new(factor, 1)
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn apply(self, extent: usize) -> usize {
        extent * self.num / self.den
    }
}

const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel with `a = -0.5` (Catmull-Rom).
pub fn cubic_weight(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((KEYS_A + 2.0) * x - (KEYS_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((KEYS_A * x - 5.0 * KEYS_A) * x + 8.0 * KEYS_A) * x - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// Per output sample: four clamped source taps and their weights.
fn taps(in_len: usize, out_len: usize, scale: f64) -> Vec<([usize; 4], [f64; 4])> {
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) / scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let mut idx = [0usize; 4];
            let mut wts = [0f64; 4];
            for k in 0..4 {
                let p = base as i64 - 1 + k as i64;
                idx[k] = p.clamp(0, in_len as i64 - 1) as usize;
                wts[k] = cubic_weight(t - (k as f64 - 1.0));
            }
            (idx, wts)
        })
        .collect()
}

/// Separable bicubic resize of a 2D `[rows, cols]` image, edge-clamped,
/// pixel-centre aligned, no anti-alias prefilter.
pub fn bicubic_resize<T: Element>(img: &Tensor<T>, scale: Scale) -> Result<Tensor<T>> {
    let &[rows, cols] = img.shape() else {
        bail!(Shape, "bicubic_resize expects a 2D image, got {:?}", img.shape());
    };
    let (out_r, out_c) = (scale.apply(rows), scale.apply(cols));
    if out_r == 0 || out_c == 0 {
        bail!(
            InvalidArgument,
            "scale {}/{} collapses {rows}x{cols} to nothing",
            scale.num,
            scale.den
        );
    }
    let s = scale.as_f64();
    let col_taps = taps(cols, out_c, s);
    let row_taps = taps(rows, out_r, s);
    let src = img.data();

    let mut tmp = vec![0f64; rows * out_c];
    for r in 0..rows {
        for (oc, (idx, wts)) in col_taps.iter().enumerate() {
            tmp[r * out_c + oc] = (0..4).map(|k| wts[k] * src[r * cols + idx[k]].as_f64()).sum();
        }
    }
    let mut out = Vec::with_capacity(out_r * out_c);
    for (idx, wts) in &row_taps {
        for oc in 0..out_c {
            let v: f64 = (0..4).map(|k| wts[k] * tmp[idx[k] * out_c + oc]).sum();
            out.push(T::of(v));
        }
    }
    Tensor::new(vec![out_r, out_c], out)
}
