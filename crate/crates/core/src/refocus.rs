//! Shift-and-average refocusing with bilinear sub-pixel sampling.

use crate::error::{bail, Result};
use crate::lightfield::LightField;
use crate::tensor::{Element, Tensor};

/// Disparity to bring into focus.
#[derive(Clone, Debug)]
pub enum Focus {
    /// One fronto-parallel plane.
    Plane(f64),
    /// Per-pixel disparity `[H, W]` in centre-view coordinates.
    Map(Tensor<f64>),
}

impl Focus {
    fn at(&self, h: usize, w: usize) -> f64 {
        match self {
            Focus::Plane(d) => *d,
            Focus::Map(m) => m.get(&[h, w]),
        }
    }
}

/// Bilinear sample of a row-major view; `None` outside the view.
fn sample<T: Element>(view: &[T], height: usize, width: usize, y: f64, x: f64) -> Option<f64> {
    let (maxy, maxx) = ((height - 1) as f64, (width - 1) as f64);
    const SLACK: f64 = 1e-9;
    if y < -SLACK || x < -SLACK || y > maxy + SLACK || x > maxx + SLACK {
        return None;
    }
    let (y, x) = (y.clamp(0.0, maxy), x.clamp(0.0, maxx));
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(height - 1), (x0 + 1).min(width - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let px = |r: usize, c: usize| view[r * width + c].as_f64();
    let top = px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx;
    let bottom = px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

/// Averages every view after shifting it by `d·(centre - view index)` pixels,
/// where `d` is the focus disparity at the output pixel. Views whose sample
/// falls outside their frame are left out of that pixel's average.
pub fn refocus<T: Element>(lf: &LightField<T>, focus: &Focus) -> Result<Tensor<T>> {
    if lf.channels() != 1 {
        bail!(InvalidArgument, "refocus takes grayscale light fields");
    }
    let (au, av, h, w) = (lf.ang_u(), lf.ang_v(), lf.height(), lf.width());
    if let Focus::Map(m) = focus {
        if m.shape() != [h, w] {
            bail!(Shape, "focus map {:?} does not match {h}x{w} views", m.shape());
        }
    }
    let (uc, vc) = ((au as f64 - 1.0) / 2.0, (av as f64 - 1.0) / 2.0);
    let mut out = Tensor::zeros(&[h, w]);
    for y in 0..h {
        for x in 0..w {
            let d = focus.at(y, x);
            let (mut sum, mut count) = (0.0, 0usize);
            for u in 0..au {
                for v in 0..av {
                    let sy = y as f64 + d * (uc - u as f64);
                    let sx = x as f64 + d * (vc - v as f64);
                    if let Some(s) = sample(lf.view(u, v), h, w, sy, sx) {
                        sum += s;
                        count += 1;
                    }
                }
            }
            let value = if count == 0 { 0.0 } else { sum / count as f64 };
            out.set(&[y, x], T::of(value));
        }
    }
    Ok(out)
}

/// Sum of squared forward differences over the interior, a proxy for
/// high-frequency energy.
pub fn gradient_energy<T: Element>(img: &Tensor<T>, border: usize) -> Result<f64> {
    let [h, w] = *img.shape() else {
        bail!(Shape, "expected an [H, W] image, got {:?}", img.shape());
    };
    let mut e = 0.0;
    for y in border..h.saturating_sub(border + 1) {
        for x in border..w.saturating_sub(border + 1) {
            let c = img.get(&[y, x]).as_f64();
            let dy = img.get(&[y + 1, x]).as_f64() - c;
            let dx = img.get(&[y, x + 1]).as_f64() - c;
            e += dy * dy + dx * dx;
        }
    }
    Ok(e)
}
