//! Procedural light fields for tests, training and benchmarks.

use rand::Rng;

use super::{bicubic_resize, LightField, Scale};
use crate::error::{bail, Result};
use crate::tensor::{Element, Tensor};

/// Smooth random texture in `[0, 1]`: uniform noise on a coarse grid,
/// bicubically upsampled by `cell`, then min-max normalised.
pub fn smooth_texture<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    cell: usize,
    rng: &mut R,
) -> Result<Tensor<f64>> {
    if cell == 0 {
        bail!(InvalidArgument, "texture cell size must be positive");
    }
    let (cr, cc) = (rows.div_ceil(cell) + 1, cols.div_ceil(cell) + 1);
    let coarse = Tensor::from_fn(&[cr, cc], |_| rng.random::<f64>());
    let fine = bicubic_resize(&coarse, Scale::integer(cell)?)?;
    let (lo, hi) = fine
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = (hi - lo).max(1e-12);
    let fc = fine.shape()[1];
    Ok(Tensor::from_fn(&[rows, cols], |i| {
        (fine.data()[i[0] * fc + i[1]] - lo) / span
    }))
}

/// Fronto-parallel textured plane with uniform integer disparity `d`:
/// `L(u, v, h, w) = tex(h + d(u - u_c) + o, w + d(v - v_c) + o)` with the
/// origin `o` chosen so every sample lands inside the texture.
///
/// The texture needs `|d|·(A-1)` rows and columns beyond the view size.
pub fn plane_lf<T: Element>(
    texture: &Tensor<f64>,
    ang_res: usize,
    height: usize,
    width: usize,
    disparity: i64,
) -> Result<LightField<T>> {
    let c = (ang_res as i64 - 1) / 2;
    let offsets = [disparity * -c, disparity * (ang_res as i64 - 1 - c)];
    let (lo, hi) = (offsets[0].min(offsets[1]), offsets[0].max(offsets[1]));
    let &[tr, tc] = texture.shape() else {
        bail!(Shape, "texture must be 2D");
    };
    let span = (hi - lo) as usize;
    if tr < height + span || tc < width + span {
        bail!(
            InvalidArgument,
            "{tr}x{tc} texture too small for {height}x{width} views at disparity {disparity}"
        );
    }
    Ok(LightField::from_fn(ang_res, ang_res, height, width, |u, v, h, w| {
        let y = h as i64 + disparity * (u as i64 - c) - lo;
        let x = w as i64 + disparity * (v as i64 - c) - lo;
        T::of(texture.get(&[y as usize, x as usize]))
    }))
}

/// I.i.d. uniform `[0, 1)` single-channel light field.
pub fn random_lf<T: Element, R: Rng + ?Sized>(
    ang_u: usize,
    ang_v: usize,
    height: usize,
    width: usize,
    rng: &mut R,
) -> LightField<T> {
    LightField::from_fn(ang_u, ang_v, height, width, |_, _, _, _| T::of(rng.random::<f64>()))
}
