//! Small procedurally generated training batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::asr::corner_views;
use super::ssr::downsample_views;
use super::{macpi_batch, sai_batch, TrainBatch};
use crate::error::Result;
use crate::lightfield::synth::{plane_lf, smooth_texture};
use crate::lightfield::LightField;
use crate::tensor::{Element, Tensor};

const TEXTURE_CELL: usize = 3;

fn textured_plane<T: Element>(
    rng: &mut ChaCha8Rng,
    a: usize,
    h: usize,
    w: usize,
    d: i64,
) -> Result<LightField<T>> {
    let margin = d.unsigned_abs() as usize * (a - 1);
    let tex = smooth_texture(h + margin, w + margin, TEXTURE_CELL, rng)?;
    plane_lf(&tex, a, h, w, d)
}

/// Low-resolution MacPI inputs and high-resolution tiled-SAI targets for
/// `count` planes at random disparities in `-1..=1`. `h`, `w` are the
/// low-resolution view sizes.
pub fn ssr_batch<T: Element>(
    a: usize,
    h: usize,
    w: usize,
    upscale: usize,
    count: usize,
    seed: u64,
) -> Result<TrainBatch<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lr = Vec::with_capacity(count);
    let mut hr = Vec::with_capacity(count);
    for _ in 0..count {
        let d = rng.random_range(-1..=1);
        let full: LightField<T> = textured_plane(&mut rng, a, h * upscale, w * upscale, d)?;
        lr.push(downsample_views(&full, upscale)?);
        hr.push(full);
    }
    Ok(TrainBatch {
        input: macpi_batch(&lr)?,
        target: sai_batch(&hr)?,
    })
}

/// Corner-view MacPI inputs and dense tiled-SAI targets at `a_out×a_out`.
pub fn asr_batch<T: Element>(
    a_out: usize,
    h: usize,
    w: usize,
    count: usize,
    seed: u64,
) -> Result<TrainBatch<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sparse = Vec::with_capacity(count);
    let mut dense = Vec::with_capacity(count);
    for _ in 0..count {
        let d = rng.random_range(-1..=1);
        let full: LightField<T> = textured_plane(&mut rng, a_out, h, w, d)?;
        sparse.push(corner_views(&full)?);
        dense.push(full);
    }
    Ok(TrainBatch {
        input: macpi_batch(&sparse)?,
        target: sai_batch(&dense)?,
    })
}

/// One textured plane per entry of `disparities`, with `[N, H, W]` targets.
pub fn disp_batch<T: Element>(
    a: usize,
    h: usize,
    w: usize,
    disparities: &[i64],
    seed: u64,
) -> Result<TrainBatch<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lfs = disparities
        .iter()
        .map(|&d| textured_plane(&mut rng, a, h, w, d))
        .collect::<Result<Vec<LightField<T>>>>()?;
    let target = Tensor::from_fn(&[disparities.len(), h, w], |i| T::of(disparities[i[0]] as f64));
    Ok(TrainBatch {
        input: macpi_batch(&lfs)?,
        target,
    })
}
