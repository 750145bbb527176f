//! Channel-to-space rearrangements and MacPI/SAI re-tiling on `[N, C, H, W]`
//! tensors. All of these are permutations of elements.

use crate::error::{bail, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    H,
    W,
}

fn dims4<T: Element>(x: &Tensor<T>) -> Result<[usize; 4]> {
    match *x.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => bail!(Shape, "expected [N, C, H, W], got {s:?}"),
    }
}

/// Builds an `[N, C', H', W']` tensor where `src(n, c', h', w')` names the
/// flat input offset of every output element.
fn gather<T: Element>(
    x: &Tensor<T>,
    out: [usize; 4],
    src: impl Fn(usize, usize, usize, usize) -> usize,
) -> Tensor<T> {
    let [n, c, h, w] = out;
    let data = x.data();
    let mut buf = Vec::with_capacity(n * c * h * w);
    for i in 0..n {
        for j in 0..c {
            for y in 0..h {
                for z in 0..w {
                    buf.push(data[src(i, j, y, z)]);
                }
            }
        }
    }
    Tensor::from_parts(out.to_vec(), buf)
}

/// `out[n, c, r·h + dy, r·w + dx] = in[n, c·r² + dy·r + dx, h, w]`.
pub fn pixel_shuffle_2d<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(x)?;
    if r == 0 || c % (r * r) != 0 {
        bail!(Shape, "{c} channels not divisible by r² = {}", r * r);
    }
    let co = c / (r * r);
    Ok(gather(x, [n, co, r * h, r * w], |i, j, y, z| {
        let ci = j * r * r + (y % r) * r + z % r;
        ((i * c + ci) * h + y / r) * w + z / r
    }))
}

pub fn pixel_unshuffle_2d<T: Element>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(x)?;
    if r == 0 || h % r != 0 || w % r != 0 {
        bail!(Shape, "{h}x{w} not divisible by {r}");
    }
    let (hi, wi) = (h / r, w / r);
    Ok(gather(x, [n, c * r * r, hi, wi], |i, j, y, z| {
        let (co, dy, dx) = (j / (r * r), (j % (r * r)) / r, j % r);
        ((i * c + co) * h + r * y + dy) * w + r * z + dx
    }))
}

/// Interleaves groups of `r` channels along one spatial axis:
/// `W`: `out[n, c, h, r·w + i] = in[n, c·r + i, h, w]`;
/// `H`: `out[n, c, r·h + i, w] = in[n, c·r + i, h, w]`.
pub fn pixel_shuffle_1d<T: Element>(x: &Tensor<T>, r: usize, axis: Axis) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(x)?;
    if r == 0 || c % r != 0 {
        bail!(Shape, "{c} channels not divisible by r = {r}");
    }
    let co = c / r;
    Ok(match axis {
        Axis::W => gather(x, [n, co, h, r * w], |i, j, y, z| {
            ((i * c + j * r + z % r) * h + y) * w + z / r
        }),
        Axis::H => gather(x, [n, co, r * h, w], |i, j, y, z| {
            ((i * c + j * r + y % r) * h + y / r) * w + z
        }),
    })
}

pub fn pixel_unshuffle_1d<T: Element>(x: &Tensor<T>, r: usize, axis: Axis) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(x)?;
    let extent = match axis {
        Axis::W => w,
        Axis::H => h,
    };
    if r == 0 || extent % r != 0 {
        bail!(Shape, "extent {extent} not divisible by {r}");
    }
    Ok(match axis {
        Axis::W => gather(x, [n, c * r, h, w / r], |i, j, y, z| {
            ((i * c + j / r) * h + y) * w + r * z + j % r
        }),
        Axis::H => gather(x, [n, c * r, h / r, w], |i, j, y, z| {
            ((i * c + j / r) * h + r * y + j % r) * w + z
        }),
    })
}

/// MacPI `[N, C, A·H, A·W]` to tiled SAI array: `out[u·H + h, v·W + w] = in[A·h + u, A·w + v]`.
pub fn macpi_to_sai_nchw<T: Element>(x: &Tensor<T>, a: usize) -> Result<Tensor<T>> {
    let [n, c, rows, cols] = dims4(x)?;
    if a == 0 || rows % a != 0 || cols % a != 0 {
        bail!(Layout, "{rows}x{cols} not divisible by angular resolution {a}");
    }
    let (hn, wn) = (rows / a, cols / a);
    Ok(gather(x, [n, c, rows, cols], |i, j, y, z| {
        let (u, h, v, w) = (y / hn, y % hn, z / wn, z % wn);
        ((i * c + j) * rows + a * h + u) * cols + a * w + v
    }))
}

/// Tiled SAI array to MacPI; inverse of [`macpi_to_sai_nchw`].
pub fn sai_to_macpi_nchw<T: Element>(x: &Tensor<T>, a: usize) -> Result<Tensor<T>> {
    let [n, c, rows, cols] = dims4(x)?;
    if a == 0 || rows % a != 0 || cols % a != 0 {
        bail!(Layout, "{rows}x{cols} not divisible by angular resolution {a}");
    }
    let (hn, wn) = (rows / a, cols / a);
    Ok(gather(x, [n, c, rows, cols], |i, j, y, z| {
        let (h, u, w, v) = (y / a, y % a, z / a, z % a);
        ((i * c + j) * rows + u * hn + h) * cols + v * wn + w
    }))
}

/// Swap the two spatial axes of `[N, C, H, W]`.
pub fn transpose_hw<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    dims4(x)?;
    x.permute(&[0, 1, 3, 2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: &[usize]) -> Tensor<f32> {
        let mut k = 0.0;
        Tensor::from_fn(shape, |_| {
            k += 1.0;
            k
        })
    }

    #[test]
    fn shuffle_2d_block_order() {
        let x = Tensor::<f32>::new(vec![1, 4, 1, 1], vec![0., 1., 2., 3.]).unwrap();
        let y = pixel_shuffle_2d(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[0., 1., 2., 3.]);
        assert_eq!(pixel_shuffle_2d(&x, 1).unwrap(), x);
        assert!(pixel_shuffle_2d(&x, 3).is_err());
    }

    #[test]
    fn shuffle_1d_row() {
        let x = Tensor::<f32>::new(vec![1, 2, 1, 1], vec![5., 7.]).unwrap();
        let y = pixel_shuffle_1d(&x, 2, Axis::W).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2]);
        assert_eq!(y.data(), &[5., 7.]);
        assert_eq!(pixel_shuffle_1d(&x, 1, Axis::H).unwrap(), x);
        assert!(pixel_shuffle_1d(&seq(&[1, 3, 2, 2]), 2, Axis::W).is_err());
    }

    #[test]
    fn inverses() {
        let x = seq(&[2, 18, 3, 4]);
        assert_eq!(pixel_unshuffle_2d(&pixel_shuffle_2d(&x, 3).unwrap(), 3).unwrap(), x);
        for axis in [Axis::H, Axis::W] {
            assert_eq!(
                pixel_unshuffle_1d(&pixel_shuffle_1d(&x, 6, axis).unwrap(), 6, axis).unwrap(),
                x
            );
        }
        let m = seq(&[2, 3, 6, 9]);
        assert_eq!(sai_to_macpi_nchw(&macpi_to_sai_nchw(&m, 3).unwrap(), 3).unwrap(), m);
    }

    #[test]
    fn w_then_h_equals_2d() {
        let x = seq(&[1, 8, 3, 2]);
        let two = pixel_shuffle_2d(&x, 2).unwrap();
        let wh = pixel_shuffle_1d(&pixel_shuffle_1d(&x, 2, Axis::W).unwrap(), 2, Axis::H).unwrap();
        assert_eq!(wh, two);
    }
}
