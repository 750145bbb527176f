//! Brute-force reference implementations used by the integration tests.
//! Nothing here calls into the library's convolution or layout code.
#![allow(dead_code)]

use distg::{Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random<T: Element>(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-1.0..1.0)))
}

/// Direct six-deep loop cross-correlation with zero padding, accumulated in
/// `f64`.
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: [usize; 2],
    dilation: [usize; 2],
    pad_lo: [usize; 2],
    pad_hi: [usize; 2],
) -> Tensor<T> {
    let (n, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let oh = (h + pad_lo[0] + pad_hi[0] - dilation[0] * (kh - 1) - 1) / stride[0] + 1;
    let ow = (wd + pad_lo[1] + pad_hi[1] - dilation[1] * (kw - 1) - 1) / stride[1] + 1;
    Tensor::from_fn(&[n, o, oh, ow], |i| {
        let (bn, oc, y, xx) = (i[0], i[1], i[2], i[3]);
        let mut acc = b.map_or(0.0, |b| b.get(&[oc]).as_f64());
        for ic in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (y * stride[0] + ky * dilation[0]) as i64 - pad_lo[0] as i64;
                    let ix = (xx * stride[1] + kx * dilation[1]) as i64 - pad_lo[1] as i64;
                    if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                        continue;
                    }
                    acc += w.get(&[oc, ic, ky, kx]).as_f64() * x.get(&[bn, ic, iy as usize, ix as usize]).as_f64();
                }
            }
        }
        T::of(acc)
    })
}

/// Direct 3D cross-correlation, symmetric padding.
pub fn naive_conv3d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: [usize; 3],
    dilation: [usize; 3],
    pad: [usize; 3],
) -> Tensor<T> {
    let s = x.shape();
    let (n, c, ext) = (s[0], s[1], [s[2], s[3], s[4]]);
    let (o, k) = (w.shape()[0], [w.shape()[2], w.shape()[3], w.shape()[4]]);
    let out: Vec<usize> = (0..3)
        .map(|a| (ext[a] + 2 * pad[a] - dilation[a] * (k[a] - 1) - 1) / stride[a] + 1)
        .collect();
    Tensor::from_fn(&[n, o, out[0], out[1], out[2]], |i| {
        let mut acc = b.map_or(0.0, |b| b.get(&[i[1]]).as_f64());
        for ic in 0..c {
            for k0 in 0..k[0] {
                for k1 in 0..k[1] {
                    for k2 in 0..k[2] {
                        let p = [
                            (i[2] * stride[0] + k0 * dilation[0]) as i64 - pad[0] as i64,
                            (i[3] * stride[1] + k1 * dilation[1]) as i64 - pad[1] as i64,
                            (i[4] * stride[2] + k2 * dilation[2]) as i64 - pad[2] as i64,
                        ];
                        if (0..3).any(|a| p[a] < 0 || p[a] >= ext[a] as i64) {
                            continue;
                        }
                        let xi = [i[0], ic, p[0] as usize, p[1] as usize, p[2] as usize];
                        acc += w.get(&[i[1], ic, k0, k1, k2]).as_f64() * x.get(&xi).as_f64();
                    }
                }
            }
        }
        T::of(acc)
    })
}

/// Light-field sample `L(u, v, h, w)` of channel `c` read from a MacPI
/// tensor `[N, C, A·H, A·W]`; zero outside the spatial extent.
fn mac_at<T: Element>(x: &Tensor<T>, a: usize, n: usize, c: usize, u: usize, v: usize, h: i64, w: i64) -> f64 {
    let (hh, ww) = ((x.shape()[2] / a) as i64, (x.shape()[3] / a) as i64);
    if h < 0 || w < 0 || h >= hh || w >= ww {
        return 0.0;
    }
    x.get(&[n, c, a * h as usize + u, a * w as usize + v]).as_f64()
}

/// Each view gets its own 3×3 same-padded convolution; results are tiled
/// back into a MacPI.
pub fn sfe_per_view<T: Element>(x: &Tensor<T>, a: usize, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let (hh, ww) = (x.shape()[2] / a, x.shape()[3] / a);
    let o = w.shape()[0];
    let mut out = Tensor::zeros(&[n, o, a * hh, a * ww]);
    for bn in 0..n {
        for u in 0..a {
            for v in 0..a {
                let view = Tensor::from_fn(&[1, c, hh, ww], |i| {
                    T::of(mac_at(x, a, bn, i[1], u, v, i[2] as i64, i[3] as i64))
                });
                let y = naive_conv2d(&view, w, b, [1, 1], [1, 1], [1, 1], [1, 1]);
                for oc in 0..o {
                    for h in 0..hh {
                        for wi in 0..ww {
                            out.set(&[bn, oc, a * h + u, a * wi + v], y.get(&[0, oc, h, wi]));
                        }
                    }
                }
            }
        }
    }
    out
}

/// One dot product per macro-pixel: `out[h, w] = Σ W[o, c, u, v]·L(u, v, h, w)`.
pub fn afe_per_macropixel<T: Element>(x: &Tensor<T>, a: usize, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let (hh, ww) = (x.shape()[2] / a, x.shape()[3] / a);
    Tensor::from_fn(&[n, w.shape()[0], hh, ww], |i| {
        let mut acc = b.map_or(0.0, |b| b.get(&[i[1]]).as_f64());
        for ic in 0..c {
            for u in 0..a {
                for v in 0..a {
                    acc += w.get(&[i[1], ic, u, v]).as_f64() * mac_at(x, a, i[0], ic, u, v, i[2] as i64, i[3] as i64);
                }
            }
        }
        T::of(acc)
    })
}

/// Horizontal EPIs `E_{u,h}[v, w] = L(u, v, h, w)` convolved with the A×A
/// kernel `K[v, k] = W[o, c, 0, k·A + v]`, full along `v` and same-padded
/// along `w`. Output row `A·h + u`, column `w`.
pub fn efe_h_per_epi<T: Element>(x: &Tensor<T>, a: usize, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let (hh, ww) = (x.shape()[2] / a, x.shape()[3] / a);
    let centre = ((a - 1) / 2) as i64;
    Tensor::from_fn(&[n, w.shape()[0], a * hh, ww], |i| {
        let (u, h) = (i[2] % a, i[2] / a);
        let mut acc = b.map_or(0.0, |b| b.get(&[i[1]]).as_f64());
        for ic in 0..c {
            for v in 0..a {
                for k in 0..a {
                    let sw = i[3] as i64 + k as i64 - centre;
                    acc += w.get(&[i[1], ic, 0, k * a + v]).as_f64() * mac_at(x, a, i[0], ic, u, v, h as i64, sw);
                }
            }
        }
        T::of(acc)
    })
}

/// Vertical EPIs `E_{v,w}[u, h] = L(u, v, h, w)` with `K[u, k] =
/// W[o, c, k·A + u, 0]`. Output row `h`, column `A·w + v`.
pub fn efe_v_per_epi<T: Element>(x: &Tensor<T>, a: usize, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Tensor<T> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let (hh, ww) = (x.shape()[2] / a, x.shape()[3] / a);
    let centre = ((a - 1) / 2) as i64;
    Tensor::from_fn(&[n, w.shape()[0], hh, a * ww], |i| {
        let (v, wi) = (i[3] % a, i[3] / a);
        let mut acc = b.map_or(0.0, |b| b.get(&[i[1]]).as_f64());
        for ic in 0..c {
            for u in 0..a {
                for k in 0..a {
                    let sh = i[2] as i64 + k as i64 - centre;
                    acc += w.get(&[i[1], ic, k * a + u, 0]).as_f64() * mac_at(x, a, i[0], ic, u, v, sh, wi as i64);
                }
            }
        }
        T::of(acc)
    })
}

/// Cost volume `[N, D, O, H, W]` built by explicitly shifting every view by
/// `(d(c - u), d(c - v))` with zero fill and applying the angular kernel to
/// the aligned stack.
pub fn naive_shift_and_concat<T: Element>(
    x: &Tensor<T>,
    a: usize,
    levels: &[i64],
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Tensor<T> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let (hh, ww) = (x.shape()[2] / a, x.shape()[3] / a);
    let centre = ((a - 1) / 2) as i64;
    Tensor::from_fn(&[n, levels.len(), w.shape()[0], hh, ww], |i| {
        let d = levels[i[1]];
        let mut acc = b.map_or(0.0, |b| b.get(&[i[2]]).as_f64());
        for ic in 0..c {
            for u in 0..a {
                for v in 0..a {
                    let sh = i[3] as i64 + d * (centre - u as i64);
                    let sw = i[4] as i64 + d * (centre - v as i64);
                    acc += w.get(&[i[2], ic, u, v]).as_f64() * mac_at(x, a, i[0], ic, u, v, sh, sw);
                }
            }
        }
        T::of(acc)
    })
}

/// `out[c, h·r + dy, w·r + dx] = in[c·r² + dy·r + dx, h, w]`.
pub fn naive_pixel_shuffle<T: Element>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let s = x.shape();
    Tensor::from_fn(&[s[0], s[1] / (r * r), s[2] * r, s[3] * r], |i| {
        let (dy, dx) = (i[2] % r, i[3] % r);
        x.get(&[i[0], i[1] * r * r + dy * r + dx, i[2] / r, i[3] / r])
    })
}

pub fn max_abs_diff<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
        .fold(0.0, f64::max)
}

pub fn sorted_bits(values: &[f32]) -> Vec<u32> {
    let mut v: Vec<u32> = values.iter().map(|x| x.to_bits()).collect();
    v.sort_unstable();
    v
}

/// SSIM evaluated window by window with an explicit 2D Gaussian.
pub fn scalar_ssim(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let k = {
        let m = 11.min(h).min(w);
        if m % 2 == 0 {
            m - 1
        } else {
            m
        }
    };
    let r = (k / 2) as f64;
    let mut g = vec![0.0; k * k];
    for y in 0..k {
        for x in 0..k {
            g[y * k + x] = (-((y as f64 - r).powi(2) + (x as f64 - r).powi(2)) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0;
    for y0 in 0..=h - k {
        for x0 in 0..=w - k {
            let (mut ma, mut mb) = (0.0, 0.0);
            for y in 0..k {
                for x in 0..k {
                    let i = (y0 + y) * w + x0 + x;
                    ma += g[y * k + x] * a[i];
                    mb += g[y * k + x] * b[i];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for y in 0..k {
                for x in 0..k {
                    let i = (y0 + y) * w + x0 + x;
                    let (da, db) = (a[i] - ma, b[i] - mb);
                    va += g[y * k + x] * da * da;
                    vb += g[y * k + x] * db * db;
                    cov += g[y * k + x] * da * db;
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}
