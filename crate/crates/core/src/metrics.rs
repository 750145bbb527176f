//! Image quality and disparity error metrics. All arithmetic is in `f64`.

use std::fmt;

use crate::error::{bail, Result};
use crate::lightfield::LightField;
use crate::tensor::{Element, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Thresholds used for BadPix by default.
pub const BADPIX_EPSILONS: [f64; 3] = [0.07, 0.03, 0.01];

fn image_dims<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize)> {
    if a.shape() != b.shape() {
        bail!(Shape, "image shapes differ: {:?} vs {:?}", a.shape(), b.shape());
    }
    match *a.shape() {
        [h, w] if h > 0 && w > 0 => Ok((h, w)),
        _ => bail!(Shape, "expected a non-empty [H, W] image, got {:?}", a.shape()),
    }
}

fn mean_squared_error<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    let n = a.len() as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let e = x.as_f64() - y.as_f64();
            e * e
        })
        .sum::<f64>()
        / n
}

/// Peak signal-to-noise ratio in dB. Identical inputs give `f64::INFINITY`.
pub fn psnr<T: Element>(a: &Tensor<T>, b: &Tensor<T>, max_val: f64) -> Result<f64> {
    image_dims(a, b)?;
    if max_val <= 0.0 {
        bail!(InvalidArgument, "max_val must be positive, got {max_val}");
    }
    let mse = mean_squared_error(a, b);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / mse).log10())
}

/// Normalised 1D Gaussian of odd length `size`.
fn gaussian(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a row-major `h×w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..n).map(|t| k[t] * img[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..n).map(|t| k[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    (out, oh, ow)
}

/// Window side used for an `h×w` image: 11, or the largest odd size that
/// fits when the image is smaller.
pub fn ssim_window(h: usize, w: usize) -> usize {
    let m = SSIM_WINDOW.min(h).min(w);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// Single-scale SSIM with an 11×11 Gaussian window (σ = 1.5) for data in
/// `[0, 1]`, averaged over every position where the window fits.
pub fn ssim<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let (h, w) = image_dims(a, b)?;
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let k = gaussian(ssim_window(h, w), SSIM_SIGMA);
    let x: Vec<f64> = a.data().iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = b.data().iter().map(|v| v.as_f64()).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(s, t)| s * t).collect::<Vec<_>>();
    let (mx, oh, ow) = filter_valid(&x, h, w, &k);
    let (my, ..) = filter_valid(&y, h, w, &k);
    let (mxx, ..) = filter_valid(&prod(&x, &x), h, w, &k);
    let (myy, ..) = filter_valid(&prod(&y, &y), h, w, &k);
    let (mxy, ..) = filter_valid(&prod(&x, &y), h, w, &k);
    let total: f64 = (0..oh * ow)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / (oh * ow) as f64)
}

/// Percentage of pixels whose absolute error exceeds `eps`.
pub fn badpix<T: Element>(est: &Tensor<T>, gt: &Tensor<T>, eps: f64) -> Result<f64> {
    image_dims(est, gt)?;
    let bad = est
        .data()
        .iter()
        .zip(gt.data())
        .filter(|(e, g)| (e.as_f64() - g.as_f64()).abs() > eps)
        .count();
    Ok(100.0 * bad as f64 / est.len() as f64)
}

/// Mean squared error multiplied by 100.
pub fn mse100<T: Element>(est: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    image_dims(est, gt)?;
    Ok(100.0 * mean_squared_error(est, gt))
}

/// Mean absolute error.
pub fn mae<T: Element>(est: &Tensor<T>, gt: &Tensor<T>) -> Result<f64> {
    image_dims(est, gt)?;
    let s: f64 = est
        .data()
        .iter()
        .zip(gt.data())
        .map(|(e, g)| (e.as_f64() - g.as_f64()).abs())
        .sum();
    Ok(s / est.len() as f64)
}

/// Mean of the finite entries and the number of infinite ones left out.
pub fn mean_finite(values: &[f64]) -> (f64, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let skipped = values.len() - finite.len();
    if finite.is_empty() {
        return (f64::INFINITY, skipped);
    }
    (finite.iter().sum::<f64>() / finite.len() as f64, skipped)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    /// dB; infinite when every compared pair was identical.
    pub psnr: f64,
    /// Number of identical pairs excluded from the PSNR average.
    pub psnr_excluded: usize,
    pub ssim: f64,
    pub mse100: f64,
    /// `(ε, percentage)` pairs.
    pub badpix: Vec<(f64, f64)>,
}

impl MetricReport {
    pub fn for_images<T: Element>(est: &Tensor<T>, gt: &Tensor<T>, eps: &[f64]) -> Result<Self> {
        let p = psnr(est, gt, 1.0)?;
        Ok(Self {
            psnr: p,
            psnr_excluded: usize::from(p.is_infinite()),
            ssim: ssim(est, gt)?,
            mse100: mse100(est, gt)?,
            badpix: eps.iter().map(|&e| Ok((e, badpix(est, gt, e)?))).collect::<Result<_>>()?,
        })
    }

    /// PSNR and SSIM averaged over views (each view scored separately),
    /// MSE×100 and BadPix over all pixels of all views.
    pub fn for_light_fields<T: Element>(est: &LightField<T>, gt: &LightField<T>, eps: &[f64]) -> Result<Self> {
        if est.channels() != 1 || gt.channels() != 1 {
            bail!(InvalidArgument, "metrics take grayscale light fields");
        }
        let dims = |lf: &LightField<T>| (lf.ang_u(), lf.ang_v(), lf.height(), lf.width());
        if dims(est) != dims(gt) {
            bail!(Shape, "light field sizes differ: {:?} vs {:?}", dims(est), dims(gt));
        }
        let (u, v, h, w) = dims(est);
        let view = |lf: &LightField<T>, i: usize, j: usize| Tensor::new(vec![h, w], lf.view(i, j).to_vec());
        let mut psnrs = Vec::with_capacity(u * v);
        let mut ssims = Vec::with_capacity(u * v);
        for i in 0..u {
            for j in 0..v {
                let (e, g) = (view(est, i, j)?, view(gt, i, j)?);
                psnrs.push(psnr(&e, &g, 1.0)?);
                ssims.push(ssim(&e, &g)?);
            }
        }
        let (psnr, psnr_excluded) = mean_finite(&psnrs);
        let all_est = Tensor::new(vec![u * v * h, w], est.data().to_vec())?;
        let all_gt = Tensor::new(vec![u * v * h, w], gt.data().to_vec())?;
        Ok(Self {
            psnr,
            psnr_excluded,
            ssim: ssims.iter().sum::<f64>() / ssims.len() as f64,
            mse100: mse100(&all_est, &all_gt)?,
            badpix: eps
                .iter()
                .map(|&e| Ok((e, badpix(&all_est, &all_gt, e)?)))
                .collect::<Result<_>>()?,
        })
    }
}

/// `inf` for infinite values, otherwise fixed precision.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "psnr={}", format_db(self.psnr))?;
        writeln!(f, "ssim={:.6}", self.ssim)?;
        writeln!(f, "mse100={:.6}", self.mse100)?;
        for (e, p) in &self.badpix {
            writeln!(f, "badpix_{e}={p:.6}")?;
        }
        Ok(())
    }
}
