//! 4D light-field containers and the SAI / MacPI / EPI layout algebra.
//!
//! A light field `L(u, v, h, w)` is stored row-major in `[u, v, h, w, c]`
//! order. The macro-pixel image (MacPI) tiles the `A×A` angular samples of
//! every spatial location into one block: `MacPI[A·h + u, A·w + v] = L(u, v, h, w)`.

mod augment;
mod resize;
pub mod synth;

pub use augment::{augment, invert_augment, AugmentOp};
pub use resize::{bicubic_resize, cubic_weight, Scale};

use crate::error::{bail, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LightField<T = f32> {
    ang_u: usize,
    ang_v: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Element> LightField<T> {
    pub fn new(
        ang_u: usize,
        ang_v: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<T>,
    ) -> Result<Self> {
        if ang_u == 0 || ang_v == 0 || height == 0 || width == 0 || channels == 0 {
            bail!(
                Shape,
                "light field extents must be positive, got {ang_u}x{ang_v}x{height}x{width}x{channels}"
            );
        }
        let expected = ang_u * ang_v * height * width * channels;
        if data.len() != expected {
            bail!(Shape, "expected {expected} samples, got {}", data.len());
        }
        Ok(Self {
            ang_u,
            ang_v,
            height,
            width,
            channels,
            data,
        })
    }

    /// Single-channel light field built from `f(u, v, h, w)`.
    pub fn from_fn(
        ang_u: usize,
        ang_v: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(ang_u * ang_v * height * width);
        for u in 0..ang_u {
            for v in 0..ang_v {
                for h in 0..height {
                    for w in 0..width {
                        data.push(f(u, v, h, w));
                    }
                }
            }
        }
        Self::new(ang_u, ang_v, height, width, 1, data).expect("extents checked by caller")
    }

    pub fn ang_u(&self) -> usize {
        self.ang_u
    }

    pub fn ang_v(&self) -> usize {
        self.ang_v
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Angular resolution `A` of a square light field.
    pub fn ang_res(&self) -> Result<usize> {
        if self.ang_u != self.ang_v {
            bail!(
                Layout,
                "operation needs a square angular grid, got {}x{}",
                self.ang_u,
                self.ang_v
            );
        }
        Ok(self.ang_u)
    }

    #[inline]
    pub fn index(&self, u: usize, v: usize, h: usize, w: usize, c: usize) -> usize {
        (((u * self.ang_v + v) * self.height + h) * self.width + w) * self.channels + c
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize, h: usize, w: usize) -> T {
        self.data[self.index(u, v, h, w, 0)]
    }

    #[inline]
    pub fn at_c(&self, u: usize, v: usize, h: usize, w: usize, c: usize) -> T {
        self.data[self.index(u, v, h, w, c)]
    }

    pub fn set(&mut self, u: usize, v: usize, h: usize, w: usize, c: usize, value: T) {
        let i = self.index(u, v, h, w, c);
        self.data[i] = value;
    }

    /// Sub-aperture image `(u, v)` as an `H×W×C` buffer.
    pub fn view(&self, u: usize, v: usize) -> &[T] {
        let n = self.height * self.width * self.channels;
        let start = (u * self.ang_v + v) * n;
        &self.data[start..start + n]
    }

    pub fn center_view(&self) -> &[T] {
        self.view(self.ang_u / 2, self.ang_v / 2)
    }

    pub fn cast<U: Element>(&self) -> LightField<U> {
        LightField {
            ang_u: self.ang_u,
            ang_v: self.ang_v,
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    /// Tiled SAI array of `U·H` rows by `V·W` columns (channels innermost).
    pub fn to_sai_grid(&self) -> (usize, usize, Vec<T>) {
        let (rows, cols) = (self.ang_u * self.height, self.ang_v * self.width);
        let c = self.channels;
        let mut out = vec![T::zero(); rows * cols * c];
        for u in 0..self.ang_u {
            for v in 0..self.ang_v {
                for h in 0..self.height {
                    let src = self.index(u, v, h, 0, 0);
                    let dst = ((u * self.height + h) * cols + v * self.width) * c;
                    out[dst..dst + self.width * c]
                        .copy_from_slice(&self.data[src..src + self.width * c]);
                }
            }
        }
        (rows, cols, out)
    }

    pub fn from_sai_grid(
        ang_u: usize,
        ang_v: usize,
        height: usize,
        width: usize,
        channels: usize,
        grid: &[T],
    ) -> Result<Self> {
        let cols = ang_v * width;
        if grid.len() != ang_u * height * cols * channels {
            bail!(
                Layout,
                "SAI grid of {} samples does not tile {ang_u}x{ang_v} views of {height}x{width}",
                grid.len()
            );
        }
        let mut lf = Self::new(
            ang_u,
            ang_v,
            height,
            width,
            channels,
            vec![T::zero(); grid.len()],
        )?;
        for u in 0..ang_u {
            for v in 0..ang_v {
                for h in 0..height {
                    let src = ((u * height + h) * cols + v * width) * channels;
                    let dst = lf.index(u, v, h, 0, 0);
                    lf.data[dst..dst + width * channels]
                        .copy_from_slice(&grid[src..src + width * channels]);
                }
            }
        }
        Ok(lf)
    }

    /// Channel-first tensor `[C, A·H, A·W]` in MacPI layout.
    pub fn to_macpi_tensor(&self) -> Result<Tensor<T>> {
        let mac = sai_to_macpi(self)?;
        let (rows, cols, c) = (mac.rows(), mac.cols(), mac.channels);
        Ok(Tensor::from_fn(&[c, rows, cols], |i| {
            mac.data[(i[1] * cols + i[2]) * c + i[0]]
        }))
    }

    /// Inverse of [`LightField::to_macpi_tensor`] for a `[C, A·H, A·W]` tensor.
    pub fn from_macpi_tensor(t: &Tensor<T>, ang_res: usize) -> Result<Self> {
        let &[c, rows, cols] = t.shape() else {
            bail!(Shape, "expected [C, AH, AW], got {:?}", t.shape());
        };
        let mut data = Vec::with_capacity(t.len());
        for r in 0..rows {
            for col in 0..cols {
                for ch in 0..c {
                    data.push(t.get(&[ch, r, col]));
                }
            }
        }
        let mac = MacPIImage::new(ang_res, rows, cols, c, data)?;
        macpi_to_sai(&mac)
    }

    /// Channel-first tensor `[C, A·H, A·W]` holding the tiled SAI array.
    pub fn to_sai_tensor(&self) -> Tensor<T> {
        let (rows, cols, grid) = self.to_sai_grid();
        let c = self.channels;
        Tensor::from_fn(&[c, rows, cols], |i| grid[(i[1] * cols + i[2]) * c + i[0]])
    }

    pub fn from_sai_tensor(t: &Tensor<T>, ang_u: usize, ang_v: usize) -> Result<Self> {
        let &[c, rows, cols] = t.shape() else {
            bail!(Shape, "expected [C, UH, VW], got {:?}", t.shape());
        };
        if rows % ang_u != 0 || cols % ang_v != 0 {
            bail!(
                Layout,
                "{rows}x{cols} SAI array is not divisible into {ang_u}x{ang_v} views"
            );
        }
        let mut grid = Vec::with_capacity(t.len());
        for r in 0..rows {
            for col in 0..cols {
                for ch in 0..c {
                    grid.push(t.get(&[ch, r, col]));
                }
            }
        }
        Self::from_sai_grid(ang_u, ang_v, rows / ang_u, cols / ang_v, c, &grid)
    }
}

/// 2D (+channel) image holding the macro-pixel layout of a square light field.
#[derive(Clone, Debug, PartialEq)]
pub struct MacPIImage<T = f32> {
    ang_res: usize,
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Element> MacPIImage<T> {
    pub fn new(
        ang_res: usize,
        rows: usize,
        cols: usize,
        channels: usize,
        data: Vec<T>,
    ) -> Result<Self> {
        if ang_res == 0 || rows == 0 || cols == 0 || channels == 0 {
            bail!(Shape, "MacPI extents must be positive");
        }
        if rows % ang_res != 0 || cols % ang_res != 0 {
            bail!(
                Layout,
                "{rows}x{cols} MacPI is not divisible by angular resolution {ang_res}"
            );
        }
        if data.len() != rows * cols * channels {
            bail!(
                Shape,
                "expected {} samples, got {}",
                rows * cols * channels,
                data.len()
            );
        }
        Ok(Self {
            ang_res,
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn ang_res(&self) -> usize {
        self.ang_res
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[(row * self.cols + col) * self.channels]
    }
}

pub fn sai_to_macpi<T: Element>(lf: &LightField<T>) -> Result<MacPIImage<T>> {
    let a = lf.ang_res()?;
    let (h_n, w_n, c) = (lf.height, lf.width, lf.channels);
    let (rows, cols) = (a * h_n, a * w_n);
    let mut data = vec![T::zero(); rows * cols * c];
    for u in 0..a {
        for v in 0..a {
            for h in 0..h_n {
                for w in 0..w_n {
                    let src = lf.index(u, v, h, w, 0);
                    let dst = ((a * h + u) * cols + a * w + v) * c;
                    data[dst..dst + c].copy_from_slice(&lf.data[src..src + c]);
                }
            }
        }
    }
    MacPIImage::new(a, rows, cols, c, data)
}

pub fn macpi_to_sai<T: Element>(mac: &MacPIImage<T>) -> Result<LightField<T>> {
    let a = mac.ang_res;
    let (h_n, w_n, c) = (mac.rows / a, mac.cols / a, mac.channels);
    let mut lf = LightField::new(a, a, h_n, w_n, c, vec![T::zero(); mac.data.len()])?;
    for u in 0..a {
        for v in 0..a {
            for h in 0..h_n {
                for w in 0..w_n {
                    let src = ((a * h + u) * mac.cols + a * w + v) * c;
                    let dst = lf.index(u, v, h, w, 0);
                    lf.data[dst..dst + c].copy_from_slice(&mac.data[src..src + c]);
                }
            }
        }
    }
    Ok(lf)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpiOrientation {
    /// `L(u, :, h, :)`, a `V×W` slice.
    Horizontal,
    /// `L(:, v, :, w)`, a `U×H` slice.
    Vertical,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpiSlice<T = f32> {
    pub orientation: EpiOrientation,
    /// `(u, h)` for horizontal slices, `(v, w)` for vertical ones.
    pub fixed: (usize, usize),
    pub rows: usize,
    pub cols: usize,
    /// Row-major, first channel only.
    pub data: Vec<T>,
}

impl<T: Element> EpiSlice<T> {
    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }
}

pub fn extract_epi<T: Element>(
    lf: &LightField<T>,
    orientation: EpiOrientation,
    fixed_angular: usize,
    fixed_spatial: usize,
) -> Result<EpiSlice<T>> {
    match orientation {
        EpiOrientation::Horizontal => {
            if fixed_angular >= lf.ang_u || fixed_spatial >= lf.height {
                bail!(
                    Index,
                    "horizontal EPI at (u={fixed_angular}, h={fixed_spatial}) outside {}x{}",
                    lf.ang_u,
                    lf.height
                );
            }
            let mut data = Vec::with_capacity(lf.ang_v * lf.width);
            for v in 0..lf.ang_v {
                for w in 0..lf.width {
                    data.push(lf.at(fixed_angular, v, fixed_spatial, w));
                }
            }
            Ok(EpiSlice {
                orientation,
                fixed: (fixed_angular, fixed_spatial),
                rows: lf.ang_v,
                cols: lf.width,
                data,
            })
        }
        EpiOrientation::Vertical => {
            if fixed_angular >= lf.ang_v || fixed_spatial >= lf.width {
                bail!(
                    Index,
                    "vertical EPI at (v={fixed_angular}, w={fixed_spatial}) outside {}x{}",
                    lf.ang_v,
                    lf.width
                );
            }
            let mut data = Vec::with_capacity(lf.ang_u * lf.height);
            for u in 0..lf.ang_u {
                for h in 0..lf.height {
                    data.push(lf.at(u, fixed_angular, h, fixed_spatial));
                }
            }
            Ok(EpiSlice {
                orientation,
                fixed: (fixed_angular, fixed_spatial),
                rows: lf.ang_u,
                cols: lf.height,
                data,
            })
        }
    }
}

/// Spatial sliding-window crops, applied identically to every view.
pub fn crop_patches<T: Element>(
    lf: &LightField<T>,
    size: usize,
    stride: usize,
) -> Result<Vec<LightField<T>>> {
    if size == 0 || stride == 0 {
        bail!(InvalidArgument, "patch size and stride must be positive");
    }
    if size > lf.height || size > lf.width {
        bail!(
            InvalidArgument,
            "patch size {size} exceeds spatial extent {}x{}",
            lf.height,
            lf.width
        );
    }
    let starts = |extent: usize| (0..=extent - size).step_by(stride).collect::<Vec<_>>();
    let c = lf.channels;
    let mut out = Vec::new();
    for &h0 in &starts(lf.height) {
        for &w0 in &starts(lf.width) {
            let mut data = Vec::with_capacity(lf.ang_u * lf.ang_v * size * size * c);
            for u in 0..lf.ang_u {
                for v in 0..lf.ang_v {
                    for h in h0..h0 + size {
                        let src = lf.index(u, v, h, w0, 0);
                        data.extend_from_slice(&lf.data[src..src + size * c]);
                    }
                }
            }
            out.push(LightField::new(lf.ang_u, lf.ang_v, size, size, c, data)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn macpi_of_two_by_two_views() {
        let lf = LightField::<f32>::from_fn(2, 2, 1, 1, |u, v, _, _| (10 * u + v) as f32);
        let mac = sai_to_macpi(&lf).unwrap();
        assert_eq!(mac.data(), &[0., 1., 10., 11.]);
        assert_eq!(macpi_to_sai(&mac).unwrap(), lf);
    }

    #[test]
    fn single_view_macpi_is_the_view() {
        let lf = LightField::<f32>::from_fn(1, 1, 3, 4, |_, _, h, w| (h * 4 + w) as f32);
        let mac = sai_to_macpi(&lf).unwrap();
        assert_eq!(mac.data(), lf.view(0, 0));
    }

    #[test]
    fn macro_pixel_holds_all_views_of_one_location() {
        let lf = LightField::<f32>::from_fn(3, 3, 4, 4, |u, v, h, w| {
            (1000 * u + 100 * v + 10 * h + w) as f32
        });
        let mac = sai_to_macpi(&lf).unwrap();
        for u in 0..3 {
            for v in 0..3 {
                assert_eq!(mac.at(u, v), lf.at(u, v, 0, 0));
            }
        }
    }

    #[test]
    fn layout_errors() {
        let lf = LightField::<f32>::from_fn(2, 3, 2, 2, |_, _, _, _| 0.0);
        assert!(matches!(sai_to_macpi(&lf), Err(crate::Error::Layout(_))));
        assert!(matches!(
            MacPIImage::<f32>::new(3, 4, 6, 1, vec![0.0; 24]),
            Err(crate::Error::Layout(_))
        ));
    }

    #[test]
    fn constant_lf_gives_constant_epi() {
        let lf = LightField::<f32>::from_fn(3, 3, 5, 6, |_, _, _, _| 0.25);
        let epi = extract_epi(&lf, EpiOrientation::Horizontal, 1, 2).unwrap();
        assert_eq!((epi.rows, epi.cols), (3, 6));
        assert!(epi.data.iter().all(|&x| x == 0.25));
        assert!(extract_epi(&lf, EpiOrientation::Vertical, 3, 0).is_err());
        assert!(extract_epi(&lf, EpiOrientation::Horizontal, 0, 5).is_err());
    }

    #[test]
    fn single_view_epi_is_an_image_row() {
        let lf = LightField::<f32>::from_fn(1, 1, 4, 5, |_, _, h, w| (h * 5 + w) as f32);
        let epi = extract_epi(&lf, EpiOrientation::Horizontal, 0, 2).unwrap();
        assert_eq!(epi.rows, 1);
        assert_eq!(epi.data, &lf.view(0, 0)[10..15]);
    }

    #[test]
    fn ramp_shifted_per_view_has_unit_slope_epi() {
        // view v sees the ramp shifted by one pixel per view
        let lf = LightField::<f32>::from_fn(1, 5, 1, 12, |_, v, _, w| (w + v) as f32);
        let epi = extract_epi(&lf, EpiOrientation::Horizontal, 0, 0).unwrap();
        for v in 0..5 {
            let expected: Vec<f32> = (0..12).map(|w| (w + v) as f32).collect();
            assert_eq!(&epi.data[v * 12..(v + 1) * 12], &expected[..]);
        }
        for v in 0..4 {
            for w in 0..11 {
                assert_eq!(epi.at(v + 1, w), epi.at(v, w + 1));
            }
        }
    }

    #[test]
    fn patch_grid_counts() {
        let lf = LightField::<f32>::from_fn(2, 2, 64, 64, |_, _, h, w| (h + w) as f32);
        assert_eq!(crop_patches(&lf, 32, 32).unwrap().len(), 4);
        assert_eq!(crop_patches(&lf, 32, 16).unwrap().len(), 9);
        let whole = crop_patches(&lf, 64, 7).unwrap();
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0], lf);
        assert!(crop_patches(&lf, 65, 1).is_err());
    }

    #[test]
    fn patches_cut_every_view_at_the_same_place() {
        let lf = LightField::<f32>::from_fn(2, 2, 8, 8, |u, v, h, w| {
            (1000 * u + 100 * v + 10 * h + w) as f32
        });
        let patches = crop_patches(&lf, 4, 4).unwrap();
        let p = &patches[3]; // h0 = 4, w0 = 4
        assert_eq!(p.at(1, 0, 2, 3), lf.at(1, 0, 6, 7));
    }

    #[test]
    fn tensor_views_round_trip() {
        let lf = LightField::<f64>::from_fn(3, 3, 2, 4, |u, v, h, w| {
            (u * 27 + v * 9 + h * 4 + w) as f64
        });
        let t = lf.to_macpi_tensor().unwrap();
        assert_eq!(t.shape(), &[1, 6, 12]);
        assert_eq!(t.get(&[0, 3 * 1 + 2, 3 * 3 + 1]), lf.at(2, 1, 1, 3));
        assert_eq!(LightField::from_macpi_tensor(&t, 3).unwrap(), lf);
        let s = lf.to_sai_tensor();
        assert_eq!(s.get(&[0, 2 * 2 + 1, 4 * 1 + 3]), lf.at(2, 1, 1, 3));
        assert_eq!(LightField::from_sai_tensor(&s, 3, 3).unwrap(), lf);
    }
}
