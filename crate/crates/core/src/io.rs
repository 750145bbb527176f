//! On-disk formats: grayscale PNG/PGM images of tiled light fields with a
//! text sidecar, and PFM disparity maps.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use crate::error::{bail, Error, Result};
use crate::lightfield::{macpi_to_sai, sai_to_macpi, LightField, MacPIImage};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BitDepth {
    #[default]
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// How the views are arranged in the image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GridLayout {
    /// `U·H × V·W`, one whole view per tile.
    #[default]
    SaiGrid,
    /// `H·A × W·A`, one macro-pixel per spatial position.
    MacPI,
}

impl fmt::Display for GridLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridLayout::SaiGrid => "sai",
            GridLayout::MacPI => "macpi",
        })
    }
}

impl FromStr for GridLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sai" => Ok(GridLayout::SaiGrid),
            "macpi" => Ok(GridLayout::MacPI),
            _ => bail!(Config, "unknown layout {s:?} (expected sai or macpi)"),
        }
    }
}

/// Contents of the sidecar that accompanies a light-field image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sidecar {
    pub ang_res: usize,
    pub height: usize,
    pub width: usize,
    pub layout: GridLayout,
}

impl Sidecar {
    pub fn parse(text: &str) -> Result<Self> {
        let (mut ang_res, mut height, mut width, mut layout) = (None, None, None, None);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::format("sidecar", format!("line {}: expected key=value", n + 1)));
            };
            let (k, v) = (k.trim(), v.trim());
            let num = || {
                v.parse::<usize>()
                    .map_err(|_| Error::format("sidecar", format!("line {}: {k} must be a positive integer", n + 1)))
            };
            match k {
                "ang_res" => ang_res = Some(num()?),
                "height" => height = Some(num()?),
                "width" => width = Some(num()?),
                "layout" => layout = Some(v.parse()?),
                _ => return Err(Error::format("sidecar", format!("line {}: unknown key {k:?}", n + 1))),
            }
        }
        let need = |v: Option<usize>, k: &str| match v {
            Some(x) if x > 0 => Ok(x),
            Some(_) => Err(Error::format("sidecar", format!("{k} must be positive"))),
            None => Err(Error::format("sidecar", format!("missing {k}"))),
        };
        Ok(Self {
            ang_res: need(ang_res, "ang_res")?,
            height: need(height, "height")?,
            width: need(width, "width")?,
            layout: layout.unwrap_or_default(),
        })
    }
}

impl fmt::Display for Sidecar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ang_res={}", self.ang_res)?;
        writeln!(f, "height={}", self.height)?;
        writeln!(f, "width={}", self.width)?;
        if self.layout != GridLayout::SaiGrid {
            writeln!(f, "layout={}", self.layout)?;
        }
        Ok(())
    }
}

/// `scene.png` → `scene.png.txt`.
pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut s = image.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

fn image_format(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "pgm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => bail!(InvalidArgument, "unsupported image extension {:?} (use .png or .pgm)", path),
    }
}

/// Grayscale image normalised to `[0, 1]`, as `(rows, cols, data, depth)`.
pub fn read_gray(path: &Path) -> Result<(usize, usize, Vec<f64>, BitDepth)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, image_format(path)?)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(b) => Ok((h, w, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(), BitDepth::Eight)),
        DynamicImage::ImageLuma16(b) => Ok((
            h,
            w,
            b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
            BitDepth::Sixteen,
        )),
        other => Err(Error::format(
            "image",
            format!("{}: expected 8- or 16-bit grayscale, got {:?}", path.display(), other.color()),
        )),
    }
}

/// Writes `[0, 1]` samples, clamped and rounded to the bit depth.
pub fn write_gray(path: &Path, rows: usize, cols: usize, data: &[f64], depth: BitDepth) -> Result<()> {
    if data.len() != rows * cols {
        bail!(Shape, "{} samples do not fill a {rows}x{cols} image", data.len());
    }
    let format = image_format(path)?;
    let q = |v: f64| (v.clamp(0.0, 1.0) * depth.max()).round();
    let (w, h) = (cols as u32, rows as u32);
    let img = match depth {
        BitDepth::Eight => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, data.iter().map(|&v| q(v) as u8).collect())
                .expect("buffer sized above"),
        ),
        BitDepth::Sixteen => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, data.iter().map(|&v| q(v) as u16).collect())
                .expect("buffer sized above"),
        ),
    };
    img.save_with_format(path, format)?;
    Ok(())
}

/// Reads an image and its sidecar into a single-channel light field.
pub fn load_light_field<T: Element>(path: &Path) -> Result<(LightField<T>, Sidecar, BitDepth)> {
    let side_path = sidecar_path(path);
    let text = fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side = Sidecar::parse(&text)?;
    let (rows, cols, data, depth) = read_gray(path)?;
    let (a, h, w) = (side.ang_res, side.height, side.width);
    if rows != a * h || cols != a * w {
        return Err(Error::format(
            "image",
            format!("{}: {rows}x{cols} pixels, sidecar implies {}x{}", path.display(), a * h, a * w),
        ));
    }
    let data: Vec<T> = data.into_iter().map(T::of).collect();
    let lf = match side.layout {
        GridLayout::SaiGrid => LightField::from_sai_grid(a, a, h, w, 1, &data)?,
        GridLayout::MacPI => macpi_to_sai(&MacPIImage::new(a, a * h, a * w, 1, data)?)?,
    };
    Ok((lf, side, depth))
}

/// Writes `lf` as an image in `layout` plus its sidecar.
pub fn save_light_field<T: Element>(path: &Path, lf: &LightField<T>, layout: GridLayout, depth: BitDepth) -> Result<()> {
    if lf.channels() != 1 {
        bail!(InvalidArgument, "only grayscale light fields can be saved");
    }
    let a = lf.ang_res()?;
    let (rows, cols, data) = match layout {
        GridLayout::SaiGrid => lf.to_sai_grid(),
        GridLayout::MacPI => {
            let m = sai_to_macpi(lf)?;
            (m.rows(), m.cols(), m.data().to_vec())
        }
    };
    let data: Vec<f64> = data.iter().map(|v| v.as_f64()).collect();
    write_gray(path, rows, cols, &data, depth)?;
    let side = Sidecar {
        ang_res: a,
        height: lf.height(),
        width: lf.width(),
        layout,
    };
    let side_path = sidecar_path(path);
    fs::write(&side_path, side.to_string()).map_err(|e| Error::io(&side_path, e))
}

/// Little-endian single-channel PFM (`Pf`, scale −1.0), rows stored bottom
/// to top.
pub fn encode_pfm<T: Element>(map: &Tensor<T>) -> Result<Vec<u8>> {
    let [h, w] = *map.shape() else {
        bail!(Shape, "PFM stores [H, W] maps, got {:?}", map.shape());
    };
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for row in (0..h).rev() {
        for v in &map.data()[row * w..(row + 1) * w] {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a single-channel PFM of either byte order.
pub fn decode_pfm<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let bad = |m: &str| Error::format("pfm", m.to_string());
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    match token()?.as_str() {
        "Pf" => {}
        "PF" => return Err(bad("colour PFM is not supported")),
        _ => return Err(bad("missing Pf magic")),
    }
    let w: usize = token()?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = token()?.parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = token()?.parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero"));
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != w * h * 4 {
        return Err(bad(&format!("expected {} data bytes, found {}", w * h * 4, body.len())));
    }
    let little = scale < 0.0;
    let mut data = vec![T::zero(); w * h];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (file_row, col) = (i / w, i % w);
        data[(h - 1 - file_row) * w + col] = T::of(v as f64);
    }
    Tensor::new(vec![h, w], data)
}

pub fn save_pfm<T: Element>(path: &Path, map: &Tensor<T>) -> Result<()> {
    fs::write(path, encode_pfm(map)?).map_err(|e| Error::io(path, e))
}

pub fn load_pfm<T: Element>(path: &Path) -> Result<Tensor<T>> {
    decode_pfm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
