use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::motion::OcclusionMap;
use crate::tensor::{Real, Tensor};

/// 8-bit interleaved RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Rgb8 {
    /// Quantises a `[3, H, W]` image in `[0, 1]` by rounding; values
    /// outside the range clamp.
    pub fn from_tensor<T: Real>(img: &Tensor<T>) -> Result<Self> {
        let s = img.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::dim("rgb8", format!("expected [3,H,W], got {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        let mut data = vec![0u8; 3 * h * w];
        for c in 0..3 {
            for i in 0..h * w {
                let v = img.data()[c * h * w + i].f64();
                let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
                data[3 * i + c] = (v * 255.0).round() as u8;
            }
        }
        Ok(Rgb8 { width: w, height: h, data })
    }

    /// `[3, H, W]` with samples divided by 255.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let n = self.width * self.height;
        Tensor::from_fn(&[3, self.height, self.width], |i| {
            T::of(self.data[3 * (i % n) + i / n] as f64 / 255.0)
        })
    }
}

#[derive(Debug)]
enum Kind {
    Png,
    Ppm,
}

fn kind(path: &Path) -> Result<Kind> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(Kind::Png),
        Some("ppm") => Ok(Kind::Ppm),
        _ => Err(Error::Config(format!("{}: unsupported image extension (png or ppm)", path.display()))),
    }
}

fn encode(img: &Rgb8, color: ExtendedColorType, path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let (w, h) = (img.width as u32, img.height as u32);
    let r = match kind(path)? {
        Kind::Png => image::codecs::png::PngEncoder::new(&mut buf).write_image(&img.data, w, h, color),
        Kind::Ppm => {
            let sub = match color {
                ExtendedColorType::L8 => PnmSubtype::Graymap(SampleEncoding::Binary),
                _ => PnmSubtype::Pixmap(SampleEncoding::Binary),
            };
            PnmEncoder::new(&mut buf).with_subtype(sub).write_image(&img.data, w, h, color)
        }
    };
    r.map_err(|e| Error::format("image", e.to_string()))?;
    Ok(buf)
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let fmt = match kind(path)? {
        Kind::Png => ImageFormat::Png,
        Kind::Ppm => ImageFormat::Pnm,
    };
    let bytes = read_file(path)?;
    image::load(Cursor::new(bytes), fmt).map_err(|e| Error::format("image", format!("{}: {e}", path.display())))
}

/// Writes 8-bit RGB as PNG or binary PPM (P6), chosen by extension.
pub fn write_rgb8(img: &Rgb8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, &encode(img, ExtendedColorType::Rgb8, path)?)
}

pub fn read_rgb8(path: impl AsRef<Path>) -> Result<Rgb8> {
    let img = decode(path.as_ref())?.into_rgb8();
    Ok(Rgb8 {
        width: img.width() as usize,
        height: img.height() as usize,
        data: img.into_raw(),
    })
}

/// Writes a `[3, H, W]` image in `[0, 1]`.
pub fn write_image<T: Real>(img: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    write_rgb8(&Rgb8::from_tensor(img)?, path)
}

/// Reads an image as `[3, H, W]` in `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    Ok(read_rgb8(path)?.to_tensor())
}

/// Writes an occlusion map as 8-bit grayscale. Binary maps round-trip
/// exactly.
pub fn write_occlusion(occ: &OcclusionMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = Rgb8 {
        width: occ.width(),
        height: occ.height(),
        data: occ.data().iter().map(|&v| (v * 255.0).round() as u8).collect(),
    };
    write_atomic(path, &encode(&img, ExtendedColorType::L8, path)?)
}

pub fn read_occlusion(path: impl AsRef<Path>) -> Result<OcclusionMap> {
    let img = decode(path.as_ref())?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    OcclusionMap::from_vec(w, h, img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
}
