//! Grayscale image and binary mask value types plus PNG IO.
//!
//! Intensities live in memory as `f32` in `[0, 1]` and on disk as 8-bit
//! grayscale. A value loaded from byte `b` is `b / 255`, which converts back
//! to `b` exactly, so load/save round trips are lossless.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};

use crate::error::{Error, Result};

/// Common surface of the two pixel grids so tiling works on both.
pub trait Raster: Sized {
    type Pixel: Copy + Default + PartialEq + Send + Sync;

    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn data(&self) -> &[Self::Pixel];
    /// Builds a raster from raw parts. Callers guarantee `data.len() == width * height`.
    fn from_parts(width: usize, height: usize, data: Vec<Self::Pixel>) -> Result<Self>;
}

/// Single-channel intensity grid, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Dimension(format!(
                "image {}x{} needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    /// Builds an image from 8-bit intensities.
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| f32::from(b) / 255.0).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Quantizes to 8-bit with round-to-nearest.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

impl Raster for ImageBuffer {
    type Pixel = f32;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn data(&self) -> &[f32] {
        &self.pixels
    }
    fn from_parts(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        ImageBuffer::new(width, height, data)
    }
}

/// Binary label grid, row-major; 0 is background, 1 is foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskBuffer {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl MaskBuffer {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Dimension(format!(
                "mask {}x{} needs {} labels, got {}",
                width,
                height,
                width * height,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidInput(format!("mask label {bad} is not binary")));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.labels[y * self.width + x] = u8::from(value);
    }

    pub fn count_foreground(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }

    /// Pixelwise OR with another mask of the same size.
    pub fn union_with(&mut self, other: &MaskBuffer) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::Dimension(format!(
                "cannot merge {}x{} mask into {}x{}",
                other.width, other.height, self.width, self.height
            )));
        }
        for (a, &b) in self.labels.iter_mut().zip(&other.labels) {
            *a |= b;
        }
        Ok(())
    }

    /// 0 ↦ 0, 1 ↦ 255.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.labels.iter().map(|&v| v * 255).collect()
    }
}

impl Raster for MaskBuffer {
    type Pixel = u8;

    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn data(&self) -> &[u8] {
        &self.labels
    }
    fn from_parts(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        MaskBuffer::new(width, height, data)
    }
}

fn decode(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    if !path.exists() {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "file does not exist".into(),
        });
    }
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    let img = reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageLumaA8(buf) => buf.pixels().map(|p| f32::from(p.0[0])).collect(),
        DynamicImage::ImageRgb8(buf) => buf
            .pixels()
            .map(|p| (f32::from(p.0[0]) + f32::from(p.0[1]) + f32::from(p.0[2])) / 3.0)
            .collect(),
        DynamicImage::ImageRgba8(buf) => buf
            .pixels()
            .map(|p| (f32::from(p.0[0]) + f32::from(p.0[1]) + f32::from(p.0[2])) / 3.0)
            .collect(),
        other => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                reason: format!("unsupported pixel format {:?}; only 8-bit rasters are accepted", other.color()),
            })
        }
    };
    Ok((w, h, pixels))
}

/// Loads an 8-bit raster as intensities `v / 255`. Color inputs are reduced by
/// channel mean; alpha is ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let (w, h, raw) = decode(path)?;
    ImageBuffer::new(w, h, raw.into_iter().map(|v| v / 255.0).collect())
}

/// Loads a mask; any value ≥ 128 is foreground.
pub fn load_mask(path: impl AsRef<Path>) -> Result<MaskBuffer> {
    let path = path.as_ref();
    let (w, h, raw) = decode(path)?;
    MaskBuffer::new(w, h, raw.into_iter().map(|v| u8::from(v >= 128.0)).collect())
}

fn write_gray(path: &Path, width: usize, height: usize, bytes: Vec<u8>) -> Result<()> {
    let buf = GrayImage::from_raw(width as u32, height as u32, bytes).ok_or_else(|| {
        Error::Encode {
            path: path.to_path_buf(),
            reason: "buffer size does not match dimensions".into(),
        }
    })?;
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Encode {
                path: path.to_path_buf(),
                reason: other.to_string(),
            },
        })
}

pub fn save_image(image: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    write_gray(path.as_ref(), image.width, image.height, image.to_bytes())
}

pub fn save_mask(mask: &MaskBuffer, path: impl AsRef<Path>) -> Result<()> {
    write_gray(path.as_ref(), mask.width, mask.height, mask.to_bytes())
}

/// Encodes a mask as in-memory PNG bytes.
pub fn encode_png_gray(width: usize, height: usize, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        encoder,
        bytes,
        width as u32,
        height as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| Error::Encode {
        path: "<memory>".into(),
        reason: e.to_string(),
    })?;
    Ok(out)
}

/// Encodes RGB8 pixels as in-memory PNG bytes.
pub fn encode_png_rgb(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        encoder,
        rgb,
        width as u32,
        height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::Encode {
        path: "<memory>".into(),
        reason: e.to_string(),
    })?;
    Ok(out)
}
