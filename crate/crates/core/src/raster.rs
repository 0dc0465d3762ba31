//! Dense row-major rasters and the `.fmap` file format.
//!
//! A `.fmap` file is the magic `FMAP\0`, then little-endian `u32` width,
//! `u32` height, `u8` channels, `u8` dtype tag (0 = f32), then the row-major
//! interleaved little-endian `f32` payload. NaN marks undefined values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};

pub const FMAP_MAGIC: &[u8; 5] = b"FMAP\0";
pub const FMAP_DTYPE_F32: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        check_dims(width, height, channels)?;
        Ok(Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        })
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "raster {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel raster built from a function of `(row, col)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        check_dims(width, height, 1)?;
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Ok(Self {
            width,
            height,
            channels: 1,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn same_size(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn in_bounds(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[(row * self.width + col) * self.channels] = value;
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize, ch: usize) -> &mut f32 {
        &mut self.data[(row * self.width + col) * self.channels + ch]
    }

    /// One channel as a planar vector.
    pub fn plane(&self, ch: usize) -> Vec<f32> {
        self.data.iter().skip(ch).step_by(self.channels).copied().collect()
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Mean over channels.
    pub fn to_grayscale(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f32>() / self.channels as f32)
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn transpose(&self) -> Raster {
        let mut out = Raster {
            width: self.height,
            height: self.width,
            channels: self.channels,
            data: vec![0.0; self.data.len()],
        };
        for r in 0..self.height {
            for c in 0..self.width {
                for ch in 0..self.channels {
                    *out.at_mut(c, r, ch) = self.at(r, c, ch);
                }
            }
        }
        out
    }

    /// Bilinear sample at fractional `(row, col)`, coordinates clamped to the grid.
    pub fn bilinear(&self, row: f64, col: f64, ch: usize) -> f32 {
        let row = row.clamp(0.0, (self.height - 1) as f64);
        let col = col.clamp(0.0, (self.width - 1) as f64);
        let r0 = row.floor() as usize;
        let c0 = col.floor() as usize;
        let r1 = (r0 + 1).min(self.height - 1);
        let c1 = (c0 + 1).min(self.width - 1);
        let fr = (row - r0 as f64) as f32;
        let fc = (col - c0 as f64) as f32;
        let top = self.at(r0, c0, ch) * (1.0 - fc) + self.at(r0, c1, ch) * fc;
        let bottom = self.at(r1, c0, ch) * (1.0 - fc) + self.at(r1, c1, ch) * fc;
        top * (1.0 - fr) + bottom * fr
    }

    /// Bilinear resize using pixel-centre alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Result<Raster> {
        check_dims(width, height, self.channels)?;
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut out = Raster::new(width, height, self.channels)?;
        for r in 0..height {
            let src_r = (r as f64 + 0.5) * sy - 0.5;
            for c in 0..width {
                let src_c = (c as f64 + 0.5) * sx - 0.5;
                for ch in 0..self.channels {
                    *out.at_mut(r, c, ch) = self.bilinear(src_r, src_c, ch);
                }
            }
        }
        Ok(out)
    }

    pub fn write_fmap<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_fmap_bytes())?;
        Ok(())
    }

    pub fn to_fmap_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(15 + self.data.len() * 4);
        buf.extend_from_slice(FMAP_MAGIC);
        buf.extend_from_slice(&(self.width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.height as u32).to_le_bytes());
        buf.push(self.channels as u8);
        buf.push(FMAP_DTYPE_F32);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn read_fmap<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_fmap_bytes(&bytes)
    }

    pub fn from_fmap_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 15 {
            return Err(Error::format("fmap", "header: file shorter than 15 bytes"));
        }
        if &bytes[..5] != FMAP_MAGIC {
            return Err(Error::format("fmap", "magic: expected FMAP\\0"));
        }
        let width = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let channels = bytes[13] as usize;
        let dtype = bytes[14];
        if dtype != FMAP_DTYPE_F32 {
            return Err(Error::format("fmap", format!("dtype: unsupported tag {dtype}")));
        }
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::format(
                "fmap",
                format!("dimensions: {width}x{height}x{channels} must be non-zero"),
            ));
        }
        let payload = &bytes[15..];
        let expected = width * height * channels * 4;
        if payload.len() != expected {
            return Err(Error::format(
                "fmap",
                format!("payload: expected {expected} bytes, got {}", payload.len()),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn load_fmap(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref())?;
        Self::from_fmap_bytes(&bytes)
    }

    /// Loads an 8-bit grayscale or RGB PNG, scaled to [0, 1]. Alpha is dropped.
    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        Ok(Self::from_image(&img))
    }

    pub fn from_image(img: &DynamicImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let grayish = matches!(
            img,
            DynamicImage::ImageLuma8(_)
                | DynamicImage::ImageLumaA8(_)
                | DynamicImage::ImageLuma16(_)
                | DynamicImage::ImageLumaA16(_)
        );
        if grayish {
            let g = img.to_luma8();
            let data = g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            Raster {
                width: w,
                height: h,
                channels: 1,
                data,
            }
        } else {
            let rgb = img.to_rgb8();
            let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            Raster {
                width: w,
                height: h,
                channels: 3,
                data,
            }
        }
    }

    /// Encodes channel 0 (or RGB when 3 channels) as an 8-bit PNG, clamping to [0, 1].
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let quant = |v: f32| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let img = if self.channels == 3 {
            let raw: Vec<u8> = self.data.iter().map(|&v| quant(v)).collect();
            let buf: ImageBuffer<Rgb<u8>, _> =
                ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
                    .ok_or_else(|| Error::invalid("rgb buffer size"))?;
            DynamicImage::ImageRgb8(buf)
        } else {
            let raw: Vec<u8> = self.plane(0).into_iter().map(quant).collect();
            let buf: ImageBuffer<Luma<u8>, _> =
                ImageBuffer::from_raw(self.width as u32, self.height as u32, raw)
                    .ok_or_else(|| Error::invalid("gray buffer size"))?;
            DynamicImage::ImageLuma8(buf)
        };
        encode_png(&img)
    }
}

pub(crate) fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

fn check_dims(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::invalid(format!(
            "raster dimensions must be >= 1, got {width}x{height}"
        )));
    }
    if channels == 0 || channels > u8::MAX as usize {
        return Err(Error::invalid(format!("raster channels must be in 1..=255, got {channels}")));
    }
    Ok(())
}
