//! Planar interleaved float images and their file formats.
//!
//! PNGs are 8-bit RGB with values treated as linear (no gamma transform).
//! Raw dumps are a 12-byte header (`width`, `height`, `channels` as
//! little-endian u32) followed by little-endian f32 samples.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Image<T = f32> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![T::zero(); width * height * channels],
        }
    }

    pub fn filled(width: usize, height: usize, value: &[T]) -> Self {
        let channels = value.len();
        let mut data = Vec::with_capacity(width * height * channels);
        for _ in 0..width * height {
            data.extend_from_slice(value);
        }
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "image data length {} != {width}x{height}x{channels}",
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

    #[inline]
    pub fn at(&self, x: usize, y: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize, c: usize) -> &mut T {
        &mut self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape<U>(&self, other: &Image<U>) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|v| U::of(v.to64())).collect(),
        }
    }

    /// Exact box-filter downsampling by an integer factor.
    pub fn downsample_area(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(Error::Shape(format!(
                "{}x{} not divisible by {factor}",
                self.width, self.height
            )));
        }
        let (w, h, c) = (self.width / factor, self.height / factor, self.channels);
        let mut out = Self::new(w, h, c);
        let norm = T::of(1.0 / (factor * factor) as f64);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let mut acc = T::zero();
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += self.at(x * factor + dx, y * factor + dy, ch);
                        }
                    }
                    *out.at_mut(x, y, ch) = acc * norm;
                }
            }
        }
        Ok(out)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    *out.at_mut(x, y, c) = self.at(self.width - 1 - x, y, c);
                }
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    *out.at_mut(x, y, c) = self.at(x, self.height - 1 - y, c);
                }
            }
        }
        out
    }
}

impl Image<f32> {
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let buf = self.to_rgb8()?;
        image::save_buffer(
            path,
            &buf,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Image(e.to_string()))
    }

    pub fn to_rgb8(&self) -> Result<Vec<u8>> {
        let rgb: Vec<u8> = match self.channels {
            3 => self.data.iter().map(|&v| quantize(v)).collect(),
            1 => self.data.iter().flat_map(|&v| [quantize(v); 3]).collect(),
            c => return Err(Error::Image(format!("cannot encode {c}-channel image"))),
        };
        Ok(rgb)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
        Self::from_data(w as usize, h as usize, 3, data)
    }

    pub fn write_raw<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_u32::<LittleEndian>(self.width as u32)?;
        w.write_u32::<LittleEndian>(self.height as u32)?;
        w.write_u32::<LittleEndian>(self.channels as u32)?;
        for &v in &self.data {
            w.write_f32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn read_raw<R: Read>(r: &mut R) -> Result<Self> {
        let w = r.read_u32::<LittleEndian>()? as usize;
        let h = r.read_u32::<LittleEndian>()? as usize;
        let c = r.read_u32::<LittleEndian>()? as usize;
        let mut data = vec![0f32; w * h * c];
        r.read_f32_into::<LittleEndian>(&mut data)?;
        Self::from_data(w, h, c, data)
    }

    pub fn save_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_raw(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load_raw(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_raw(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
