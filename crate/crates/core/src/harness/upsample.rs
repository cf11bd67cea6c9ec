//! Separable image resampling.

use crate::error::{Error, Result};
use crate::imaging::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Upsampler {
    Nearest,
    Bilinear,
    Bicubic,
}

impl Upsampler {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            "bicubic" => Ok(Self::Bicubic),
            _ => Err(Error::Config(format!(
                "unknown upsampling method {s:?} (nearest, bilinear, bicubic)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Nearest => "nearest",
            Self::Bilinear => "bilinear",
            Self::Bicubic => "bicubic",
        }
    }
}

/// Catmull-Rom cubic kernel (`a = −0.5`).
pub fn cubic_kernel(x: f64) -> f64 {
    let a = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        (a + 2.0) * x * x * x - (a + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        a * x * x * x - 5.0 * a * x * x + 8.0 * a * x - 4.0 * a
    } else {
        0.0
    }
}

fn lanczos3(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= 3.0 {
        return 0.0;
    }
    let px = std::f64::consts::PI * x;
    3.0 * px.sin() * (px / 3.0).sin() / (px * px)
}

/// Per output sample, source taps and weights along one axis.
type Taps = Vec<Vec<(usize, f64)>>;

fn upsample_taps(n: usize, factor: usize, method: Upsampler) -> Taps {
    let clamp = |i: i64| i.clamp(0, n as i64 - 1) as usize;
    (0..n * factor)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            match method {
                Upsampler::Nearest => vec![(o / factor, 1.0)],
                Upsampler::Bilinear => {
                    let i0 = src.floor();
                    let t = src - i0;
                    vec![(clamp(i0 as i64), 1.0 - t), (clamp(i0 as i64 + 1), t)]
                }
                Upsampler::Bicubic => {
                    let i0 = src.floor() as i64;
                    (i0 - 1..=i0 + 2)
                        .map(|i| (clamp(i), cubic_kernel(src - i as f64)))
                        .collect()
                }
            }
        })
        .collect()
}

fn separable(img: &Image<f32>, ow: usize, oh: usize, tx: &Taps, ty: &Taps) -> Image<f32> {
    let c = img.channels;
    let mut tmp = vec![0.0f64; ow * img.height * c];
    for y in 0..img.height {
        for (x, taps) in tx.iter().enumerate() {
            for ch in 0..c {
                tmp[(y * ow + x) * c + ch] = taps
                    .iter()
                    .map(|&(i, w)| w * img.at(i, y, ch) as f64)
                    .sum();
            }
        }
    }
    let mut out = Image::new(ow, oh, c);
    for (y, taps) in ty.iter().enumerate() {
        for x in 0..ow {
            for ch in 0..c {
                let v: f64 = taps.iter().map(|&(i, w)| w * tmp[(i * ow + x) * c + ch]).sum();
                *out.at_mut(x, y, ch) = v as f32;
            }
        }
    }
    out
}

/// Upsample by an integer factor. Source coordinates follow the
/// pixel-center convention `src = (dst + ½)/f − ½` with clamp-to-edge.
pub fn upsample(img: &Image<f32>, factor: usize, method: Upsampler) -> Result<Image<f32>> {
    if factor == 0 {
        return Err(Error::Config("upsampling factor must be at least 1".into()));
    }
    if img.width == 0 || img.height == 0 {
        return Err(Error::Shape("cannot upsample an empty image".into()));
    }
    let tx = upsample_taps(img.width, factor, method);
    let ty = upsample_taps(img.height, factor, method);
    Ok(separable(img, img.width * factor, img.height * factor, &tx, &ty))
}

fn lanczos_down_taps(n: usize, factor: usize) -> Taps {
    let f = factor as f64;
    (0..n / factor)
        .map(|o| {
            let center = (o as f64 + 0.5) * f - 0.5;
            let lo = (center - 3.0 * f).floor() as i64;
            let hi = (center + 3.0 * f).ceil() as i64;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .map(|i| {
                    let w = lanczos3((i as f64 - center) / f);
                    (i.clamp(0, n as i64 - 1) as usize, w)
                })
                .filter(|t| t.1 != 0.0)
                .collect();
            let s: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= s);
            taps
        })
        .collect()
}

/// Lanczos-3 downsampling by an integer factor, clamped to `[0, 1]`.
pub fn downsample_lanczos(img: &Image<f32>, factor: usize) -> Result<Image<f32>> {
    if factor == 0 || !img.width.is_multiple_of(factor) || !img.height.is_multiple_of(factor) {
        return Err(Error::Shape(format!(
            "{}x{} not divisible by {factor}",
            img.width, img.height
        )));
    }
    let tx = lanczos_down_taps(img.width, factor);
    let ty = lanczos_down_taps(img.height, factor);
    let mut out = separable(img, img.width / factor, img.height / factor, &tx, &ty);
    out.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}
