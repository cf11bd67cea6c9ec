//! Image fidelity metrics.

use crate::imaging::Image;

pub const PSNR_CAP: f64 = 100.0;

pub fn mse(a: &Image<f32>, b: &Image<f32>) -> f64 {
    let n = a.data.len().max(1) as f64;
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
        .sum::<f64>()
        / n
}

/// `10·log10(1/MSE)` for images in `[0, 1]`, capped at 100 dB.
pub fn psnr(a: &Image<f32>, b: &Image<f32>) -> f64 {
    let m = mse(a, b);
    if m < 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    }
}

const WIN: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn window_1d() -> [f64; WIN] {
    let mut w = [0.0; WIN];
    let r = (WIN / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    w
}

/// Mean SSIM over pixels and channels with an 11×11 Gaussian window
/// (σ = 1.5). Near the border the window is truncated to the image and
/// renormalized, so every pixel contributes.
pub fn ssim(a: &Image<f32>, b: &Image<f32>) -> f64 {
    let w1 = window_1d();
    let r = (WIN / 2) as isize;
    let (w, h, ch) = (a.width as isize, a.height as isize, a.channels);
    let mut total = 0.0;
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                let (mut sw, mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -r..=r {
                    let yy_ = y + dy;
                    if yy_ < 0 || yy_ >= h {
                        continue;
                    }
                    for dx in -r..=r {
                        let xx_ = x + dx;
                        if xx_ < 0 || xx_ >= w {
                            continue;
                        }
                        let k = w1[(dy + r) as usize] * w1[(dx + r) as usize];
                        let p = a.at(xx_ as usize, yy_ as usize, c) as f64;
                        let q = b.at(xx_ as usize, yy_ as usize, c) as f64;
                        sw += k;
                        mx += k * p;
                        my += k * q;
                        xx += k * p * p;
                        yy += k * q * q;
                        xy += k * p * q;
                    }
                }
                let (mx, my) = (mx / sw, my / sw);
                let vx = xx / sw - mx * mx;
                let vy = yy / sw - my * my;
                let cxy = xy / sw - mx * my;
                total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2))
                    / ((mx * mx + my * my + C1) * (vx + vy + C2));
            }
        }
    }
    total / (a.data.len().max(1)) as f64
}
