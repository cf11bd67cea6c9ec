//! Training loss: weighted MSE plus a multi-scale random-feature term.

use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::seed::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub mse: f64,
    pub perc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { mse: 1.0, perc: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub mse: f64,
    pub perc: f64,
}

const FEATURES: usize = 8;
const SCALES: usize = 3;
const TAPS: usize = 27;

/// Fixed random 3×3×3 filter bank applied at full, half and quarter
/// resolution. The term is the MSE between feature maps.
#[derive(Clone, Debug)]
pub struct FeatureLoss {
    filters: Vec<[f64; TAPS]>,
}

impl FeatureLoss {
    pub fn new(seed: u64) -> Self {
        let mut rng = stream_rng(seed, "loss/features");
        let norm = 1.0 / (TAPS as f64).sqrt();
        let filters = (0..FEATURES)
            .map(|_| {
                let mut f = [0.0; TAPS];
                for v in &mut f {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = z * norm;
                }
                f
            })
            .collect();
        Self { filters }
    }

    /// Feature-map MSE and its gradient with respect to `x`.
    pub fn value_and_grad(&self, x: &Image<f64>, y: &Image<f64>) -> (f64, Vec<f64>) {
        let diff: Vec<f64> = x.data.iter().zip(&y.data).map(|(a, b)| a - b).collect();
        let mut d = Image::from_data(x.width, x.height, x.channels, diff).expect("same shape");
        let mut grad = vec![0.0; x.data.len()];
        let mut total = 0.0;
        let mut used = 0;
        let mut factor = 1;
        for _ in 0..SCALES {
            if d.width < 3 || d.height < 3 || d.channels != 3 {
                break;
            }
            let (v, g) = self.level(&d);
            total += v;
            used += 1;
            // Spread the level gradient back over the full-resolution pixels.
            let norm = 1.0 / (factor * factor) as f64;
            for yy in 0..x.height {
                for xx in 0..x.width {
                    let (px, py) = (xx / factor, yy / factor);
                    if px >= d.width || py >= d.height {
                        continue;
                    }
                    for c in 0..3 {
                        grad[(yy * x.width + xx) * 3 + c] += g[(py * d.width + px) * 3 + c] * norm;
                    }
                }
            }
            if !d.width.is_multiple_of(2) || !d.height.is_multiple_of(2) {
                break;
            }
            d = d.downsample_area(2).expect("even size");
            factor *= 2;
        }
        if used == 0 {
            return (0.0, grad);
        }
        let s = 1.0 / used as f64;
        grad.iter_mut().for_each(|g| *g *= s);
        (total * s, grad)
    }

    fn level(&self, d: &Image<f64>) -> (f64, Vec<f64>) {
        let (w, h) = (d.width - 2, d.height - 2);
        let n = (w * h * FEATURES) as f64;
        let mut sum = 0.0;
        let mut grad = vec![0.0; d.data.len()];
        for y in 0..h {
            for x in 0..w {
                for f in &self.filters {
                    let mut r = 0.0;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let base = ((y + dy) * d.width + x + dx) * 3;
                            for c in 0..3 {
                                r += f[(dy * 3 + dx) * 3 + c] * d.data[base + c];
                            }
                        }
                    }
                    sum += r * r;
                    let g = 2.0 * r / n;
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let base = ((y + dy) * d.width + x + dx) * 3;
                            for c in 0..3 {
                                grad[base + c] += g * f[(dy * 3 + dx) * 3 + c];
                            }
                        }
                    }
                }
            }
        }
        (sum / n, grad)
    }
}

/// Loss terms and the gradient of the total with respect to `rendered`.
pub fn image_loss(
    rendered: &Image<f64>,
    target: &Image<f64>,
    weights: &LossWeights,
    features: &FeatureLoss,
) -> Result<(LossTerms, Image<f64>)> {
    if !rendered.same_shape(target) {
        return Err(Error::Shape(format!(
            "loss: rendered {}x{}x{} vs target {}x{}x{}",
            rendered.width,
            rendered.height,
            rendered.channels,
            target.width,
            target.height,
            target.channels
        )));
    }
    let n = rendered.data.len().max(1) as f64;
    let mut grad = Image::new(rendered.width, rendered.height, rendered.channels);
    let mut mse = 0.0;
    for ((g, a), b) in grad.data.iter_mut().zip(&rendered.data).zip(&target.data) {
        mse += (a - b) * (a - b);
        *g = weights.mse * 2.0 * (a - b) / n;
    }
    mse /= n;
    let mut perc = 0.0;
    if weights.perc != 0.0 {
        let (v, pg) = features.value_and_grad(rendered, target);
        perc = v;
        for (g, p) in grad.data.iter_mut().zip(pg) {
            *g += weights.perc * p;
        }
    }
    Ok((
        LossTerms {
            total: weights.mse * mse + weights.perc * perc,
            mse,
            perc,
        },
        grad,
    ))
}
