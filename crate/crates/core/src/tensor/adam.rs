use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2.5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

/// Adam with bias correction. Moment buffers mirror the parameter store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub(crate) m: Vec<Vec<f32>>,
    pub(crate) v: Vec<Vec<f32>>,
    pub(crate) step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, _, d)| vec![0.0; d.len()]).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. `grads[i]` is the gradient of parameter `i`.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Vec<f32>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != params.data(i).len() {
                return Err(Error::Shape(format!(
                    "adam: gradient {} has {} values, parameter {} has {}",
                    i,
                    g.len(),
                    params.name(i),
                    params.data(i).len()
                )));
            }
        }
        let c = &self.config;
        let mut scale = 1.0f64;
        if let Some(max) = c.clip_norm {
            let norm = grads
                .iter()
                .flatten()
                .map(|g| (*g as f64) * (*g as f64))
                .sum::<f64>()
                .sqrt();
            if norm > max {
                scale = max / norm;
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.data_mut(i);
            for k in 0..p.len() {
                let gk = g[k] as f64 * scale;
                let mk = c.beta1 * m[k] as f64 + (1.0 - c.beta1) * gk;
                let vk = c.beta2 * v[k] as f64 + (1.0 - c.beta2) * gk * gk;
                m[k] = mk as f32;
                v[k] = vk as f32;
                let upd = c.lr * (mk / bc1) / ((vk / bc2).sqrt() + c.eps);
                p[k] = (p[k] as f64 - upd) as f32;
            }
        }
        Ok(())
    }
}
