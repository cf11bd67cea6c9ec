//! Gaussian shuffle split.
//!
//! Each primitive whose opacity exceeds the threshold is replaced by six
//! children displaced by `β·R·(e_k ⊙ s)` along `±x, ±y, ±z` of its principal
//! frame. Children keep the parent's rotation, opacity and appearance; the
//! scale along the displacement axis is multiplied by `scale_shrink`.
//! Primitives at or below the threshold pass through unchanged.

use crate::error::{Error, Result};
use crate::par;
use crate::scene::quat::rotation_of_unit;
use crate::scene::{GaussianPrimitive, GaussianScene};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyConfig {
    pub beta: f64,
    pub opacity_threshold: f64,
    pub scale_shrink: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            opacity_threshold: 0.5,
            scale_shrink: 0.25,
        }
    }
}

impl DensifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.scale_shrink > 0.0 && self.scale_shrink <= 1.0) {
            return Err(Error::Config(format!(
                "scale_shrink must lie in (0,1], got {}",
                self.scale_shrink
            )));
        }
        if !(0.0..=1.0).contains(&self.opacity_threshold) {
            return Err(Error::Config(format!(
                "opacity_threshold must lie in [0,1], got {}",
                self.opacity_threshold
            )));
        }
        Ok(())
    }
}

/// Child order within a split parent: +x, −x, +y, −y, +z, −z.
pub const SPLIT_DIRECTIONS: [(usize, f64); 6] = [
    (0, 1.0),
    (0, -1.0),
    (1, 1.0),
    (1, -1.0),
    (2, 1.0),
    (2, -1.0),
];

/// Densified scene plus, for every output primitive, the index of its source.
#[derive(Clone, Debug)]
pub struct Densified {
    pub scene: GaussianScene,
    pub parent_index: Vec<usize>,
}

pub fn split_primitive(p: &GaussianPrimitive, cfg: &DensifyConfig) -> Vec<GaussianPrimitive> {
    if p.opacity() <= cfg.opacity_threshold {
        return vec![p.clone()];
    }
    let r = rotation_of_unit(p.rotation());
    let s = p.scale();
    let mu = p.center();
    SPLIT_DIRECTIONS
        .iter()
        .map(|&(axis, sign)| {
            let step = cfg.beta * sign * s[axis];
            let center = [
                mu[0] + step * r[0][axis],
                mu[1] + step * r[1][axis],
                mu[2] + step * r[2][axis],
            ];
            let mut scale = s;
            scale[axis] *= cfg.scale_shrink;
            p.clone()
                .with_center(center)
                .with_scale(scale)
                .expect("shrunk scale stays positive")
        })
        .collect()
}

pub fn shuffle_split(scene: &GaussianScene, cfg: &DensifyConfig) -> Result<Densified> {
    cfg.validate()?;
    let groups = par::map_indexed(scene.len(), |i| split_primitive(&scene.primitives()[i], cfg));
    let total = groups.iter().map(Vec::len).sum();
    let mut prims = Vec::with_capacity(total);
    let mut parent_index = Vec::with_capacity(total);
    for (i, g) in groups.into_iter().enumerate() {
        parent_index.extend(std::iter::repeat_n(i, g.len()));
        prims.extend(g);
    }
    Ok(Densified {
        scene: GaussianScene::new(scene.sh_degree(), prims)?,
        parent_index,
    })
}

/// Expected output size for a scene under `cfg`.
pub fn split_count(scene: &GaussianScene, cfg: &DensifyConfig) -> usize {
    scene
        .primitives()
        .iter()
        .map(|p| if p.opacity() > cfg.opacity_threshold { 6 } else { 1 })
        .sum()
}
