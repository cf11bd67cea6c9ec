//! Differentiable tile-based Gaussian splatting.
//!
//! Forward: every primitive is projected with the EWA approximation
//! (`Σ' = J·W·Σ·Wᵀ·Jᵀ + dilation·I`), binned into square tiles by its
//! `cutoff_sigma` footprint, depth sorted per tile (primitive index breaks
//! ties) and alpha composited front to back until transmittance drops below
//! `transmittance_min`. Backward replays the same per-pixel sequence in
//! reverse and then chains the screen-space partials through the projection.

mod composite;
mod project;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::real::Real;
use crate::scene::{coeff_len, GaussianScene};

pub use composite::ForwardState;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderTarget {
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
}

impl RenderTarget {
    pub fn for_camera(cam: &Camera, background: [f64; 3]) -> Self {
        Self {
            width: cam.width as usize,
            height: cam.height as usize,
            background,
        }
    }

    fn check(&self, cam: &Camera) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("render target must be at least 1x1".into()));
        }
        if self.width != cam.width as usize || self.height != cam.height as usize {
            return Err(Error::Contract(format!(
                "target {}x{} does not match camera {}x{}",
                self.width, self.height, cam.width, cam.height
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Footprint radius in standard deviations of the projected covariance.
    pub cutoff_sigma: f64,
    /// Added to the projected covariance diagonal, in px².
    pub dilation: f64,
    pub transmittance_min: f64,
    pub alpha_max: f64,
    /// Camera-space depth below which primitives are culled.
    pub near: f64,
    /// Depth reported for uncovered pixels by [`render_depth`].
    pub far_depth: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            cutoff_sigma: 3.0,
            dilation: 0.3,
            transmittance_min: 1e-4,
            alpha_max: 0.99,
            near: 0.01,
            far_depth: 100.0,
        }
    }
}

/// Partial derivatives of a scalar loss with respect to every primitive
/// parameter. `sh` is flat with `coeff_len(degree)` entries per primitive.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGradients<T> {
    pub center: Vec<[T; 3]>,
    pub opacity: Vec<T>,
    pub rotation: Vec<[T; 4]>,
    pub scale: Vec<[T; 3]>,
    pub sh: Vec<T>,
    pub sh_len: usize,
}

impl<T: Real> SplatGradients<T> {
    pub fn zeros(n: usize, sh_len: usize) -> Self {
        Self {
            center: vec![[T::zero(); 3]; n],
            opacity: vec![T::zero(); n],
            rotation: vec![[T::zero(); 4]; n],
            scale: vec![[T::zero(); 3]; n],
            sh: vec![T::zero(); n * sh_len],
            sh_len,
        }
    }

    pub fn len(&self) -> usize {
        self.opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.center.iter().flatten()
            .chain(&self.opacity)
            .chain(self.rotation.iter().flatten())
            .chain(self.scale.iter().flatten())
            .chain(&self.sh)
            .all(|v| v.is_finite())
    }

    pub fn accumulate(&mut self, other: &Self) {
        for (a, b) in self.center.iter_mut().zip(&other.center) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.opacity.iter_mut().zip(&other.opacity) {
            *a += *b;
        }
        for (a, b) in self.rotation.iter_mut().zip(&other.rotation) {
            for k in 0..4 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.scale.iter_mut().zip(&other.scale) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
        for (a, b) in self.sh.iter_mut().zip(&other.sh) {
            *a += *b;
        }
    }
}

/// Forward pass keeping everything the backward pass needs.
pub fn render_forward<T: Real>(
    scene: &GaussianScene,
    cam: &Camera,
    target: &RenderTarget,
    cfg: &RasterConfig,
) -> Result<ForwardState<T>> {
    target.check(cam)?;
    Ok(composite::forward(scene, cam, target, cfg))
}

/// Render an RGB image with values in `[0, 1]`.
pub fn render<T: Real>(
    scene: &GaussianScene,
    cam: &Camera,
    target: &RenderTarget,
    cfg: &RasterConfig,
) -> Result<Image<T>> {
    Ok(render_forward::<T>(scene, cam, target, cfg)?.image)
}

/// Expected depth per pixel under the compositing weights; uncovered
/// transmittance is assigned `cfg.far_depth`.
pub fn render_depth<T: Real>(
    scene: &GaussianScene,
    cam: &Camera,
    target: &RenderTarget,
    cfg: &RasterConfig,
) -> Result<Image<T>> {
    Ok(render_forward::<T>(scene, cam, target, cfg)?.depth)
}

/// Gradients of a scalar loss given its gradient with respect to the image.
pub fn render_backward<T: Real>(
    scene: &GaussianScene,
    cam: &Camera,
    target: &RenderTarget,
    cfg: &RasterConfig,
    grad_image: &Image<T>,
) -> Result<SplatGradients<T>> {
    let state = render_forward::<T>(scene, cam, target, cfg)?;
    backward(&state, scene, cam, cfg, grad_image)
}

/// Backward pass against a stored forward state.
pub fn backward<T: Real>(
    state: &ForwardState<T>,
    scene: &GaussianScene,
    cam: &Camera,
    cfg: &RasterConfig,
    grad_image: &Image<T>,
) -> Result<SplatGradients<T>> {
    if !grad_image.same_shape(&state.image) {
        return Err(Error::Contract(format!(
            "image gradient is {}x{}x{}, forward produced {}x{}x{}",
            grad_image.width,
            grad_image.height,
            grad_image.channels,
            state.image.width,
            state.image.height,
            state.image.channels
        )));
    }
    if state.num_primitives() != scene.len() {
        return Err(Error::Contract(format!(
            "scene has {} primitives, forward pass saw {}",
            scene.len(),
            state.num_primitives()
        )));
    }
    let g2d = composite::backward_pixels(state, cfg, grad_image);
    let sh_len = coeff_len(scene.sh_degree());
    Ok(project::backward_all(scene, cam, cfg, &g2d, sh_len))
}

#[cfg(test)]
mod tests;
