//! Gaussian primitives and scenes.

mod ply;
pub mod quat;
pub mod sh;

pub use ply::{load_scene, read_scene, save_scene, write_scene};
pub use quat::{quaternion_to_rotation, Mat3};
pub use sh::{coeff_len, evaluate_sh};

use crate::error::{Error, Result};

/// One anisotropic Gaussian.
///
/// Rotation is a `(w, x, y, z)` quaternion kept on the unit sphere, scale holds
/// raw positive lengths, and opacity lives in `[0, 1]`. The SH vector uses the
/// layout described in [`sh`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrimitive {
    center: [f64; 3],
    opacity: f64,
    rotation: [f64; 4],
    scale: [f64; 3],
    sh: Vec<f64>,
}

impl GaussianPrimitive {
    pub fn new(
        center: [f64; 3],
        opacity: f64,
        rotation: [f64; 4],
        scale: [f64; 3],
        sh: Vec<f64>,
    ) -> Result<Self> {
        if center.iter().chain(&scale).chain(&sh).any(|v| !v.is_finite())
            || !opacity.is_finite()
            || rotation.iter().any(|v| !v.is_finite())
        {
            return Err(Error::Invalid("non-finite primitive field".into()));
        }
        if !(0.0..=1.0).contains(&opacity) {
            return Err(Error::Invalid(format!("opacity {opacity} outside [0,1]")));
        }
        if scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::Invalid(format!("non-positive scale {scale:?}")));
        }
        Ok(Self {
            center,
            opacity,
            rotation: unit_rotation(rotation)?,
            scale,
            sh,
        })
    }

    pub fn center(&self) -> [f64; 3] {
        self.center
    }

    pub fn opacity(&self) -> f64 {
        self.opacity
    }

    pub fn rotation(&self) -> [f64; 4] {
        self.rotation
    }

    pub fn scale(&self) -> [f64; 3] {
        self.scale
    }

    pub fn sh(&self) -> &[f64] {
        &self.sh
    }

    pub fn with_center(mut self, center: [f64; 3]) -> Self {
        self.center = center;
        self
    }

    pub fn with_scale(mut self, scale: [f64; 3]) -> Result<Self> {
        if scale.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Invalid(format!("non-positive scale {scale:?}")));
        }
        self.scale = scale;
        Ok(self)
    }

    pub fn with_rotation(mut self, rotation: [f64; 4]) -> Result<Self> {
        self.rotation = unit_rotation(rotation)?;
        Ok(self)
    }

    pub fn with_opacity(mut self, opacity: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&opacity) {
            return Err(Error::Invalid(format!("opacity {opacity} outside [0,1]")));
        }
        self.opacity = opacity;
        Ok(self)
    }

    pub fn with_sh(mut self, sh: Vec<f64>) -> Self {
        self.sh = sh;
        self
    }
}

// Quaternions already unit to float32 precision are kept verbatim so that
// file round-trips stay byte-exact.
fn unit_rotation(q: [f64; 4]) -> Result<[f64; 4]> {
    let n2: f64 = q.iter().map(|v| v * v).sum();
    if (n2 - 1.0).abs() <= 4e-7 {
        Ok(q)
    } else {
        quat::normalize_quat(q)
    }
}

/// Ordered collection of primitives sharing one SH degree.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianScene {
    sh_degree: u8,
    primitives: Vec<GaussianPrimitive>,
}

impl GaussianScene {
    pub fn new(sh_degree: u8, primitives: Vec<GaussianPrimitive>) -> Result<Self> {
        if sh_degree > sh::MAX_SH_DEGREE {
            return Err(Error::Unsupported(format!("sh degree {sh_degree}")));
        }
        let want = coeff_len(sh_degree);
        if let Some((i, p)) = primitives
            .iter()
            .enumerate()
            .find(|(_, p)| p.sh.len() != want)
        {
            return Err(Error::Shape(format!(
                "primitive {i} has {} sh coefficients, scene degree {sh_degree} needs {want}",
                p.sh.len()
            )));
        }
        Ok(Self {
            sh_degree,
            primitives,
        })
    }

    pub fn empty(sh_degree: u8) -> Self {
        Self {
            sh_degree,
            primitives: Vec::new(),
        }
    }

    pub fn sh_degree(&self) -> u8 {
        self.sh_degree
    }

    pub fn primitives(&self) -> &[GaussianPrimitive] {
        &self.primitives
    }

    pub fn into_primitives(self) -> Vec<GaussianPrimitive> {
        self.primitives
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    /// Concatenate scenes of the same degree, preserving order.
    pub fn concat(parts: &[&GaussianScene]) -> Result<Self> {
        let degree = parts.first().map_or(1, |s| s.sh_degree);
        let mut prims = Vec::with_capacity(parts.iter().map(|s| s.len()).sum());
        for p in parts {
            if p.sh_degree != degree {
                return Err(Error::Shape("mixed sh degrees".into()));
            }
            prims.extend_from_slice(&p.primitives);
        }
        Self::new(degree, prims)
    }

    /// Axis-aligned bounds of the centers, `None` when empty.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = self.primitives.first()?.center;
        Some(self.primitives.iter().fold((first, first), |(lo, hi), p| {
            let c = p.center;
            (
                [lo[0].min(c[0]), lo[1].min(c[1]), lo[2].min(c[2])],
                [hi[0].max(c[0]), hi[1].max(c[1]), hi[2].max(c[2])],
            )
        }))
    }
}
