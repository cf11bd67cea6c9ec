//! Residual composition of the scaffold with predicted offsets.
//!
//! Composition runs in `f64` outside the tape so that zero offsets return
//! the scaffold bit for bit. [`compose_backward`] maps rasterizer
//! gradients back onto the raw offset record.

use crate::error::{Error, Result};
use crate::raster::SplatGradients;
use crate::scene::quat::normalize_grad;
use crate::scene::{coeff_len, GaussianPrimitive, GaussianScene};

/// How offsets are applied to scaffold attributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComposeMode {
    /// Bounded updates: tanh-capped positions, logit-space opacity,
    /// renormalized rotation, clamped log-space scale.
    Constrained,
    /// Plain addition on every attribute, with opacity clamped to `[0, 1]`
    /// and scales floored at a small positive value.
    Raw,
    /// Opacity, rotation and color regressed directly; position and scale
    /// stay anchored to the scaffold.
    Direct,
}

impl ComposeMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constrained" => Ok(Self::Constrained),
            "raw" => Ok(Self::Raw),
            "direct" => Ok(Self::Direct),
            _ => Err(Error::Config(format!(
                "unknown compose mode {s:?} (constrained, raw, direct)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Constrained => "constrained",
            Self::Raw => "raw",
            Self::Direct => "direct",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Caps {
    pub position: f64,
    pub log_scale: f64,
}

/// Layout of one offset record.
pub const D_MU: usize = 0;
pub const D_ALPHA: usize = 3;
pub const D_ROT: usize = 4;
pub const D_SCALE: usize = 8;
pub const D_SH: usize = 11;

pub fn offset_dim(sh_degree: u8) -> usize {
    D_SH + coeff_len(sh_degree)
}

const SCALE_FLOOR: f64 = 1e-8;
const LOGIT_EPS: f64 = 1e-6;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(a: f64) -> f64 {
    let a = a.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (a / (1.0 - a)).ln()
}

fn compose_one(
    p: &GaussianPrimitive,
    o: &[f64],
    caps: &Caps,
    mode: ComposeMode,
) -> Result<GaussianPrimitive> {
    let mu = p.center();
    let s = p.scale();
    let r = p.rotation();
    let mut center = [0.0; 3];
    let mut scale = [0.0; 3];
    for a in 0..3 {
        center[a] = match mode {
            ComposeMode::Raw => mu[a] + o[D_MU + a],
            _ => mu[a] + caps.position * o[D_MU + a].tanh(),
        };
        scale[a] = match mode {
            ComposeMode::Raw => (s[a] + o[D_SCALE + a]).max(SCALE_FLOOR),
            _ => s[a] * o[D_SCALE + a].clamp(-caps.log_scale, caps.log_scale).exp(),
        };
    }
    let da = o[D_ALPHA];
    let opacity = match mode {
        ComposeMode::Constrained if da == 0.0 => p.opacity(),
        ComposeMode::Constrained => sigmoid(logit(p.opacity()) + da),
        ComposeMode::Raw => (p.opacity() + da).clamp(0.0, 1.0),
        ComposeMode::Direct => sigmoid(da),
    };
    let base = match mode {
        ComposeMode::Direct => [1.0, 0.0, 0.0, 0.0],
        _ => r,
    };
    let rot = [
        base[0] + o[D_ROT],
        base[1] + o[D_ROT + 1],
        base[2] + o[D_ROT + 2],
        base[3] + o[D_ROT + 3],
    ];
    let sh: Vec<f64> = match mode {
        ComposeMode::Direct => o[D_SH..].to_vec(),
        _ => p.sh().iter().zip(&o[D_SH..]).map(|(c, d)| c + d).collect(),
    };
    GaussianPrimitive::new(center, opacity, rot, scale, sh)
}

fn check_len(scene: &GaussianScene, offsets: &[f32], dim: usize) -> Result<()> {
    if dim != offset_dim(scene.sh_degree()) || offsets.len() != scene.len() * dim {
        return Err(Error::Shape(format!(
            "compose: {} offset values of width {dim} for {} primitives of degree {}",
            offsets.len(),
            scene.len(),
            scene.sh_degree()
        )));
    }
    Ok(())
}

/// Apply an `[N, dim]` offset array to the scaffold.
pub fn compose(
    scene: &GaussianScene,
    offsets: &[f32],
    dim: usize,
    caps: &Caps,
    mode: ComposeMode,
) -> Result<GaussianScene> {
    check_len(scene, offsets, dim)?;
    let mut out = Vec::with_capacity(scene.len());
    for (i, p) in scene.primitives().iter().enumerate() {
        let o: Vec<f64> = offsets[i * dim..(i + 1) * dim].iter().map(|v| *v as f64).collect();
        if let Some(bad) = o.iter().position(|v| !v.is_finite()) {
            return Err(Error::Compose {
                index: i,
                msg: format!("non-finite offset component {bad}"),
            });
        }
        let q = compose_one(p, &o, caps, mode).map_err(|e| Error::Compose {
            index: i,
            msg: e.to_string(),
        })?;
        out.push(q);
    }
    GaussianScene::new(scene.sh_degree(), out)
}

/// Gradient of the loss with respect to the offset record, given the
/// rasterizer gradients of the composed scene.
pub fn compose_backward(
    scene: &GaussianScene,
    composed: &GaussianScene,
    offsets: &[f32],
    dim: usize,
    caps: &Caps,
    mode: ComposeMode,
    g: &SplatGradients<f64>,
) -> Result<Vec<f32>> {
    check_len(scene, offsets, dim)?;
    if g.len() != scene.len() || composed.len() != scene.len() {
        return Err(Error::Contract(format!(
            "compose backward: {} gradients for {} primitives",
            g.len(),
            scene.len()
        )));
    }
    let sh_len = coeff_len(scene.sh_degree());
    let mut out = vec![0.0f32; offsets.len()];
    for (i, (p, q)) in scene.primitives().iter().zip(composed.primitives()).enumerate() {
        let o = &offsets[i * dim..(i + 1) * dim];
        let d = &mut out[i * dim..(i + 1) * dim];
        for a in 0..3 {
            let dm = o[D_MU + a] as f64;
            d[D_MU + a] = match mode {
                ComposeMode::Raw => g.center[i][a],
                _ => g.center[i][a] * caps.position * (1.0 - dm.tanh().powi(2)),
            } as f32;
            let ds = o[D_SCALE + a] as f64;
            d[D_SCALE + a] = match mode {
                ComposeMode::Raw if p.scale()[a] + ds > SCALE_FLOOR => g.scale[i][a],
                ComposeMode::Raw => 0.0,
                _ if ds.abs() <= caps.log_scale => g.scale[i][a] * q.scale()[a],
                _ => 0.0,
            } as f32;
        }
        let alpha = q.opacity();
        d[D_ALPHA] = match mode {
            ComposeMode::Raw if alpha > 0.0 && alpha < 1.0 => g.opacity[i],
            ComposeMode::Raw => 0.0,
            _ => g.opacity[i] * alpha * (1.0 - alpha),
        } as f32;
        let base = match mode {
            ComposeMode::Direct => [1.0, 0.0, 0.0, 0.0],
            _ => p.rotation(),
        };
        let raw = [
            base[0] + o[D_ROT] as f64,
            base[1] + o[D_ROT + 1] as f64,
            base[2] + o[D_ROT + 2] as f64,
            base[3] + o[D_ROT + 3] as f64,
        ];
        let gr = normalize_grad(raw, g.rotation[i]);
        for k in 0..4 {
            d[D_ROT + k] = gr[k] as f32;
        }
        for k in 0..sh_len {
            d[D_SH + k] = g.sh[i * sh_len + k] as f32;
        }
    }
    Ok(out)
}
