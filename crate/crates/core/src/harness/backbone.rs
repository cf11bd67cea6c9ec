//! Stand-in feed-forward reconstruction backbone.
//!
//! One Gaussian per input pixel, placed on the pixel ray at the oracle
//! depth and colored by the pixel. A shallow patch encoder produces the
//! token grid handed to the mapping network, and a small head over those
//! tokens predicts per-pixel opacity and scale. The backbone is trained
//! on its own and then frozen.

use nalgebra::Vector3;
use rand::Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::network::{patchify, sincos_2d, EncoderBlock, Linear, Mlp, Norm};
use crate::raster::{self, RasterConfig, RenderTarget};
use crate::scene::sh::rgb_to_dc;
use crate::scene::{coeff_len, GaussianPrimitive, GaussianScene};
use crate::tensor::{Adam, AdamConfig, Bound, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// Patch size on the low-resolution input.
    pub patch_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub hidden: usize,
    /// Scale of a Gaussian before the learned correction, in pixels.
    pub base_scale_px: f64,
    pub init_opacity: f64,
    pub sh_degree: u8,
    /// The photometric loss renders at this multiple of the input
    /// resolution and area-averages back down, matching how an input pixel
    /// integrates its footprint.
    pub supersample: u32,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            patch_size: 4,
            embed_dim: 128,
            heads: 4,
            depth: 1,
            hidden: 16,
            base_scale_px: 0.5,
            init_opacity: 0.9,
            sh_degree: 0,
            supersample: 4,
        }
    }
}

pub struct Backbone {
    pub config: BackboneConfig,
    pub store: ParamStore,
    patch_embed: Linear,
    blocks: Vec<EncoderBlock>,
    norm: Norm,
    head: Mlp,
}

/// Output of [`Backbone::reconstruct`] for one view.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub scene: GaussianScene,
    /// Token grid `[rows·cols, embed_dim]`.
    pub tokens: Vec<f32>,
    pub grid: (usize, usize),
}

struct Pixels {
    centers: Vec<[f64; 3]>,
    depth: Vec<f64>,
    dc: Vec<[f64; 3]>,
}

fn unproject(image: &Image<f32>, cam: &Camera, depth: &Image<f32>) -> Result<Pixels> {
    if image.width != cam.width as usize || image.height != cam.height as usize {
        return Err(Error::Backbone(format!(
            "image {}x{} does not match camera {}x{}",
            image.width, image.height, cam.width, cam.height
        )));
    }
    if depth.width != image.width || depth.height != image.height || depth.channels != 1 {
        return Err(Error::Backbone(format!(
            "depth map {}x{}x{} is not aligned with the {}x{} image",
            depth.width, depth.height, depth.channels, image.width, image.height
        )));
    }
    let rt = cam.rotation.transpose();
    let n = image.width * image.height;
    let mut px = Pixels {
        centers: Vec::with_capacity(n),
        depth: Vec::with_capacity(n),
        dc: Vec::with_capacity(n),
    };
    for y in 0..image.height {
        for x in 0..image.width {
            let d = depth.at(x, y, 0) as f64;
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Backbone(format!("invalid depth {d} at pixel ({x}, {y})")));
            }
            let local = Vector3::new((x as f64 - cam.cx) / cam.fx * d, (y as f64 - cam.cy) / cam.fy * d, d);
            let w = rt * (local - cam.translation);
            px.centers.push([w.x, w.y, w.z]);
            px.depth.push(d);
            let rgb = [0, 1, 2].map(|c| image.at(x, y, c) as f64);
            px.dc.push(rgb_to_dc(rgb));
        }
    }
    Ok(px)
}

impl Backbone {
    pub fn new<R: Rng>(config: BackboneConfig, rng: &mut R) -> Result<Self> {
        let c = &config;
        if c.heads == 0 || !c.embed_dim.is_multiple_of(c.heads) || !c.embed_dim.is_multiple_of(4) || c.patch_size == 0 {
            return Err(Error::Config(format!(
                "backbone embed_dim {} must be divisible by heads {} and by 4",
                c.embed_dim, c.heads
            )));
        }
        let mut s = ParamStore::new();
        let pp3 = c.patch_size * c.patch_size * 3;
        let patch_embed = Linear::new(&mut s, "bb.patch", pp3, c.embed_dim, true, rng)?;
        let blocks = (0..c.depth)
            .map(|i| EncoderBlock::new(&mut s, &format!("bb.{i}"), c.embed_dim, c.heads, 2, rng))
            .collect::<Result<_>>()?;
        let norm = Norm::new(&mut s, "bb.norm", c.embed_dim)?;
        let head = Mlp::new(&mut s, "bb.head", c.embed_dim + 3, c.hidden, 2, rng)?;
        let bias = head.fc2.b.expect("biased");
        let a0 = (c.init_opacity / (1.0 - c.init_opacity)).ln() as f32;
        s.data_mut(bias.0).copy_from_slice(&[a0, 0.0]);
        Ok(Self {
            config,
            store: s,
            patch_embed,
            blocks,
            norm,
            head,
        })
    }

    /// Encoder tokens and raw head outputs `[pixels, 2]`.
    fn forward(&self, t: &mut Tape<f32>, p: &Bound, image: &Image<f32>) -> Result<(Var, Var, (usize, usize))> {
        let c = &self.config;
        let (rows, cols, patches) = patchify(image, c.patch_size)?;
        let ntok = rows * cols;
        let x = t.constant(&[ntok, c.patch_size * c.patch_size * 3], patches)?;
        let x = self.patch_embed.apply(t, p, x)?;
        let mut x = t.add_const(x, &sincos_2d(rows, cols, c.embed_dim))?;
        for b in &self.blocks {
            x = b.apply(t, p, x)?;
        }
        let tokens = self.norm.apply(t, p, x)?;
        let idx: Vec<usize> = (0..image.height)
            .flat_map(|y| (0..image.width).map(move |x| (y, x)))
            .map(|(y, x)| (y / c.patch_size) * cols + x / c.patch_size)
            .collect();
        let per_pixel = t.gather_rows(tokens, &idx)?;
        let rgb = t.constant(&[image.width * image.height, 3], image.data.clone())?;
        let h = t.concat_cols(&[per_pixel, rgb])?;
        let out = self.head.apply(t, p, h)?;
        Ok((tokens, out, (rows, cols)))
    }

    fn build_scene(&self, px: &Pixels, cam: &Camera, raw: &[f32]) -> Result<GaussianScene> {
        let sh_len = coeff_len(self.config.sh_degree);
        let prims = (0..px.centers.len())
            .map(|i| {
                let (opacity, s) = self.activations(px, cam, raw, i);
                let mut sh = vec![0.0; sh_len];
                sh[..3].copy_from_slice(&px.dc[i]);
                GaussianPrimitive::new(px.centers[i], opacity, [1.0, 0.0, 0.0, 0.0], [s; 3], sh)
            })
            .collect::<Result<_>>()?;
        GaussianScene::new(self.config.sh_degree, prims)
    }

    fn activations(&self, px: &Pixels, cam: &Camera, raw: &[f32], i: usize) -> (f64, f64) {
        let a = raw[2 * i] as f64;
        let b = (raw[2 * i + 1] as f64).clamp(-3.0, 3.0);
        let opacity = 1.0 / (1.0 + (-a).exp());
        let s = self.config.base_scale_px * px.depth[i] / cam.fx.min(cam.fy) * b.exp();
        (opacity, s)
    }

    /// Gaussians and token grid for one low-resolution view.
    pub fn reconstruct(
        &self,
        image: &Image<f32>,
        cam: &Camera,
        depth: Option<&Image<f32>>,
    ) -> Result<Reconstruction> {
        let depth = depth.ok_or_else(|| Error::Backbone("missing depth map".into()))?;
        let px = unproject(image, cam, depth)?;
        let mut t = Tape::new();
        let p = self.store.bind(&mut t);
        let (tokens, out, grid) = self.forward(&mut t, &p, image)?;
        let scene = self.build_scene(&px, cam, t.value(out))?;
        Ok(Reconstruction {
            scene,
            tokens: t.value(tokens).to_vec(),
            grid,
        })
    }

    /// One photometric step on a view: render the reconstruction from its
    /// own camera (supersampled) and compare with the input. Returns the MSE and the
    /// parameter gradients.
    pub fn loss_and_grads(
        &self,
        image: &Image<f32>,
        cam: &Camera,
        depth: &Image<f32>,
        background: [f64; 3],
        rcfg: &RasterConfig,
    ) -> Result<(f64, Vec<Vec<f32>>)> {
        let px = unproject(image, cam, depth)?;
        let mut t = Tape::new();
        let p = self.store.bind(&mut t);
        let (_, out, _) = self.forward(&mut t, &p, image)?;
        let raw = t.value(out).to_vec();
        let scene = self.build_scene(&px, cam, &raw)?;
        let ss = self.config.supersample.max(1);
        let fine = cam.upsampled(ss)?;
        let target = RenderTarget::for_camera(&fine, background);
        let state = raster::render_forward::<f64>(&scene, &fine, &target, rcfg)?;
        let coarse = state.image.downsample_area(ss as usize)?;
        let n = image.data.len() as f64;
        let mut g_coarse = coarse.clone();
        let mut mse = 0.0;
        for (gv, want) in g_coarse.data.iter_mut().zip(&image.data) {
            let d = *gv - *want as f64;
            mse += d * d;
            *gv = 2.0 * d / n;
        }
        // Area averaging spreads each coarse gradient evenly over its block.
        let s = ss as usize;
        let w = 1.0 / (s * s) as f64;
        let mut g = Image::<f64>::new(state.image.width, state.image.height, 3);
        for y in 0..g.height {
            for x in 0..g.width {
                for c in 0..3 {
                    *g.at_mut(x, y, c) = g_coarse.at(x / s, y / s, c) * w;
                }
            }
        }
        let sg = raster::backward(&state, &scene, &fine, rcfg, &g)?;
        let mut seed = vec![0.0f32; raw.len()];
        for i in 0..scene.len() {
            let (opacity, s) = self.activations(&px, cam, &raw, i);
            seed[2 * i] = (sg.opacity[i] * opacity * (1.0 - opacity)) as f32;
            let b = raw[2 * i + 1] as f64;
            if b.abs() < 3.0 {
                seed[2 * i + 1] = (sg.scale[i].iter().sum::<f64>() * s) as f32;
            }
        }
        let grads = t.backward_seeded(&[(out, seed)])?;
        Ok((mse / n, p.grads(&grads, &self.store)))
    }
}

/// A view used for backbone pretraining.
pub struct PretrainView<'a> {
    pub image: &'a Image<f32>,
    pub camera: &'a Camera,
    pub depth: &'a Image<f32>,
}

/// Train the opacity/scale head and encoder on self-reconstruction.
/// Returns the per-step MSE.
pub fn pretrain(
    backbone: &mut Backbone,
    views: &[PretrainView],
    steps: usize,
    lr: f64,
    background: [f64; 3],
    rcfg: &RasterConfig,
) -> Result<Vec<f64>> {
    if views.is_empty() {
        return Err(Error::Backbone("no views to pretrain on".into()));
    }
    let mut opt = Adam::new(
        AdamConfig {
            lr,
            ..AdamConfig::default()
        },
        &backbone.store,
    );
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let v = &views[step % views.len()];
        let (l, g) = backbone.loss_and_grads(v.image, v.camera, v.depth, background, rcfg)?;
        opt.update(&mut backbone.store, &g)?;
        losses.push(l);
    }
    Ok(losses)
}
