//! End-to-end training and evaluation of the mapping network.
//!
//! Per scene the frozen backbone, densification, upsampling and all
//! weight-independent preprocessing run once and are cached. A training
//! step then runs the network on a tape, composes and renders the refined
//! scene, and pushes the image-loss gradient back through the rasterizer
//! and the composition into the tape.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample as sample_indices;

use crate::camera::Camera;
use crate::densify::{shuffle_split, DensifyConfig};
use crate::error::{Error, Result};
use crate::harness::backbone::{pretrain, Backbone, BackboneConfig, PretrainView};
use crate::harness::dataset::{Sample, TargetView};
use crate::harness::loss::{image_loss, FeatureLoss, LossTerms, LossWeights};
use crate::harness::metrics::{psnr, ssim};
use crate::harness::upsample::{upsample, Upsampler};
use crate::imaging::Image;
use crate::network::{compose, compose_backward, offset_dim, Network, NetworkConfig, Prepared, ViewInput};
use crate::par;
use crate::raster::{self, RasterConfig, RenderTarget, SplatGradients};
use crate::real::Real;
use crate::scene::GaussianScene;
use crate::seed::stream_rng;
use crate::tensor::{load_checkpoint, save_checkpoint, Adam, AdamConfig, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Linear warmup from zero over this many steps.
    pub warmup_steps: usize,
    /// Cosine decay from `lr` to `lr / 10` over the remaining steps.
    pub cosine_decay: bool,
    pub clip_norm: Option<f64>,
    pub loss: LossWeights,
    pub log_every: usize,
    pub upsampler: Upsampler,
    pub densify: DensifyConfig,
    pub raster: RasterConfig,
    pub background: [f64; 3],
    pub factor: u32,
    pub backbone_steps: usize,
    pub backbone_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 5000,
            batch: 2,
            lr: 2.5e-5,
            warmup_steps: 0,
            cosine_decay: false,
            clip_norm: None,
            loss: LossWeights::default(),
            log_every: 10,
            upsampler: Upsampler::Bicubic,
            densify: DensifyConfig::default(),
            raster: RasterConfig::default(),
            background: [0.0; 3],
            factor: 4,
            backbone_steps: 300,
            backbone_lr: 1e-3,
        }
    }
}

impl TrainConfig {
    /// Learning rate for optimization step `step` (0-based).
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if !self.cosine_decay || self.steps <= self.warmup_steps {
            return self.lr;
        }
        let span = (self.steps - self.warmup_steps) as f64;
        let x = ((step - self.warmup_steps) as f64 / span).min(1.0);
        let floor = 0.1 * self.lr;
        floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * x).cos())
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.log_every == 0 || self.factor == 0 {
            return Err(Error::Config("batch, log_every and factor must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.backbone_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.loss.mse < 0.0 || self.loss.perc < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        self.densify.validate()
    }
}

/// Backbone shaped so its token grid lines up with the network's grid on
/// the upsampled image.
pub fn backbone_config(net: &NetworkConfig, factor: u32) -> Result<BackboneConfig> {
    let f = factor as usize;
    if !net.patch_size.is_multiple_of(f) {
        return Err(Error::Config(format!(
            "patch size {} is not divisible by the upsampling factor {factor}",
            net.patch_size
        )));
    }
    Ok(BackboneConfig {
        patch_size: net.patch_size / f,
        embed_dim: net.embed_dim,
        heads: net.heads,
        sh_degree: net.sh_degree,
        supersample: factor,
        ..BackboneConfig::default()
    })
}

/// Pretrain a fresh backbone on the input views of `samples`.
pub fn pretrain_backbone(
    samples: &[Sample],
    net: &NetworkConfig,
    cfg: &TrainConfig,
) -> Result<(Backbone, Vec<f64>)> {
    let mut bb = Backbone::new(backbone_config(net, cfg.factor)?, &mut stream_rng(cfg.seed, "backbone"))?;
    let views: Vec<PretrainView> = samples
        .iter()
        .flat_map(|s| s.inputs.iter())
        .map(|v| PretrainView {
            image: &v.image,
            camera: &v.camera,
            depth: &v.depth,
        })
        .collect();
    let losses = pretrain(&mut bb, &views, cfg.backbone_steps, cfg.backbone_lr, cfg.background, &cfg.raster)?;
    Ok((bb, losses))
}

/// Mean PSNR of each input view re-rendered from its own backbone
/// Gaussians, through the same supersampled image model used in training.
pub fn backbone_self_psnr(bb: &Backbone, samples: &[Sample], cfg: &TrainConfig) -> Result<f64> {
    let ss = bb.config.supersample.max(1);
    let vals = par::map_indexed(samples.len() * 2, |i| -> Result<f64> {
        let v = &samples[i / 2].inputs[i % 2];
        let r = bb.reconstruct(&v.image, &v.camera, Some(&v.depth))?;
        let fine = v.camera.upsampled(ss)?;
        let img = render_at(&r.scene, &fine, cfg)?.downsample_area(ss as usize)?;
        Ok(psnr(&img, &v.image))
    });
    let vals = vals.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(vals.iter().sum::<f64>() / vals.len().max(1) as f64)
}

/// Everything about a scene that does not depend on the network weights.
#[derive(Clone, Debug)]
pub struct SceneCache {
    pub index: usize,
    /// Union of both views' backbone Gaussians.
    pub lr_scene: GaussianScene,
    pub prep: Prepared,
    pub targets: Vec<TargetView>,
}

impl SceneCache {
    pub fn build(bb: &Backbone, net: &Network, s: &Sample, cfg: &TrainConfig) -> Result<Self> {
        let recon = s
            .inputs
            .iter()
            .map(|v| bb.reconstruct(&v.image, &v.camera, Some(&v.depth)))
            .collect::<Result<Vec<_>>>()?;
        let lr_scene = GaussianScene::concat(&[&recon[0].scene, &recon[1].scene])?;
        let d = shuffle_split(&lr_scene, &cfg.densify)?;
        let n0 = recon[0].scene.len();
        let source: Vec<usize> = d.parent_index.iter().map(|&p| usize::from(p >= n0)).collect();
        let f = cfg.factor as usize;
        let images = s
            .inputs
            .iter()
            .map(|v| upsample(&v.image, f, cfg.upsampler))
            .collect::<Result<Vec<_>>>()?;
        let cams = s
            .inputs
            .iter()
            .map(|v| v.camera.upsampled(cfg.factor))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<ViewInput> = (0..2)
            .map(|i| ViewInput {
                image: &images[i],
                camera: &cams[i],
                t_pre: &recon[i].tokens,
            })
            .collect();
        let prep = net.prepare(&d.scene, &source, &views)?;
        Ok(Self {
            index: s.index,
            lr_scene,
            prep,
            targets: s.targets.clone(),
        })
    }
}

pub fn build_caches(bb: &Backbone, net: &Network, samples: &[Sample], cfg: &TrainConfig) -> Result<Vec<SceneCache>> {
    par::map_indexed(samples.len(), |i| SceneCache::build(bb, net, &samples[i], cfg))
        .into_iter()
        .collect()
}

fn render_at(scene: &GaussianScene, cam: &Camera, cfg: &TrainConfig) -> Result<Image<f32>> {
    let target = RenderTarget::for_camera(cam, cfg.background);
    raster::render::<f32>(scene, cam, &target, &cfg.raster)
}

fn widen(g: &SplatGradients<f32>) -> SplatGradients<f64> {
    let w3 = |v: &[f32; 3]| v.map(|x| x.to64());
    SplatGradients {
        center: g.center.iter().map(w3).collect(),
        opacity: g.opacity.iter().map(|x| x.to64()).collect(),
        rotation: g.rotation.iter().map(|v| v.map(|x| x.to64())).collect(),
        scale: g.scale.iter().map(w3).collect(),
        sh: g.sh.iter().map(|x| x.to64()).collect(),
        sh_len: g.sh_len,
    }
}

struct SampleResult {
    terms: LossTerms,
    grads: Vec<Vec<f32>>,
    renders: Vec<Image<f32>>,
}

fn sample_step(net: &Network, c: &SceneCache, cfg: &TrainConfig, features: &FeatureLoss) -> Result<SampleResult> {
    let mode = net.config.effective_compose();
    let dim = offset_dim(net.config.sh_degree);
    let mut t = Tape::new();
    let p = net.store.bind(&mut t);
    let out = net.forward(&mut t, &p, &c.prep)?;
    let offsets = t.value(out.offsets).to_vec();
    let hr = compose(&c.prep.dense, &offsets, dim, &c.prep.caps, mode)?;

    let nt = c.targets.len() as f64;
    let mut terms = LossTerms::default();
    let mut sg = SplatGradients::<f64>::zeros(hr.len(), hr.primitives().first().map_or(0, |g| g.sh().len()));
    let mut renders = Vec::with_capacity(c.targets.len());
    for tv in &c.targets {
        let target = RenderTarget::for_camera(&tv.camera, cfg.background);
        let state = raster::render_forward::<f32>(&hr, &tv.camera, &target, &cfg.raster)?;
        let (l, g) = image_loss(&state.image.cast(), &tv.image.cast(), &cfg.loss, features)?;
        terms.total += l.total / nt;
        terms.mse += l.mse / nt;
        terms.perc += l.perc / nt;
        let g = Image::from_data(g.width, g.height, g.channels, g.data.iter().map(|v| (v / nt) as f32).collect())?;
        sg.accumulate(&widen(&raster::backward(&state, &hr, &tv.camera, &cfg.raster, &g)?));
        renders.push(state.image);
    }
    let seed = compose_backward(&c.prep.dense, &hr, &offsets, dim, &c.prep.caps, mode, &sg)?;
    let g = t.backward_seeded(&[(out.offsets, seed)])?;
    Ok(SampleResult {
        terms,
        grads: p.grads(&g, &net.store),
        renders,
    })
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    pub mse: f64,
    pub perc: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub const TRAIN_LOG_HEADER: &str = "step,loss,mse,perc,psnr,ssim";

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.loss, self.mse, self.perc, self.psnr, self.ssim
        )
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub network: Network,
    pub adam: Adam,
    /// Completed optimization steps.
    pub step: usize,
    features: FeatureLoss,
}

impl Trainer {
    pub fn new(config: TrainConfig, net_cfg: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let network = Network::new(net_cfg, &mut stream_rng(config.seed, "network"))?;
        Ok(Self::with_network(config, network))
    }

    pub fn with_network(config: TrainConfig, network: Network) -> Self {
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr,
                clip_norm: config.clip_norm,
                ..AdamConfig::default()
            },
            &network.store,
        );
        let features = FeatureLoss::new(config.seed);
        Self {
            config,
            network,
            adam,
            step: 0,
            features,
        }
    }

    /// Scene indices used at optimization step `step`.
    pub fn batch_indices(&self, step: usize, scenes: usize) -> Vec<usize> {
        let mut rng = stream_rng(self.config.seed, &format!("batch/{step}"));
        let mut idx = sample_indices(&mut rng, scenes, self.config.batch.min(scenes)).into_vec();
        idx.sort_unstable();
        idx
    }

    /// One optimization step. SSIM is only computed when `with_ssim`.
    pub fn step_once(&mut self, caches: &[SceneCache], with_ssim: bool) -> Result<LogRow> {
        if caches.is_empty() {
            return Err(Error::Config("no training scenes".into()));
        }
        let idx = self.batch_indices(self.step, caches.len());
        let (net, cfg, features) = (&self.network, &self.config, &self.features);
        let results = par::map_indexed(idx.len(), |i| sample_step(net, &caches[idx[i]], cfg, features))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let nb = results.len() as f32;
        let mut grads = results[0].grads.clone();
        for r in &results[1..] {
            for (a, b) in grads.iter_mut().zip(&r.grads) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
        grads.iter_mut().flatten().for_each(|g| *g /= nb);
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Invalid(format!("non-finite gradient at step {}", self.step)));
        }
        self.adam.config.lr = self.config.lr_at(self.step);
        self.adam.update(&mut self.network.store, &grads)?;
        self.step += 1;

        let n = results.len() as f64;
        let mean = |f: fn(&LossTerms) -> f64| results.iter().map(|r| f(&r.terms)).sum::<f64>() / n;
        let m = mean(|t| t.mse);
        let ssim_v = if with_ssim {
            let pairs: Vec<_> = results
                .iter()
                .zip(&idx)
                .flat_map(|(r, &i)| r.renders.iter().zip(&caches[i].targets))
                .collect();
            pairs.iter().map(|(a, b)| ssim(a, &b.image)).sum::<f64>() / pairs.len() as f64
        } else {
            f64::NAN
        };
        Ok(LogRow {
            step: self.step,
            loss: mean(|t| t.total),
            mse: m,
            perc: mean(|t| t.perc),
            psnr: psnr_from_mse(m),
            ssim: ssim_v,
        })
    }

    /// Train until `config.steps`, writing a log row every `log_every` steps.
    pub fn run<W: Write>(&mut self, caches: &[SceneCache], log: &mut W) -> Result<Vec<LogRow>> {
        let mut rows = Vec::new();
        while self.step < self.config.steps {
            let logged = (self.step + 1).is_multiple_of(self.config.log_every) || self.step + 1 == self.config.steps;
            let row = self.step_once(caches, logged)?;
            if logged {
                writeln!(log, "{}", row.csv())?;
                log.flush()?;
            }
            rows.push(row);
        }
        Ok(rows)
    }

    /// Weights, optimizer moments and step counter.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut ck = self.network.store.to_checkpoint();
        ck.push_adam(&self.adam, &self.network.store);
        ck.push("train.step", &[1], vec![self.step as f32]);
        save_checkpoint(path, &ck)
    }

    /// Resume from [`Trainer::save`] output.
    pub fn resume(&mut self, path: &Path) -> Result<()> {
        let ck = load_checkpoint(path)?;
        self.network.store.load_from(&ck)?;
        ck.restore_adam(&mut self.adam, &self.network.store)?;
        let (_, s) = ck
            .get("train.step")
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing train.step", path.display())))?;
        self.step = s[0] as usize;
        Ok(())
    }
}

pub fn psnr_from_mse(m: f64) -> f64 {
    if m < 1e-10 {
        crate::harness::metrics::PSNR_CAP
    } else {
        10.0 * (1.0 / m).log10()
    }
}

/// One row of the evaluation table.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub variant: String,
    pub psnr: f64,
    pub ssim: f64,
    pub gaussians: usize,
}

pub const EVAL_HEADER: &str = "variant,psnr,ssim,gaussians";

impl EvalRow {
    pub fn csv(&self) -> String {
        format!("{},{:.4},{:.4},{}", self.variant, self.psnr, self.ssim, self.gaussians)
    }
}

fn summarize(variant: &str, per_scene: Vec<Result<(Vec<(f64, f64)>, usize)>>) -> Result<EvalRow> {
    let per_scene = per_scene.into_iter().collect::<Result<Vec<_>>>()?;
    let views: Vec<(f64, f64)> = per_scene.iter().flat_map(|s| s.0.iter().copied()).collect();
    let n = views.len().max(1) as f64;
    let count = per_scene.iter().map(|s| s.1).sum::<usize>() as f64 / per_scene.len().max(1) as f64;
    Ok(EvalRow {
        variant: variant.to_string(),
        psnr: views.iter().map(|v| v.0).sum::<f64>() / n,
        ssim: views.iter().map(|v| v.1).sum::<f64>() / n,
        gaussians: count.round() as usize,
    })
}

fn score(scene: &GaussianScene, targets: &[TargetView], cfg: &TrainConfig) -> Result<(Vec<(f64, f64)>, usize)> {
    let v = targets
        .iter()
        .map(|t| {
            let img = render_at(scene, &t.camera, cfg)?;
            Ok((psnr(&img, &t.image), ssim(&img, &t.image)))
        })
        .collect::<Result<_>>()?;
    Ok((v, scene.len()))
}

/// Held-out metrics of a trained network, labelled by its variant.
pub fn evaluate(net: &Network, caches: &[SceneCache], cfg: &TrainConfig) -> Result<EvalRow> {
    let rows = par::map_indexed(caches.len(), |i| score(&net.infer(&caches[i].prep)?, &caches[i].targets, cfg));
    summarize(net.config.variant.name(), rows)
}

/// The densified scaffold without offsets, and the backbone render at LR
/// upsampled to HR.
pub fn evaluate_baselines(caches: &[SceneCache], cfg: &TrainConfig) -> Result<Vec<EvalRow>> {
    let scaffold = par::map_indexed(caches.len(), |i| score(&caches[i].prep.dense, &caches[i].targets, cfg));
    let f = cfg.factor;
    let upsampled = par::map_indexed(caches.len(), |i| {
        let c = &caches[i];
        let v = c
            .targets
            .iter()
            .map(|t| {
                let lr_cam = t.camera.downsampled(f)?;
                let lr = render_at(&c.lr_scene, &lr_cam, cfg)?;
                let img = upsample(&lr, f as usize, cfg.upsampler)?;
                Ok((psnr(&img, &t.image), ssim(&img, &t.image)))
            })
            .collect::<Result<_>>()?;
        Ok((v, c.lr_scene.len()))
    });
    Ok(vec![summarize("scaffold", scaffold)?, summarize("upsampled-lr", upsampled)?])
}

pub fn write_eval_csv<W: Write>(rows: &[EvalRow], w: &mut W) -> Result<()> {
    writeln!(w, "{EVAL_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}

