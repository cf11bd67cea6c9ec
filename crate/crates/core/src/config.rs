//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a valid config; unknown keys are rejected. All randomness
//! derives from `seed` through named streams (see [`crate::seed`]).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::dataset::{DataConfig, LrMethod};
use crate::harness::synth::Shape;
use crate::harness::train::TrainConfig;
use crate::harness::upsample::Upsampler;
use crate::network::{ComposeMode, NetworkConfig, Variant};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    /// Held-out scenes, generated after the training scenes.
    pub eval_scenes: usize,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            eval_scenes: 4,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Every key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "root seed for every random stream"),
    ("data_dir", "dataset directory (train/ and eval/ below it)"),
    ("out_dir", "output directory for checkpoints, logs and tables"),
    ("scenes", "number of training scenes"),
    ("eval_scenes", "number of held-out scenes"),
    ("image_size", "HR image side in pixels"),
    ("factor", "HR/LR resolution ratio"),
    ("min_primitives", "lower bound on ground-truth Gaussians per scene"),
    ("max_primitives", "upper bound on ground-truth Gaussians per scene"),
    ("shapes", "comma-separated shape palette: sphere, box, plane"),
    ("backdrop", "add a back wall and ground plane (true/false)"),
    ("texture_freq", "procedural texture frequency"),
    ("texture_amp", "procedural texture amplitude"),
    ("camera_count", "cameras per scene"),
    ("camera_radius", "camera arc radius"),
    ("camera_arc_deg", "angular extent of the camera arc"),
    ("camera_height", "camera height above the scene center"),
    ("look_jitter", "look-at target jitter"),
    ("fov_deg", "horizontal field of view"),
    ("input_views", "two comma-separated camera indices used as inputs"),
    ("target_views", "comma-separated camera indices used as targets"),
    ("lr_method", "LR generation: area or lanczos"),
    ("background", "background color r,g,b"),
    ("beta", "shuffle-split offset scale"),
    ("opacity_threshold", "opacity at or above which a Gaussian is split"),
    ("scale_shrink", "scale multiplier along the split axis"),
    ("patch_size", "encoder patch size on the upsampled image"),
    ("embed_dim", "token width"),
    ("heads", "attention heads"),
    ("enc_depth", "encoder blocks"),
    ("dec_depth", "decoder blocks"),
    ("mlp_ratio", "MLP hidden width as a multiple of the token width"),
    ("point_dim", "per-Gaussian feature width"),
    ("point_blocks", "neighborhood attention blocks"),
    ("knn_k", "neighbors per Gaussian"),
    ("rel_hidden", "hidden width of the relative-position bias MLP"),
    ("sh_degree", "spherical-harmonics degree of reconstructed scenes"),
    ("position_cap_factor", "position offset cap in median neighbor distances"),
    ("log_scale_cap", "bound on the log-scale offset"),
    ("compose", "offset composition: constrained, raw or direct"),
    ("variant", "network variant: full, no-refine, no-offset, no-point-blocks"),
    ("steps", "optimization steps"),
    ("batch", "scenes per step"),
    ("lr", "learning rate"),
    ("warmup_steps", "linear learning-rate warmup steps"),
    ("lr_decay", "learning-rate schedule after warmup: constant or cosine"),
    ("clip_norm", "global gradient-norm clip, or none"),
    ("w_mse", "MSE loss weight"),
    ("w_perc", "feature loss weight"),
    ("log_every", "steps between training log rows"),
    ("upsampler", "input upsampling: nearest, bilinear or bicubic"),
    ("backbone_steps", "backbone pretraining steps"),
    ("backbone_lr", "backbone pretraining learning rate"),
    ("tile_size", "rasterizer tile side in pixels"),
    ("cutoff_sigma", "splat footprint radius in standard deviations"),
    ("dilation", "projected covariance dilation in px^2"),
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

fn bool_of(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn shape_of(s: &str) -> Result<Shape> {
    match s.trim() {
        "sphere" => Ok(Shape::Sphere),
        "box" => Ok(Shape::Box),
        "plane" => Ok(Shape::Plane),
        o => Err(Error::Config(format!("shapes: unknown shape {o:?}"))),
    }
}

fn shape_name(s: Shape) -> &'static str {
    match s {
        Shape::Sphere => "sphere",
        Shape::Box => "box",
        Shape::Plane => "plane",
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            c.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        c.finish()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Propagate the root seed and cross-module settings, then validate.
    pub fn finish(&mut self) -> Result<()> {
        self.data.seed = self.seed;
        self.train.seed = self.seed;
        self.train.factor = self.data.factor;
        self.train.background = self.data.background;
        self.data.spec.sh_degree = self.network.sh_degree;
        self.data.validate()?;
        self.network.validate()?;
        self.train.validate()
    }

    /// Apply one override. Call [`RunConfig::finish`] afterwards.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.data;
        let s = &mut d.spec;
        let n = &mut self.network;
        let t = &mut self.train;
        match key {
            "seed" => self.seed = num(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "scenes" => d.scenes = num(key, v)?,
            "eval_scenes" => self.eval_scenes = num(key, v)?,
            "image_size" => s.image_size = num(key, v)?,
            "factor" => d.factor = num(key, v)?,
            "min_primitives" => s.min_primitives = num(key, v)?,
            "max_primitives" => s.max_primitives = num(key, v)?,
            "shapes" => s.shapes = v.split(',').map(shape_of).collect::<Result<_>>()?,
            "backdrop" => s.backdrop = bool_of(key, v)?,
            "texture_freq" => s.texture_freq = num(key, v)?,
            "texture_amp" => s.texture_amp = num(key, v)?,
            "camera_count" => s.camera_count = num(key, v)?,
            "camera_radius" => s.camera_radius = num(key, v)?,
            "camera_arc_deg" => s.camera_arc_deg = num(key, v)?,
            "camera_height" => s.camera_height = num(key, v)?,
            "look_jitter" => s.look_jitter = num(key, v)?,
            "fov_deg" => s.fov_deg = num(key, v)?,
            "input_views" => {
                let l: Vec<usize> = list(key, v)?;
                d.input_views = l
                    .try_into()
                    .map_err(|_| Error::Config("input_views: exactly two indices".into()))?;
            }
            "target_views" => d.target_views = list(key, v)?,
            "lr_method" => d.lr_method = LrMethod::parse(v)?,
            "background" => {
                let l: Vec<f64> = list(key, v)?;
                d.background = l
                    .try_into()
                    .map_err(|_| Error::Config("background: expected r,g,b".into()))?;
            }
            "beta" => t.densify.beta = num(key, v)?,
            "opacity_threshold" => t.densify.opacity_threshold = num(key, v)?,
            "scale_shrink" => t.densify.scale_shrink = num(key, v)?,
            "patch_size" => n.patch_size = num(key, v)?,
            "embed_dim" => n.embed_dim = num(key, v)?,
            "heads" => n.heads = num(key, v)?,
            "enc_depth" => n.enc_depth = num(key, v)?,
            "dec_depth" => n.dec_depth = num(key, v)?,
            "mlp_ratio" => n.mlp_ratio = num(key, v)?,
            "point_dim" => n.point_dim = num(key, v)?,
            "point_blocks" => n.point_blocks = num(key, v)?,
            "knn_k" => n.knn_k = num(key, v)?,
            "rel_hidden" => n.rel_hidden = num(key, v)?,
            "sh_degree" => n.sh_degree = num(key, v)?,
            "position_cap_factor" => n.position_cap_factor = num(key, v)?,
            "log_scale_cap" => n.log_scale_cap = num(key, v)?,
            "compose" => n.compose = ComposeMode::parse(v)?,
            "variant" => n.variant = Variant::parse(v)?,
            "steps" => t.steps = num(key, v)?,
            "batch" => t.batch = num(key, v)?,
            "lr" => t.lr = num(key, v)?,
            "warmup_steps" => t.warmup_steps = num(key, v)?,
            "lr_decay" => {
                t.cosine_decay = match v {
                    "constant" => false,
                    "cosine" => true,
                    _ => return Err(Error::Config(format!("lr_decay: expected constant or cosine, got {v:?}"))),
                }
            }
            "clip_norm" => t.clip_norm = if v == "none" { None } else { Some(num(key, v)?) },
            "w_mse" => t.loss.mse = num(key, v)?,
            "w_perc" => t.loss.perc = num(key, v)?,
            "log_every" => t.log_every = num(key, v)?,
            "upsampler" => t.upsampler = Upsampler::parse(v)?,
            "backbone_steps" => t.backbone_steps = num(key, v)?,
            "backbone_lr" => t.backbone_lr = num(key, v)?,
            "tile_size" => t.raster.tile_size = num(key, v)?,
            "cutoff_sigma" => t.raster.cutoff_sigma = num(key, v)?,
            "dilation" => t.raster.dilation = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Current value of a key in the same syntax [`RunConfig::set`] accepts.
    pub fn get(&self, key: &str) -> Option<String> {
        let d = &self.data;
        let s = &d.spec;
        let n = &self.network;
        let t = &self.train;
        Some(match key {
            "seed" => self.seed.to_string(),
            "data_dir" => self.data_dir.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "scenes" => d.scenes.to_string(),
            "eval_scenes" => self.eval_scenes.to_string(),
            "image_size" => s.image_size.to_string(),
            "factor" => d.factor.to_string(),
            "min_primitives" => s.min_primitives.to_string(),
            "max_primitives" => s.max_primitives.to_string(),
            "shapes" => s.shapes.iter().map(|&x| shape_name(x)).collect::<Vec<_>>().join(","),
            "backdrop" => s.backdrop.to_string(),
            "texture_freq" => s.texture_freq.to_string(),
            "texture_amp" => s.texture_amp.to_string(),
            "camera_count" => s.camera_count.to_string(),
            "camera_radius" => s.camera_radius.to_string(),
            "camera_arc_deg" => s.camera_arc_deg.to_string(),
            "camera_height" => s.camera_height.to_string(),
            "look_jitter" => s.look_jitter.to_string(),
            "fov_deg" => s.fov_deg.to_string(),
            "input_views" => join(&d.input_views),
            "target_views" => join(&d.target_views),
            "lr_method" => d.lr_method.name().to_string(),
            "background" => join(&d.background),
            "beta" => t.densify.beta.to_string(),
            "opacity_threshold" => t.densify.opacity_threshold.to_string(),
            "scale_shrink" => t.densify.scale_shrink.to_string(),
            "patch_size" => n.patch_size.to_string(),
            "embed_dim" => n.embed_dim.to_string(),
            "heads" => n.heads.to_string(),
            "enc_depth" => n.enc_depth.to_string(),
            "dec_depth" => n.dec_depth.to_string(),
            "mlp_ratio" => n.mlp_ratio.to_string(),
            "point_dim" => n.point_dim.to_string(),
            "point_blocks" => n.point_blocks.to_string(),
            "knn_k" => n.knn_k.to_string(),
            "rel_hidden" => n.rel_hidden.to_string(),
            "sh_degree" => n.sh_degree.to_string(),
            "position_cap_factor" => n.position_cap_factor.to_string(),
            "log_scale_cap" => n.log_scale_cap.to_string(),
            "compose" => n.compose.name().to_string(),
            "variant" => n.variant.name().to_string(),
            "steps" => t.steps.to_string(),
            "batch" => t.batch.to_string(),
            "lr" => t.lr.to_string(),
            "warmup_steps" => t.warmup_steps.to_string(),
            "lr_decay" => (if t.cosine_decay { "cosine" } else { "constant" }).to_string(),
            "clip_norm" => t.clip_norm.map_or("none".to_string(), |c| c.to_string()),
            "w_mse" => t.loss.mse.to_string(),
            "w_perc" => t.loss.perc.to_string(),
            "log_every" => t.log_every.to_string(),
            "upsampler" => t.upsampler.name().to_string(),
            "backbone_steps" => t.backbone_steps.to_string(),
            "backbone_lr" => t.backbone_lr.to_string(),
            "tile_size" => t.raster.tile_size.to_string(),
            "cutoff_sigma" => t.raster.cutoff_sigma.to_string(),
            "dilation" => t.raster.dilation.to_string(),
            _ => return None,
        })
    }

    /// Every key, one per line; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, _) in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("listed key"));
        }
        out
    }

    /// The desk-scale smoke schedule: 64×64 targets from 16×16 inputs and a
    /// reduced network.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        for (k, v) in SMOKE {
            c.set(k, v).expect("valid smoke key");
        }
        c.finish().expect("valid smoke config");
        c
    }
}

pub const SMOKE: &[(&str, &str)] = &[
    ("scenes", "16"),
    ("eval_scenes", "4"),
    ("image_size", "64"),
    ("patch_size", "8"),
    ("embed_dim", "32"),
    ("heads", "4"),
    ("enc_depth", "2"),
    ("dec_depth", "2"),
    ("point_dim", "32"),
    ("knn_k", "8"),
    ("steps", "5000"),
    ("lr", "0.001"),
    ("warmup_steps", "20"),
    ("lr_decay", "cosine"),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default() {
        let c = RunConfig::parse("# nothing\n\n").unwrap();
        let mut d = RunConfig::default();
        d.finish().unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn text_round_trip_covers_every_key() {
        let mut c = RunConfig::smoke();
        c.set("clip_norm", "1.5").unwrap();
        c.set("shapes", "plane,sphere").unwrap();
        c.set("background", "0.1,0.2,0.3").unwrap();
        c.finish().unwrap();
        let back = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        for (k, _) in KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(RunConfig::parse("sed = 3"), Err(Error::Config(m)) if m.contains("unknown key")));
        assert!(RunConfig::parse("steps = many").is_err());
        assert!(RunConfig::parse("just a line").is_err());
        assert!(RunConfig::parse("input_views = 0,1,2").is_err());
        assert!(RunConfig::parse("upsampler = lanczos3").is_err());
        // Cross-field validation: C must be divisible by the head count.
        assert!(RunConfig::parse("embed_dim = 30\nheads = 4").is_err());
    }

    #[test]
    fn shipped_smoke_file_matches_preset() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.txt");
        assert_eq!(RunConfig::load(&path).unwrap(), RunConfig::smoke());
    }

    #[test]
    fn seed_fans_out() {
        let c = RunConfig::parse("seed = 11").unwrap();
        assert_eq!((c.data.seed, c.train.seed), (11, 11));
    }
}
