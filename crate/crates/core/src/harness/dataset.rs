//! Training samples: two low-resolution input views with oracle depth and
//! high-resolution target views, all rendered from a synthetic scene.

use std::fs;
use std::path::Path;

use crate::camera::{load_cameras, save_cameras, Camera};
use crate::error::{Error, Result};
use crate::harness::synth::{generate_scene, SceneSpec};
use crate::harness::upsample::downsample_lanczos;
use crate::imaging::Image;
use crate::par;
use crate::raster::{self, RasterConfig, RenderTarget};
use crate::seed::stream_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LrMethod {
    /// Exact area averaging; the stored LR equals the block mean of the HR render.
    Area,
    Lanczos,
}

impl LrMethod {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "area" => Ok(Self::Area),
            "lanczos" => Ok(Self::Lanczos),
            _ => Err(Error::Config(format!("unknown LR method {s:?} (area, lanczos)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Area => "area",
            Self::Lanczos => "lanczos",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub seed: u64,
    pub scenes: usize,
    /// Template for every scene; its seed is replaced per scene.
    pub spec: SceneSpec,
    pub factor: u32,
    pub background: [f64; 3],
    pub input_views: [usize; 2],
    pub target_views: Vec<usize>,
    pub lr_method: LrMethod,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenes: 16,
            spec: SceneSpec {
                image_size: 256,
                ..SceneSpec::default()
            },
            factor: 4,
            background: [0.0; 3],
            input_views: [0, 3],
            target_views: vec![1, 2],
            lr_method: LrMethod::Area,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.factor == 0 || !self.spec.image_size.is_multiple_of(self.factor) {
            return Err(Error::Config(format!(
                "image size {} is not divisible by factor {}",
                self.spec.image_size, self.factor
            )));
        }
        let n = self.spec.camera_count;
        if self.input_views.iter().chain(&self.target_views).any(|&v| v >= n) {
            return Err(Error::Config(format!("view index out of range for {n} cameras")));
        }
        if self.target_views.is_empty() {
            return Err(Error::Config("no target views".into()));
        }
        Ok(())
    }

    pub fn scene_spec(&self, index: usize) -> SceneSpec {
        SceneSpec {
            seed: stream_seed(self.seed, &format!("scene/{index}")),
            ..self.spec.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputView {
    pub image: Image<f32>,
    pub camera: Camera,
    pub depth: Image<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetView {
    pub image: Image<f32>,
    pub camera: Camera,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub inputs: [InputView; 2],
    pub targets: Vec<TargetView>,
}

fn hr_render(scene: &crate::scene::GaussianScene, cam: &Camera, bg: [f64; 3]) -> Result<Image<f32>> {
    let target = RenderTarget::for_camera(cam, bg);
    raster::render::<f32>(scene, cam, &target, &RasterConfig::default())
}

pub fn generate_sample(cfg: &DataConfig, index: usize) -> Result<Sample> {
    let (scene, cams) = generate_scene(&cfg.scene_spec(index))?;
    let rcfg = RasterConfig::default();
    let input = |v: usize| -> Result<InputView> {
        let hr = hr_render(&scene, &cams[v], cfg.background)?;
        let image = match cfg.lr_method {
            LrMethod::Area => hr.downsample_area(cfg.factor as usize)?,
            LrMethod::Lanczos => downsample_lanczos(&hr, cfg.factor as usize)?,
        };
        let camera = cams[v].downsampled(cfg.factor)?;
        let target = RenderTarget::for_camera(&camera, cfg.background);
        let depth = raster::render_depth::<f32>(&scene, &camera, &target, &rcfg)?;
        Ok(InputView { image, camera, depth })
    };
    let inputs = [input(cfg.input_views[0])?, input(cfg.input_views[1])?];
    let targets = cfg
        .target_views
        .iter()
        .map(|&v| {
            Ok(TargetView {
                image: hr_render(&scene, &cams[v], cfg.background)?,
                camera: cams[v].clone(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(Sample { index, inputs, targets })
}

/// Samples `first..first+count`, generated in parallel.
pub fn generate(cfg: &DataConfig, first: usize, count: usize) -> Result<Vec<Sample>> {
    cfg.validate()?;
    par::map_indexed(count, |i| generate_sample(cfg, first + i))
        .into_iter()
        .collect()
}

const INPUT_NAMES: [&str; 2] = ["input0", "input1"];

pub fn save_sample(s: &Sample, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for (v, name) in s.inputs.iter().zip(INPUT_NAMES) {
        v.image.save_raw(dir.join(format!("{name}.raw")))?;
        v.image.save_png(dir.join(format!("{name}.png")))?;
        v.depth.save_raw(dir.join(format!("{name}_depth.raw")))?;
    }
    for (i, t) in s.targets.iter().enumerate() {
        t.image.save_raw(dir.join(format!("target{i}.raw")))?;
        t.image.save_png(dir.join(format!("target{i}.png")))?;
    }
    save_cameras(
        &s.inputs.iter().map(|v| v.camera.clone()).collect::<Vec<_>>(),
        dir.join("input_cameras.txt"),
    )?;
    save_cameras(
        &s.targets.iter().map(|t| t.camera.clone()).collect::<Vec<_>>(),
        dir.join("target_cameras.txt"),
    )?;
    fs::write(dir.join("index"), s.index.to_string())?;
    Ok(())
}

pub fn load_sample(dir: impl AsRef<Path>) -> Result<Sample> {
    let dir = dir.as_ref();
    let index = fs::read_to_string(dir.join("index"))?
        .trim()
        .parse()
        .map_err(|_| Error::Invalid(format!("bad sample index in {}", dir.display())))?;
    let in_cams = load_cameras(dir.join("input_cameras.txt"))?;
    if in_cams.len() != 2 {
        return Err(Error::Invalid(format!("{}: expected 2 input cameras", dir.display())));
    }
    let input = |i: usize| -> Result<InputView> {
        Ok(InputView {
            image: Image::load_raw(dir.join(format!("{}.raw", INPUT_NAMES[i])))?,
            camera: in_cams[i].clone(),
            depth: Image::load_raw(dir.join(format!("{}_depth.raw", INPUT_NAMES[i])))?,
        })
    };
    let inputs = [input(0)?, input(1)?];
    let targets = load_cameras(dir.join("target_cameras.txt"))?
        .into_iter()
        .enumerate()
        .map(|(i, camera)| {
            Ok(TargetView {
                image: Image::load_raw(dir.join(format!("target{i}.raw")))?,
                camera,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Sample { index, inputs, targets })
}

pub fn save_dataset(samples: &[Sample], dir: impl AsRef<Path>) -> Result<()> {
    for s in samples {
        save_sample(s, dir.as_ref().join(format!("scene_{:04}", s.index)))?;
    }
    Ok(())
}

/// Every `scene_*` directory under `dir`, in name order.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::Invalid(format!("cannot read dataset {}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("scene_")))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Invalid(format!("no scene_* directories in {}", dir.display())));
    }
    names.iter().map(load_sample).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DataConfig {
        DataConfig {
            seed: 3,
            scenes: 2,
            spec: SceneSpec {
                image_size: 32,
                min_primitives: 200,
                max_primitives: 300,
                ..SceneSpec::default()
            },
            ..DataConfig::default()
        }
    }

    #[test]
    fn lr_is_the_area_downsample_of_the_hr_render() {
        let cfg = tiny();
        let s = generate_sample(&cfg, 0).unwrap();
        let (scene, cams) = generate_scene(&cfg.scene_spec(0)).unwrap();
        let hr = hr_render(&scene, &cams[cfg.input_views[1]], cfg.background).unwrap();
        let lr = &s.inputs[1].image;
        assert_eq!((lr.width, lr.height), (8, 8));
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    let mut m = 0.0f64;
                    for dy in 0..4 {
                        for dx in 0..4 {
                            m += hr.at(4 * x + dx, 4 * y + dy, c) as f64;
                        }
                    }
                    assert!((m / 16.0 - lr.at(x, y, c) as f64).abs() < 1e-6);
                }
            }
        }
        assert_eq!(s.targets.len(), 2);
        assert_eq!(s.targets[0].image.width, 32);
        assert_eq!(s.inputs[0].depth.channels, 1);
    }

    #[test]
    fn samples_are_deterministic_and_round_trip() {
        let cfg = tiny();
        let a = generate(&cfg, 0, 2).unwrap();
        let b = generate(&cfg, 0, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0].inputs[0].image, a[1].inputs[0].image);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&a, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), a);
    }

    #[test]
    fn bad_view_indices_are_rejected() {
        let mut cfg = tiny();
        cfg.target_views = vec![7];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }
}
