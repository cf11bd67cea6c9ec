//! Command-line front end.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::camera::{load_cameras, save_cameras};
use crate::config::{RunConfig, KEYS};
use crate::densify::{shuffle_split, DensifyConfig};
use crate::error::{Error, Result};
use crate::harness::backbone::Backbone;
use crate::harness::dataset::{generate, load_dataset, save_dataset, Sample};
use crate::harness::synth::generate_scene;
use crate::harness::train::{
    backbone_config, backbone_self_psnr, build_caches, evaluate, evaluate_baselines, pretrain_backbone,
    write_eval_csv, EvalRow, Trainer, TRAIN_LOG_HEADER,
};
use crate::harness::upsample::Upsampler;
use crate::network::{Network, Variant};
use crate::raster::{self, RasterConfig, RenderTarget};
use crate::scene::{load_scene, save_scene, GaussianScene};
use crate::seed::stream_rng;
use crate::tensor::{load_checkpoint, manifest_path, save_checkpoint};

fn keys_help() -> String {
    let mut s = String::from("Run-config keys (set in the file or with --set key=value):\n");
    for (k, d) in KEYS {
        s.push_str(&format!("  {k:<20} {d}\n"));
    }
    s
}

#[derive(Parser, Debug)]
#[command(name = "splatsr", version, about = "Feed-forward 3D super-resolution for Gaussian splatting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Run-config file (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            c.set(k.trim(), v.trim())?;
        }
        c.finish()?;
        Ok(c)
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate training and held-out scenes into `data_dir`.
    #[command(after_help = keys_help())]
    GenData(ConfigArgs),
    /// Train the stand-in backbone on the training inputs and freeze it.
    #[command(after_help = keys_help())]
    PretrainBackbone(ConfigArgs),
    /// Shuffle-split every Gaussian at or above the opacity threshold.
    Densify {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        #[arg(long, default_value_t = 0.5)]
        opacity_threshold: f64,
        #[arg(long, default_value_t = 0.25)]
        scale_shrink: f64,
    },
    /// Render one view of a scene to PNG.
    Render {
        #[arg(long)]
        scene: PathBuf,
        /// Camera file, one record per line.
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long)]
        out: PathBuf,
        /// Background color r,g,b.
        #[arg(long, default_value = "0,0,0")]
        background: String,
        /// Also write the expected-depth map as a raw float32 dump.
        #[arg(long)]
        depth: Option<PathBuf>,
    },
    /// Train the mapping network; `--resume` continues from the last checkpoint.
    #[command(after_help = keys_help())]
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint and the baselines on the held-out scenes.
    #[command(after_help = keys_help())]
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to `<out_dir>/model.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate every variant, then sweep the input upsampler.
    #[command(after_help = keys_help())]
    Ablate(ConfigArgs),
    /// Print scene statistics.
    Inspect {
        #[arg(long)]
        scene: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    crate::par::init_threads_from_env();
    match cli.command {
        Command::GenData(a) => gen_data(&a.resolve()?),
        Command::PretrainBackbone(a) => pretrain_cmd(&a.resolve()?),
        Command::Densify {
            input,
            out,
            beta,
            opacity_threshold,
            scale_shrink,
        } => {
            let cfg = DensifyConfig {
                beta,
                opacity_threshold,
                scale_shrink,
            };
            cfg.validate()?;
            let scene = load_scene(&input)?;
            let d = shuffle_split(&scene, &cfg)?;
            save_scene(&d.scene, &out)?;
            println!("{} -> {} Gaussians", scene.len(), d.scene.len());
            Ok(())
        }
        Command::Render {
            scene,
            camera,
            view,
            out,
            background,
            depth,
        } => render_cmd(&scene, &camera, view, &out, &background, depth.as_deref()),
        Command::Train { cfg, resume } => train_cmd(&cfg.resolve()?, resume).map(|_| ()),
        Command::Eval { cfg, checkpoint } => {
            let c = cfg.resolve()?;
            let ck = checkpoint.unwrap_or_else(|| c.out_dir.join("model.ckpt"));
            let rows = eval_cmd(&c, &ck)?;
            write_table(&rows, &c.out_dir.join("eval.csv"))
        }
        Command::Ablate(a) => ablate_cmd(&a.resolve()?),
        Command::Inspect { scene } => {
            print!("{}", inspect(&load_scene(&scene)?));
            Ok(())
        }
    }
}

fn train_dir(c: &RunConfig) -> PathBuf {
    c.data_dir.join("train")
}

fn eval_dir(c: &RunConfig) -> PathBuf {
    c.data_dir.join("eval")
}

fn require_dir(p: &Path, hint: &str) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Error::Config(format!("{} does not exist ({hint})", p.display())))
    }
}

fn gen_data(c: &RunConfig) -> Result<()> {
    for (dir, first, count) in [
        (train_dir(c), 0, c.data.scenes),
        (eval_dir(c), c.data.scenes, c.eval_scenes),
    ] {
        let samples = generate(&c.data, first, count)?;
        save_dataset(&samples, &dir)?;
        for s in &samples {
            let (scene, cams) = generate_scene(&c.data.scene_spec(s.index))?;
            let d = dir.join(format!("scene_{:04}", s.index));
            save_scene(&scene, d.join("scene.ply"))?;
            save_cameras(&cams, d.join("cameras.txt"))?;
        }
        println!("{} scenes -> {}", count, dir.display());
    }
    fs::write(c.data_dir.join("config.txt"), c.to_text())?;
    Ok(())
}

fn backbone_path(c: &RunConfig) -> PathBuf {
    c.out_dir.join("backbone.ckpt")
}

fn pretrain_cmd(c: &RunConfig) -> Result<()> {
    require_dir(&train_dir(c), "run gen-data first")?;
    let samples = load_dataset(train_dir(c))?;
    fs::create_dir_all(&c.out_dir)?;
    let (bb, losses) = pretrain_backbone(&samples, &c.network, &c.train)?;
    save_checkpoint(&backbone_path(c), &bb.store.to_checkpoint())?;
    let mut log = BufWriter::new(File::create(c.out_dir.join("backbone_log.csv"))?);
    writeln!(log, "step,mse")?;
    for (i, l) in losses.iter().enumerate() {
        writeln!(log, "{},{l}", i + 1)?;
    }
    log.flush()?;
    println!("backbone self-view PSNR {:.3} dB", backbone_self_psnr(&bb, &samples, &c.train)?);
    Ok(())
}

/// Copy a checkpoint together with its manifest.
pub fn copy_checkpoint(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to)?;
    fs::copy(manifest_path(from), manifest_path(to))?;
    Ok(())
}

pub fn load_backbone(c: &RunConfig) -> Result<Backbone> {
    let path = backbone_path(c);
    if !path.is_file() {
        return Err(Error::Checkpoint(format!(
            "{} not found (run pretrain-backbone first)",
            path.display()
        )));
    }
    let mut bb = Backbone::new(backbone_config(&c.network, c.data.factor)?, &mut stream_rng(c.seed, "backbone"))?;
    bb.store.load_from(&load_checkpoint(&path)?)?;
    Ok(bb)
}

fn load_split(dir: PathBuf) -> Result<Vec<Sample>> {
    require_dir(&dir, "run gen-data first")?;
    load_dataset(dir)
}

fn train_cmd(c: &RunConfig, resume: bool) -> Result<Network> {
    let samples = load_split(train_dir(c))?;
    let bb = load_backbone(c)?;
    let mut tr = Trainer::new(c.train.clone(), c.network.clone())?;
    let ckpt = c.out_dir.join("model.ckpt");
    let log_path = c.out_dir.join("train_log.csv");
    if resume {
        tr.resume(&ckpt)?;
    }
    let caches = build_caches(&bb, &tr.network, &samples, &c.train)?;
    fs::create_dir_all(&c.out_dir)?;
    fs::write(c.out_dir.join("config.txt"), c.to_text())?;
    let mut log = if resume {
        BufWriter::new(OpenOptions::new().append(true).open(&log_path)?)
    } else {
        let mut w = BufWriter::new(File::create(&log_path)?);
        writeln!(w, "{TRAIN_LOG_HEADER}")?;
        w
    };
    tr.run(&caches, &mut log)?;
    log.flush()?;
    tr.save(&ckpt)?;
    println!("trained {} steps -> {}", tr.step, ckpt.display());
    Ok(tr.network)
}

fn eval_cmd(c: &RunConfig, checkpoint: &Path) -> Result<Vec<EvalRow>> {
    let samples = load_split(eval_dir(c))?;
    if !checkpoint.is_file() {
        return Err(Error::Checkpoint(format!("{} not found", checkpoint.display())));
    }
    let bb = load_backbone(c)?;
    let mut net = Network::new(c.network.clone(), &mut stream_rng(c.seed, "network"))?;
    net.store.load_from(&load_checkpoint(checkpoint)?)?;
    let caches = build_caches(&bb, &net, &samples, &c.train)?;
    let mut rows = evaluate_baselines(&caches, &c.train)?;
    rows.push(evaluate(&net, &caches, &c.train)?);
    Ok(rows)
}

fn write_table(rows: &[EvalRow], path: &Path) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_eval_csv(rows, &mut w)?;
    w.flush()?;
    let mut s = Vec::new();
    write_eval_csv(rows, &mut s)?;
    print!("{}", String::from_utf8_lossy(&s));
    Ok(())
}

fn ablate_cmd(c: &RunConfig) -> Result<()> {
    let eval_samples = load_split(eval_dir(c))?;
    let bb = load_backbone(c)?;
    let mut rows = Vec::new();
    let mut full = None;
    for v in Variant::ALL {
        let mut vc = c.clone();
        vc.network.variant = v;
        vc.out_dir = c.out_dir.join(v.name());
        fs::create_dir_all(&vc.out_dir)?;
        copy_checkpoint(&backbone_path(c), &backbone_path(&vc))?;
        let net = train_cmd(&vc, false)?;
        let caches = build_caches(&bb, &net, &eval_samples, &vc.train)?;
        if rows.is_empty() {
            rows.extend(evaluate_baselines(&caches, &vc.train)?);
        }
        rows.push(evaluate(&net, &caches, &vc.train)?);
        if v == Variant::Full {
            full = Some(net);
        }
    }
    write_table(&rows, &c.out_dir.join("ablation.csv"))?;
    let net = full.expect("full variant trained");
    let mut sweep = Vec::new();
    for u in [Upsampler::Nearest, Upsampler::Bilinear, Upsampler::Bicubic] {
        let mut tc = c.train.clone();
        tc.upsampler = u;
        let caches = build_caches(&bb, &net, &eval_samples, &tc)?;
        let mut r = evaluate(&net, &caches, &tc)?;
        r.variant = format!("full/{}", u.name());
        sweep.push(r);
    }
    write_table(&sweep, &c.out_dir.join("upsamplers.csv"))
}

fn parse_rgb(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("bad color {s:?}"))))
        .collect::<Result<_>>()?;
    v.try_into().map_err(|_| Error::Config(format!("color needs 3 components, got {s:?}")))
}

fn render_cmd(scene: &Path, camera: &Path, view: usize, out: &Path, bg: &str, depth: Option<&Path>) -> Result<()> {
    let bg = parse_rgb(bg)?;
    let scene = load_scene(scene)?;
    let cams = load_cameras(camera)?;
    let cam = cams
        .get(view)
        .ok_or_else(|| Error::Config(format!("view {view} out of range ({} cameras)", cams.len())))?;
    let target = RenderTarget::for_camera(cam, bg);
    let state = raster::render_forward::<f32>(&scene, cam, &target, &RasterConfig::default())?;
    state.image.save_png(out)?;
    if let Some(d) = depth {
        state.depth.save_raw(d)?;
    }
    Ok(())
}

/// Counts, opacity histogram and bounding box.
pub fn inspect(scene: &GaussianScene) -> String {
    let mut s = format!("gaussians {}\nsh_degree {}\n", scene.len(), scene.sh_degree());
    let mut hist = [0usize; 10];
    for g in scene.primitives() {
        hist[((g.opacity() * 10.0) as usize).min(9)] += 1;
    }
    s.push_str("opacity histogram\n");
    for (i, h) in hist.iter().enumerate() {
        s.push_str(&format!("  [{:.1}, {:.1}{} {h}\n", i as f64 / 10.0, (i + 1) as f64 / 10.0, if i == 9 { "]" } else { ")" }));
    }
    match scene.bounds() {
        Some((lo, hi)) => s.push_str(&format!(
            "bounds [{:.4}, {:.4}, {:.4}] .. [{:.4}, {:.4}, {:.4}]\n",
            lo[0], lo[1], lo[2], hi[0], hi[1], hi[2]
        )),
        None => s.push_str("bounds empty\n"),
    }
    s
}
