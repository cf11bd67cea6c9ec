use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nalgebra::{Matrix3, Vector3};
use splatsr::camera::{save_cameras, Camera};
use splatsr::imaging::Image;
use splatsr::scene::{load_scene, save_scene, GaussianPrimitive, GaussianScene};

fn splatsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatsr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn opaque_scene(n: usize) -> GaussianScene {
    let prims = (0..n)
        .map(|i| {
            let x = (i % 64) as f64 * 0.1;
            let y = (i / 64) as f64 * 0.1;
            GaussianPrimitive::new([x, y, 3.0], 0.9, [1.0, 0.0, 0.0, 0.0], [0.05, 0.04, 0.03], vec![0.2, 0.1, 0.0])
                .unwrap()
        })
        .collect();
    GaussianScene::new(0, prims).unwrap()
}

#[test]
fn densify_count_matches() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.ply");
    let output = dir.path().join("out.ply");
    save_scene(&opaque_scene(8192), &input).unwrap();
    let out = splatsr(&["densify", "--in", p(&input), "--out", p(&output)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_scene(&output).unwrap().len(), 49_152);

    let out = splatsr(&["inspect", "--scene", p(&output)]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("gaussians 49152"));
}

#[test]
fn empty_scene_renders_background() {
    let dir = tempfile::tempdir().unwrap();
    let scene = dir.path().join("empty.ply");
    let cams = dir.path().join("cams.txt");
    let png = dir.path().join("bg.png");
    save_scene(&GaussianScene::empty(0), &scene).unwrap();
    let cam = Camera::new(20.0, 20.0, 7.5, 5.5, Matrix3::identity(), Vector3::zeros(), 16, 12).unwrap();
    save_cameras(&[cam], &cams).unwrap();
    let out = splatsr(&[
        "render",
        "--scene",
        p(&scene),
        "--camera",
        p(&cams),
        "--out",
        p(&png),
        "--background",
        "1,0,0",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let img = Image::load_png(&png).unwrap();
    assert_eq!((img.width, img.height), (16, 12));
    for px in img.data.chunks(3) {
        assert_eq!(px, &[1.0, 0.0, 0.0]);
    }
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(splatsr(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(splatsr(&["densify"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ply");
    let out = splatsr(&["inspect", "--scene", p(&missing)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = splatsr(&["train", "--set", "no_such_key=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));

    let data = dir.path().join("data");
    let set = format!("data_dir={}", p(&data));
    let out = splatsr(&["train", "--set", &set]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-data"));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let gen = |name: &str| {
        let data = dir.path().join(name);
        let args = [
            "gen-data",
            "--set",
            "scenes=2",
            "--set",
            "eval_scenes=1",
            "--set",
            "image_size=32",
            "--set",
            "seed=3",
        ];
        let set = format!("data_dir={}", p(&data));
        let mut a = args.to_vec();
        a.extend_from_slice(&["--set", &set]);
        let out = splatsr(&a);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        data
    };
    let a = gen("a");
    let b = gen("b");
    for rel in [
        "train/scene_0000/target0.raw",
        "train/scene_0001/input1.raw",
        "train/scene_0001/scene.ply",
        "eval/scene_0002/input_cameras.txt",
    ] {
        assert_eq!(fs::read(a.join(rel)).unwrap(), fs::read(b.join(rel)).unwrap(), "{rel}");
    }
    let text = fs::read_to_string(a.join("config.txt")).unwrap();
    assert!(text.contains("seed = 3"));
}
