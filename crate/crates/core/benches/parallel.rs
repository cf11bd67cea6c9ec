use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use splatsr::harness::synth::{generate_scene, SceneSpec};
use splatsr::par::{set_exec, Exec};
use splatsr::raster::{render, render_backward, RasterConfig, RenderTarget};
use splatsr::imaging::Image;
use splatsr::seed::stream_rng;
use splatsr::tensor::Tape;

const MODES: [(Exec, &str); 2] = [(Exec::Sequential, "sequential"), (Exec::Parallel, "parallel")];

fn bench_render(c: &mut Criterion) {
    let spec = SceneSpec { image_size: 128, ..SceneSpec::default() };
    let (scene, cams) = generate_scene(&spec).expect("scene");
    let cam = &cams[0];
    let target = RenderTarget::for_camera(cam, [0.0; 3]);
    let cfg = RasterConfig::default();
    let upstream = Image::filled(cam.width as usize, cam.height as usize, &[1.0f32, 1.0, 1.0]);
    let mut g = c.benchmark_group("render");
    for (mode, name) in MODES {
        g.bench_function(BenchmarkId::new("forward", name), |b| {
            set_exec(mode);
            b.iter(|| render::<f32>(&scene, cam, &target, &cfg).unwrap())
        });
        g.bench_function(BenchmarkId::new("backward", name), |b| {
            set_exec(mode);
            b.iter(|| render_backward(&scene, cam, &target, &cfg, &upstream).unwrap())
        });
    }
    g.finish();
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = stream_rng(0, "bench");
    let (m, k, n) = (1024, 64, 64);
    let a: Vec<f32> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w: Vec<f32> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut g = c.benchmark_group("matmul");
    for (mode, name) in MODES {
        g.bench_function(BenchmarkId::new("forward_backward", name), |b| {
            set_exec(mode);
            b.iter(|| {
                let mut t = Tape::<f32>::new();
                let x = t.var(&[m, k], a.clone()).unwrap();
                let y = t.var(&[k, n], w.clone()).unwrap();
                let z = t.matmul(x, y).unwrap();
                let s = t.sum(z);
                t.backward(s).unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, bench_render, bench_matmul);
criterion_main!(benches);
