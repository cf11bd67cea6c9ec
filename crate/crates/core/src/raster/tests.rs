use super::*;
use crate::scene::sh::rgb_to_dc;
use crate::scene::GaussianPrimitive;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};

fn axis_cam(w: u32, h: u32, f: f64) -> Camera {
    Camera::new(
        f,
        f,
        (w as f64 - 1.0) / 2.0,
        (h as f64 - 1.0) / 2.0,
        Matrix3::identity(),
        Vector3::zeros(),
        w,
        h,
    )
    .unwrap()
}

fn gauss(center: [f64; 3], opacity: f64, scale: [f64; 3], rgb: [f64; 3]) -> GaussianPrimitive {
    let dc = rgb_to_dc(rgb);
    GaussianPrimitive::new(center, opacity, [1.0, 0.0, 0.0, 0.0], scale, dc.to_vec()).unwrap()
}

fn black() -> [f64; 3] {
    [0.0; 3]
}

#[test]
fn empty_scene_is_background() {
    let cam = axis_cam(20, 12, 10.0);
    let target = RenderTarget::for_camera(&cam, [0.2, 0.4, 0.6]);
    let img = render::<f64>(&GaussianScene::empty(0), &cam, &target, &RasterConfig::default()).unwrap();
    for px in img.data.chunks(3) {
        assert_eq!(px, &[0.2, 0.4, 0.6]);
    }
    let depth = render_depth::<f64>(&GaussianScene::empty(0), &cam, &target, &RasterConfig::default()).unwrap();
    assert!(depth.data.iter().all(|&d| d == 100.0));
}

#[test]
fn centered_gaussian_is_symmetric() {
    let cam = axis_cam(33, 33, 20.0);
    let scene = GaussianScene::new(0, vec![gauss([0.0, 0.0, 2.0], 1.0, [0.2; 3], [1.0; 3])]).unwrap();
    let target = RenderTarget::for_camera(&cam, black());
    let img = render::<f64>(&scene, &cam, &target, &RasterConfig::default()).unwrap();
    let hf = img.flip_horizontal();
    let vf = img.flip_vertical();
    for i in 0..img.data.len() {
        assert!((img.data[i] - hf.data[i]).abs() < 1e-12);
        assert!((img.data[i] - vf.data[i]).abs() < 1e-12);
    }
    let peak = img.at(16, 16, 0);
    assert!(img.data.iter().all(|&v| v <= peak));
}

#[test]
fn front_gaussian_occludes_back() {
    let cam = axis_cam(16, 16, 16.0);
    let cfg = RasterConfig::default();
    let front = gauss([0.0, 0.0, 1.0], 1.0, [0.3; 3], [1.0, 0.0, 0.0]);
    let back = gauss([0.0, 0.0, 2.0], 1.0, [0.6; 3], [0.0, 0.0, 1.0]);
    let scene = GaussianScene::new(0, vec![back, front]).unwrap();
    let target = RenderTarget::for_camera(&cam, black());
    let img = render::<f64>(&scene, &cam, &target, &cfg).unwrap();
    // pixel (7, 7) sits 0.5 px off the principal point on both axes
    let px = 7usize;
    let d = 7.0 - 7.5;
    let weight = |s: f64, z: f64| {
        let sigma2 = (16.0 * s / z).powi(2) + cfg.dilation;
        (-0.5 * (d * d + d * d) / sigma2).exp()
    };
    let a1 = (1.0 * weight(0.3, 1.0)).min(cfg.alpha_max);
    let a2 = (1.0 * weight(0.6, 2.0)).min(cfg.alpha_max);
    let t1 = 1.0 - a1;
    let red = a1;
    let blue = if t1 < cfg.transmittance_min { 0.0 } else { a2 * t1 };
    assert!((img.at(px, px, 0) - red).abs() < 1e-9);
    assert!((img.at(px, px, 2) - blue).abs() < 1e-9);
    assert!(img.at(px, px, 2) < 0.011);

    let depth = render_depth::<f64>(&scene, &cam, &target, &cfg).unwrap();
    let t2 = if t1 < cfg.transmittance_min { t1 } else { t1 * (1.0 - a2) };
    let want = a1 * 1.0 + if t1 < cfg.transmittance_min { 0.0 } else { a2 * t1 * 2.0 } + t2 * cfg.far_depth;
    assert!((depth.at(px, px, 0) - want).abs() < 1e-9);
}

#[test]
fn single_gaussian_depth() {
    let cam = axis_cam(17, 17, 16.0);
    let mut cfg = RasterConfig::default();
    cfg.alpha_max = 0.9999;
    let scene = GaussianScene::new(0, vec![gauss([0.0, 0.0, 2.0], 1.0, [0.5; 3], [1.0; 3])]).unwrap();
    let target = RenderTarget::for_camera(&cam, black());
    let depth = render_depth::<f64>(&scene, &cam, &target, &cfg).unwrap();
    assert!((depth.at(8, 8, 0) - 2.0).abs() < 2e-2);
}

#[test]
fn storage_order_does_not_change_pixels() {
    let cam = axis_cam(24, 24, 20.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let prims: Vec<_> = (0..12)
        .map(|i| {
            gauss(
                [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 2.0 + 0.1 * i as f64],
                rng.random_range(0.2..1.0),
                [rng.random_range(0.05..0.3), rng.random_range(0.05..0.3), 0.1],
                [rng.random(), rng.random(), rng.random()],
            )
        })
        .collect();
    let mut shuffled = prims.clone();
    shuffled.reverse();
    shuffled.swap(0, 5);
    let a = GaussianScene::new(0, prims).unwrap();
    let b = GaussianScene::new(0, shuffled).unwrap();
    let target = RenderTarget::for_camera(&cam, [0.1, 0.1, 0.1]);
    let cfg = RasterConfig::default();
    let ia = render::<f32>(&a, &cam, &target, &cfg).unwrap();
    let ib = render::<f32>(&b, &cam, &target, &cfg).unwrap();
    assert_eq!(ia.data, ib.data);
}

#[test]
fn parallel_matches_sequential() {
    use crate::par::{set_exec, Exec};
    let cam = axis_cam(64, 48, 40.0);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let prims: Vec<_> = (0..60)
        .map(|_| {
            gauss(
                [rng.random_range(-0.8..0.8), rng.random_range(-0.6..0.6), rng.random_range(1.5..3.0)],
                rng.random_range(0.2..1.0),
                [rng.random_range(0.02..0.2), rng.random_range(0.02..0.2), 0.05],
                [rng.random(), rng.random(), rng.random()],
            )
        })
        .collect();
    let scene = GaussianScene::new(0, prims).unwrap();
    let target = RenderTarget::for_camera(&cam, [0.1, 0.2, 0.3]);
    let cfg = RasterConfig::default();
    let upstream = Image::<f64>::filled(64, 48, &[1.0, -0.5, 0.25]);
    let run = || {
        let img = render::<f64>(&scene, &cam, &target, &cfg).unwrap();
        let g = render_backward(&scene, &cam, &target, &cfg, &upstream).unwrap();
        (img.data, g.center, g.opacity, g.rotation, g.scale, g.sh)
    };
    set_exec(Exec::Sequential);
    let s = run();
    set_exec(Exec::Parallel);
    let p = run();
    assert_eq!(s, p);
}

#[test]
fn dc_linearity_over_black() {
    let cam = axis_cam(16, 16, 16.0);
    let scene = GaussianScene::new(
        0,
        vec![
            gauss([0.1, 0.0, 2.0], 0.7, [0.3; 3], [0.2, 0.3, 0.1]),
            gauss([-0.2, 0.1, 2.5], 0.6, [0.4; 3], [0.1, 0.2, 0.4]),
        ],
    )
    .unwrap();
    let scaled = GaussianScene::new(
        0,
        scene
            .primitives()
            .iter()
            .map(|p| p.clone().with_sh(p.sh().iter().map(|v| v * 1.7).collect()))
            .collect(),
    )
    .unwrap();
    let target = RenderTarget::for_camera(&cam, black());
    let cfg = RasterConfig::default();
    let a = render::<f64>(&scene, &cam, &target, &cfg).unwrap();
    let b = render::<f64>(&scaled, &cam, &target, &cfg).unwrap();
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((x * 1.7 - y).abs() < 1e-6);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let cam = axis_cam(16, 16, 16.0);
    let scene = GaussianScene::new(0, vec![gauss([0.0, 0.0, 2.0], 0.8, [0.3; 3], [1.0; 3])]).unwrap();
    let target = RenderTarget::for_camera(&cam, black());
    let g = render_backward(&scene, &cam, &target, &RasterConfig::default(), &Image::<f64>::new(16, 16, 3)).unwrap();
    assert!(g.opacity.iter().all(|v| *v == 0.0));
    assert!(g.center.iter().flatten().all(|v| *v == 0.0));
    assert!(g.sh.iter().all(|v| *v == 0.0));
}

#[test]
fn opacity_gradient_is_positive_for_white_on_black() {
    let cam = axis_cam(16, 16, 16.0);
    let scene = GaussianScene::new(0, vec![gauss([0.0, 0.0, 2.0], 0.5, [0.3; 3], [1.0; 3])]).unwrap();
    let target = RenderTarget::for_camera(&cam, black());
    let ones = Image::filled(16, 16, &[1.0f64, 1.0, 1.0]);
    let g = render_backward(&scene, &cam, &target, &RasterConfig::default(), &ones).unwrap();
    assert!(g.opacity[0] > 0.0);
}

#[test]
fn gradient_shape_mismatch_is_contract_error() {
    let cam = axis_cam(16, 16, 16.0);
    let scene = GaussianScene::new(0, vec![gauss([0.0, 0.0, 2.0], 0.5, [0.3; 3], [1.0; 3])]).unwrap();
    let target = RenderTarget::for_camera(&cam, black());
    let bad = Image::<f64>::new(8, 8, 3);
    assert!(matches!(
        render_backward(&scene, &cam, &target, &RasterConfig::default(), &bad),
        Err(Error::Contract(_))
    ));
}

#[test]
fn rotated_gaussian_gradients_match_finite_differences() {
    let cam = axis_cam(16, 16, 14.0);
    let cfg = RasterConfig { cutoff_sigma: 8.0, ..Default::default() };
    let sh: Vec<f64> = vec![1.2, 0.9, 0.6, 0.2, -0.1, 0.15, -0.2, 0.1, 0.05, 0.1, 0.2, -0.15];
    let p = GaussianPrimitive::new([0.1, -0.05, 2.0], 0.7, [0.9, 0.2, -0.3, 0.25], [0.25, 0.12, 0.18], sh).unwrap();
    let q = gauss([-0.2, 0.15, 2.6], 0.6, [0.3, 0.2, 0.25], [0.3, 0.6, 0.2]);
    let q = q.clone().with_sh({
        let mut v = q.sh().to_vec();
        v.extend_from_slice(&[0.1, 0.0, -0.1, 0.05, 0.1, 0.0, -0.05, 0.0, 0.1]);
        v
    });
    let scene = GaussianScene::new(1, vec![p, q]).unwrap();
    let target = RenderTarget::for_camera(&cam, [0.1, 0.05, 0.2]);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let weights = Image::from_data(16, 16, 3, (0..768).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let loss = |s: &GaussianScene| -> f64 {
        let img = render::<f64>(s, &cam, &target, &cfg).unwrap();
        img.data.iter().zip(&weights.data).map(|(a, b)| a * b).sum()
    };
    let g = render_backward(&scene, &cam, &target, &cfg, &weights).unwrap();
    let eps = 1e-5;
    let check = |analytic: f64, plus: GaussianScene, minus: GaussianScene, what: &str| {
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
        let err = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
        assert!(err < 1e-4, "{what}: analytic {analytic} fd {fd}");
    };
    let with = |i: usize, f: &dyn Fn(GaussianPrimitive, f64) -> GaussianPrimitive, d: f64| {
        let mut prims = scene.primitives().to_vec();
        prims[i] = f(prims[i].clone(), d);
        GaussianScene::new(1, prims).unwrap()
    };
    for i in 0..2 {
        for k in 0..3 {
            let f = move |p: GaussianPrimitive, d: f64| {
                let mut c = p.center();
                c[k] += d;
                p.with_center(c)
            };
            check(g.center[i][k], with(i, &f, eps), with(i, &f, -eps), "center");
            let f = move |p: GaussianPrimitive, d: f64| {
                let mut s = p.scale();
                s[k] += d;
                p.with_scale(s).unwrap()
            };
            check(g.scale[i][k], with(i, &f, eps), with(i, &f, -eps), "scale");
        }
        for k in 0..4 {
            let f = move |p: GaussianPrimitive, d: f64| {
                let mut r = p.rotation();
                r[k] += d;
                p.with_rotation(r).unwrap()
            };
            check(g.rotation[i][k], with(i, &f, eps), with(i, &f, -eps), "rotation");
        }
        let f = |p: GaussianPrimitive, d: f64| {
            let o = p.opacity();
            p.with_opacity(o + d).unwrap()
        };
        check(g.opacity[i], with(i, &f, eps), with(i, &f, -eps), "opacity");
        for k in 0..12 {
            let f = move |p: GaussianPrimitive, d: f64| {
                let mut s = p.sh().to_vec();
                s[k] += d;
                p.with_sh(s)
            };
            check(g.sh[i * 12 + k], with(i, &f, eps), with(i, &f, -eps), "sh");
        }
    }
}
