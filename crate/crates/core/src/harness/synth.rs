//! Procedural scenes: textured spheres, boxes and planes in front of a
//! backdrop wall and above a ground plane, seen by cameras on an arc.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::scene::sh::rgb_to_dc;
use crate::scene::{coeff_len, GaussianPrimitive, GaussianScene};
use crate::seed::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Sphere,
    Box,
    Plane,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub min_primitives: usize,
    pub max_primitives: usize,
    /// Foreground objects, in addition to the wall and ground.
    pub shapes: Vec<Shape>,
    pub backdrop: bool,
    /// Spatial frequency of the color texture.
    pub texture_freq: f64,
    /// Amplitude of the texture around each object's base color.
    pub texture_amp: f64,
    pub camera_count: usize,
    pub camera_radius: f64,
    /// Angular span of the camera arc in degrees.
    pub camera_arc_deg: f64,
    pub camera_height: f64,
    pub look_jitter: f64,
    pub image_size: u32,
    pub fov_deg: f64,
    pub sh_degree: u8,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            min_primitives: 600,
            max_primitives: 1200,
            shapes: vec![Shape::Sphere, Shape::Box],
            backdrop: true,
            texture_freq: 6.0,
            texture_amp: 0.35,
            camera_count: 4,
            camera_radius: 3.2,
            camera_arc_deg: 40.0,
            camera_height: 0.4,
            look_jitter: 0.05,
            image_size: 64,
            fov_deg: 50.0,
            sh_degree: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("scene spec: {m}")));
        if self.max_primitives == 0 || (self.shapes.is_empty() && !self.backdrop) {
            return bad("zero primitives");
        }
        if self.min_primitives > self.max_primitives {
            return bad("min_primitives exceeds max_primitives");
        }
        if self.camera_count == 0 || self.image_size == 0 {
            return bad("need at least one camera and a positive image size");
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) || !(self.camera_radius > 0.0) {
            return bad("bad camera geometry");
        }
        Ok(())
    }
}

struct Surface {
    point: [f64; 3],
    normal: [f64; 3],
}

fn frame_quaternion(normal: [f64; 3]) -> [f64; 4] {
    let n = Vector3::from(normal).normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t = helper.cross(&n).normalize();
    let b = n.cross(&t);
    let m = Matrix3::from_columns(&[t, b, n]);
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    [q.w, q.i, q.j, q.k]
}

fn sample_object<R: Rng>(shape: Shape, center: [f64; 3], size: f64, rng: &mut R) -> Surface {
    let c = Vector3::from(center);
    match shape {
        Shape::Sphere => {
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            let n = Vector3::new(r * phi.cos(), z, r * phi.sin());
            let p = c + n * size;
            Surface {
                point: p.into(),
                normal: n.into(),
            }
        }
        Shape::Box => {
            let face = rng.random_range(0..6);
            let axis = face / 2;
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let mut local = [0.0; 3];
            let mut n = [0.0; 3];
            for (a, v) in local.iter_mut().enumerate() {
                *v = if a == axis {
                    sign * size
                } else {
                    rng.random_range(-size..size)
                };
            }
            n[axis] = sign;
            Surface {
                point: (c + Vector3::from(local)).into(),
                normal: n,
            }
        }
        Shape::Plane => {
            // Square facing the cameras.
            let local = Vector3::new(rng.random_range(-size..size), rng.random_range(-size..size), 0.0);
            Surface {
                point: (c + local).into(),
                normal: [0.0, 0.0, -1.0],
            }
        }
    }
}

fn texture(p: [f64; 3], base: [f64; 3], freq: f64, amp: f64, phase: f64) -> [f64; 3] {
    let checker = ((p[0] * freq).floor() + (p[1] * freq).floor() + (p[2] * freq).floor()) as i64;
    let s = if checker.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let wave = (p[0] * freq * 1.7 + phase).sin() * (p[1] * freq * 1.3 - phase).cos();
    [0, 1, 2].map(|c| (base[c] + amp * (0.7 * s + 0.3 * wave) * (0.6 + 0.2 * c as f64)).clamp(0.02, 0.98))
}

fn random_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    [0, 1, 2].map(|_| rng.random_range(0.2..0.8))
}

/// Ground-truth scene and camera ring for a spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<(GaussianScene, Vec<Camera>)> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, "synth/scene");
    let total = rng.random_range(spec.min_primitives..=spec.max_primitives);
    let sh_len = coeff_len(spec.sh_degree);

    struct Part {
        weight: f64,
        area: f64,
        kind: PartKind,
        color: [f64; 3],
        phase: f64,
    }
    enum PartKind {
        Object(Shape, [f64; 3], f64),
        Wall,
        Ground,
    }
    let mut parts = Vec::new();
    let n_obj = spec.shapes.len();
    for (i, &shape) in spec.shapes.iter().enumerate() {
        let x = if n_obj == 1 {
            0.0
        } else {
            -0.6 + 1.2 * i as f64 / (n_obj - 1) as f64
        };
        let center = [
            x + rng.random_range(-0.1..0.1),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.3),
        ];
        let size = rng.random_range(0.3..0.45);
        let area = match shape {
            Shape::Sphere => 4.0 * std::f64::consts::PI * size * size,
            Shape::Box => 24.0 * size * size,
            Shape::Plane => 4.0 * size * size,
        };
        parts.push(Part {
            weight: 0.0,
            area,
            kind: PartKind::Object(shape, center, size),
            color: random_color(&mut rng),
            phase: rng.random_range(0.0..6.0),
        });
    }
    if spec.backdrop {
        parts.push(Part {
            weight: 0.0,
            area: 4.0 * 2.2 * 1.6,
            kind: PartKind::Wall,
            color: random_color(&mut rng),
            phase: rng.random_range(0.0..6.0),
        });
        parts.push(Part {
            weight: 0.0,
            area: 4.0 * 2.2 * 1.2,
            kind: PartKind::Ground,
            color: random_color(&mut rng),
            phase: rng.random_range(0.0..6.0),
        });
    }
    let area_sum: f64 = parts.iter().map(|p| p.area).sum();
    for p in &mut parts {
        p.weight = p.area / area_sum;
    }
    let mut prims = Vec::with_capacity(total);
    let mut assigned = 0;
    for (pi, part) in parts.iter().enumerate() {
        let n = if pi + 1 == parts.len() {
            total - assigned
        } else {
            ((total as f64 * part.weight).round() as usize).min(total - assigned)
        };
        assigned += n;
        if n == 0 {
            continue;
        }
        // Tangential size from the surface area per primitive.
        let spacing = (part.area / n as f64).sqrt();
        for _ in 0..n {
            let s = match part.kind {
                PartKind::Object(shape, c, size) => sample_object(shape, c, size, &mut rng),
                PartKind::Wall => Surface {
                    point: [rng.random_range(-2.2..2.2), rng.random_range(-0.8..0.8), 1.2],
                    normal: [0.0, 0.0, -1.0],
                },
                PartKind::Ground => Surface {
                    point: [rng.random_range(-2.2..2.2), 0.8, rng.random_range(-1.2..1.2)],
                    normal: [0.0, -1.0, 0.0],
                },
            };
            let rgb = texture(s.point, part.color, spec.texture_freq, spec.texture_amp, part.phase);
            let mut sh = vec![0.0; sh_len];
            sh[..3].copy_from_slice(&rgb_to_dc(rgb));
            let jitter: f64 = rng.random_range(0.8..1.2);
            let t = 0.6 * spacing * jitter;
            prims.push(GaussianPrimitive::new(
                s.point,
                rng.random_range(0.75..1.0),
                frame_quaternion(s.normal),
                [t, t, 0.15 * t],
                sh,
            )?);
        }
    }
    let scene = GaussianScene::new(spec.sh_degree, prims)?;
    let cams = camera_ring(spec, &mut stream_rng(spec.seed, "synth/cameras"))?;
    Ok((scene, cams))
}

fn camera_ring(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Camera>> {
    let n = spec.camera_count;
    let arc = spec.camera_arc_deg.to_radians();
    let f = 0.5 * spec.image_size as f64 / (0.5 * spec.fov_deg.to_radians()).tan();
    (0..n)
        .map(|i| {
            let a = if n == 1 {
                0.0
            } else {
                -0.5 * arc + arc * i as f64 / (n - 1) as f64
            };
            let eye = [
                spec.camera_radius * a.sin(),
                -spec.camera_height,
                -spec.camera_radius * a.cos(),
            ];
            let j = spec.look_jitter;
            let target = [0, 1, 2].map(|_| rng.random_range(-j..=j));
            // World +y points down toward the ground plane.
            Camera::look_at(eye, target, [0.0, -1.0, 0.0], f, f, spec.image_size, spec.image_size)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec {
            seed: 1,
            ..SceneSpec::default()
        };
        let (a, ca) = generate_scene(&spec).unwrap();
        let (b, cb) = generate_scene(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        let (c, _) = generate_scene(&SceneSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a, c);
        assert!((600..=1200).contains(&a.len()));
    }

    #[test]
    fn single_sphere_is_contained() {
        let spec = SceneSpec {
            seed: 4,
            shapes: vec![Shape::Sphere],
            backdrop: false,
            min_primitives: 200,
            max_primitives: 200,
            ..SceneSpec::default()
        };
        let (s, _) = generate_scene(&spec).unwrap();
        assert_eq!(s.len(), 200);
        let pts: Vec<[f64; 3]> = s.primitives().iter().map(|g| g.center()).collect();
        let c = [0, 1, 2].map(|a| pts.iter().map(|p| p[a]).sum::<f64>() / pts.len() as f64);
        let max_scale = s
            .primitives()
            .iter()
            .flat_map(|g| g.scale())
            .fold(0.0, f64::max);
        // The centroid of surface samples estimates the sphere center.
        for p in &pts {
            let d = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2)).sqrt();
            assert!(d <= 0.45 + 3.0 * max_scale + 0.1, "{d}");
        }
        let mut rng = stream_rng(4, "t");
        for _ in 0..500 {
            let s = sample_object(Shape::Sphere, [0.5, -0.2, 0.1], 0.4, &mut rng);
            let d = Vector3::from(s.point) - Vector3::new(0.5, -0.2, 0.1);
            assert!((d.norm() - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn cameras_see_the_centroid() {
        let (s, cams) = generate_scene(&SceneSpec::default()).unwrap();
        assert_eq!(cams.len(), 4);
        let (lo, hi) = s.bounds().unwrap();
        let c = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
        for cam in &cams {
            let p = cam.project_center(c).unwrap();
            assert!(p.depth > 0.0);
            assert!(p.u > 0.0 && p.u < 64.0 && p.v > 0.0 && p.v < 64.0);
        }
    }

    #[test]
    fn empty_spec_is_rejected() {
        let spec = SceneSpec {
            shapes: vec![],
            backdrop: false,
            ..SceneSpec::default()
        };
        assert!(generate_scene(&spec).is_err());
        let spec = SceneSpec {
            max_primitives: 0,
            min_primitives: 0,
            ..SceneSpec::default()
        };
        assert!(generate_scene(&spec).is_err());
    }
}
