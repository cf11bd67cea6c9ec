//! Pinhole cameras.
//!
//! World-to-camera extrinsics `x_cam = R·x + t` with +z forward, +x right and
//! +y down. Pixel `(0, 0)` is the center of the top-left pixel.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Depth at or below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

/// Continuous pixel position and depth of a projected point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Invalid(format!(
                "focal lengths must be positive: fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Invalid("camera has zero-sized image".into()));
        }
        if !(0.0..=self.width as f64).contains(&self.cx)
            || !(0.0..=self.height as f64).contains(&self.cy)
        {
            return Err(Error::Invalid(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        let r = &self.rotation;
        let orth = (r * r.transpose() - Matrix3::identity()).abs().max();
        if orth > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid("rotation is not a proper rotation".into()));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite translation".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking toward `target`; `up` is the approximate world
    /// up direction (image +y points away from it).
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fx: f64,
        fy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let eye = Vector3::from(eye);
        let forward = (Vector3::from(target) - eye).normalize();
        let right = forward.cross(&Vector3::from(up));
        if right.norm() < 1e-9 {
            return Err(Error::Invalid("look_at: up parallel to view".into()));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            fx,
            fy,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn intrinsics(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// World-space camera center `-Rᵀt`.
    pub fn center(&self) -> [f64; 3] {
        let c = -(self.rotation.transpose() * self.translation);
        [c.x, c.y, c.z]
    }

    pub fn to_camera(&self, p: [f64; 3]) -> [f64; 3] {
        let c = self.rotation * Vector3::from(p) + self.translation;
        [c.x, c.y, c.z]
    }

    /// `p̃ = K·[R|t]·μ̃`, then `u = ũ/w̃`, `v = ṽ/w̃`.
    pub fn project_center(&self, mu: [f64; 3]) -> Result<Projection> {
        let h = self.intrinsics() * (self.rotation * Vector3::from(mu) + self.translation);
        if !(h.z > MIN_DEPTH) {
            return Err(Error::BehindCamera { depth: h.z });
        }
        Ok(Projection {
            u: h.x / h.z,
            v: h.y / h.z,
            depth: h.z,
        })
    }

    /// World-space ray through a continuous pixel position.
    pub fn pixel_ray(&self, u: f64, v: f64) -> ([f64; 3], [f64; 3]) {
        let local = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let d = (self.rotation.transpose() * local).normalize();
        (self.center(), [d.x, d.y, d.z])
    }

    /// Camera for an image downsampled by an integer `factor` with area
    /// averaging. Pixel centers are preserved, so `c' = (c + ½)/f − ½`.
    pub fn downsampled(&self, factor: u32) -> Result<Self> {
        if factor == 0 || !self.width.is_multiple_of(factor) || !self.height.is_multiple_of(factor) {
            return Err(Error::Invalid(format!(
                "cannot downsample {}x{} by {factor}",
                self.width, self.height
            )));
        }
        let f = factor as f64;
        Self::new(
            self.fx / f,
            self.fy / f,
            (self.cx + 0.5) / f - 0.5,
            (self.cy + 0.5) / f - 0.5,
            self.rotation,
            self.translation,
            self.width / factor,
            self.height / factor,
        )
    }

    /// Inverse of [`Camera::downsampled`].
    pub fn upsampled(&self, factor: u32) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Invalid("cannot upsample by 0".into()));
        }
        let f = factor as f64;
        Self::new(
            self.fx * f,
            self.fy * f,
            (self.cx + 0.5) * f - 0.5,
            (self.cy + 0.5) * f - 0.5,
            self.rotation,
            self.translation,
            self.width * factor,
            self.height * factor,
        )
    }

    /// `(fx/W, fy/H, cx/W, cy/H)`, the intrinsics descriptor fed to the network.
    pub fn normalized_intrinsics(&self) -> [f32; 4] {
        let w = self.width as f64;
        let h = self.height as f64;
        [
            (self.fx / w) as f32,
            (self.fy / h) as f32,
            (self.cx / w) as f32,
            (self.cy / h) as f32,
        ]
    }

    fn to_record(&self) -> String {
        let mut s = format!("{} {} {} {}", self.fx, self.fy, self.cx, self.cy);
        for i in 0..3 {
            for j in 0..3 {
                let _ = write!(s, " {}", self.rotation[(i, j)]);
            }
        }
        for i in 0..3 {
            let _ = write!(s, " {}", self.translation[i]);
        }
        let _ = write!(s, " {} {}", self.width, self.height);
        s
    }

    fn from_record(line: &str, record: usize) -> Result<Self> {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 18 {
            return Err(Error::Parse {
                record,
                msg: format!("expected 18 fields, found {}", toks.len()),
            });
        }
        let f: Vec<f64> = toks[..16]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                record,
                msg: format!("bad float: {e}"),
            })?;
        let dims: Vec<u32> = toks[16..]
            .iter()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                record,
                msg: format!("bad image size: {e}"),
            })?;
        Self::new(
            f[0],
            f[1],
            f[2],
            f[3],
            Matrix3::from_row_slice(&f[4..13]),
            Vector3::new(f[13], f[14], f[15]),
            dims[0],
            dims[1],
        )
        .map_err(|e| Error::Parse {
            record,
            msg: e.to_string(),
        })
    }
}

/// Serialize cameras, one 18-field text record per line.
pub fn cameras_to_string(cams: &[Camera]) -> String {
    cams.iter().map(|c| c.to_record() + "\n").collect()
}

pub fn parse_cameras(text: &str) -> Result<Vec<Camera>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .enumerate()
        .map(|(i, l)| Camera::from_record(l, i))
        .collect()
}

pub fn save_cameras(cams: &[Camera], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, cameras_to_string(cams))?;
    Ok(())
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<Camera>> {
    parse_cameras(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use proptest::prelude::*;

    fn axis_camera() -> Camera {
        Camera::new(
            100.0,
            100.0,
            32.0,
            32.0,
            Matrix3::identity(),
            Vector3::zeros(),
            64,
            64,
        )
        .unwrap()
    }

    fn posed_camera(ax: [f64; 3], angle: f64, t: [f64; 3]) -> Camera {
        let axis = Unit::new_normalize(Vector3::from(ax));
        let r = Rotation3::from_axis_angle(&axis, angle).into_inner();
        Camera::new(80.0, 70.0, 31.5, 20.25, r, Vector3::from(t), 64, 48).unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = axis_camera().project_center([0.0, 0.0, 1.0]).unwrap();
        assert_eq!((p.u, p.v, p.depth), (32.0, 32.0, 1.0));
    }

    #[test]
    fn hand_computed_projection() {
        // K·μ = (100·0.5 + 32·2, 100·0.25 + 32·2, 2) = (114, 89, 2)
        let p = axis_camera().project_center([0.5, 0.25, 2.0]).unwrap();
        assert!((p.u - 57.0).abs() < 1e-12);
        assert!((p.v - 44.5).abs() < 1e-12);
        assert!((p.depth - 2.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_an_error() {
        assert!(matches!(
            axis_camera().project_center([0.0, 0.0, -1.0]),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn principal_ray_is_optical_axis() {
        let (o, d) = axis_camera().pixel_ray(32.0, 32.0);
        assert_eq!(o, [0.0, 0.0, 0.0]);
        assert!((d[0]).abs() < 1e-15 && (d[1]).abs() < 1e-15 && (d[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn symmetric_pixels_mirror_in_x() {
        let cam = axis_camera();
        let (_, a) = cam.pixel_ray(32.0 + 7.5, 32.0 - 3.0);
        let (_, b) = cam.pixel_ray(32.0 - 7.5, 32.0 - 3.0);
        assert!((a[0] + b[0]).abs() < 1e-15);
        assert!((a[1] - b[1]).abs() < 1e-15 && (a[2] - b[2]).abs() < 1e-15);
    }

    #[test]
    fn ray_origin_solves_extrinsics() {
        let cam = posed_camera([0.3, -1.0, 0.2], 0.7, [0.5, -2.0, 4.0]);
        let (o, _) = cam.pixel_ray(10.0, 10.0);
        // P·[o;1] = R·o + t must vanish; solve R·o = −t independently by LU
        let solved = cam.rotation.lu().solve(&(-cam.translation)).unwrap();
        for i in 0..3 {
            assert!((o[i] - solved[i]).abs() < 1e-12);
        }
        let back = cam.to_camera(o);
        assert!(back.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn invalid_cameras_rejected() {
        let id = Matrix3::identity();
        let z = Vector3::zeros();
        assert!(Camera::new(0.0, 1.0, 1.0, 1.0, id, z, 4, 4).is_err());
        assert!(Camera::new(1.0, 1.0, 5.0, 1.0, id, z, 4, 4).is_err());
        assert!(Camera::new(1.0, 1.0, 1.0, 1.0, id * 2.0, z, 4, 4).is_err());
    }

    #[test]
    fn camera_file_round_trip() {
        let cams = vec![axis_camera(), posed_camera([1.0, 2.0, 3.0], -1.1, [0.1, 0.2, 5.0])];
        let text = cameras_to_string(&cams);
        assert_eq!(text.lines().next().unwrap().split_whitespace().count(), 18);
        assert_eq!(parse_cameras(&text).unwrap(), cams);
        assert!(matches!(parse_cameras("1 2 3\n"), Err(Error::Parse { record: 0, .. })));
    }

    #[test]
    fn downsampled_camera_keeps_pixel_centers() {
        let cam = posed_camera([0.0, 1.0, 0.0], 0.2, [0.0, 0.0, 3.0]);
        let lr = cam.downsampled(4).unwrap();
        let p = cam.project_center([0.1, -0.2, 0.3]).unwrap();
        let q = lr.project_center([0.1, -0.2, 0.3]).unwrap();
        // HR pixel x covers LR coordinate (x + 0.5)/4 − 0.5
        assert!(((p.u + 0.5) / 4.0 - 0.5 - q.u).abs() < 1e-12);
        assert!(((p.v + 0.5) / 4.0 - 0.5 - q.v).abs() < 1e-12);
        let back = lr.upsampled(4).unwrap();
        assert!((back.cx - cam.cx).abs() < 1e-12 && (back.fy - cam.fy).abs() < 1e-12);
        assert_eq!((back.width, back.height), (cam.width, cam.height));
    }

    proptest! {
        #[test]
        fn homogeneous_scaling_invariance(x in -1.0f64..1.0, y in -1.0f64..1.0, z in 0.5f64..5.0, s in 0.1f64..10.0) {
            let cam = posed_camera([0.0, 0.0, 1.0], 0.0, [0.0, 0.0, 0.0]);
            let a = cam.project_center([x, y, z]).unwrap();
            let k = cam.intrinsics();
            let h = k * (cam.rotation * Vector3::new(x, y, z) * s + cam.translation * s);
            prop_assert!((a.u - h.x / h.z).abs() < 1e-9);
            prop_assert!((a.v - h.y / h.z).abs() < 1e-9);
        }

        #[test]
        fn ray_projection_round_trip(u in -10.0f64..74.0, v in -10.0f64..58.0, d in 0.05f64..50.0, ang in -3.0f64..3.0) {
            let cam = posed_camera([0.2, 1.0, -0.4], ang, [0.3, 0.1, 2.0]);
            let (o, dir) = cam.pixel_ray(u, v);
            let p = cam.project_center([o[0] + d * dir[0], o[1] + d * dir[1], o[2] + d * dir[2]]).unwrap();
            prop_assert!((p.u - u).abs() < 1e-4 && (p.v - v).abs() < 1e-4);
        }
    }
}
