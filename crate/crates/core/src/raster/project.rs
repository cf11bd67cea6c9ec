//! Per-primitive EWA projection and its adjoint.

use super::{RasterConfig, SplatGradients};
use crate::camera::Camera;
use crate::par;
use crate::real::Real;
use crate::scene::quat::{normalize_grad, rotation_grad_to_unit_quat, rotation_of_unit, Mat3};
use crate::scene::sh::{basis, SH_C1};
use crate::scene::{GaussianPrimitive, GaussianScene};

#[derive(Clone, Copy, Debug)]
pub(crate) struct CamT<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub rot: Mat3<T>,
    pub trans: [T; 3],
    pub center: [T; 3],
}

impl<T: Real> CamT<T> {
    pub fn new(cam: &Camera) -> Self {
        let mut rot = [[T::zero(); 3]; 3];
        for (i, row) in rot.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = T::of(cam.rotation[(i, j)]);
            }
        }
        let c = cam.center();
        Self {
            fx: T::of(cam.fx),
            fy: T::of(cam.fy),
            cx: T::of(cam.cx),
            cy: T::of(cam.cy),
            rot,
            trans: [
                T::of(cam.translation.x),
                T::of(cam.translation.y),
                T::of(cam.translation.z),
            ],
            center: [T::of(c[0]), T::of(c[1]), T::of(c[2])],
        }
    }
}

/// Screen-space footprint of one primitive.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Splat<T> {
    pub mean: [T; 2],
    /// Inverse projected covariance `(A, B, C)` of `[[A, B], [B, C]]`.
    pub conic: [T; 3],
    pub color: [T; 3],
    pub opacity: T,
    pub depth: T,
    pub radius: T,
}

/// Screen-space partials accumulated by the compositor.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Grad2d<T> {
    pub mean: [T; 2],
    pub conic: [T; 3],
    pub color: [T; 3],
    pub opacity: T,
}

impl<T: Real> Grad2d<T> {
    pub fn zero() -> Self {
        Self {
            mean: [T::zero(); 2],
            conic: [T::zero(); 3],
            color: [T::zero(); 3],
            opacity: T::zero(),
        }
    }

    pub fn add(&mut self, o: &Self) {
        self.mean[0] += o.mean[0];
        self.mean[1] += o.mean[1];
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

struct Intermediates<T> {
    mu: [T; 3],
    cam_pt: [T; 3],
    qn: [T; 4],
    rot: Mat3<T>,
    scale: [T; 3],
    sigma3: Mat3<T>,
    jw: [[T; 3]; 2],
    cov2: [T; 3],
    dir: [T; 3],
    dist: T,
}

fn v3<T: Real>(a: [f64; 3]) -> [T; 3] {
    [T::of(a[0]), T::of(a[1]), T::of(a[2])]
}

fn intermediates<T: Real>(
    p: &GaussianPrimitive,
    cam: &CamT<T>,
    cfg: &RasterConfig,
) -> Option<Intermediates<T>> {
    let mu = v3::<T>(p.center());
    let w = &cam.rot;
    let mut cam_pt = cam.trans;
    for (i, c) in cam_pt.iter_mut().enumerate() {
        *c += w[i][0] * mu[0] + w[i][1] * mu[1] + w[i][2] * mu[2];
    }
    if !(cam_pt[2] > T::of(cfg.near)) {
        return None;
    }
    let q = p.rotation();
    let qn = [T::of(q[0]), T::of(q[1]), T::of(q[2]), T::of(q[3])];
    let rot = rotation_of_unit(qn);
    let scale = v3::<T>(p.scale());
    let mut sigma3 = [[T::zero(); 3]; 3];
    for (i, row) in sigma3.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3)
                .map(|k| rot[i][k] * rot[j][k] * scale[k] * scale[k])
                .sum();
        }
    }
    let [x, y, z] = cam_pt;
    let iz = T::one() / z;
    let j = [
        [cam.fx * iz, T::zero(), -cam.fx * x * iz * iz],
        [T::zero(), cam.fy * iz, -cam.fy * y * iz * iz],
    ];
    let mut jw = [[T::zero(); 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jw[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
        }
    }
    let quad = |a: usize, b: usize| -> T {
        let mut acc = T::zero();
        for i in 0..3 {
            for k in 0..3 {
                acc += jw[a][i] * sigma3[i][k] * jw[b][k];
            }
        }
        acc
    };
    let dil = T::of(cfg.dilation);
    let cov2 = [quad(0, 0) + dil, quad(0, 1), quad(1, 1) + dil];
    let d = [mu[0] - cam.center[0], mu[1] - cam.center[1], mu[2] - cam.center[2]];
    let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let dir = if dist > T::zero() {
        [d[0] / dist, d[1] / dist, d[2] / dist]
    } else {
        [T::zero(), T::zero(), T::one()]
    };
    Some(Intermediates {
        mu,
        cam_pt,
        qn,
        rot,
        scale,
        sigma3,
        jw,
        cov2,
        dir,
        dist,
    })
}

pub(crate) fn project<T: Real>(
    p: &GaussianPrimitive,
    degree: u8,
    cam: &CamT<T>,
    cfg: &RasterConfig,
) -> Option<Splat<T>> {
    let it = intermediates(p, cam, cfg)?;
    let [a, b, c] = it.cov2;
    let det = a * c - b * b;
    if !(det > T::zero()) {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let mid = T::of(0.5) * (a + c);
    let lambda = mid + (mid * mid - det).max(T::of(0.1)).sqrt();
    let radius = T::of(cfg.cutoff_sigma) * lambda.sqrt();
    let [x, y, z] = it.cam_pt;
    let mean = [cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy];
    let bs = basis(degree, it.dir);
    let sh = p.sh();
    let mut color = [T::zero(); 3];
    for (jj, bj) in bs.iter().take(crate::scene::sh::basis_count(degree)).enumerate() {
        for (ch, col) in color.iter_mut().enumerate() {
            *col += *bj * T::of(sh[3 * jj + ch]);
        }
    }
    let values = mean.iter().chain(&conic).chain(&color).chain(std::iter::once(&radius));
    if values.into_iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(Splat {
        mean,
        conic,
        color,
        opacity: T::of(p.opacity()),
        depth: z,
        radius,
    })
}

pub(crate) struct PrimGrad<T> {
    center: [T; 3],
    opacity: T,
    rotation: [T; 4],
    scale: [T; 3],
    sh: [T; 12],
}

fn backward_one<T: Real>(
    p: &GaussianPrimitive,
    degree: u8,
    cam: &CamT<T>,
    cfg: &RasterConfig,
    g: &Grad2d<T>,
) -> Option<PrimGrad<T>> {
    let it = intermediates(p, cam, cfg)?;
    let zero = T::zero();
    let two = T::of(2.0);
    let half = T::of(0.5);

    // conic = Σ2⁻¹, dΣ2 = −Σ2⁻¹·G·Σ2⁻¹ with G the symmetric conic gradient
    let [a, b, c] = it.cov2;
    let det = a * c - b * b;
    let inv = [[c / det, -b / det], [-b / det, a / det]];
    let gm = [[g.conic[0], half * g.conic[1]], [half * g.conic[1], g.conic[2]]];
    let mut tmp = [[zero; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            tmp[i][j] = (0..2).map(|k| gm[i][k] * inv[k][j]).sum();
        }
    }
    let mut d_cov2 = [[zero; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            d_cov2[i][j] = -(0..2).map(|k| inv[i][k] * tmp[k][j]).sum::<T>();
        }
    }

    // Σ2 = JW·Σ3·(JW)ᵀ
    let jw = &it.jw;
    let mut d_sigma3 = [[zero; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            let mut acc = zero;
            for r in 0..2 {
                for s in 0..2 {
                    acc += jw[r][i] * d_cov2[r][s] * jw[s][k];
                }
            }
            d_sigma3[i][k] = acc;
        }
    }
    let mut d_jw = [[zero; 3]; 2];
    for r in 0..2 {
        for cc in 0..3 {
            let mut acc = zero;
            for s in 0..2 {
                for k in 0..3 {
                    acc += d_cov2[r][s] * jw[s][k] * it.sigma3[k][cc];
                }
            }
            d_jw[r][cc] = two * acc;
        }
    }
    let w = &cam.rot;
    let mut d_j = [[zero; 3]; 2];
    for r in 0..2 {
        for cc in 0..3 {
            d_j[r][cc] = (0..3).map(|k| d_jw[r][k] * w[cc][k]).sum();
        }
    }

    let [x, y, z] = it.cam_pt;
    let iz = T::one() / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (cam.fx, cam.fy);
    let mut d_cam = [zero; 3];
    // Jacobian entries
    d_cam[0] += d_j[0][2] * (-fx * iz2);
    d_cam[1] += d_j[1][2] * (-fy * iz2);
    d_cam[2] += d_j[0][0] * (-fx * iz2)
        + d_j[0][2] * (two * fx * x * iz3)
        + d_j[1][1] * (-fy * iz2)
        + d_j[1][2] * (two * fy * y * iz3);
    // projected mean
    d_cam[0] += g.mean[0] * fx * iz;
    d_cam[1] += g.mean[1] * fy * iz;
    d_cam[2] += -g.mean[0] * fx * x * iz2 - g.mean[1] * fy * y * iz2;

    let mut d_mu = [zero; 3];
    for (k, dm) in d_mu.iter_mut().enumerate() {
        *dm = (0..3).map(|i| w[i][k] * d_cam[i]).sum();
    }

    // Σ3 = M·Mᵀ with M = R·diag(s)
    let rot = &it.rot;
    let s = it.scale;
    let mut d_m = [[zero; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            let mut acc = zero;
            for j in 0..3 {
                acc += d_sigma3[i][j] * rot[j][k] * s[k];
            }
            d_m[i][k] = two * acc;
        }
    }
    let mut d_scale = [zero; 3];
    let mut d_rot = [[zero; 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            d_scale[k] += d_m[i][k] * rot[i][k];
            d_rot[i][k] = d_m[i][k] * s[k];
        }
    }
    let d_rotation = normalize_grad(it.qn, rotation_grad_to_unit_quat(it.qn, &d_rot));

    // appearance
    let bs = basis(degree, it.dir);
    let nb = crate::scene::sh::basis_count(degree);
    let mut d_sh = [zero; 12];
    for j in 0..nb {
        for ch in 0..3 {
            d_sh[3 * j + ch] = bs[j] * g.color[ch];
        }
    }
    if degree >= 1 && it.dist > zero {
        let c1 = T::of(SH_C1);
        let sh = p.sh();
        let shv = |j: usize, ch: usize| T::of(sh[3 * j + ch]);
        let mut d_dir = [zero; 3];
        for ch in 0..3 {
            d_dir[0] += -c1 * shv(3, ch) * g.color[ch];
            d_dir[1] += -c1 * shv(1, ch) * g.color[ch];
            d_dir[2] += c1 * shv(2, ch) * g.color[ch];
        }
        let dot = (0..3).map(|k| it.dir[k] * d_dir[k]).sum::<T>();
        for k in 0..3 {
            d_mu[k] += (d_dir[k] - it.dir[k] * dot) / it.dist;
        }
    }
    let _ = it.mu;
    Some(PrimGrad {
        center: d_mu,
        opacity: g.opacity,
        rotation: d_rotation,
        scale: d_scale,
        sh: d_sh,
    })
}

pub(crate) fn backward_all<T: Real>(
    scene: &GaussianScene,
    cam: &Camera,
    cfg: &RasterConfig,
    g2d: &[Option<Grad2d<T>>],
    sh_len: usize,
) -> SplatGradients<T> {
    let camt = CamT::<T>::new(cam);
    let degree = scene.sh_degree();
    let prims = scene.primitives();
    let per = par::map_indexed(prims.len(), |i| {
        g2d[i]
            .as_ref()
            .and_then(|g| backward_one(&prims[i], degree, &camt, cfg, g))
    });
    let mut out = SplatGradients::zeros(prims.len(), sh_len);
    for (i, pg) in per.into_iter().enumerate() {
        if let Some(pg) = pg {
            out.center[i] = pg.center;
            out.opacity[i] = pg.opacity;
            out.rotation[i] = pg.rotation;
            out.scale[i] = pg.scale;
            out.sh[i * sh_len..(i + 1) * sh_len].copy_from_slice(&pg.sh[..sh_len]);
        }
    }
    out
}
