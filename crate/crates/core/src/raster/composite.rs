//! Tile binning and per-pixel alpha compositing.

use super::project::{project, CamT, Grad2d, Splat};
use super::{RasterConfig, RenderTarget};
use crate::camera::Camera;
use crate::imaging::Image;
use crate::par;
use crate::real::Real;
use crate::scene::GaussianScene;

/// Everything the backward pass needs from a forward render.
#[derive(Clone, Debug)]
pub struct ForwardState<T> {
    pub image: Image<T>,
    pub depth: Image<T>,
    /// Composited color before clamping to `[0, 1]`.
    pub(crate) raw: Vec<T>,
    pub(crate) final_t: Vec<T>,
    pub(crate) n_contrib: Vec<u32>,
    pub(crate) splats: Vec<Option<Splat<T>>>,
    pub(crate) tiles: Vec<Vec<u32>>,
    pub(crate) tiles_x: usize,
    pub(crate) background: [T; 3],
}

impl<T: Real> ForwardState<T> {
    pub(crate) fn num_primitives(&self) -> usize {
        self.splats.len()
    }

    /// `1 − T_final` per pixel.
    pub fn accumulated_alpha(&self) -> Vec<T> {
        self.final_t.iter().map(|t| T::one() - *t).collect()
    }
}

struct TileGeom {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

fn tile_geom(tile: usize, tiles_x: usize, ts: usize, w: usize, h: usize) -> TileGeom {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    TileGeom {
        x0: tx * ts,
        y0: ty * ts,
        x1: ((tx + 1) * ts).min(w),
        y1: ((ty + 1) * ts).min(h),
    }
}

/// Gaussian weight at pixel `(px, py)` and whether it lies inside the cutoff.
#[inline]
fn footprint<T: Real>(s: &Splat<T>, px: T, py: T, cutoff2: T) -> Option<(T, T, T)> {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let maha = s.conic[0] * dx * dx + T::of(2.0) * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
    if maha > cutoff2 {
        return None;
    }
    Some(((T::of(-0.5) * maha).exp(), dx, dy))
}

fn bin_tiles<T: Real>(
    splats: &[Option<Splat<T>>],
    tiles_x: usize,
    tiles_y: usize,
    ts: usize,
    w: usize,
    h: usize,
) -> Vec<Vec<u32>> {
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, s) in splats.iter().enumerate() {
        let Some(s) = s else { continue };
        let xmin = (s.mean[0] - s.radius).ceil().to64();
        let xmax = (s.mean[0] + s.radius).floor().to64();
        let ymin = (s.mean[1] - s.radius).ceil().to64();
        let ymax = (s.mean[1] + s.radius).floor().to64();
        if xmax < 0.0 || ymax < 0.0 || xmin > (w - 1) as f64 || ymin > (h - 1) as f64 || xmin > xmax || ymin > ymax {
            continue;
        }
        let px0 = xmin.max(0.0) as usize;
        let px1 = (xmax.min((w - 1) as f64)) as usize;
        let py0 = ymin.max(0.0) as usize;
        let py1 = (ymax.min((h - 1) as f64)) as usize;
        for ty in py0 / ts..=py1 / ts {
            for tx in px0 / ts..=px1 / ts {
                tiles[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    let sorted = par::map_indexed(tiles.len(), |t| {
        let mut list = tiles[t].clone();
        list.sort_by(|&a, &b| {
            let da = splats[a as usize].as_ref().map(|s| s.depth).unwrap_or(T::zero());
            let db = splats[b as usize].as_ref().map(|s| s.depth).unwrap_or(T::zero());
            da.partial_cmp(&db)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        list
    });
    sorted
}

struct PixelOut<T> {
    raw: [T; 3],
    depth: T,
    final_t: T,
    n_contrib: u32,
}

pub(crate) fn forward<T: Real>(
    scene: &GaussianScene,
    cam: &Camera,
    target: &RenderTarget,
    cfg: &RasterConfig,
) -> ForwardState<T> {
    let (w, h) = (target.width, target.height);
    let camt = CamT::<T>::new(cam);
    let degree = scene.sh_degree();
    let prims = scene.primitives();
    let splats: Vec<Option<Splat<T>>> =
        par::map_indexed(prims.len(), |i| project(&prims[i], degree, &camt, cfg));
    let ts = cfg.tile_size.max(1);
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);
    let tiles = bin_tiles(&splats, tiles_x, tiles_y, ts, w, h);
    let bg = [
        T::of(target.background[0]),
        T::of(target.background[1]),
        T::of(target.background[2]),
    ];
    let cutoff2 = T::of(cfg.cutoff_sigma * cfg.cutoff_sigma);
    let t_min = T::of(cfg.transmittance_min);
    let a_max = T::of(cfg.alpha_max);
    let far = T::of(cfg.far_depth);

    let per_tile: Vec<Vec<PixelOut<T>>> = par::map_indexed(tiles.len(), |t| {
        let g = tile_geom(t, tiles_x, ts, w, h);
        let list = &tiles[t];
        let mut out = Vec::with_capacity((g.x1 - g.x0) * (g.y1 - g.y0));
        for py in g.y0..g.y1 {
            for px in g.x0..g.x1 {
                let (pxf, pyf) = (T::of(px as f64), T::of(py as f64));
                let mut tr = T::one();
                let mut col = [T::zero(); 3];
                let mut depth = T::zero();
                let mut n = list.len() as u32;
                for (pos, &si) in list.iter().enumerate() {
                    let s = splats[si as usize].as_ref().expect("binned splat");
                    let Some((gw, _, _)) = footprint(s, pxf, pyf, cutoff2) else {
                        continue;
                    };
                    let alpha = (s.opacity * gw).min(a_max);
                    let wgt = alpha * tr;
                    for k in 0..3 {
                        col[k] += s.color[k] * wgt;
                    }
                    depth += s.depth * wgt;
                    tr *= T::one() - alpha;
                    if tr < t_min {
                        n = pos as u32 + 1;
                        break;
                    }
                }
                for k in 0..3 {
                    col[k] += bg[k] * tr;
                }
                out.push(PixelOut {
                    raw: col,
                    depth: depth + far * tr,
                    final_t: tr,
                    n_contrib: n,
                });
            }
        }
        out
    });

    let mut raw = vec![T::zero(); w * h * 3];
    let mut depth = Image::new(w, h, 1);
    let mut final_t = vec![T::one(); w * h];
    let mut n_contrib = vec![0u32; w * h];
    for (t, pixels) in per_tile.into_iter().enumerate() {
        let g = tile_geom(t, tiles_x, ts, w, h);
        let mut it = pixels.into_iter();
        for py in g.y0..g.y1 {
            for px in g.x0..g.x1 {
                let p = it.next().expect("tile pixel");
                let idx = py * w + px;
                raw[3 * idx..3 * idx + 3].copy_from_slice(&p.raw);
                depth.data[idx] = p.depth;
                final_t[idx] = p.final_t;
                n_contrib[idx] = p.n_contrib;
            }
        }
    }
    let clamped = raw.iter().map(|v| v.max(T::zero()).min(T::one())).collect();
    ForwardState {
        image: Image::from_data(w, h, 3, clamped).expect("image size"),
        depth,
        raw,
        final_t,
        n_contrib,
        splats,
        tiles,
        tiles_x,
        background: bg,
    }
}

/// Screen-space partials per primitive; `None` for primitives that were
/// never composited.
pub(crate) fn backward_pixels<T: Real>(
    state: &ForwardState<T>,
    cfg: &RasterConfig,
    grad_image: &Image<T>,
) -> Vec<Option<Grad2d<T>>> {
    let (w, h) = (state.image.width, state.image.height);
    let ts = cfg.tile_size.max(1);
    let cutoff2 = T::of(cfg.cutoff_sigma * cfg.cutoff_sigma);
    let a_max = T::of(cfg.alpha_max);
    let splats = &state.splats;

    let per_tile: Vec<Vec<Grad2d<T>>> = par::map_indexed(state.tiles.len(), |t| {
        let list = &state.tiles[t];
        let mut acc = vec![Grad2d::zero(); list.len()];
        if list.is_empty() {
            return acc;
        }
        let g = tile_geom(t, state.tiles_x, ts, w, h);
        for py in g.y0..g.y1 {
            for px in g.x0..g.x1 {
                let idx = py * w + px;
                let mut up = [T::zero(); 3];
                let mut any = false;
                for k in 0..3 {
                    let r = state.raw[3 * idx + k];
                    if r >= T::zero() && r <= T::one() {
                        up[k] = grad_image.data[3 * idx + k];
                        any |= up[k] != T::zero();
                    }
                }
                if !any {
                    continue;
                }
                let (pxf, pyf) = (T::of(px as f64), T::of(py as f64));
                let mut tr = state.final_t[idx];
                let mut behind = [
                    state.background[0] * tr,
                    state.background[1] * tr,
                    state.background[2] * tr,
                ];
                let n = state.n_contrib[idx] as usize;
                for pos in (0..n).rev() {
                    let s = splats[list[pos] as usize].as_ref().expect("binned splat");
                    let Some((gw, dx, dy)) = footprint(s, pxf, pyf, cutoff2) else {
                        continue;
                    };
                    let raw_alpha = s.opacity * gw;
                    let alpha = raw_alpha.min(a_max);
                    let one_m = T::one() - alpha;
                    let t_i = tr / one_m;
                    let wgt = alpha * t_i;
                    let mut d_alpha = T::zero();
                    let slot = &mut acc[pos];
                    for k in 0..3 {
                        slot.color[k] += up[k] * wgt;
                        d_alpha += up[k] * (s.color[k] * t_i - behind[k] / one_m);
                        behind[k] += s.color[k] * wgt;
                    }
                    tr = t_i;
                    if raw_alpha < a_max {
                        slot.opacity += d_alpha * gw;
                        let d_power = d_alpha * s.opacity * gw;
                        slot.mean[0] += d_power * (s.conic[0] * dx + s.conic[1] * dy);
                        slot.mean[1] += d_power * (s.conic[1] * dx + s.conic[2] * dy);
                        slot.conic[0] += d_power * T::of(-0.5) * dx * dx;
                        slot.conic[1] += d_power * (-dx * dy);
                        slot.conic[2] += d_power * T::of(-0.5) * dy * dy;
                    }
                }
            }
        }
        acc
    });

    let mut out: Vec<Option<Grad2d<T>>> = vec![None; splats.len()];
    for (t, acc) in per_tile.into_iter().enumerate() {
        for (pos, g) in acc.into_iter().enumerate() {
            let si = state.tiles[t][pos] as usize;
            out[si].get_or_insert_with(Grad2d::zero).add(&g);
        }
    }
    out
}
