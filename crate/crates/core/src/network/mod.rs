//! Mapping network from two upsampled views and a densified scaffold to
//! per-Gaussian residual offsets.
//!
//! Pipeline: patch encoder per view, bidirectional cross-attention with the
//! backbone tokens ([`Refine`]), a two-view decoder, per-Gaussian token
//! lookup, k-NN point blocks and a zero-initialized Gaussian head.

mod compose;
mod knn;
mod layers;

pub use compose::{
    compose, compose_backward, offset_dim, Caps, ComposeMode, D_ALPHA, D_MU, D_ROT, D_SCALE, D_SH,
};
pub use knn::{knn, median_nn_distance, KdTree, Neighbors};
pub use layers::{sincos_2d, EncoderBlock, Linear, Mha, Mlp, Norm};

use rand::Rng;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::scene::GaussianScene;
use crate::tensor::{Bound, ParamId, ParamStore, Tape, Var};

/// Which modules are active. Each variant is trained on its own.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// `t_ca = t_en`.
    NoRefine,
    /// Opacity, rotation and color regressed directly instead of as
    /// residuals on the scaffold.
    NoOffset,
    /// No point blocks between the fused tokens and the head.
    NoPointBlocks,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoRefine,
        Variant::NoOffset,
        Variant::NoPointBlocks,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (full, no-refine, no-offset, no-point-blocks)"
                ))
            })
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoRefine => "no-refine",
            Variant::NoOffset => "no-offset",
            Variant::NoPointBlocks => "no-point-blocks",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub enc_depth: usize,
    pub dec_depth: usize,
    pub mlp_ratio: usize,
    pub point_dim: usize,
    pub point_blocks: usize,
    pub knn_k: usize,
    pub rel_hidden: usize,
    pub sh_degree: u8,
    /// Position cap as a multiple of the scaffold's median nearest-neighbor
    /// distance.
    pub position_cap_factor: f64,
    pub log_scale_cap: f64,
    pub compose: ComposeMode,
    pub variant: Variant,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            embed_dim: 128,
            heads: 4,
            enc_depth: 4,
            dec_depth: 4,
            mlp_ratio: 2,
            point_dim: 64,
            point_blocks: 2,
            knn_k: 16,
            rel_hidden: 16,
            sh_degree: 0,
            position_cap_factor: 2.0,
            log_scale_cap: 4f64.ln(),
            compose: ComposeMode::Constrained,
            variant: Variant::Full,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.embed_dim == 0 || self.point_dim == 0 {
            return bad("patch_size, embed_dim and point_dim must be positive".into());
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) || !self.point_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "embed_dim {} and point_dim {} must be divisible by heads {}",
                self.embed_dim, self.point_dim, self.heads
            ));
        }
        if !self.embed_dim.is_multiple_of(4) {
            return bad(format!("embed_dim {} must be divisible by 4", self.embed_dim));
        }
        if self.knn_k == 0 || self.mlp_ratio == 0 || self.rel_hidden == 0 {
            return bad("knn_k, mlp_ratio and rel_hidden must be positive".into());
        }
        if self.sh_degree > crate::scene::sh::MAX_SH_DEGREE {
            return bad(format!("sh_degree {} unsupported", self.sh_degree));
        }
        if !(self.position_cap_factor > 0.0 && self.log_scale_cap > 0.0) {
            return bad("offset caps must be positive".into());
        }
        Ok(())
    }

    /// Compose mode after applying the variant switch.
    pub fn effective_compose(&self) -> ComposeMode {
        if self.variant == Variant::NoOffset {
            ComposeMode::Direct
        } else {
            self.compose
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// Flatten non-overlapping `patch × patch` blocks, row-major over patches
/// and `(y, x, channel)` within a patch. Returns `(rows, cols, data)`.
pub fn patchify(image: &Image<f32>, patch: usize) -> Result<(usize, usize, Vec<f32>)> {
    if patch == 0 || !image.width.is_multiple_of(patch) || !image.height.is_multiple_of(patch) {
        return Err(Error::Shape(format!(
            "image {}x{} is not divisible into {patch}-pixel patches",
            image.width, image.height
        )));
    }
    let (rows, cols, ch) = (image.height / patch, image.width / patch, image.channels);
    let mut out = Vec::with_capacity(image.data.len());
    for r in 0..rows {
        for c in 0..cols {
            for y in 0..patch {
                let row = (r * patch + y) * image.width + c * patch;
                out.extend_from_slice(&image.data[row * ch..(row + patch) * ch]);
            }
        }
    }
    Ok((rows, cols, out))
}

/// Bidirectional cross-attention between encoder and backbone tokens,
/// fused by a linear layer with a residual from the encoder tokens.
#[derive(Clone, Debug)]
pub struct Refine {
    pub q_o: Linear,
    pub k_o: Linear,
    pub v_o: Linear,
    pub q_p: Linear,
    pub k_p: Linear,
    pub v_p: Linear,
    pub fc: Linear,
    pub heads: usize,
}

impl Refine {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut lin = |s: &str, i, o, b| Linear::new(store, &format!("{name}.{s}"), i, o, b, rng);
        Ok(Self {
            q_o: lin("q_o", dim, dim, false)?,
            k_o: lin("k_o", dim, dim, false)?,
            v_o: lin("v_o", dim, dim, false)?,
            q_p: lin("q_p", dim, dim, false)?,
            k_p: lin("k_p", dim, dim, false)?,
            v_p: lin("v_p", dim, dim, false)?,
            fc: lin("fc", 2 * dim, dim, true)?,
            heads,
        })
    }

    pub fn apply(&self, t: &mut Tape<f32>, p: &Bound, t_en: Var, t_pre: Var) -> Result<Var> {
        if t.shape(t_en) != t.shape(t_pre) {
            return Err(Error::Shape(format!(
                "refine: encoder grid {:?} vs backbone grid {:?}",
                t.shape(t_en),
                t.shape(t_pre)
            )));
        }
        let q = self.q_o.apply(t, p, t_en)?;
        let k = self.k_p.apply(t, p, t_pre)?;
        let v = self.v_p.apply(t, p, t_pre)?;
        let u_op = t.attention(q, k, v, self.heads)?;
        let q = self.q_p.apply(t, p, t_pre)?;
        let k = self.k_o.apply(t, p, t_en)?;
        let v = self.v_o.apply(t, p, t_en)?;
        let u_po = t.attention(q, k, v, self.heads)?;
        let cat = t.concat_cols(&[u_op, u_po])?;
        let fused = self.fc.apply(t, p, cat)?;
        t.add(fused, t_en)
    }
}

/// Self-attention within a view, cross-attention to the other view, MLP.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub norm1: Norm,
    pub self_attn: Mha,
    pub norm2: Norm,
    pub cross_attn: Mha,
    pub norm3: Norm,
    pub mlp: Mlp,
}

impl DecoderBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            norm1: Norm::new(store, &format!("{name}.norm1"), dim)?,
            self_attn: Mha::new(store, &format!("{name}.self"), dim, heads, rng)?,
            norm2: Norm::new(store, &format!("{name}.norm2"), dim)?,
            cross_attn: Mha::new(store, &format!("{name}.cross"), dim, heads, rng)?,
            norm3: Norm::new(store, &format!("{name}.norm3"), dim)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, dim * mlp_ratio, dim, rng)?,
        })
    }

    /// One block over both views. Cross-attention of each view reads the
    /// other view's state after its self-attention step.
    pub fn apply(&self, t: &mut Tape<f32>, p: &Bound, xs: [Var; 2]) -> Result<[Var; 2]> {
        let mut after_self = [xs[0]; 2];
        for v in 0..2 {
            let h = self.norm1.apply(t, p, xs[v])?;
            let h = self.self_attn.apply(t, p, h, h)?;
            after_self[v] = t.add(xs[v], h)?;
        }
        let normed = [
            self.norm2.apply(t, p, after_self[0])?,
            self.norm2.apply(t, p, after_self[1])?,
        ];
        let mut out = after_self;
        for v in 0..2 {
            let h = self.cross_attn.apply(t, p, normed[v], normed[1 - v])?;
            let x = t.add(after_self[v], h)?;
            let h = self.norm3.apply(t, p, x)?;
            let h = self.mlp.apply(t, p, h)?;
            out[v] = t.add(x, h)?;
        }
        Ok(out)
    }
}

/// k-NN attention with a learned relative-position bias, then MLP.
#[derive(Clone, Debug)]
pub struct PointBlock {
    pub norm1: Norm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub rel: Mlp,
    pub norm2: Norm,
    pub mlp: Mlp,
    pub heads: usize,
}

impl PointBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        rel_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            norm1: Norm::new(store, &format!("{name}.norm1"), dim)?,
            q: Linear::new(store, &format!("{name}.q"), dim, dim, false, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, false, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, false, rng)?,
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng)?,
            rel: Mlp::new(store, &format!("{name}.rel"), 3, rel_hidden, heads, rng)?,
            norm2: Norm::new(store, &format!("{name}.norm2"), dim)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, dim * mlp_ratio, dim, rng)?,
            heads,
        })
    }

    pub fn apply(
        &self,
        t: &mut Tape<f32>,
        p: &Bound,
        x: Var,
        nb: &Neighbors,
        rel: Var,
    ) -> Result<Var> {
        let h = self.norm1.apply(t, p, x)?;
        let q = self.q.apply(t, p, h)?;
        let k = self.k.apply(t, p, h)?;
        let v = self.v.apply(t, p, h)?;
        let bias = self.rel.apply(t, p, rel)?;
        let a = t.neighbor_attention(q, k, v, &nb.idx, nb.k, Some(bias), self.heads)?;
        let a = self.o.apply(t, p, a)?;
        let x = t.add(x, a)?;
        let h = self.norm2.apply(t, p, x)?;
        let h = self.mlp.apply(t, p, h)?;
        t.add(x, h)
    }
}

/// One input view as seen by the network.
pub struct ViewInput<'a> {
    /// Input image already upsampled to the target resolution.
    pub image: &'a Image<f32>,
    /// Camera at the target resolution.
    pub camera: &'a Camera,
    /// Backbone token grid, `[rows·cols, embed_dim]`.
    pub t_pre: &'a [f32],
}

/// Weight-independent per-sample data, computed once and reused.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dense: GaussianScene,
    pub source_view: Vec<usize>,
    pub grid: (usize, usize),
    pub patches: Vec<Vec<f32>>,
    pub intrinsics: Vec<[f32; 4]>,
    pub t_pre: Vec<Vec<f32>>,
    /// Token row per Gaussian in the stacked `[view0; view1; sentinel]` table.
    pub query: Vec<usize>,
    pub positions: Vec<f32>,
    pub point_intrinsics: Vec<f32>,
    pub neighbors: Neighbors,
    pub rel: Vec<f32>,
    pub caps: Caps,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.dense.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.is_empty()
    }
}

/// Token index of each Gaussian in its source view, or the sentinel row
/// `views · rows · cols` when it projects outside the image or behind
/// the camera.
pub fn query_indices(
    scene: &GaussianScene,
    source_view: &[usize],
    cams: &[&Camera],
    patch: usize,
    grid: (usize, usize),
) -> Result<Vec<usize>> {
    if source_view.len() != scene.len() {
        return Err(Error::Shape(format!(
            "{} source views for {} primitives",
            source_view.len(),
            scene.len()
        )));
    }
    let ntok = grid.0 * grid.1;
    let sentinel = cams.len() * ntok;
    scene
        .primitives()
        .iter()
        .zip(source_view)
        .map(|(g, &v)| {
            let cam = cams.get(v).ok_or_else(|| {
                Error::Shape(format!("source view {v} out of {} views", cams.len()))
            })?;
            Ok(match cam.project_center(g.center()) {
                Ok(pr) if pr.depth > 0.0 => {
                    let (u, w) = (pr.u.floor(), pr.v.floor());
                    if u < 0.0 || w < 0.0 || u >= cam.width as f64 || w >= cam.height as f64 {
                        sentinel
                    } else {
                        let (c, r) = (u as usize / patch, w as usize / patch);
                        v * ntok + r.min(grid.0 - 1) * grid.1 + c.min(grid.1 - 1)
                    }
                }
                _ => sentinel,
            })
        })
        .collect()
}

struct Modules {
    patch_embed: Linear,
    intr_embed: Linear,
    encoder: Vec<EncoderBlock>,
    enc_norm: Norm,
    refine: Option<Refine>,
    decoder: Vec<DecoderBlock>,
    dec_norm: Norm,
    sentinel: ParamId,
    pos_mlp: Mlp,
    fuse: Linear,
    points: Vec<PointBlock>,
    head_norm: Norm,
    head1: Linear,
    head2: Linear,
}

/// Intermediate tensors of one forward pass.
pub struct NetOutput {
    pub t_en: [Var; 2],
    pub t_ca: [Var; 2],
    pub t_de: [Var; 2],
    pub features: Var,
    pub offsets: Var,
}

pub struct Network {
    pub config: NetworkConfig,
    pub store: ParamStore,
    m: Modules,
}

impl Network {
    pub fn new<R: Rng>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (dim, pd) = (c.embed_dim, c.point_dim);
        let mut s = ParamStore::new();
        let pp3 = c.patch_size * c.patch_size * 3;
        let patch_embed = Linear::new(&mut s, "enc.patch", pp3, dim, true, rng)?;
        let intr_embed = Linear::new(&mut s, "enc.intrinsics", 4, dim, true, rng)?;
        let encoder = (0..c.enc_depth)
            .map(|i| EncoderBlock::new(&mut s, &format!("enc.{i}"), dim, c.heads, c.mlp_ratio, rng))
            .collect::<Result<_>>()?;
        let enc_norm = Norm::new(&mut s, "enc.norm", dim)?;
        let refine = if c.variant == Variant::NoRefine {
            None
        } else {
            Some(Refine::new(&mut s, "refine", dim, c.heads, rng)?)
        };
        let decoder = (0..c.dec_depth)
            .map(|i| DecoderBlock::new(&mut s, &format!("dec.{i}"), dim, c.heads, c.mlp_ratio, rng))
            .collect::<Result<_>>()?;
        let dec_norm = Norm::new(&mut s, "dec.norm", dim)?;
        let sentinel = s.add_trunc_normal("query.sentinel", &[1, dim], layers::INIT_STD, rng)?;
        let pos_mlp = Mlp::new(&mut s, "point.pos", 3, pd, pd, rng)?;
        let fuse = Linear::new(&mut s, "point.fuse", pd + dim + 4, pd, true, rng)?;
        let n_points = if c.variant == Variant::NoPointBlocks {
            0
        } else {
            c.point_blocks
        };
        let points = (0..n_points)
            .map(|i| {
                PointBlock::new(
                    &mut s,
                    &format!("point.{i}"),
                    pd,
                    c.heads,
                    c.mlp_ratio,
                    c.rel_hidden,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let head_norm = Norm::new(&mut s, "head.norm", pd)?;
        let head1 = Linear::new(&mut s, "head.fc1", pd, pd, true, rng)?;
        let head2 = Linear::zeros(&mut s, "head.fc2", pd, offset_dim(c.sh_degree))?;
        Ok(Self {
            config,
            store: s,
            m: Modules {
                patch_embed,
                intr_embed,
                encoder,
                enc_norm,
                refine,
                decoder,
                dec_norm,
                sentinel,
                pos_mlp,
                fuse,
                points,
                head_norm,
                head1,
                head2,
            },
        })
    }

    pub fn refine_module(&self) -> Option<&Refine> {
        self.m.refine.as_ref()
    }

    pub fn decoder_blocks(&self) -> &[DecoderBlock] {
        &self.m.decoder
    }

    /// Parameter id of the zero-initialized final head layer weights.
    pub fn head_output(&self) -> (ParamId, Option<ParamId>) {
        (self.m.head2.w, self.m.head2.b)
    }

    /// Precompute everything that does not depend on the weights.
    pub fn prepare(
        &self,
        dense: &GaussianScene,
        source_view: &[usize],
        views: &[ViewInput],
    ) -> Result<Prepared> {
        let c = &self.config;
        if views.len() != 2 {
            return Err(Error::Unsupported(format!(
                "the decoder needs exactly 2 views, got {}",
                views.len()
            )));
        }
        if dense.sh_degree() != c.sh_degree {
            return Err(Error::Shape(format!(
                "scaffold has SH degree {}, network expects {}",
                dense.sh_degree(),
                c.sh_degree
            )));
        }
        let mut grid = None;
        let mut patches = Vec::new();
        let mut t_pre = Vec::new();
        let mut intrinsics = Vec::new();
        for v in views {
            let (rows, cols, data) = patchify(v.image, c.patch_size)?;
            if grid.is_some_and(|g| g != (rows, cols)) {
                return Err(Error::Shape("views have different token grids".into()));
            }
            grid = Some((rows, cols));
            if v.t_pre.len() != rows * cols * c.embed_dim {
                return Err(Error::Shape(format!(
                    "backbone tokens have {} values, expected {}x{}x{}",
                    v.t_pre.len(),
                    rows,
                    cols,
                    c.embed_dim
                )));
            }
            patches.push(data);
            t_pre.push(v.t_pre.to_vec());
            intrinsics.push(v.camera.normalized_intrinsics());
        }
        let grid = grid.expect("two views");
        let cams: Vec<&Camera> = views.iter().map(|v| v.camera).collect();
        let query = query_indices(dense, source_view, &cams, c.patch_size, grid)?;

        let pts: Vec<[f64; 3]> = dense.primitives().iter().map(|g| g.center()).collect();
        let neighbors = knn(&pts, c.knn_k);
        let (lo, hi) = dense.bounds().unwrap_or(([0.0; 3], [0.0; 3]));
        let mid = [0, 1, 2].map(|a| 0.5 * (lo[a] + hi[a]));
        let half = (0..3).map(|a| 0.5 * (hi[a] - lo[a])).fold(1e-9, f64::max);
        let nn = median_nn_distance(&pts, &neighbors).unwrap_or_else(|| {
            dense
                .primitives()
                .first()
                .map_or(1.0, |g| g.scale().iter().copied().fold(0.0, f64::max))
        });
        let nn = if nn > 0.0 { nn } else { 1e-6 };
        let caps = Caps {
            position: c.position_cap_factor * nn,
            log_scale: c.log_scale_cap,
        };
        let positions = pts
            .iter()
            .flat_map(|p| [0, 1, 2].map(|a| ((p[a] - mid[a]) / half) as f32))
            .collect();
        let mut rel = Vec::with_capacity(pts.len() * neighbors.k * 3);
        for i in 0..pts.len() {
            for &j in &neighbors.idx[i * neighbors.k..(i + 1) * neighbors.k] {
                rel.extend([0, 1, 2].map(|a| ((pts[j][a] - pts[i][a]) / nn) as f32));
            }
        }
        let point_intrinsics = source_view
            .iter()
            .flat_map(|&v| intrinsics[v])
            .collect();
        Ok(Prepared {
            dense: dense.clone(),
            source_view: source_view.to_vec(),
            grid,
            patches,
            intrinsics,
            t_pre,
            query,
            positions,
            point_intrinsics,
            neighbors,
            rel,
            caps,
        })
    }

    /// Token grid of one view after patch, positional and intrinsics
    /// embedding and the encoder blocks.
    pub fn encode(
        &self,
        t: &mut Tape<f32>,
        p: &Bound,
        patches: &[f32],
        grid: (usize, usize),
        intrinsics: [f32; 4],
    ) -> Result<Var> {
        let c = &self.config;
        let ntok = grid.0 * grid.1;
        let pp3 = c.patch_size * c.patch_size * 3;
        let x = t.constant(&[ntok, pp3], patches.to_vec())?;
        let x = self.m.patch_embed.apply(t, p, x)?;
        let x = t.add_const(x, &sincos_2d(grid.0, grid.1, c.embed_dim))?;
        let k = t.constant(&[1, 4], intrinsics.to_vec())?;
        let k = self.m.intr_embed.apply(t, p, k)?;
        let mut x = t.add_row(x, k)?;
        for b in &self.m.encoder {
            x = b.apply(t, p, x)?;
        }
        self.m.enc_norm.apply(t, p, x)
    }

    /// The decoder over both views.
    pub fn decode(&self, t: &mut Tape<f32>, p: &Bound, views: &[Var]) -> Result<[Var; 2]> {
        let &[a, b] = views else {
            return Err(Error::Unsupported(format!(
                "the decoder needs exactly 2 views, got {}",
                views.len()
            )));
        };
        let mut xs = [a, b];
        for blk in &self.m.decoder {
            xs = blk.apply(t, p, xs)?;
        }
        Ok([
            self.m.dec_norm.apply(t, p, xs[0])?,
            self.m.dec_norm.apply(t, p, xs[1])?,
        ])
    }

    pub fn forward(&self, t: &mut Tape<f32>, p: &Bound, prep: &Prepared) -> Result<NetOutput> {
        let c = &self.config;
        let ntok = prep.grid.0 * prep.grid.1;
        let mut t_en = Vec::with_capacity(2);
        let mut t_ca = Vec::with_capacity(2);
        for v in 0..2 {
            let en = self.encode(t, p, &prep.patches[v], prep.grid, prep.intrinsics[v])?;
            let ca = match &self.m.refine {
                Some(r) => {
                    let pre = t.constant(&[ntok, c.embed_dim], prep.t_pre[v].clone())?;
                    r.apply(t, p, en, pre)?
                }
                None => en,
            };
            t_en.push(en);
            t_ca.push(ca);
        }
        let t_de = self.decode(t, p, &t_ca)?;
        let sentinel = p.var(self.m.sentinel);
        let table = t.concat_rows(&[t_de[0], t_de[1], sentinel])?;
        let features = t.gather_rows(table, &prep.query)?;

        let n = prep.len();
        let pos = t.constant(&[n, 3], prep.positions.clone())?;
        let pos = self.m.pos_mlp.apply(t, p, pos)?;
        let kf = t.constant(&[n, 4], prep.point_intrinsics.clone())?;
        let cat = t.concat_cols(&[pos, features, kf])?;
        let mut x = self.m.fuse.apply(t, p, cat)?;
        if !self.m.points.is_empty() {
            let rel = t.constant(&[n * prep.neighbors.k, 3], prep.rel.clone())?;
            for b in &self.m.points {
                x = b.apply(t, p, x, &prep.neighbors, rel)?;
            }
        }
        let h = self.m.head_norm.apply(t, p, x)?;
        let h = self.m.head1.apply(t, p, h)?;
        let h = t.gelu(h);
        let offsets = self.m.head2.apply(t, p, h)?;
        Ok(NetOutput {
            t_en: [t_en[0], t_en[1]],
            t_ca: [t_ca[0], t_ca[1]],
            t_de,
            features,
            offsets,
        })
    }

    /// Forward pass on a fresh tape, returning the offset values.
    pub fn predict(&self, prep: &Prepared) -> Result<Vec<f32>> {
        let mut t = Tape::new();
        let p = self.store.bind(&mut t);
        let out = self.forward(&mut t, &p, prep)?;
        Ok(t.value(out.offsets).to_vec())
    }

    /// Predict offsets and compose the refined scene.
    pub fn infer(&self, prep: &Prepared) -> Result<GaussianScene> {
        let o = self.predict(prep)?;
        compose(
            &prep.dense,
            &o,
            offset_dim(self.config.sh_degree),
            &prep.caps,
            self.config.effective_compose(),
        )
    }
}
