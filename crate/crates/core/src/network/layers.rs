//! Parameterized building blocks on top of the tape.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Bound, ParamId, ParamStore, Tape, Var};

pub(crate) const INIT_STD: f32 = 0.02;

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = store.add_trunc_normal(&format!("{name}.w"), &[inp, out], INIT_STD, rng)?;
        let b = if bias {
            Some(store.add_zeros(&format!("{name}.b"), &[out])?)
        } else {
            None
        };
        Ok(Self { w, b, inp, out })
    }

    /// All-zero weights and bias.
    pub fn zeros(store: &mut ParamStore, name: &str, inp: usize, out: usize) -> Result<Self> {
        let w = store.add_zeros(&format!("{name}.w"), &[inp, out])?;
        let b = Some(store.add_zeros(&format!("{name}.b"), &[out])?);
        Ok(Self { w, b, inp, out })
    }

    pub fn apply(&self, t: &mut Tape<f32>, p: &Bound, x: Var) -> Result<Var> {
        t.linear(x, p.var(self.w), self.b.map(|b| p.var(b)))
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add_const(&format!("{name}.g"), &[dim], 1.0)?,
            bias: store.add_zeros(&format!("{name}.b"), &[dim])?,
        })
    }

    pub fn apply(&self, t: &mut Tape<f32>, p: &Bound, x: Var) -> Result<Var> {
        t.layer_norm(x, p.var(self.gain), p.var(self.bias))
    }
}

/// Two linear layers with a GELU between them.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        inp: usize,
        hidden: usize,
        out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), inp, hidden, true, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, out, true, rng)?,
        })
    }

    pub fn apply(&self, t: &mut Tape<f32>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.fc1.apply(t, p, x)?;
        let h = t.gelu(h);
        self.fc2.apply(t, p, h)
    }
}

/// Multi-head attention with bias-free Q/K/V projections and a biased
/// output projection.
#[derive(Clone, Debug)]
pub struct Mha {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Mha {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, false, rng)?,
            k: Linear::new(store, &format!("{name}.k"), dim, dim, false, rng)?,
            v: Linear::new(store, &format!("{name}.v"), dim, dim, false, rng)?,
            o: Linear::new(store, &format!("{name}.o"), dim, dim, true, rng)?,
            heads,
        })
    }

    /// Queries from `x`, keys and values from `ctx`.
    pub fn apply(&self, t: &mut Tape<f32>, p: &Bound, x: Var, ctx: Var) -> Result<Var> {
        let q = self.q.apply(t, p, x)?;
        let k = self.k.apply(t, p, ctx)?;
        let v = self.v.apply(t, p, ctx)?;
        let a = t.attention(q, k, v, self.heads)?;
        self.o.apply(t, p, a)
    }
}

/// Pre-norm transformer block: self-attention then MLP, both residual.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub norm1: Norm,
    pub attn: Mha,
    pub norm2: Norm,
    pub mlp: Mlp,
}

impl EncoderBlock {
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
            attn: Mha::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm2: Norm::new(store, &format!("{name}.norm2"), dim)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), dim, dim * mlp_ratio, dim, rng)?,
        })
    }

    pub fn apply(&self, t: &mut Tape<f32>, p: &Bound, x: Var) -> Result<Var> {
        let h = self.norm1.apply(t, p, x)?;
        let h = self.attn.apply(t, p, h, h)?;
        let x = t.add(x, h)?;
        let h = self.norm2.apply(t, p, x)?;
        let h = self.mlp.apply(t, p, h)?;
        t.add(x, h)
    }
}

/// Fixed 2D sine-cosine encoding, `[rows·cols, dim]`, `dim % 4 == 0`.
pub fn sincos_2d(rows: usize, cols: usize, dim: usize) -> Vec<f32> {
    let quarter = dim / 4;
    let mut out = Vec::with_capacity(rows * cols * dim);
    for r in 0..rows {
        for c in 0..cols {
            for (pos, _) in [(c as f64, 0), (r as f64, 1)] {
                for k in 0..quarter {
                    let omega = 1.0 / 10000f64.powf(k as f64 / quarter as f64);
                    out.push((pos * omega).sin() as f32);
                }
                for k in 0..quarter {
                    let omega = 1.0 / 10000f64.powf(k as f64 / quarter as f64);
                    out.push((pos * omega).cos() as f32);
                }
            }
        }
    }
    out
}
