//! Fused multi-head attention ops. Probabilities are kept on the tape for
//! the backward pass and for inspection.

use super::{softmax_in_place, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::par;
use crate::real::Real;

impl<T: Real> Tape<T> {
    /// Scaled dot-product attention of `q: [nq, d]` over `k, v: [nk, d]`,
    /// split into `heads` contiguous channel groups. Output is `[nq, d]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (nq, d) = self.dims2(q);
        let (nk, dk) = self.dims2(k);
        if dk != d || self.dims2(v) != (nk, d) {
            return Err(Error::Shape(format!(
                "attention: q {:?}, k {:?}, v {:?}",
                self.shape(q),
                self.shape(k),
                self.shape(v)
            )));
        }
        if heads == 0 || d % heads != 0 || nk == 0 {
            return Err(Error::Shape(format!(
                "attention: {d} channels, {heads} heads, {nk} keys"
            )));
        }
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let rows = par::map_indexed(nq, |i| {
            let mut out = vec![T::zero(); d];
            let mut probs = vec![T::zero(); heads * nk];
            for h in 0..heads {
                let qi = &qv[i * d + h * dh..i * d + (h + 1) * dh];
                let p = &mut probs[h * nk..(h + 1) * nk];
                for (j, pj) in p.iter_mut().enumerate() {
                    let kj = &kv[j * d + h * dh..j * d + (h + 1) * dh];
                    *pj = dot(qi, kj) * scale;
                }
                softmax_in_place(p);
                let o = &mut out[h * dh..(h + 1) * dh];
                for (j, &pj) in p.iter().enumerate() {
                    let vj = &vv[j * d + h * dh..j * d + (h + 1) * dh];
                    axpy(o, pj, vj);
                }
            }
            (out, probs)
        });
        let mut out = Vec::with_capacity(nq * d);
        let mut probs = Vec::with_capacity(nq * heads * nk);
        for (o, p) in rows {
            out.extend(o);
            probs.extend(p);
        }
        Ok(self.push(
            out,
            vec![nq, d],
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Sparse attention where query row `i` attends to key rows
    /// `idx[i*kn..(i+1)*kn]`. `bias`, if given, is `[n*kn, heads]` and is
    /// added to the logits.
    pub fn neighbor_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        idx: &[usize],
        kn: usize,
        bias: Option<Var>,
        heads: usize,
    ) -> Result<Var> {
        let (n, d) = self.dims2(q);
        let (m, dk) = self.dims2(k);
        if dk != d || self.dims2(v) != (m, d) || idx.len() != n * kn {
            return Err(Error::Shape(format!(
                "neighbor_attention: q {:?}, k {:?}, v {:?}, {} indices for k={kn}",
                self.shape(q),
                self.shape(k),
                self.shape(v),
                idx.len()
            )));
        }
        if heads == 0 || d % heads != 0 || kn == 0 {
            return Err(Error::Shape(format!(
                "neighbor_attention: {d} channels, {heads} heads, k={kn}"
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&j| j >= m) {
            return Err(Error::Shape(format!(
                "neighbor_attention: index {bad} out of {m} rows"
            )));
        }
        if let Some(b) = bias {
            if self.value(b).len() != n * kn * heads {
                return Err(Error::Shape(format!(
                    "neighbor_attention: bias {:?}, expected [{}, {heads}]",
                    self.shape(b),
                    n * kn
                )));
            }
        }
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let bv = bias.map(|b| self.value(b));
        let rows = par::map_indexed(n, |i| {
            let mut out = vec![T::zero(); d];
            let mut probs = vec![T::zero(); heads * kn];
            let nb = &idx[i * kn..(i + 1) * kn];
            for h in 0..heads {
                let qi = &qv[i * d + h * dh..i * d + (h + 1) * dh];
                let p = &mut probs[h * kn..(h + 1) * kn];
                for (s, &j) in nb.iter().enumerate() {
                    let kj = &kv[j * d + h * dh..j * d + (h + 1) * dh];
                    p[s] = dot(qi, kj) * scale;
                    if let Some(bv) = bv {
                        p[s] += bv[(i * kn + s) * heads + h];
                    }
                }
                softmax_in_place(p);
                let o = &mut out[h * dh..(h + 1) * dh];
                for (s, &j) in nb.iter().enumerate() {
                    let vj = &vv[j * d + h * dh..j * d + (h + 1) * dh];
                    axpy(o, p[s], vj);
                }
            }
            (out, probs)
        });
        let mut out = Vec::with_capacity(n * d);
        let mut probs = Vec::with_capacity(n * heads * kn);
        for (o, p) in rows {
            out.extend(o);
            probs.extend(p);
        }
        let inputs: Vec<Var> = [q, k, v].into_iter().chain(bias).collect();
        Ok(self.push(
            out,
            vec![n, d],
            Op::NeighborAttention {
                q,
                k,
                v,
                bias,
                idx: idx.to_vec(),
                kn,
                heads,
                probs,
            },
            &inputs,
        ))
    }

    /// Attention probabilities recorded by an attention node, laid out as
    /// `[query, head, key]`.
    pub fn attention_probs(&self, node: Var) -> Option<&[T]> {
        match &self.nodes[node.0].op {
            Op::Attention { probs, .. } | Op::NeighborAttention { probs, .. } => Some(probs),
            _ => None,
        }
    }
}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

pub(crate) fn axpy<T: Real>(y: &mut [T], a: T, x: &[T]) {
    for (o, v) in y.iter_mut().zip(x) {
        *o += a * *v;
    }
}

/// Backward of dense attention. Returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Real>(
    qv: &[T],
    kv: &[T],
    vv: &[T],
    probs: &[T],
    g: &[T],
    nq: usize,
    nk: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    // dS per query row, [nq, heads, nk]; dq per query row.
    let rows = par::map_indexed(nq, |i| {
        let mut ds = vec![T::zero(); heads * nk];
        let mut dq = vec![T::zero(); d];
        for h in 0..heads {
            let gi = &g[i * d + h * dh..i * d + (h + 1) * dh];
            let p = &probs[(i * heads + h) * nk..(i * heads + h + 1) * nk];
            let dsh = &mut ds[h * nk..(h + 1) * nk];
            let mut acc = T::zero();
            for j in 0..nk {
                let vj = &vv[j * d + h * dh..j * d + (h + 1) * dh];
                dsh[j] = dot(gi, vj);
                acc += p[j] * dsh[j];
            }
            for j in 0..nk {
                dsh[j] = p[j] * (dsh[j] - acc);
            }
            let dqh = &mut dq[h * dh..(h + 1) * dh];
            for j in 0..nk {
                let kj = &kv[j * d + h * dh..j * d + (h + 1) * dh];
                axpy(dqh, dsh[j] * scale, kj);
            }
        }
        (ds, dq)
    });
    let mut ds = Vec::with_capacity(nq * heads * nk);
    let mut dq = Vec::with_capacity(nq * d);
    for (a, b) in rows {
        ds.extend(a);
        dq.extend(b);
    }
    let cols = par::map_indexed(nk, |j| {
        let mut dk = vec![T::zero(); d];
        let mut dv = vec![T::zero(); d];
        for i in 0..nq {
            for h in 0..heads {
                let r = (i * heads + h) * nk + j;
                let qi = &qv[i * d + h * dh..i * d + (h + 1) * dh];
                let gi = &g[i * d + h * dh..i * d + (h + 1) * dh];
                axpy(&mut dk[h * dh..(h + 1) * dh], ds[r] * scale, qi);
                axpy(&mut dv[h * dh..(h + 1) * dh], probs[r], gi);
            }
        }
        (dk, dv)
    });
    let mut dk = Vec::with_capacity(nk * d);
    let mut dv = Vec::with_capacity(nk * d);
    for (a, b) in cols {
        dk.extend(a);
        dv.extend(b);
    }
    (dq, dk, dv)
}

pub(crate) struct NeighborGrads<T> {
    pub dq: Vec<T>,
    pub dk: Vec<T>,
    pub dv: Vec<T>,
    pub dbias: Vec<T>,
}

/// Backward of neighbor attention. Scatter into key rows is sequential in
/// query order so the result does not depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub(crate) fn neighbor_backward<T: Real>(
    qv: &[T],
    kv: &[T],
    vv: &[T],
    probs: &[T],
    idx: &[usize],
    g: &[T],
    n: usize,
    m: usize,
    kn: usize,
    d: usize,
    heads: usize,
) -> NeighborGrads<T> {
    let dh = d / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    struct Row<T> {
        dq: Vec<T>,
        ds: Vec<T>,
        dk: Vec<T>,
        dv: Vec<T>,
    }
    let rows = par::map_indexed(n, |i| {
        let nb = &idx[i * kn..(i + 1) * kn];
        let mut r = Row {
            dq: vec![T::zero(); d],
            ds: vec![T::zero(); kn * heads],
            dk: vec![T::zero(); kn * d],
            dv: vec![T::zero(); kn * d],
        };
        for h in 0..heads {
            let gi = &g[i * d + h * dh..i * d + (h + 1) * dh];
            let qi = &qv[i * d + h * dh..i * d + (h + 1) * dh];
            let p = &probs[(i * heads + h) * kn..(i * heads + h + 1) * kn];
            let mut dp = vec![T::zero(); kn];
            let mut acc = T::zero();
            for (s, &j) in nb.iter().enumerate() {
                let vj = &vv[j * d + h * dh..j * d + (h + 1) * dh];
                dp[s] = dot(gi, vj);
                acc += p[s] * dp[s];
            }
            for (s, &j) in nb.iter().enumerate() {
                let ds = p[s] * (dp[s] - acc);
                r.ds[s * heads + h] = ds;
                let kj = &kv[j * d + h * dh..j * d + (h + 1) * dh];
                axpy(&mut r.dq[h * dh..(h + 1) * dh], ds * scale, kj);
                axpy(&mut r.dk[s * d + h * dh..s * d + (h + 1) * dh], ds * scale, qi);
                axpy(&mut r.dv[s * d + h * dh..s * d + (h + 1) * dh], p[s], gi);
            }
        }
        r
    });
    let mut out = NeighborGrads {
        dq: Vec::with_capacity(n * d),
        dk: vec![T::zero(); m * d],
        dv: vec![T::zero(); m * d],
        dbias: Vec::with_capacity(n * kn * heads),
    };
    for (i, r) in rows.into_iter().enumerate() {
        out.dq.extend(r.dq);
        out.dbias.extend(r.ds);
        for (s, &j) in idx[i * kn..(i + 1) * kn].iter().enumerate() {
            axpy(&mut out.dk[j * d..(j + 1) * d], T::one(), &r.dk[s * d..(s + 1) * d]);
            axpy(&mut out.dv[j * d..(j + 1) * d], T::one(), &r.dv[s * d..(s + 1) * d]);
        }
    }
    out
}
