use super::attention::{attention_backward, neighbor_backward};
use super::{gelu_grad, Node, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::real::Real;

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Grads<T> {
    g: Vec<Option<Vec<T>>>,
}

impl<T: Real> Grads<T> {
    /// Gradient of `v`, or `None` if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.g.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zeros if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }
}

fn acc<T: Real>(
    grads: &mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    v: Var,
    f: impl FnOnce(&mut [T]),
) {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); node.value.len()]);
    f(slot);
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

impl<T: Real> Tape<T> {
    /// Gradients of scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Result<Grads<T>> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Shape(format!(
                "backward: root has shape {:?}, expected a scalar",
                self.nodes[root.0].shape
            )));
        }
        self.backward_seeded(&[(root, vec![T::one()])])
    }

    /// Backward pass starting from explicit upstream gradients on one or
    /// more nodes.
    pub fn backward_seeded(&self, seeds: &[(Var, Vec<T>)]) -> Result<Grads<T>> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut top = 0;
        for (v, s) in seeds {
            let node = &self.nodes[v.0];
            if s.len() != node.value.len() {
                return Err(Error::Shape(format!(
                    "backward: seed of {} values for shape {:?}",
                    s.len(),
                    node.shape
                )));
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); s.len()]);
            add_into(slot, s);
            top = top.max(v.0 + 1);
        }
        for i in (0..top).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.step(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads { g: grads })
    }

    fn step(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let val = |v: &Var| nodes[v.0].value.as_slice();
        let out = nodes[i].value.as_slice();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, nodes, *a, |d| add_into(d, g));
                acc(grads, nodes, *b, |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(grads, nodes, *a, |d| add_into(d, g));
                acc(grads, nodes, *b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= *g));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(grads, nodes, *a, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * bv[k];
                    }
                });
                acc(grads, nodes, *b, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * av[k];
                    }
                });
            }
            Op::AddRow(x, b) => {
                acc(grads, nodes, *x, |d| add_into(d, g));
                acc(grads, nodes, *b, |d| {
                    let c = d.len();
                    for (k, gv) in g.iter().enumerate() {
                        d[k % c] += *gv;
                    }
                });
            }
            Op::MulRow(x, m) => {
                let (xv, mv) = (val(x), val(m));
                let c = mv.len();
                acc(grads, nodes, *x, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * mv[k % c];
                    }
                });
                acc(grads, nodes, *m, |d| {
                    for (k, gv) in g.iter().enumerate() {
                        d[k % c] += *gv * xv[k];
                    }
                });
            }
            Op::Scale(x, s) => acc(grads, nodes, *x, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += *g * *s)
            }),
            Op::Offset(x) | Op::Reshape(x) => acc(grads, nodes, *x, |d| add_into(d, g)),
            Op::MulConst(x, c) => acc(grads, nodes, *x, |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * c[k];
                }
            }),
            Op::MatMul(a, b, m, k, n) => {
                let (av, bv) = (val(a), val(b));
                let (m, k, n) = (*m, *k, *n);
                acc(grads, nodes, *a, |d| super::kernels::gemm_nt(g, bv, d, m, n, k));
                acc(grads, nodes, *b, |d| super::kernels::gemm_tn(av, g, d, k, m, n));
            }
            Op::Transpose(x, r, c) => {
                let (r, c) = (*r, *c);
                acc(grads, nodes, *x, |d| {
                    for a in 0..r {
                        for b in 0..c {
                            d[a * c + b] += g[b * r + a];
                        }
                    }
                });
            }
            Op::ConcatCols(parts, total) => {
                let rows = if *total == 0 { 0 } else { g.len() / total };
                let mut off = 0;
                for &(x, c) in parts {
                    acc(grads, nodes, x, |d| {
                        for r in 0..rows {
                            add_into(&mut d[r * c..(r + 1) * c], &g[r * total + off..r * total + off + c]);
                        }
                    });
                    off += c;
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let len = nodes[x.0].value.len();
                    acc(grads, nodes, x, |d| add_into(d, &g[off..off + len]));
                    off += len;
                }
            }
            Op::SliceCols(x, start, w, cols) => {
                let (start, w, cols) = (*start, *w, *cols);
                acc(grads, nodes, *x, |d| {
                    for r in 0..g.len() / w.max(1) {
                        add_into(&mut d[r * cols + start..r * cols + start + w], &g[r * w..(r + 1) * w]);
                    }
                });
            }
            Op::SliceRows(x, start) => {
                let cols = *nodes[x.0].shape.last().unwrap_or(&1);
                let off = start * cols;
                acc(grads, nodes, *x, |d| add_into(&mut d[off..off + g.len()], g));
            }
            Op::GatherRows(x, idx, cols) => {
                let c = *cols;
                acc(grads, nodes, *x, |d| {
                    for (r, &src) in idx.iter().enumerate() {
                        add_into(&mut d[src * c..(src + 1) * c], &g[r * c..(r + 1) * c]);
                    }
                });
            }
            Op::BroadcastRows(x) => acc(grads, nodes, *x, |d| {
                let c = d.len();
                for (k, gv) in g.iter().enumerate() {
                    d[k % c] += *gv;
                }
            }),
            Op::Softmax(x, cols) => {
                let c = *cols;
                acc(grads, nodes, *x, |d| {
                    for r in 0..out.len() / c.max(1) {
                        let y = &out[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: T = y.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                        for j in 0..c {
                            d[r * c + j] += y[j] * (gr[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                cols,
                xhat,
                inv_std,
            } => {
                let c = *cols;
                let gv = val(gain);
                let rows = inv_std.len();
                acc(grads, nodes, *gain, |d| {
                    for (k, gk) in g.iter().enumerate() {
                        d[k % c] += *gk * xhat[k];
                    }
                });
                acc(grads, nodes, *bias, |d| {
                    for (k, gk) in g.iter().enumerate() {
                        d[k % c] += *gk;
                    }
                });
                acc(grads, nodes, *x, |d| {
                    let n = T::of(c as f64);
                    for r in 0..rows {
                        let h = &xhat[r * c..(r + 1) * c];
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..c {
                            let dh = g[r * c + j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * h[j];
                        }
                        for j in 0..c {
                            let dh = g[r * c + j] * gv[j];
                            d[r * c + j] += inv_std[r] * (dh - sum_dh / n - h[j] * sum_dh_h / n);
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = val(x);
                acc(grads, nodes, *x, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * gelu_grad(xv[k]);
                    }
                });
            }
            Op::Tanh(x) => acc(grads, nodes, *x, |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * (T::one() - out[k] * out[k]);
                }
            }),
            Op::Sigmoid(x) => acc(grads, nodes, *x, |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * out[k] * (T::one() - out[k]);
                }
            }),
            Op::Exp(x) => acc(grads, nodes, *x, |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * out[k];
                }
            }),
            Op::Clamp(x, lo, hi) => {
                let xv = val(x);
                acc(grads, nodes, *x, |d| {
                    for k in 0..d.len() {
                        if xv[k] >= *lo && xv[k] <= *hi {
                            d[k] += g[k];
                        }
                    }
                });
            }
            Op::NormalizeRows(x, cols) => {
                let c = *cols;
                let xv = val(x);
                acc(grads, nodes, *x, |d| {
                    for r in 0..xv.len() / c.max(1) {
                        let xr = &xv[r * c..(r + 1) * c];
                        let yr = &out[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let n = xr.iter().map(|v| *v * *v).sum::<T>().sqrt().max(T::of(1e-12));
                        let dot: T = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                        for j in 0..c {
                            d[r * c + j] += (gr[j] - yr[j] * dot) / n;
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (nq, dm) = self.dims2(*q);
                let nk = self.dims2(*k).0;
                let (dq, dk, dv) =
                    attention_backward(val(q), val(k), val(v), probs, g, nq, nk, dm, *heads);
                acc(grads, nodes, *q, |d| add_into(d, &dq));
                acc(grads, nodes, *k, |d| add_into(d, &dk));
                acc(grads, nodes, *v, |d| add_into(d, &dv));
            }
            Op::NeighborAttention {
                q,
                k,
                v,
                bias,
                idx,
                kn,
                heads,
                probs,
            } => {
                let (n, dm) = self.dims2(*q);
                let m = self.dims2(*k).0;
                let r = neighbor_backward(
                    val(q),
                    val(k),
                    val(v),
                    probs,
                    idx,
                    g,
                    n,
                    m,
                    *kn,
                    dm,
                    *heads,
                );
                acc(grads, nodes, *q, |d| add_into(d, &r.dq));
                acc(grads, nodes, *k, |d| add_into(d, &r.dk));
                acc(grads, nodes, *v, |d| add_into(d, &r.dv));
                if let Some(b) = bias {
                    acc(grads, nodes, *b, |d| add_into(d, &r.dbias));
                }
            }
            Op::Mse(x, y) => {
                let (xv, yv) = (val(x), val(y));
                let s = g[0] * T::of(2.0 / xv.len().max(1) as f64);
                acc(grads, nodes, *x, |d| {
                    for k in 0..d.len() {
                        d[k] += s * (xv[k] - yv[k]);
                    }
                });
                acc(grads, nodes, *y, |d| {
                    for k in 0..d.len() {
                        d[k] -= s * (xv[k] - yv[k]);
                    }
                });
            }
            Op::Sum(x) => acc(grads, nodes, *x, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(x) => {
                let n = T::of(nodes[x.0].value.len().max(1) as f64);
                acc(grads, nodes, *x, |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
        }
    }
}
