//! Dense row-major kernels. Each output row is produced by exactly one task,
//! so sequential and parallel execution give identical bits.

use crate::par;
use crate::real::Real;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let rpt = rows_per_task(m, k * n);
    par::for_each_chunk_mut(c, n * rpt, |ci, chunk| {
        let rows = chunk.len() / n;
        let row0 = ci * rpt;
        for r in 0..rows {
            let i = row0 + r;
            row_times_matrix(&a[i * k..(i + 1) * k], b, &mut chunk[r * n..(r + 1) * n], n);
        }
    });
}

const BLOCK: usize = 16;

/// `out[n] += arow[k] · b[k×n]`, in column blocks held in registers
/// across the whole `k` loop.
fn row_times_matrix<T: Real>(arow: &[T], b: &[T], out: &mut [T], n: usize) {
    let full = n / BLOCK * BLOCK;
    for j0 in (0..full).step_by(BLOCK) {
        let mut acc = [T::zero(); BLOCK];
        for (p, &av) in arow.iter().enumerate() {
            let bb: &[T; BLOCK] = b[p * n + j0..p * n + j0 + BLOCK].try_into().expect("block");
            for l in 0..BLOCK {
                acc[l] += av * bb[l];
            }
        }
        for (o, v) in out[j0..j0 + BLOCK].iter_mut().zip(acc) {
            *o += v;
        }
    }
    if full < n {
        let tail = &mut out[full..];
        for (p, &av) in arow.iter().enumerate() {
            for (o, &bv) in tail.iter_mut().zip(&b[p * n + full..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
///
/// Transposes `b` and runs the axpy form, which vectorizes over `n`.
pub fn gemm_nt<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    gemm_nn(a, &transpose(b, n, k), c, m, k, n);
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
///
/// Rank-1 updates over `k`; each task owns a block of output rows, which
/// stays in cache while `a` and `b` stream past. Few, large blocks keep
/// the number of passes over `b` small.
pub fn gemm_tn<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let rpt = rows_per_task(m, k * n).max(m.div_ceil(4));
    par::for_each_chunk_mut(c, n * rpt, |ci, chunk| {
        let rows = chunk.len() / n;
        let row0 = ci * rpt;
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let acol = &a[p * m + row0..p * m + row0 + rows];
            for (out, &av) in chunk.chunks_exact_mut(n).zip(acol) {
                for (o, &bv) in out.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    });
}

/// Row-major `r×c` to `c×r`.
pub fn transpose<T: Real>(x: &[T], r: usize, c: usize) -> Vec<T> {
    let mut t = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = x[i * c + j];
        }
    }
    t
}

/// Dot product with eight independent accumulators, combined in a fixed
/// order so the result does not depend on scheduling.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        let x: &[T; 8] = x.try_into().expect("chunk of 8");
        let y: &[T; 8] = y.try_into().expect("chunk of 8");
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

// Keep tasks at roughly 32k multiply-adds.
fn rows_per_task(m: usize, work_per_row: usize) -> usize {
    (32_768 / work_per_row.max(1)).clamp(1, m.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn kernels_agree_with_naive() {
        let (m, k, n) = (37, 19, 23);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 5) % 11) as f64 * 0.5 - 2.0).collect();
        let want = naive(&a, &b, m, k, n);
        let mut c = vec![0.0; m * n];
        gemm_nn(&a, &b, &mut c, m, k, n);
        assert_eq!(c, want);
        let mut c = vec![0.0; m * n];
        gemm_nt(&a, &transpose(&b, k, n), &mut c, m, k, n);
        assert_eq!(c, want);
        let mut c = vec![0.0; m * n];
        gemm_tn(&transpose(&a, m, k), &b, &mut c, m, k, n);
        assert_eq!(c, want);
        // Long inner dimension takes the blocked dot-product path.
        let (m, k, n) = (5, 41, 3);
        let a: Vec<f64> = (0..m * k).map(|i| ((i * 3) % 7) as f64 - 3.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| ((i * 11) % 5) as f64).collect();
        let want = naive(&a, &b, m, k, n);
        let mut c = vec![0.0; m * n];
        gemm_nt(&a, &transpose(&b, k, n), &mut c, m, k, n);
        assert_eq!(c, want);
        let mut c = vec![0.0; m * n];
        gemm_tn(&transpose(&a, m, k), &b, &mut c, m, k, n);
        assert_eq!(c, want);
    }
}
