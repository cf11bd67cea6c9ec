//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers dispatch onto rayon; without it,
//! or when the runtime mode is [`Exec::Sequential`], they run inline. Every
//! helper returns results in index order, so both modes produce identical
//! output.

use std::sync::atomic::{AtomicBool, Ordering};

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "SPLATSR_THREADS";

static SEQUENTIAL: AtomicBool = AtomicBool::new(false);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

pub fn set_exec(exec: Exec) {
    SEQUENTIAL.store(exec == Exec::Sequential, Ordering::Relaxed);
}

pub fn exec() -> Exec {
    if cfg!(feature = "parallel") && !SEQUENTIAL.load(Ordering::Relaxed) {
        Exec::Parallel
    } else {
        Exec::Sequential
    }
}

/// Configure the global pool from [`THREADS_ENV`]. Safe to call more than once.
pub fn init_threads_from_env() {
    #[cfg(feature = "parallel")]
    if let Some(n) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global();
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_indexed<O, F>(n: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(usize) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec() == Exec::Parallel && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Apply `f(chunk_index, chunk)` over fixed-size mutable chunks.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if exec() == Exec::Parallel && data.len() > chunk {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let seq: Vec<usize> = (0..100).map(|i| i * i).collect();
        assert_eq!(map_indexed(100, |i| i * i), seq);
        let mut a = vec![0usize; 37];
        for_each_chunk_mut(&mut a, 5, |ci, c| {
            for (j, v) in c.iter_mut().enumerate() {
                *v = ci * 5 + j;
            }
        });
        assert_eq!(a, (0..37).collect::<Vec<_>>());
    }
}
