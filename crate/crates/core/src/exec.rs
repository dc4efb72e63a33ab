//! Execution mode for the data-parallel inner loops.
//!
//! Every reduction goes through fixed-size chunks whose partial results are
//! combined in index order, so a result never depends on the worker count or
//! on whether the `parallel` feature is enabled.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Elements per reduction chunk. Part of the determinism contract: changing
/// it changes floating-point results in the last bits.
pub const REDUCE_CHUNK: usize = 1024;

/// How the data-parallel loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    /// Plain iterators on the calling thread.
    Sequential,
    /// Rayon work-stealing pool. Falls back to sequential when the crate is
    /// built without the `parallel` feature.
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Whether work will actually be spread over a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `(0..n).map(f).collect()`, preserving index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Applies `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces
    /// of `data`.
    pub fn for_each_chunk_mut<T, F>(self, data: &mut [T], chunk: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c));
            return;
        }
        data.chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }

    /// Partial results of `f` over `0..n` split into ranges of `chunk`,
    /// returned in range order.
    pub fn chunked<T, F>(self, n: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync + Send,
    {
        let chunk = chunk.max(1);
        let pieces = n.div_ceil(chunk);
        self.map(pieces, |p| {
            let start = p * chunk;
            f(start..(start + chunk).min(n))
        })
    }

    /// Sum of `term(i)` for `i in 0..n` with the fixed-chunk combination
    /// order.
    pub fn sum<F>(self, n: usize, term: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        self.chunked(n, REDUCE_CHUNK, |r| r.map(&term).sum::<f64>())
            .into_iter()
            .sum()
    }
}

/// Caps the global rayon pool at `threads` workers. Returns `false` when the
/// pool was already initialised or the crate is built sequential-only.
pub fn init_thread_pool(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}

/// Reads `WARMUP_THREADS` and, when set, caps the global pool accordingly.
/// An unset or empty variable leaves the default pool alone.
pub fn init_from_env() -> Result<Option<usize>, String> {
    let raw = match std::env::var("WARMUP_THREADS") {
        Ok(s) if !s.trim().is_empty() => s,
        _ => return Ok(None),
    };
    match raw.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            init_thread_pool(n);
            Ok(Some(n))
        }
        _ => Err(format!(
            "WARMUP_THREADS must be a positive integer, got {raw:?}"
        )),
    }
}
