//! Parallel execution helpers with a sequential fallback.
//!
//! All data-parallel loops in the crate go through [`map_indexed`] /
//! [`try_map_indexed`]. With the `parallel` feature enabled (the default)
//! they fan out on rayon; without it, or after [`set_parallel`]`(false)`,
//! they run as plain loops. Outputs are collected by index, so the two
//! modes produce bitwise-identical results; reductions over the returned
//! vectors are always done sequentially in index order.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Toggle parallel execution at runtime. A no-op (stays sequential) when the
/// crate was built without the `parallel` feature.
pub fn set_parallel(on: bool) {
    PARALLEL.store(on && cfg!(feature = "parallel"), Ordering::Relaxed);
}

/// Whether data-parallel loops currently fan out on rayon.
pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Configure the global rayon pool to `workers` threads. Call once, before
/// any parallel work; later calls are ignored by rayon. `0` keeps the
/// default (one thread per core). `1` disables parallel execution entirely.
pub fn configure_workers(workers: usize) {
    if workers == 1 {
        set_parallel(false);
        return;
    }
    #[cfg(feature = "parallel")]
    if workers > 1 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indexed`]. On error, the smallest-index error
/// is returned regardless of execution order.
pub fn try_map_indexed<T, F, E>(n: usize, f: F) -> std::result::Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> std::result::Result<T, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        let results: Vec<std::result::Result<T, E>> = (0..n).into_par_iter().map(f).collect();
        let mut out = Vec::with_capacity(n);
        for r in results {
            out.push(r?);
        }
        return Ok(out);
    }
    (0..n).map(f).collect()
}
