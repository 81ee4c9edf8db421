//! Element-parallel execution with deterministic, index-ordered results.
//!
//! All assembly loops go through [`map_indexed`], which produces a `Vec`
//! indexed by element. Reductions over that vector happen sequentially in
//! index order, so results are bit-identical regardless of thread count.
//! The `parallel` feature selects rayon; without it everything runs
//! sequentially. [`force_sequential`] flips the parallel build into the
//! sequential path at runtime, which the benches use to compare both.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Globally disable (or re-enable) the rayon path at runtime.
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

/// Whether calls to [`map_indexed`] will currently run in parallel.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    if FORCE_SEQUENTIAL.load(Ordering::SeqCst) {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Cap the global thread pool. Honors the `CONFORMAL_DEFORM_THREADS`
/// environment variable; a no-op on sequential builds or when the pool has
/// already been initialized.
pub fn init_threads_from_env() {
    #[cfg(feature = "parallel")]
    {
        if let Ok(v) = std::env::var("CONFORMAL_DEFORM_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n >= 1 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    }
}
