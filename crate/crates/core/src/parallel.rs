//! Scoped worker pools.
//!
//! Parallel code in this crate only ever maps independent items and collects
//! them in index order; reductions happen sequentially afterwards. Results
//! are therefore identical for every worker count.

/// Runs `f` on a dedicated rayon pool with `workers` threads. `workers == 0`
/// uses the global pool.
pub fn with_workers<R, F>(workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not build a {workers}-thread pool ({e}); running on the global pool");
            f()
        }
    }
}
