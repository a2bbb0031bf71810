//! Data parallelism over independent jobs (ensemble members, grid
//! candidates). Results come back in index order, so the output does not
//! depend on the thread count.

/// `(0..n).map(f)`, spread over `threads` workers when the `parallel` feature
/// is on. `threads == 0` uses the default pool size; `threads == 1` runs
/// inline.
pub fn map_indexed<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if threads != 1 && n > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
    }
    let _ = threads;
    (0..n).map(f).collect()
}

/// Sequential reference path.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
