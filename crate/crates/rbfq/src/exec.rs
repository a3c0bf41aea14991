//! Batch execution: data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) `map_indexed` fans out over the
//! rayon pool; without it the same call runs sequentially. Results are
//! collected in index order either way, so downstream reductions see an
//! identical element order and training stays bit-reproducible regardless
//! of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential version of [`map_indexed`], always available. The benchmark
/// suite compares the two; tests assert they agree bitwise.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}
