//! Data-parallel map helpers.
//!
//! With the `parallel` feature (default), [`map_vec`] fans work out over
//! rayon; without it, it degrades to a plain sequential map. Output order
//! always matches input order, so callers that reduce the returned vector
//! sequentially get bit-identical results in both modes and for any thread
//! count. [`map_vec_seq`] is the always-sequential variant used by the
//! benchmark suite for comparison.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_vec<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map `f` over `items`, in parallel when the `parallel` feature is on.
#[cfg(not(feature = "parallel"))]
pub fn map_vec<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Sequential map with the same signature as [`map_vec`].
pub fn map_vec_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}
