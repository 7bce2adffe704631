//! Data-parallel building blocks.
//!
//! With the `parallel` feature the closures run on the rayon pool; without it
//! the same entry points run sequentially. Results are collected in input
//! order and reduced after collection, so outputs never depend on the
//! schedule and the two builds produce identical values.
//!
//! The `_seq` twins are always sequential regardless of features; they exist
//! as the baseline arm of the bench suite.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// True when the crate was compiled with the `parallel` feature.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Sizes the global worker pool. Returns false when the pool was already
/// built, `n` is zero, or the crate was compiled without `parallel`.
pub fn configure_workers(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        if n == 0 {
            return false;
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}

#[cfg(feature = "parallel")]
pub fn map_items<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_items<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

pub fn map_items_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

pub fn map_range_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}
