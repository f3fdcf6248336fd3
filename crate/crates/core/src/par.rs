//! Data-parallel helpers that fall back to plain iteration when the
//! `parallel` feature is disabled.
//!
//! Every helper preserves input order in its output, so reductions done
//! over the returned `Vec` are deterministic regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `f` applied to every index in `0..n`, results in index order.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Like [`map_range`], but strictly sequential when `parallel` is false.
pub fn map_range_if<R, F>(parallel: bool, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if parallel {
        map_range(n, f)
    } else {
        (0..n).map(f).collect()
    }
}

/// `f` applied to every element, results in input order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Number of worker threads the helpers above will use.
pub fn threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Cap the global worker pool. Only the first call has an effect; returns
/// false when the pool was already initialized (or the feature is off).
pub fn init_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global().is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}

/// Honour `SLOTAUG_THREADS` if set.
pub fn init_from_env() {
    if let Some(n) = std::env::var("SLOTAUG_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        init_threads(n);
    }
}
