//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) work fans out over a rayon pool whose
//! size is capped by `FACTLAB_THREADS` or [`set_max_threads`]. Without the
//! feature, or with a cap of 1, every helper runs sequentially. Results are
//! always returned in input order, so reductions over them are deterministic
//! regardless of the thread count.

use std::sync::atomic::{AtomicUsize, Ordering};

static THREAD_CAP: AtomicUsize = AtomicUsize::new(0);

/// Caps the worker count for subsequent calls. `0` restores the default.
pub fn set_max_threads(n: usize) {
    THREAD_CAP.store(n, Ordering::SeqCst);
}

/// Effective worker count.
pub fn max_threads() -> usize {
    let cap = THREAD_CAP.load(Ordering::SeqCst);
    if cap > 0 {
        return cap;
    }
    if let Some(n) = std::env::var("FACTLAB_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        return n;
    }
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && max_threads() > 1
}

#[cfg(feature = "parallel")]
mod pool {
    use std::sync::{Arc, Mutex};

    static POOL: Mutex<Option<(usize, Arc<rayon::ThreadPool>)>> = Mutex::new(None);

    pub fn get(threads: usize) -> Arc<rayon::ThreadPool> {
        let mut guard = POOL.lock().unwrap_or_else(|e| e.into_inner());
        match &*guard {
            Some((n, pool)) if *n == threads => pool.clone(),
            _ => {
                let pool = Arc::new(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(threads)
                        .build()
                        .expect("failed to build rayon pool"),
                );
                *guard = Some((threads, pool.clone()));
                pool
            }
        }
    }
}

/// Order-preserving map over a slice.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() && items.len() > 1 {
            use rayon::prelude::*;
            return pool::get(max_threads()).install(|| items.par_iter().map(&f).collect());
        }
    }
    items.iter().map(f).collect()
}

/// Order-preserving map over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() && n > 1 {
            use rayon::prelude::*;
            return pool::get(max_threads()).install(|| (0..n).into_par_iter().map(&f).collect());
        }
    }
    (0..n).map(f).collect()
}

/// Order-preserving fallible map; the first error by index wins.
pub fn try_map<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}
