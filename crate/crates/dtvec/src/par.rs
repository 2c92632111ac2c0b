//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature enabled (the default) the map runs on the
//! rayon pool when `parallel` is true; otherwise it runs sequentially.
//! Output order always matches input order, so results are identical
//! either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn maybe_par_map<T, U, F>(items: Vec<T>, parallel: bool, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.into_par_iter().map(f).collect();
    }
    let _ = parallel;
    items.into_iter().map(f).collect()
}
