//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature, [`Mode::Parallel`] runs on the rayon pool;
//! without it every mode runs sequentially. Results always come back in
//! input order, so output never depends on scheduling.

/// Execution strategy for [`map`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    Sequential,
    #[default]
    Parallel,
}

impl Mode {
    /// Whether `Parallel` actually runs on more than one thread in this build.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

/// Applies `f` to every item, preserving order.
pub fn map<T, R, F>(mode: Mode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        Mode::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

/// Like [`map`] for fallible work; the first error in input order wins.
pub fn try_map<T, R, E, F>(mode: Mode, items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    map(mode, items, f).into_iter().collect()
}
