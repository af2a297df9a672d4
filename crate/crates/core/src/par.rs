//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) the [`Exec::Parallel`] path
//! fans out over rayon's global pool. Without it every call runs on the
//! calling thread. Results are always returned in index order, so output does
//! not depend on the thread count.

/// Execution strategy for the data-parallel loops of the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

/// Evaluates `f(i)` for every `i` in `0..len`, in order.
pub fn map_range<R, F>(exec: Exec, len: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    match exec {
        Exec::Sequential => (0..len).map(f).collect(),
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
    }
}

/// Fills `out[i] = f(i)`.
pub fn fill_indexed<R, F>(exec: Exec, out: &mut [R], f: F)
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    match exec {
        Exec::Sequential => out.iter_mut().enumerate().for_each(|(i, o)| *o = f(i)),
        #[cfg(feature = "parallel")]
        Exec::Parallel => {
            use rayon::prelude::*;
            out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
        }
    }
}
