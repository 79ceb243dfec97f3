//! Execution strategy for the data-parallel loops in this crate.
//!
//! Every hot loop that fans out over independent items (files, mulpies,
//! sequences in a batch) goes through [`Exec`]. With the `parallel` feature
//! (on by default) `Exec::Parallel` runs on the rayon global pool; without it
//! both variants run sequentially. Output order is always the input order, so
//! results are identical under either strategy.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// True when this strategy actually runs on more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Order-preserving map over a range of indices.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    /// Map each chunk to a partial result and fold the partials left to right.
    ///
    /// The fold is sequential and in chunk order, so floating-point reductions
    /// give the same bits whichever strategy produced the partials.
    pub fn map_reduce<T, R, M, F>(self, items: &[T], chunk: usize, map: M, init: R, fold: F) -> R
    where
        T: Sync,
        R: Send,
        M: Fn(&[T]) -> R + Sync + Send,
        F: FnMut(R, R) -> R,
    {
        let chunk = chunk.max(1);
        let chunks: Vec<&[T]> = items.chunks(chunk).collect();
        let partials = self.map(&chunks, |c| map(c));
        partials.into_iter().fold(init, fold)
    }
}
