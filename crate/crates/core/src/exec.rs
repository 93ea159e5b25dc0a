//! Execution policy for node loops.
//!
//! Every parallel map writes each output slot from exactly one closure call, and all
//! reductions run sequentially in node order, so results do not depend on the
//! thread count.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[derive(Default)]
pub enum Exec {
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}


const PAR_MIN_LEN: usize = 2048;

impl Exec {
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                if n < PAR_MIN_LEN {
                    (0..n).map(f).collect()
                } else {
                    (0..n).into_par_iter().with_min_len(512).map(f).collect()
                }
            }
        }
    }

    /// Like `map`, for coarse-grained jobs (one solve per item).
    pub fn map_tasks<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
        }
    }

    pub fn fill<F>(self, out: &mut [f64], f: F)
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        match self {
            Exec::Sequential => out.iter_mut().enumerate().for_each(|(i, o)| *o = f(i)),
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                if out.len() < PAR_MIN_LEN {
                    out.iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
                } else {
                    out.par_iter_mut().with_min_len(512).enumerate().for_each(|(i, o)| *o = f(i));
                }
            }
        }
    }
}

/// Pairwise sum in index order. Fixed tree shape, so bitwise reproducible.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
