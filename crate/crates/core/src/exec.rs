//! Execution policy for the data-parallel loops.
//!
//! Every parallel loop in the crate goes through [`map_collect`] or
//! [`map_chunks`], which always return results in index order. Reductions are
//! done afterwards with [`pairwise_sum`], so a result never depends on how
//! many threads ran or in which order they finished.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise runs
    /// sequentially.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `0..len`, returning results in index order.
pub fn map_collect<T, F>(exec: Execution, len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..len).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..len).map(f).collect()
}

/// Maps `f` over fixed-size chunks of `0..len`. Chunk boundaries depend only
/// on `chunk`, never on the thread count.
pub fn map_chunks<T, F>(exec: Execution, len: usize, chunk: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
{
    let chunk = chunk.max(1);
    let count = len.div_ceil(chunk);
    map_collect(exec, count, |c| {
        let start = c * chunk;
        f(start..(start + chunk).min(len))
    })
}

/// Runs two independent computations, concurrently when parallel.
pub fn join<A, B, FA, FB>(exec: Execution, fa: FA, fb: FB) -> (A, B)
where
    A: Send,
    B: Send,
    FA: FnOnce() -> A + Send,
    FB: FnOnce() -> B + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return rayon::join(fa, fb);
    }
    let _ = exec;
    (fa(), fb())
}

/// Pairwise (cascade) summation in a fixed tree order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let out = map_chunks(Execution::Parallel, 10, 3, |r| (r.start, r.end));
        assert_eq!(out, vec![(0, 3), (3, 6), (6, 9), (9, 10)]);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let v: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.37).sin();
        let a = map_collect(Execution::Sequential, 5000, f);
        let b = map_collect(Execution::Parallel, 5000, f);
        assert_eq!(pairwise_sum(&a).to_bits(), pairwise_sum(&b).to_bits());
    }
}
