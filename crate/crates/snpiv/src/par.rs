//! Data-parallel helpers with a sequential fallback.
//!
//! Parallelism is purely elementwise: every helper computes element `i`
//! independently and merges partial results in index order, so the parallel
//! and sequential paths produce bit-identical floating point results.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential path at runtime even when the `parallel` feature is
/// compiled in. Used by the benchmark suite to compare both paths.
pub fn force_sequential(on: bool) {
    FORCE_SEQUENTIAL.store(on, Ordering::SeqCst);
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Fixed chunk size for reductions. Independent of thread count, so results
/// do not depend on the scheduler or on the `parallel` feature.
pub const CHUNK: usize = 1024;

/// Sum `f(i)` over `0..n` with fixed chunking.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let partials = map_indexed(chunks, |c| {
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(n);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        acc
    });
    partials.into_iter().sum()
}

/// Chunked fold-and-merge for accumulator types (e.g. gradient buffers).
/// `fold` consumes indices within a chunk, `merge` combines chunk partials in
/// index order.
pub fn fold_indexed<A, I, F, G>(n: usize, init: I, fold: F, merge: G) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(A, usize) -> A + Sync,
    G: Fn(A, A) -> A,
{
    let chunks = n.div_ceil(CHUNK);
    let partials = map_indexed(chunks, |c| {
        let lo = c * CHUNK;
        let hi = ((c + 1) * CHUNK).min(n);
        let mut acc = init();
        for i in lo..hi {
            acc = fold(acc, i);
        }
        acc
    });
    let mut it = partials.into_iter();
    let first = it.next().unwrap_or_else(init);
    it.fold(first, merge)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_matches_sequential_reference() {
        let n: usize = 10_000;
        let expect: f64 = {
            let chunks = n.div_ceil(CHUNK);
            let mut total = 0.0;
            for c in 0..chunks {
                let mut acc = 0.0;
                for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    acc += (i as f64).sqrt();
                }
                total += acc;
            }
            total
        };
        let got = sum_indexed(n, |i| (i as f64).sqrt());
        assert_eq!(got.to_bits(), expect.to_bits());

        force_sequential(true);
        let seq = sum_indexed(n, |i| (i as f64).sqrt());
        force_sequential(false);
        assert_eq!(got.to_bits(), seq.to_bits());
    }

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(100, |i| i * 2);
        assert_eq!(v[3], 6);
        assert_eq!(v.len(), 100);
    }
}
