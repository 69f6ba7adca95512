//! Deterministic execution helpers.
//!
//! Parallel kernels in this crate follow one contract: the output is
//! partitioned into disjoint slots, each slot is computed by exactly one
//! worker with a fixed inner evaluation order, and any reduction over
//! contributions uses a fixed pairwise tree. The result is bit-identical
//! for 1 and N workers, and for the sequential fallback build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Base chunk length of the pairwise summation tree. Within a leaf the sum is
/// a plain left-to-right fold; leaves are combined by recursive halving, so
/// the association order depends only on the length.
const PAIRWISE_LEAF: usize = 64;

/// Pairwise sum of `f(i)` for `i in 0..n` with a fixed reduction tree.
pub fn pairwise_sum(n: usize, f: &impl Fn(usize) -> f64) -> f64 {
    fn rec(lo: usize, n: usize, f: &impl Fn(usize) -> f64) -> f64 {
        if n <= PAIRWISE_LEAF {
            let mut acc = 0.0;
            for i in lo..lo + n {
                acc += f(i);
            }
            acc
        } else {
            let half = n / 2;
            rec(lo, half, f) + rec(lo + half, n - half, f)
        }
    }
    rec(0, n, f)
}

/// Pairwise sum of 3-vectors with the same fixed tree as [`pairwise_sum`].
pub fn pairwise_sum3(n: usize, f: &impl Fn(usize) -> [f64; 3]) -> [f64; 3] {
    fn rec(lo: usize, n: usize, f: &impl Fn(usize) -> [f64; 3]) -> [f64; 3] {
        if n <= PAIRWISE_LEAF {
            let mut acc = [0.0; 3];
            for i in lo..lo + n {
                let v = f(i);
                acc[0] += v[0];
                acc[1] += v[1];
                acc[2] += v[2];
            }
            acc
        } else {
            let half = n / 2;
            let a = rec(lo, half, f);
            let b = rec(lo + half, n - half, f);
            [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
        }
    }
    rec(0, n, f)
}

/// Fill every output slot from its index, in parallel when enabled.
#[cfg(feature = "parallel")]
pub fn fill_slots<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    out.par_iter_mut()
        .enumerate()
        .for_each(|(i, slot)| *slot = f(i));
}

/// Fill every output slot from its index, sequentially.
#[cfg(not(feature = "parallel"))]
pub fn fill_slots<T, F>(out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = f(i);
    }
}

/// Always-sequential variant of [`fill_slots`], kept available for
/// determinism checks and benchmarks against the parallel path.
pub fn fill_slots_seq<T, F>(out: &mut [T], f: F)
where
    F: Fn(usize) -> T,
{
    for (i, slot) in out.iter_mut().enumerate() {
        *slot = f(i);
    }
}

/// Map `0..n` to a vector, in parallel when enabled.
#[cfg(feature = "parallel")]
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Map `0..n` to a vector, sequentially.
#[cfg(not(feature = "parallel"))]
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_short_inputs() {
        let xs: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        let pw = pairwise_sum(xs.len(), &|i| xs[i]);
        assert_eq!(naive, pw);
    }

    #[test]
    fn pairwise_tree_is_length_deterministic() {
        let n = 10_001;
        let f = |i: usize| ((i as f64) * 0.1).cos() / (i as f64 + 1.0);
        let a = pairwise_sum(n, &f);
        let b = pairwise_sum(n, &f);
        assert_eq!(a.to_bits(), b.to_bits());
        // Pairwise error stays small against a Kahan reference.
        let mut sum = 0.0f64;
        let mut c = 0.0f64;
        for i in 0..n {
            let y = f(i) - c;
            let t = sum + y;
            c = (t - sum) - y;
            sum = t;
        }
        assert!((a - sum).abs() <= 1e-12 * sum.abs());
    }

    #[test]
    fn fill_slots_matches_sequential() {
        let mut a = vec![0.0; 1000];
        let mut b = vec![0.0; 1000];
        let f = |i: usize| (i as f64).sqrt() * 1.0e-3;
        fill_slots(&mut a, f);
        fill_slots_seq(&mut b, f);
        assert_eq!(a, b);
    }
}
