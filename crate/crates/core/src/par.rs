//! Data-parallel helpers.
//!
//! Every helper preserves input order in its output, so results are identical
//! with and without the `parallel` feature. Reductions happen after collection,
//! in index order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Whether this build runs loops on the rayon pool.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Ordered sum of `f` over `items`. The per-item values are computed in
/// parallel but added left to right, so the result is bit-identical to the
/// sequential fold.
pub fn sum<T, F>(items: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    map(items, f).into_iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let xs: Vec<u64> = (0..10_000).collect();
        let ys = map(&xs, |x| x * 3);
        assert!(ys.iter().enumerate().all(|(i, &y)| y == 3 * i as u64));
        let zs = map_indexed(&xs, |i, x| i as u64 + x);
        assert!(zs.iter().enumerate().all(|(i, &z)| z == 2 * i as u64));
    }

    #[test]
    fn sum_matches_sequential_fold() {
        let xs: Vec<f64> = (0..5000).map(|i| (i as f64).sin() * 1e-3).collect();
        let seq: f64 = xs.iter().map(|x| x * x).sum();
        assert_eq!(sum(&xs, |x| x * x).to_bits(), seq.to_bits());
    }
}
