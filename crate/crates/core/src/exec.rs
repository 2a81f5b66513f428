//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) `map` fans out over the rayon
//! global pool; without it, it runs in order on the calling thread. Both
//! return results in input order, so any reduction done afterwards by the
//! caller is bit-identical across the two paths.

pub fn map_seq<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_par<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_par(items, f)
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_seq(items, f)
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let ys = map(&xs, |x| x * x);
        assert_eq!(ys, map_seq(&xs, |x| x * x));
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn float_reduction_matches_sequential() {
        let xs: Vec<f64> = (0..257).map(|i| (i as f64).sin() * 1e3).collect();
        let a: f64 = map_par(&xs, |x| x.exp().ln()).iter().sum();
        let b: f64 = map_seq(&xs, |x| x.exp().ln()).iter().sum();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
