//! Execution strategy for the data-parallel loops (policy enumeration, DP
//! layers, experiment cells).
//!
//! With the `parallel` feature enabled, [`Execution::Parallel`] dispatches to
//! rayon. Without it, every strategy runs sequentially. All reductions are
//! written so that the result does not depend on how work is partitioned.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this strategy actually runs on the rayon pool in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// Maps `f` over `0..n`, preserving index order in the output.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps `f` over a slice, preserving order.
    pub fn map_slice<S, T, F>(self, items: &[S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&S) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Fills `out[i] = f(i)` in place.
    pub fn fill<T, F>(self, out: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            out.par_iter_mut().enumerate().for_each(|(i, slot)| *slot = f(i));
            return;
        }
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = f(i);
        }
    }

    /// Minimum of `key(i)` over `0..n` with ties going to the smallest index.
    /// Returns `None` when `n == 0`. Keys must not be NaN.
    pub fn argmin_range<F>(self, n: usize, key: F) -> Option<(usize, f64)>
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let better = |a: (usize, f64), b: (usize, f64)| {
            if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) {
                b
            } else {
                a
            }
        };
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            return (0..n).into_par_iter().map(|i| (i, key(i))).reduce_with(better);
        }
        (0..n).map(|i| (i, key(i))).reduce(better)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmin_ties_to_smallest_index() {
        let keys = [3.0, 1.0, 2.0, 1.0, 1.0];
        for exec in [Execution::Sequential, Execution::Parallel] {
            assert_eq!(exec.argmin_range(keys.len(), |i| keys[i]), Some((1, 1.0)));
            assert_eq!(exec.argmin_range(0, |i| keys[i]), None);
        }
    }

    #[test]
    fn map_preserves_order() {
        let a = Execution::Parallel.map_range(1000, |i| i * 3);
        let b = Execution::Sequential.map_range(1000, |i| i * 3);
        assert_eq!(a, b);
    }
}
