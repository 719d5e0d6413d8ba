//! Execution policy for data-parallel loops.
//!
//! Every Monte Carlo and enumeration loop in the crate is an indexed map
//! followed by an in-order reduction. [`Exec`] chooses how the map runs;
//! the reduction is always sequential over the collected results, so the
//! output is bit-identical under either policy and any thread count.

use crate::Result;

/// How an indexed map is executed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    /// Run on the rayon pool (sequential when the `parallel` feature is off).
    #[default]
    Parallel,
    /// Run on the calling thread.
    Sequential,
}

impl Exec {
    /// Whether this policy actually runs in parallel in the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Evaluates `f(0), ..., f(n-1)` and returns the results in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fallible variant of [`Exec::map`]; reports the error with the lowest index.
    pub fn try_map<T, F>(self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }
}

/// Configures the global worker pool. Returns an error message if the pool
/// was already initialised. Without the `parallel` feature this is a no-op.
pub fn configure_threads(threads: usize) -> std::result::Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        assert_eq!(Exec::Parallel.map(1000, f), Exec::Sequential.map(1000, f));
    }

    #[test]
    fn try_map_reports_lowest_error() {
        let r = Exec::Parallel.try_map(50, |i| {
            if i % 7 == 3 {
                Err(crate::Error::InvalidEdge(i))
            } else {
                Ok(i)
            }
        });
        assert_eq!(r, Err(crate::Error::InvalidEdge(3)));
    }
}
