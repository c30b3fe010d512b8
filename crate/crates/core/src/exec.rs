//! Data-parallel map with a sequential fallback.
//!
//! Results are always collected in index order, so reductions over them are
//! identical whatever the thread count.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Sequential,
    /// Rayon work-stealing; only available with the `parallel` feature.
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// `(0..n).map(f)` collected in order.
    pub fn map<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
        }
    }

    /// Like [`Execution::map`] but stops at the first error.
    pub fn try_map<R, E, F>(self, n: usize, f: F) -> Result<Vec<R>, E>
    where
        R: Send,
        E: Send,
        F: Fn(usize) -> Result<R, E> + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_preserves_order() {
        assert_eq!(Execution::Sequential.map(5, |i| i * i), vec![0, 1, 4, 9, 16]);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential() {
        let f = |i: usize| (i as f64).sqrt().sin();
        assert_eq!(Execution::Parallel.map(1000, f), Execution::Sequential.map(1000, f));
    }

    #[test]
    fn try_map_propagates_error() {
        let r: Result<Vec<usize>, String> =
            Execution::default().try_map(10, |i| if i == 7 { Err(format!("bad {i}")) } else { Ok(i) });
        assert_eq!(r.unwrap_err(), "bad 7");
    }
}
