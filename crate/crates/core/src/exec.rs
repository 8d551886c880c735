//! Execution strategy for the data-parallel inner loops.
//!
//! Simulation batches and per-patch fits are independent jobs, so they can
//! run across a rayon pool. Every job derives its randomness from its own
//! index, and results are collected in index order, so sequential and
//! parallel execution produce identical output.
//!
//! Without the `parallel` feature rayon is not linked at all and
//! [`Execution::Parallel`] silently degrades to the sequential path.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

/// Apply `job` to every index in `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(job).collect(),
        Execution::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(job).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(job).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let seq = map_indexed(Execution::Sequential, 100, |i| i * i);
        let par = map_indexed(Execution::Parallel, 100, |i| i * i);
        assert_eq!(seq, par);
    }
}
