//! Replicate scheduling. Results are always collected in replicate order, so
//! the worker count never changes the output.

use serde::{Deserialize, Serialize};

use crate::error::Result;
#[cfg(feature = "parallel")]
use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Execution {
    Sequential,
    /// `workers = 0` lets the thread pool pick the core count.
    Parallel { workers: usize },
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel { workers: 0 }
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    pub fn workers(workers: usize) -> Self {
        if workers == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { workers }
        }
    }
}

/// Applies `f` to `0..n` under the given execution mode.
pub fn map_replicates<T, F>(n: u64, exec: Execution, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => Ok((0..n).map(f).collect()),
        Execution::Parallel { workers } => parallel_map(n, workers, f),
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: u64, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Resource(format!("cannot start {workers} worker threads: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: u64, _workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    Ok((0..n).map(f).collect())
}
