//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it they
//! run the same closures sequentially. Results are always collected in index
//! order, so outputs never depend on scheduling.

#[cfg(feature = "parallel")]
use crate::error::Error;
use crate::error::Result;

/// How many workers region-level coding may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    Threads(usize),
}

impl Parallelism {
    pub fn from_count(n: usize) -> Self {
        if n <= 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Threads(n)
        }
    }

    pub fn workers(self) -> usize {
        match self {
            Parallelism::Sequential => 1,
            Parallelism::Threads(n) => n.max(1),
        }
    }
}

/// Maps `f` over `0..n`, in parallel when the feature is enabled.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Like [`map_range`] but always sequential; used by the benches as the baseline.
pub fn map_range_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Fallible map over `0..n`; the first error in index order wins.
pub fn try_map_range<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}

/// Runs `op` with the requested number of workers.
///
/// `Sequential` runs on the calling thread and every nested helper stays on
/// it. `Threads(n)` installs a dedicated pool of `n` threads.
pub fn with_parallelism<T, F>(parallelism: Parallelism, op: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    match parallelism {
        Parallelism::Sequential => run_single(op),
        Parallelism::Threads(n) => run_pool(n, op),
    }
}

#[cfg(feature = "parallel")]
fn run_single<T: Send, F: FnOnce() -> T + Send>(op: F) -> Result<T> {
    run_pool(1, op)
}

#[cfg(not(feature = "parallel"))]
fn run_single<T: Send, F: FnOnce() -> T + Send>(op: F) -> Result<T> {
    Ok(op())
}

#[cfg(feature = "parallel")]
fn run_pool<T: Send, F: FnOnce() -> T + Send>(n: usize, op: F) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(op))
}

#[cfg(not(feature = "parallel"))]
fn run_pool<T: Send, F: FnOnce() -> T + Send>(_n: usize, op: F) -> Result<T> {
    Ok(op())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_range_keeps_index_order() {
        let v = map_range(100, |i| i * i);
        assert_eq!(v, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }

    #[test]
    fn pools_give_identical_results() {
        let a = with_parallelism(Parallelism::Sequential, || map_range(50, |i| i + 1)).unwrap();
        let b = with_parallelism(Parallelism::Threads(4), || map_range(50, |i| i + 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn try_map_reports_first_error() {
        let r: Result<Vec<usize>> = try_map_range(10, |i| {
            if i >= 3 {
                Err(crate::Error::Config(format!("{i}")))
            } else {
                Ok(i)
            }
        });
        match r {
            Err(crate::Error::Config(m)) => assert_eq!(m, "3"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
