use alloc::vec::Vec;

/// Executes independent indexed jobs and returns their results in index order.
///
/// Implementations may run jobs on any number of threads, but the output
/// vector must always be `[f(0), f(1), ..., f(jobs - 1)]`. All Monte Carlo
/// code in this crate splits its work into fixed batches with one random
/// stream per batch, so any conforming runner yields identical numbers.
pub trait Runner: Sync {
    fn run<T, F>(&self, jobs: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs every job on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Runner for Sequential {
    fn run<T, F>(&self, jobs: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..jobs).map(f).collect()
    }
}
