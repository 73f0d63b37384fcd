//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature the work is spread over the rayon pool;
//! without it, or with [`ExecMode::Sequential`], items run in order on the
//! calling thread. Output order always matches input order, so reductions
//! over the results are deterministic regardless of scheduling.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

pub fn map<T, R, F>(mode: ExecMode, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match mode {
        ExecMode::Sequential => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        ExecMode::Parallel => map_parallel(items, f),
    }
}

#[cfg(feature = "parallel")]
fn map_parallel<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_parallel<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Same as [`map`] over the index range `0..n`.
pub fn map_range<R, F>(mode: ExecMode, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map(mode, &idx, |_, &i| f(i))
}
