//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) the `map_*` helpers run on the rayon
//! pool; without it they fall back to plain iterators. Output order always
//! matches input order, so reductions over the results are deterministic
//! regardless of scheduling.

/// How a batch of independent jobs should be executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// One job after another on the calling thread.
    Serial,
    /// Spread across the rayon pool (serial when the feature is off).
    #[default]
    Parallel,
}

impl Execution {
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs <= 1 {
            Execution::Serial
        } else {
            Execution::Parallel
        }
    }
}

/// Applies `f` to `0..n` and collects the results in index order.
pub fn map_range<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Serial => (0..n).map(f).collect(),
        Execution::Parallel => par_map_range(n, f),
    }
}

/// Applies `f` to every item of `items` and collects in order.
pub fn map_slice<A, T, F>(items: &[A], exec: Execution, f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
{
    match exec {
        Execution::Serial => items.iter().map(f).collect(),
        Execution::Parallel => par_map_slice(items, f),
    }
}

#[cfg(feature = "parallel")]
fn par_map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
fn par_map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Runs `f` inside a pool limited to `jobs` threads when that makes sense.
#[cfg(feature = "parallel")]
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_jobs<R: Send>(_jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

/// Sum with pairwise splitting; stable enough for long replication runs and
/// independent of thread count because it only ever sees an ordered slice.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_and_parallel_agree() {
        let a = map_range(100, Execution::Serial, |i| (i as f64).sqrt());
        let b = map_range(100, Execution::Parallel, |i| (i as f64).sqrt());
        assert_eq!(a, b);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_small_ints() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }
}
