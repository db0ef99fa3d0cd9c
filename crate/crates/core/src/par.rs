//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature (default) work runs on a rayon pool whose
//! size is taken from `FBLQ_THREADS` when set. Without the feature every
//! call runs sequentially. Output order always matches input order.

/// Environment variable that fixes the worker count.
pub const THREADS_ENV: &str = "FBLQ_THREADS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    #[default]
    Parallel,
}

impl Execution {
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter().map(f).collect(),
            Execution::Parallel => parallel_map(items, f),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Worker count requested through the environment, if any.
pub fn requested_threads() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

#[cfg(feature = "parallel")]
fn pool() -> &'static rayon::ThreadPool {
    use std::sync::OnceLock;
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new().thread_name(|i| format!("fblq-{i}"));
        if let Some(n) = requested_threads() {
            b = b.num_threads(n);
        }
        b.build().expect("failed to start the worker pool")
    })
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    pool().install(|| items.par_iter().map(f).collect())
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Number of workers a parallel map will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        pool().current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
