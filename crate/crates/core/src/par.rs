//! Bounded data-parallel execution.
//!
//! With the `parallel` feature (default) work runs on a rayon pool sized to the
//! configured worker count. Without it, or with a single worker, every helper
//! falls back to a plain sequential iterator. Results always come back in input
//! order so callers can merge deterministically.

#[cfg(feature = "parallel")]
use rayon::prelude::*;
#[cfg(feature = "parallel")]
use std::sync::Arc;

/// A bounded worker budget.
#[derive(Clone)]
pub struct Pool {
    workers: usize,
    #[cfg(feature = "parallel")]
    inner: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Pool {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pool").field("workers", &self.workers).finish()
    }
}

impl Pool {
    pub fn new(workers: usize) -> Self {
        let workers = workers.max(1);
        #[cfg(feature = "parallel")]
        {
            let inner = if workers > 1 {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .thread_name(|i| format!("taxoseek-worker-{i}"))
                    .build()
                    .ok()
                    .map(Arc::new)
            } else {
                None
            };
            Pool { workers, inner }
        }
        #[cfg(not(feature = "parallel"))]
        {
            Pool { workers }
        }
    }

    pub fn sequential() -> Self {
        Pool::new(1)
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.inner.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    /// Maps `f` over `items`, returning results in input order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.inner {
            if items.len() > 1 {
                return pool.install(|| items.par_iter().map(&f).collect());
            }
        }
        items.iter().map(f).collect()
    }

    /// Like [`Pool::map`] but the closure also receives the item index.
    pub fn map_indexed<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.inner {
            if items.len() > 1 {
                return pool.install(|| {
                    items
                        .par_iter()
                        .enumerate()
                        .map(|(i, t)| f(i, t))
                        .collect()
                });
            }
        }
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

impl Default for Pool {
    fn default() -> Self {
        Pool::new(20)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn map_preserves_input_order() {
        let pool = Pool::new(8);
        let items: Vec<u64> = (0..500).collect();
        let out = pool.map(&items, |x| {
            if x % 7 == 0 {
                std::thread::sleep(std::time::Duration::from_micros(50));
            }
            x * 3
        });
        assert_eq!(out, items.iter().map(|x| x * 3).collect::<Vec<_>>());
    }

    #[test]
    fn single_worker_runs_sequentially() {
        let pool = Pool::new(1);
        assert!(!pool.is_parallel());
        let seen = AtomicUsize::new(0);
        let out = pool.map_indexed(&[10, 20, 30], |i, v| {
            assert_eq!(seen.fetch_add(1, Ordering::SeqCst), i);
            v + i
        });
        assert_eq!(out, vec![10, 21, 32]);
    }

    #[test]
    fn zero_workers_is_clamped() {
        assert_eq!(Pool::new(0).workers(), 1);
    }
}
