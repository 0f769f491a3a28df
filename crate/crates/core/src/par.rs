//! Order-preserving map over independent work cells.
//!
//! With the `parallel` feature the map runs on a rayon pool of the requested
//! size; otherwise, or with one worker, it runs sequentially. Results are
//! always returned in input order, so output never depends on worker count.

/// How many workers to use. `0` means one per available core.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Executor {
    workers: usize,
}

impl Executor {
    pub fn new(workers: usize) -> Self {
        Self { workers }
    }

    pub fn sequential() -> Self {
        Self { workers: 1 }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn map<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.workers != 1 {
            use rayon::prelude::*;
            let run = || items.into_par_iter().map(&f).collect();
            if self.workers == 0 {
                return run();
            }
            return match rayon::ThreadPoolBuilder::new().num_threads(self.workers).build() {
                Ok(pool) => pool.install(run),
                Err(_) => run(),
            };
        }
        items.into_iter().map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_preserved_for_any_worker_count() {
        let expected: Vec<u64> = (0..200u64).map(|x| x * x).collect();
        for w in [0, 1, 2, 7] {
            assert_eq!(Executor::new(w).map((0..200u64).collect(), |x| x * x), expected);
        }
    }
}
