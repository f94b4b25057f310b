//! Ordered parallel map over replicate indices.

use std::sync::Arc;

use rayon::prelude::*;

#[derive(Clone)]
pub struct Exec {
    pool: Option<Arc<rayon::ThreadPool>>,
    jobs: usize,
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Exec").field("jobs", &self.jobs).finish()
    }
}

impl Default for Exec {
    fn default() -> Self {
        Exec::serial()
    }
}

impl Exec {
    pub fn serial() -> Self {
        Exec { pool: None, jobs: 1 }
    }

    pub fn new(jobs: usize) -> Self {
        if jobs <= 1 {
            return Exec::serial();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map(Arc::new)
            .ok();
        Exec { pool, jobs }
    }

    pub fn jobs(&self) -> usize {
        self.jobs
    }

    /// `f(0..n)` collected in index order regardless of the pool size.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let serial = Exec::serial().map(100, |i| i * i);
        let par = Exec::new(4).map(100, |i| i * i);
        assert_eq!(serial, par);
    }
}
