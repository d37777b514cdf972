//! Worker-pool wrapper for step-level parallelism.
//!
//! Per-client work within a training step runs on a rayon pool; results are
//! collected into position-indexed vectors and reduced in ascending client
//! id, so outputs are bit-identical regardless of worker count.

use crate::error::{Error, Result};

pub struct Executor {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl Executor {
    pub fn new(workers: usize) -> Result<Self> {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::config(format!("failed to build worker pool: {e}")))?;
        Ok(Executor { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor")
            .field("workers", &self.workers)
            .finish()
    }
}
