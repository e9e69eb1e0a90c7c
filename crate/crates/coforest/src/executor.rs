use coforest_core::archipelago::{EpochExecutor, Sequential};
use coforest_core::Island;
use rayon::prelude::*;

use crate::error::{AppError, Result};

/// Runs island epochs on a rayon pool. Islands share nothing during an
/// epoch, so results do not depend on the number of threads.
pub struct Parallel {
    pool: rayon::ThreadPool,
}

impl Parallel {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| AppError::Config(format!("thread pool: {e}")))?;
        Ok(Self { pool })
    }
}

impl EpochExecutor for Parallel {
    fn run_epochs(&self, islands: &mut [Island], generations: usize) {
        self.pool.install(|| islands.par_iter_mut().for_each(|isl| isl.run_generations(generations)));
    }
}

/// A parallel executor capped at `threads` workers, or sequential for one.
pub fn executor(threads: Option<usize>) -> Result<Box<dyn EpochExecutor>> {
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    Ok(if threads <= 1 { Box::new(Sequential) } else { Box::new(Parallel::new(threads)?) })
}
