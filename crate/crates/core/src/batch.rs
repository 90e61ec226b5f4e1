//! Deterministic chunked parallelism: path `i` belongs to chunk
//! `i / chunk_size`, and chunk `k` draws from stream `k` of a ChaCha8
//! generator keyed by the seed. Per-chunk results come back in chunk order,
//! so any fold over them is independent of the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub seed: u64,
    pub chunk_size: usize,
    pub workers: usize,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            chunk_size: 4096,
            workers: 1,
        }
    }
}

impl BatchConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Generator for chunk `chunk` under `seed`.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Run `f(chunk_index, paths_in_chunk, rng)` over all chunks of `n_paths`.
pub fn map_chunks<A, F>(n_paths: usize, cfg: &BatchConfig, f: F) -> Result<Vec<A>>
where
    A: Send,
    F: Fn(usize, usize, &mut ChaCha8Rng) -> Result<A> + Sync,
{
    if cfg.chunk_size == 0 {
        return Err(Error::invalid("chunk_size must be positive"));
    }
    let n_chunks = n_paths.div_ceil(cfg.chunk_size);
    let job = |k: usize| {
        let len = cfg.chunk_size.min(n_paths - k * cfg.chunk_size);
        let mut rng = chunk_rng(cfg.seed, k as u64);
        f(k, len, &mut rng)
    };
    if cfg.workers <= 1 || n_chunks <= 1 {
        return (0..n_chunks).map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| (0..n_chunks).into_par_iter().map(job).collect())
}

/// Running sums for a mean with standard error.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub sum: f64,
    pub sumsq: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sumsq += v * v;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.n += other.n;
        self.sum += other.sum;
        self.sumsq += other.sumsq;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            return if self.n == 1 { f64::INFINITY } else { f64::NAN };
        }
        let n = self.n as f64;
        let m = self.sum / n;
        let var = ((self.sumsq - n * m * m) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }
}
