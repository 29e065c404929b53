//! Seeded, worker-partitioned Monte Carlo accumulation.
//!
//! Each worker owns one ChaCha stream (`seed`, stream = worker index) and a
//! fixed share of the samples. Per-worker accumulators are merged in worker
//! order, so results are bit-identical for a fixed seed and worker count
//! regardless of thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{FokkerError, Result};

/// Running sums of `w − shift`. The shift keeps the variance computation
/// well conditioned when weights cluster around a known value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accumulator {
    shift: f64,
    sum: f64,
    sum_sq: f64,
    count: usize,
    skipped: usize,
}

impl Accumulator {
    pub fn new(shift: f64) -> Self {
        Self {
            shift,
            sum: 0.0,
            sum_sq: 0.0,
            count: 0,
            skipped: 0,
        }
    }

    pub fn push(&mut self, w: f64) {
        let d = w - self.shift;
        self.sum += d;
        self.sum_sq += d * d;
        self.count += 1;
    }

    pub fn skip(&mut self) {
        self.skipped += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.shift, other.shift);
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
        self.count += other.count;
        self.skipped += other.skipped;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn mean(&self) -> f64 {
        self.shift + self.sum / self.count as f64
    }

    /// Unbiased sample variance (zero for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        ((self.sum_sq - self.sum * self.sum / n) / (n - 1.0)).max(0.0)
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.variance() / self.count as f64).sqrt()
    }
}

/// The random stream of one worker.
pub fn worker_rng(seed: u64, worker: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(worker as u64);
    rng
}

/// Samples assigned to `worker` when `n_samples` are split over `workers`.
pub fn worker_share(n_samples: usize, workers: usize, worker: usize) -> usize {
    n_samples / workers + usize::from(worker < n_samples % workers)
}

impl FokkerError {
    /// Per-sample failures that are counted and skipped rather than aborting a run.
    pub fn is_skippable(&self) -> bool {
        matches!(
            self,
            FokkerError::SingularOperator { .. }
                | FokkerError::NonPositiveDeterminant(_)
                | FokkerError::NonConvergence { .. }
                | FokkerError::TurningPoint { .. }
                | FokkerError::NegativeSelfEnergy { .. }
                | FokkerError::NotBracketed { .. }
        )
    }
}

/// Runs `sample` `n_samples` times split over `workers` streams and merges
/// the results. Skippable errors are counted; more than 1% skipped aborts.
pub fn run_workers<F>(seed: u64, workers: usize, n_samples: usize, shift: f64, sample: F) -> Result<Accumulator>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    let workers = workers.max(1);
    let parts: Vec<Result<Accumulator>> = (0..workers)
        .into_par_iter()
        .map(|w| {
            let mut rng = worker_rng(seed, w);
            let mut acc = Accumulator::new(shift);
            for _ in 0..worker_share(n_samples, workers, w) {
                match sample(&mut rng) {
                    Ok(x) => acc.push(x),
                    Err(e) if e.is_skippable() => acc.skip(),
                    Err(e) => return Err(e),
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = Accumulator::new(shift);
    for part in parts {
        total.merge(&part?);
    }
    if total.skipped() * 100 > n_samples || total.count() == 0 {
        return Err(FokkerError::TooManySkipped {
            skipped: total.skipped(),
            attempted: n_samples,
        });
    }
    Ok(total)
}
