//! The globally shared mini-batch schedule and the step-size rule.
//!
//! Every party derives the same batch sequence `I(1), ..., I(T)` from a shared
//! seed, so the parties stay gradient-aligned per iteration while running
//! asynchronously. The generator is pinned (see [`ScheduleRng`]) so that
//! independent implementations agree on the sequence.

use crate::{Error, Result};

/// SplitMix64, the schedule's pinned pseudo-random generator (`splitmix64-v1`).
///
/// State advances by the golden-ratio increment; output is the standard
/// SplitMix64 finalizer (xor-shift 30/27/31 with two multiplies). Bounded
/// draws use the multiply-shift reduction `(x * bound) >> 64`.
#[derive(Debug, Clone)]
pub struct ScheduleRng {
    state: u64,
}

impl ScheduleRng {
    pub const NAME: &'static str = "splitmix64-v1";

    pub fn new(seed: u64) -> Self {
        ScheduleRng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform-ish integer in `0..bound` by multiply-shift.
    pub fn below(&mut self, bound: u64) -> u64 {
        ((u128::from(self.next_u64()) * u128::from(bound)) >> 64) as u64
    }

    /// Fisher-Yates shuffle from the last position down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// Batches `I(t)` for `t = 1..=T`, `T = epochs * ceil(n / batch_size)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSchedule {
    seed: u64,
    samples: usize,
    batch_size: usize,
    epochs: usize,
    permutations: Vec<Vec<u32>>,
}

impl SampleSchedule {
    /// Each epoch shuffles `0..n` afresh with one continuing generator stream;
    /// the last batch of an epoch may be short.
    pub fn generate(seed: u64, samples: usize, batch_size: usize, epochs: usize) -> Result<Self> {
        if samples == 0 || batch_size == 0 {
            return Err(Error::config("schedule needs at least one sample and a positive batch size"));
        }
        if samples > u32::MAX as usize {
            return Err(Error::config("schedule supports at most 2^32 - 1 samples"));
        }
        let mut rng = ScheduleRng::new(seed);
        let permutations = (0..epochs)
            .map(|_| {
                let mut order: Vec<u32> = (0..samples as u32).collect();
                rng.shuffle(&mut order);
                order
            })
            .collect();
        Ok(SampleSchedule {
            seed,
            samples,
            batch_size,
            epochs,
            permutations,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.samples.div_ceil(self.batch_size)
    }

    /// Total iteration count `T`.
    pub fn total_iterations(&self) -> u64 {
        (self.epochs * self.batches_per_epoch()) as u64
    }

    /// Zero-based epoch of the 1-based iteration `t`.
    pub fn epoch_of(&self, t: u64) -> usize {
        ((t - 1) / self.batches_per_epoch() as u64) as usize
    }

    /// Whether `t` is the last iteration of its epoch.
    pub fn ends_epoch(&self, t: u64) -> bool {
        t.is_multiple_of(self.batches_per_epoch() as u64)
    }

    /// The sample indices of the 1-based iteration `t`.
    pub fn batch(&self, t: u64) -> &[u32] {
        assert!(t >= 1 && t <= self.total_iterations(), "iteration {t} outside the schedule");
        let per_epoch = self.batches_per_epoch() as u64;
        let epoch = ((t - 1) / per_epoch) as usize;
        let k = ((t - 1) % per_epoch) as usize;
        let start = k * self.batch_size;
        let end = (start + self.batch_size).min(self.samples);
        &self.permutations[epoch][start..end]
    }

    pub fn epoch_order(&self, epoch: usize) -> &[u32] {
        &self.permutations[epoch]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[u32])> + '_ {
        (1..=self.total_iterations()).map(move |t| (t, self.batch(t)))
    }
}

/// `eta_t = eta / sqrt(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRate {
    pub base: f64,
}

impl LearningRate {
    pub fn new(base: f64) -> Result<Self> {
        if !(base.is_finite() && base > 0.0) {
            return Err(Error::config(format!("learning rate {base} must be finite and positive")));
        }
        Ok(LearningRate { base })
    }

    pub fn at(&self, t: u64) -> f64 {
        debug_assert!(t >= 1);
        self.base / (t as f64).sqrt()
    }
}
