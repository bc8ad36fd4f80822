//! The coordinator: holds the latest local prediction of every party for
//! every sample and admits pulls under a bounded-staleness rule.
//!
//! A worker's progress is the last iteration it pushed. A pull for iteration
//! `t` is granted iff `t - t_min <= tau`, where `t_min` is the slowest
//! worker's progress; otherwise it is rejected and the worker retries.
//!
//! Each cell keeps its current and previous value with the iterations that
//! wrote them. A pull at iteration `t` reads, per cell, the newest version
//! written at an iteration `<= t + tau`. Because a worker can push at most one
//! iteration past `t_min + tau`, one previous version always suffices, and a
//! pull never observes a prediction from more than `tau` iterations ahead.
//! With `tau = 0` this makes threaded runs reproduce synchronous SGD exactly.

use std::fmt::Write as _;
use std::sync::Arc;

use parking_lot::Mutex;

use crate::error::codes;
use crate::model::sum_predictions;
use crate::transport::Message;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Default)]
struct Cell {
    value: f64,
    iteration: u64,
    prev_value: f64,
    prev_iteration: u64,
}

impl Cell {
    fn write(&mut self, iteration: u64, value: f64) {
        if iteration != self.iteration {
            self.prev_value = self.value;
            self.prev_iteration = self.iteration;
            self.iteration = iteration;
        }
        self.value = value;
    }

    fn visible(&self, horizon: u64) -> f64 {
        if self.iteration <= horizon {
            self.value
        } else {
            debug_assert!(self.prev_iteration <= horizon);
            self.prev_value
        }
    }
}

/// The `n x m` table of latest pushed local predictions, initialized to `0.0`.
///
/// Rows are locked independently: writes are atomic per cell and each
/// per-sample sum sees a consistent row.
pub struct LocalPredictionMatrix {
    parties: usize,
    rows: Vec<Mutex<Box<[Cell]>>>,
}

impl LocalPredictionMatrix {
    pub fn new(samples: usize, parties: usize) -> Self {
        LocalPredictionMatrix {
            parties,
            rows: (0..samples)
                .map(|_| Mutex::new(vec![Cell::default(); parties].into_boxed_slice()))
                .collect(),
        }
    }

    pub fn samples(&self) -> usize {
        self.rows.len()
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    fn write(&self, sample: usize, party: usize, iteration: u64, value: f64) {
        self.rows[sample].lock()[party].write(iteration, value);
    }

    /// Current values of one row.
    pub fn row(&self, sample: usize) -> Vec<f64> {
        self.rows[sample].lock().iter().map(|c| c.value).collect()
    }

    /// Iteration that last wrote each cell of a row (0 = never written).
    pub fn row_writers(&self, sample: usize) -> Vec<u64> {
        self.rows[sample].lock().iter().map(|c| c.iteration).collect()
    }

    fn visible_sum(&self, sample: usize, horizon: u64) -> f64 {
        let row = self.rows[sample].lock();
        let visible: Vec<f64> = row.iter().map(|c| c.visible(horizon)).collect();
        sum_predictions(&visible)
    }
}

/// Per-worker iteration counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorkerProgress {
    pushed: Vec<u64>,
}

impl WorkerProgress {
    pub fn new(workers: usize) -> Self {
        WorkerProgress {
            pushed: vec![0; workers],
        }
    }

    pub fn from_iterations(iterations: Vec<u64>) -> Self {
        WorkerProgress { pushed: iterations }
    }

    pub fn workers(&self) -> usize {
        self.pushed.len()
    }

    pub fn iteration(&self, worker: usize) -> u64 {
        self.pushed[worker]
    }

    pub fn iterations(&self) -> &[u64] {
        &self.pushed
    }

    /// Moves a worker forward; progress never decreases.
    pub fn advance(&mut self, worker: usize, iteration: u64) {
        let slot = &mut self.pushed[worker];
        *slot = (*slot).max(iteration);
    }

    /// `t_min`, the slowest registered worker's iteration.
    pub fn slowest(&self) -> Result<u64> {
        self.pushed
            .iter()
            .copied()
            .min()
            .ok_or_else(|| Error::Query("no workers registered".into()))
    }

    pub fn fastest(&self) -> Result<u64> {
        self.pushed
            .iter()
            .copied()
            .max()
            .ok_or_else(|| Error::Query("no workers registered".into()))
    }
}

/// The outcome of a pull.
#[derive(Debug, Clone, PartialEq)]
pub enum PullOutcome {
    Granted(Vec<f64>),
    Rejected { slowest: u64 },
}

/// What a grant looked like at decision time, for admission monitors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrantEvent {
    pub worker: usize,
    pub iteration: u64,
    /// Every worker's last pushed iteration.
    pub pushed: Vec<u64>,
    /// Every worker's last admitted iteration, including this grant.
    pub admitted: Vec<u64>,
}

impl GrantEvent {
    pub fn slowest(&self) -> u64 {
        self.pushed.iter().copied().min().unwrap_or(0)
    }

    /// Lead of the furthest admitted worker over the slowest pushed one.
    pub fn spread(&self) -> u64 {
        let fastest = self.admitted.iter().copied().max().unwrap_or(0);
        fastest.saturating_sub(self.slowest())
    }
}

pub type GrantObserver = Arc<dyn Fn(&GrantEvent) + Send + Sync>;

struct Ledger {
    progress: WorkerProgress,
    admitted: Vec<u64>,
    rejections: Vec<u64>,
    grants: Vec<u64>,
}

/// The coordinator of one training run.
pub struct Coordinator {
    parties: usize,
    staleness: u64,
    matrix: LocalPredictionMatrix,
    ledger: Mutex<Ledger>,
    observer: Option<GrantObserver>,
}

impl Coordinator {
    /// A coordinator for `samples` rows and `parties` workers with bound `tau`.
    /// All workers start registered at iteration 0.
    pub fn new(samples: usize, parties: usize, staleness: u64) -> Result<Self> {
        if parties == 0 || parties > usize::from(u16::MAX) + 1 {
            return Err(Error::config(format!("unsupported party count {parties}")));
        }
        Ok(Coordinator {
            parties,
            staleness,
            matrix: LocalPredictionMatrix::new(samples, parties),
            ledger: Mutex::new(Ledger {
                progress: WorkerProgress::new(parties),
                admitted: vec![0; parties],
                rejections: vec![0; parties],
                grants: vec![0; parties],
            }),
            observer: None,
        })
    }

    /// Calls `observer` under the admission lock at every grant.
    pub fn with_observer(mut self, observer: GrantObserver) -> Self {
        self.observer = Some(observer);
        self
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn samples(&self) -> usize {
        self.matrix.samples()
    }

    pub fn staleness(&self) -> u64 {
        self.staleness
    }

    pub fn matrix(&self) -> &LocalPredictionMatrix {
        &self.matrix
    }

    fn check_worker(&self, worker: usize) -> Result<()> {
        if worker >= self.parties {
            return Err(Error::protocol(
                codes::UNKNOWN_WORKER,
                format!("unknown worker {worker}; this run has {} parties", self.parties),
            ));
        }
        Ok(())
    }

    fn check_sample(&self, sample: u64) -> Result<usize> {
        usize::try_from(sample)
            .ok()
            .filter(|&s| s < self.samples())
            .ok_or_else(|| {
                Error::protocol(
                    codes::SAMPLE_OUT_OF_RANGE,
                    format!("sample {sample} outside 0..{}", self.samples()),
                )
            })
    }

    /// Stores `A[i, worker] := c` for each pair and advances the worker to `iteration`.
    ///
    /// The whole request is validated before any cell changes.
    pub fn handle_push(&self, worker: usize, iteration: u64, updates: &[(u64, f64)]) -> Result<()> {
        self.check_worker(worker)?;
        if iteration == 0 {
            return Err(Error::protocol(codes::OUT_OF_ORDER, "iterations start at 1"));
        }
        for &(sample, value) in updates {
            self.check_sample(sample)?;
            if !value.is_finite() {
                return Err(Error::protocol(
                    codes::NON_FINITE_VALUE,
                    format!("non-finite prediction for sample {sample}"),
                ));
            }
        }
        let mut ledger = self.ledger.lock();
        let current = ledger.progress.iteration(worker);
        if iteration < current {
            return Err(Error::protocol(
                codes::OUT_OF_ORDER,
                format!("worker {worker} pushed iteration {iteration} after {current}"),
            ));
        }
        for &(sample, value) in updates {
            self.matrix.write(sample as usize, worker, iteration, value);
        }
        ledger.progress.advance(worker, iteration);
        Ok(())
    }

    /// Admits or rejects a pull and, when admitted, returns `sum_k A[i, k]`
    /// for each requested sample.
    pub fn handle_pull(&self, worker: usize, iteration: u64, samples: &[u64]) -> Result<PullOutcome> {
        self.check_worker(worker)?;
        let rows = samples
            .iter()
            .map(|&s| self.check_sample(s))
            .collect::<Result<Vec<_>>>()?;
        {
            let mut ledger = self.ledger.lock();
            let pushed = ledger.progress.iteration(worker);
            if pushed < iteration {
                return Err(Error::protocol(
                    codes::OUT_OF_ORDER,
                    format!("worker {worker} pulled iteration {iteration} before pushing it"),
                ));
            }
            let slowest = ledger.progress.slowest()?;
            if iteration > slowest + self.staleness {
                ledger.rejections[worker] += 1;
                return Ok(PullOutcome::Rejected { slowest });
            }
            ledger.grants[worker] += 1;
            ledger.admitted[worker] = ledger.admitted[worker].max(iteration);
            if let Some(observer) = &self.observer {
                observer(&GrantEvent {
                    worker,
                    iteration,
                    pushed: ledger.progress.iterations().to_vec(),
                    admitted: ledger.admitted.clone(),
                });
            }
        }
        let horizon = iteration + self.staleness;
        Ok(PullOutcome::Granted(
            rows.into_iter()
                .map(|i| self.matrix.visible_sum(i, horizon))
                .collect(),
        ))
    }

    /// `t_min` over all registered workers.
    pub fn slowest_iteration(&self) -> Result<u64> {
        self.ledger.lock().progress.slowest()
    }

    pub fn progress(&self) -> WorkerProgress {
        self.ledger.lock().progress.clone()
    }

    pub fn rejections(&self) -> Vec<u64> {
        self.ledger.lock().rejections.clone()
    }

    /// Whether every worker has been admitted at iteration `total` or later.
    pub fn finished(&self, total: u64) -> bool {
        self.ledger.lock().admitted.iter().all(|&a| a >= total)
    }

    /// Operator view as `key=value` lines.
    pub fn status_report(&self) -> String {
        let ledger = self.ledger.lock();
        let mut out = String::new();
        let slowest = ledger.progress.slowest().unwrap_or(0);
        let _ = writeln!(out, "parties={}", self.parties);
        let _ = writeln!(out, "tau={}", self.staleness);
        let _ = writeln!(out, "t_min={slowest}");
        for j in 0..self.parties {
            let _ = writeln!(out, "worker.{j}.iteration={}", ledger.progress.iteration(j));
            let _ = writeln!(out, "worker.{j}.admitted={}", ledger.admitted[j]);
            let _ = writeln!(out, "worker.{j}.rejections={}", ledger.rejections[j]);
        }
        let _ = writeln!(out, "grants_total={}", ledger.grants.iter().sum::<u64>());
        let _ = writeln!(out, "rejections_total={}", ledger.rejections.iter().sum::<u64>());
        out
    }

    /// Serves one decoded request.
    pub fn handle(&self, request: &Message) -> Message {
        let reply = match request {
            Message::PushRequest {
                worker,
                iteration,
                pairs,
            } => self
                .handle_push(usize::from(*worker), *iteration, pairs)
                .map(|()| Message::PushAck {
                    iteration: *iteration,
                }),
            Message::PullRequest {
                worker,
                iteration,
                samples,
            } => self
                .handle_pull(usize::from(*worker), *iteration, samples)
                .map(|outcome| match outcome {
                    PullOutcome::Granted(sums) => Message::PullGrant {
                        iteration: *iteration,
                        sums,
                    },
                    PullOutcome::Rejected { slowest } => Message::PullReject {
                        iteration: *iteration,
                        slowest,
                    },
                }),
            other => Err(Error::protocol(
                codes::UNEXPECTED_MESSAGE,
                format!("coordinator does not accept message tag {}", other.tag()),
            )),
        };
        reply.unwrap_or_else(|e| match e {
            Error::Protocol { code, detail } => Message::Error { code, detail },
            other => Message::Error {
                code: codes::UNEXPECTED_MESSAGE,
                detail: other.to_string(),
            },
        })
    }
}
