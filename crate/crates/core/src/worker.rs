//! One party's training agent.
//!
//! Per iteration `t` a worker computes its local predictions for batch
//! `I(t)`, pushes them, pulls the per-sample sums (retrying while rejected),
//! forms its partial gradient from `h = sigmoid(sum) - y` and takes the step
//! `x <- x - eta_t * g`. Nothing but predictions and sample ids is sent.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::error::codes;
use crate::model::{h_term, ParameterBlock, SparseVector, SubModel};
use crate::privacy::{perturb, NoiseSpec};
use crate::schedule::{LearningRate, SampleSchedule};
use crate::transport::{Link, Message};
use crate::{Error, Result};

/// How per-sample gradients within a mini-batch are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BatchReduction {
    Sum,
    #[default]
    Mean,
}

impl FromStr for BatchReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sum" => Ok(BatchReduction::Sum),
            "mean" => Ok(BatchReduction::Mean),
            other => Err(Error::config(format!("unknown batch reduction `{other}`"))),
        }
    }
}

impl fmt::Display for BatchReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BatchReduction::Sum => "sum",
            BatchReduction::Mean => "mean",
        })
    }
}

/// Back-off applied between rejected pulls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub initial: Duration,
    pub max: Duration,
    /// `None` retries forever.
    pub max_attempts: Option<u32>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            initial: Duration::from_millis(1),
            max: Duration::from_millis(100),
            max_attempts: None,
        }
    }
}

impl RetryPolicy {
    pub fn with_budget(attempts: u32) -> Self {
        RetryPolicy {
            max_attempts: Some(attempts),
            ..Self::default()
        }
    }

    /// Delay before retry number `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.min(31)).unwrap_or(u32::MAX);
        self.initial.saturating_mul(factor).min(self.max)
    }
}

/// The mini-batch partial gradient of one party:
/// `reduce_i(h_i * d(alpha)/dx) + lambda * x` over the regularized entries.
///
/// `sums[k]` is the aggregated prediction for `batch[k]`. Every training
/// path in the crate (workers and single-model baselines) uses this function,
/// so equal inputs give bit-identical gradients.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradient(
    model: &SubModel,
    params: &[f64],
    rows: &[SparseVector],
    labels: &[u8],
    batch: &[u32],
    sums: &[f64],
    lambda: f64,
    reduction: BatchReduction,
) -> Result<Vec<f64>> {
    if sums.len() != batch.len() {
        return Err(Error::config(format!(
            "{} sums for a batch of {}",
            sums.len(),
            batch.len()
        )));
    }
    let mut grad = vec![0.0; params.len()];
    for (&i, &s) in batch.iter().zip(sums) {
        let i = i as usize;
        model.accumulate_gradient(params, &rows[i], h_term(s, labels[i]), &mut grad)?;
    }
    if reduction == BatchReduction::Mean && !batch.is_empty() {
        let n = batch.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
    }
    model.add_regularizer_gradient(params, lambda, &mut grad);
    Ok(grad)
}

/// `x <- x - eta * g`, refusing non-finite results.
pub fn apply_step(params: &mut [f64], grad: &[f64], eta: f64) -> Result<()> {
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence(format!("non-finite gradient at coordinate {k}")));
    }
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= eta * g;
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence("parameters overflowed".into()));
    }
    Ok(())
}

/// Everything a worker owns.
#[derive(Clone)]
pub struct WorkerConfig {
    pub party: usize,
    pub model: SubModel,
    pub block: ParameterBlock,
    /// The party's training features, row-aligned with `labels`.
    pub features: Arc<Vec<SparseVector>>,
    pub labels: Arc<Vec<u8>>,
    pub schedule: Arc<SampleSchedule>,
    pub learning_rate: LearningRate,
    pub lambda: f64,
    pub reduction: BatchReduction,
    pub noise: NoiseSpec,
    pub retry: RetryPolicy,
}

/// What one iteration did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub iteration: u64,
    pub eta: f64,
    /// The gradient that was applied.
    pub gradient: Vec<f64>,
    /// The sums received from the coordinator.
    pub sums: Vec<f64>,
    pub rejections: u32,
}

pub struct Worker {
    cfg: WorkerConfig,
    draws: u64,
    completed: u64,
}

impl Worker {
    pub fn new(cfg: WorkerConfig) -> Result<Self> {
        if cfg.block.dim() != cfg.model.dim() {
            return Err(Error::config(format!(
                "party {} block has {} parameters, its sub-model needs {}",
                cfg.party,
                cfg.block.dim(),
                cfg.model.dim()
            )));
        }
        if cfg.features.len() != cfg.labels.len() || cfg.features.len() != cfg.schedule.samples() {
            return Err(Error::config(format!(
                "party {} has {} rows and {} labels for a schedule over {} samples",
                cfg.party,
                cfg.features.len(),
                cfg.labels.len(),
                cfg.schedule.samples()
            )));
        }
        if u16::try_from(cfg.party).is_err() {
            return Err(Error::config(format!("party id {} does not fit the wire format", cfg.party)));
        }
        Ok(Worker {
            cfg,
            draws: 0,
            completed: 0,
        })
    }

    pub fn party(&self) -> usize {
        self.cfg.party
    }

    pub fn block(&self) -> &ParameterBlock {
        &self.cfg.block
    }

    pub fn into_block(self) -> ParameterBlock {
        self.cfg.block
    }

    pub fn model(&self) -> &SubModel {
        &self.cfg.model
    }

    pub fn schedule(&self) -> &SampleSchedule {
        &self.cfg.schedule
    }

    /// Last completed iteration.
    pub fn completed(&self) -> u64 {
        self.completed
    }

    fn wire_id(&self) -> u16 {
        self.cfg.party as u16
    }

    /// The (possibly perturbed) local predictions for batch `I(t)`.
    pub fn push_request(&mut self, t: u64) -> Result<Message> {
        let batch = self.cfg.schedule.batch(t);
        let mut pairs = Vec::with_capacity(batch.len());
        for &i in batch {
            let c = self
                .cfg
                .model
                .predict(&self.cfg.block, &self.cfg.features[i as usize])?;
            let c = perturb(c, &self.cfg.noise, self.draws);
            self.draws += 1;
            pairs.push((u64::from(i), c));
        }
        Ok(Message::PushRequest {
            worker: self.wire_id(),
            iteration: t,
            pairs,
        })
    }

    pub fn pull_request(&self, t: u64) -> Message {
        Message::PullRequest {
            worker: self.wire_id(),
            iteration: t,
            samples: self.cfg.schedule.batch(t).iter().map(|&i| u64::from(i)).collect(),
        }
    }

    pub fn push(&mut self, link: &mut dyn Link, t: u64) -> Result<()> {
        let request = self.push_request(t)?;
        match link.exchange(&request)? {
            Message::PushAck { iteration } if iteration == t => Ok(()),
            other => Err(unexpected(t, other)),
        }
    }

    /// Pulls the sums for `I(t)`, backing off while the request is rejected.
    pub fn pull(&self, link: &mut dyn Link, t: u64) -> Result<(Vec<f64>, u32)> {
        let request = self.pull_request(t);
        let mut rejections = 0u32;
        loop {
            match link.exchange(&request)? {
                Message::PullGrant { iteration, sums } if iteration == t => {
                    if sums.len() != self.cfg.schedule.batch(t).len() {
                        return Err(Error::protocol(
                            codes::UNEXPECTED_MESSAGE,
                            "grant size differs from the batch",
                        ));
                    }
                    return Ok((sums, rejections));
                }
                Message::PullReject { slowest, .. } => {
                    if self
                        .cfg
                        .retry
                        .max_attempts
                        .is_some_and(|budget| rejections >= budget)
                    {
                        return Err(Error::Transport(format!(
                            "party {} gave up on iteration {t} after {rejections} rejections",
                            self.cfg.party
                        )));
                    }
                    debug!(
                        "party {} rejected at {t} (slowest {slowest})",
                        self.cfg.party
                    );
                    thread::sleep(self.cfg.retry.delay(rejections));
                    rejections += 1;
                }
                other => return Err(unexpected(t, other)),
            }
        }
    }

    /// Gradient step for iteration `t` from the granted sums.
    pub fn update(&mut self, t: u64, sums: &[f64]) -> Result<(f64, Vec<f64>)> {
        let grad = batch_gradient(
            &self.cfg.model,
            &self.cfg.block.values,
            &self.cfg.features,
            &self.cfg.labels,
            self.cfg.schedule.batch(t),
            sums,
            self.cfg.lambda,
            self.cfg.reduction,
        )?;
        let eta = self.cfg.learning_rate.at(t);
        apply_step(&mut self.cfg.block.values, &grad, eta)?;
        self.completed = t;
        Ok((eta, grad))
    }

    /// One full push, pull, update cycle for the next iteration.
    pub fn step(&mut self, link: &mut dyn Link) -> Result<StepRecord> {
        let t = self.completed + 1;
        if t > self.cfg.schedule.total_iterations() {
            return Err(Error::config("schedule exhausted"));
        }
        self.push(link, t)?;
        let (sums, rejections) = self.pull(link, t)?;
        let (eta, gradient) = self.update(t, &sums)?;
        Ok(StepRecord {
            iteration: t,
            eta,
            gradient,
            sums,
            rejections,
        })
    }

    /// Runs every remaining iteration; `on_epoch` sees the block after each epoch.
    pub fn run(
        &mut self,
        link: &mut dyn Link,
        mut on_epoch: impl FnMut(usize, &ParameterBlock),
    ) -> Result<()> {
        while self.completed < self.cfg.schedule.total_iterations() {
            self.step(link)?;
            if self.cfg.schedule.ends_epoch(self.completed) {
                on_epoch(self.cfg.schedule.epoch_of(self.completed), &self.cfg.block);
            }
        }
        Ok(())
    }
}

fn unexpected(t: u64, reply: Message) -> Error {
    match reply {
        Message::Error { code, detail } => Error::Protocol { code, detail },
        other => Error::protocol(
            codes::UNEXPECTED_MESSAGE,
            format!("unexpected reply to iteration {t}: tag {}", other.tag()),
        ),
    }
}
