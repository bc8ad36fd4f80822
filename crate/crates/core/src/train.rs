//! Training drivers for the three schemes: a party training alone on its
//! own features (`local`), one model over all features (`centralized`) and
//! the coordinated vertical scheme (`fdml`).
//!
//! All three share ingestion, the sample schedule, the gradient code and
//! the evaluation code, so that differences come from topology alone.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coordinator::{Coordinator, GrantObserver};
use crate::data::{DatasetSplit, VerticalPartition};
use crate::metrics::regret::InstrumentedStep;
use crate::metrics::{auc, composite_probabilities, mean_log_loss, EpochMetrics};
use crate::model::{log_loss, aggregate, Activation, ParameterBlock, SparseVector, SubModel, SubModelKind};
use crate::privacy::{NoiseMechanism, NoiseSpec};
use crate::schedule::{LearningRate, SampleSchedule};
use crate::transport::{InProcessLink, Link, MessageLog, TcpCoordinatorServer, TcpLink};
use crate::worker::{apply_step, batch_gradient, BatchReduction, RetryPolicy, Worker, WorkerConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Local,
    Centralized,
    Fdml,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Local, Scheme::Centralized, Scheme::Fdml];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Local => "local",
            Scheme::Centralized => "centralized",
            Scheme::Fdml => "fdml",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::config(format!("unknown scheme `{s}`")))
    }
}

/// Sub-model family used by every party.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Lr,
    Nn,
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(ModelFamily::Lr),
            "nn" => Ok(ModelFamily::Nn),
            other => Err(Error::config(format!("unknown model `{other}`; expected lr or nn"))),
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelFamily::Lr => "lr",
            ModelFamily::Nn => "nn",
        })
    }
}

/// How workers reach the coordinator inside one process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Carrier {
    #[default]
    InProcess,
    /// Loopback TCP with a coordinator on an ephemeral port.
    Tcp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub parties: usize,
    pub staleness: u64,
    /// Base rate; `None` picks 4.0 for LR and 2.0 for NN.
    pub eta: Option<f64>,
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub model: ModelFamily,
    pub hidden: usize,
    pub activation: Activation,
    /// Whether linear sub-models carry a bias.
    pub bias: bool,
    /// Overrides `model` per party.
    pub party_models: Option<Vec<SubModelKind>>,
    pub reduction: BatchReduction,
    pub noise_mechanism: NoiseMechanism,
    pub noise_level: f64,
    pub noise_seed: u64,
    /// Serializes all workers in one context, round-robin per iteration.
    pub deterministic: bool,
    pub carrier: Carrier,
    /// Upper bound of a uniform random pause before each worker step.
    pub jitter: Duration,
    /// Evaluate after every epoch (otherwise only after the last).
    pub evaluate_every_epoch: bool,
    pub retry: RetryPolicy,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            parties: 2,
            staleness: 8,
            eta: None,
            lambda: 1e-4,
            batch_size: 100,
            epochs: 40,
            seed: 1,
            model: ModelFamily::Lr,
            hidden: SubModelKind::DEFAULT_HIDDEN,
            activation: Activation::Relu,
            bias: true,
            party_models: None,
            reduction: BatchReduction::Mean,
            noise_mechanism: NoiseMechanism::Laplace,
            noise_level: 0.0,
            noise_seed: 0,
            deterministic: false,
            carrier: Carrier::InProcess,
            jitter: Duration::ZERO,
            evaluate_every_epoch: true,
            retry: RetryPolicy::default(),
        }
    }
}

impl TrainingConfig {
    pub fn learning_rate(&self) -> f64 {
        self.eta.unwrap_or(match self.model {
            ModelFamily::Lr => 4.0,
            ModelFamily::Nn => 2.0,
        })
    }

    pub fn family_kind(&self) -> SubModelKind {
        match self.model {
            ModelFamily::Lr => SubModelKind::Linear { bias: self.bias },
            ModelFamily::Nn => SubModelKind::FeedForward {
                hidden: self.hidden,
                activation: self.activation,
            },
        }
    }

    pub fn party_kind(&self, party: usize) -> SubModelKind {
        self.party_models
            .as_ref()
            .and_then(|kinds| kinds.get(party).copied())
            .unwrap_or_else(|| self.family_kind())
    }

    pub fn noise_for(&self, party: usize) -> Result<NoiseSpec> {
        NoiseSpec::new(self.noise_mechanism, self.noise_level, self.noise_seed, party as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.parties == 0 {
            return Err(Error::config("at least one party is required"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda must be finite and non-negative"));
        }
        let eta = self.learning_rate();
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be positive"));
        }
        if let Some(kinds) = &self.party_models {
            if kinds.len() != self.parties {
                return Err(Error::config(format!(
                    "{} party models given for {} parties",
                    kinds.len(),
                    self.parties
                )));
            }
        }
        NoiseSpec::new(self.noise_mechanism, self.noise_level, 0, 0)?;
        Ok(())
    }

    pub fn schedule(&self, samples: usize) -> Result<SampleSchedule> {
        SampleSchedule::generate(self.seed, samples, self.batch_size, self.epochs)
    }
}

/// A dataset split across parties, with each party's projected features.
pub struct FdmlProblem {
    pub data: DatasetSplit,
    pub partition: VerticalPartition,
    train_parts: Vec<Arc<Vec<SparseVector>>>,
    test_parts: Vec<Vec<SparseVector>>,
    train_labels: Arc<Vec<u8>>,
}

impl FdmlProblem {
    pub fn new(data: DatasetSplit, partition: VerticalPartition) -> Result<Self> {
        if partition.dim() < data.dim() {
            return Err(Error::config(format!(
                "partition covers {} features, data has {}",
                partition.dim(),
                data.dim()
            )));
        }
        let m = partition.party_count();
        let train_parts = (0..m)
            .map(|j| Arc::new(partition.project_rows(&data.train.rows, j)))
            .collect();
        let test_parts = (0..m)
            .map(|j| partition.project_rows(&data.test.rows, j))
            .collect();
        let train_labels = Arc::new(data.train.labels.clone());
        Ok(FdmlProblem {
            data,
            partition,
            train_parts,
            test_parts,
            train_labels,
        })
    }

    pub fn parties(&self) -> usize {
        self.partition.party_count()
    }

    pub fn train_features(&self, party: usize) -> &Arc<Vec<SparseVector>> {
        &self.train_parts[party]
    }

    pub fn test_features(&self, party: usize) -> &[SparseVector] {
        &self.test_parts[party]
    }

    pub fn train_labels(&self) -> &Arc<Vec<u8>> {
        &self.train_labels
    }

    pub fn party_model(&self, cfg: &TrainingConfig, party: usize) -> Result<SubModel> {
        SubModel::new(cfg.party_kind(party), self.partition.party_dim(party))
    }

    /// Initial blocks, seeded by `(cfg.seed, party)`.
    pub fn initial_blocks(&self, cfg: &TrainingConfig) -> Result<Vec<ParameterBlock>> {
        (0..self.parties())
            .map(|j| Ok(self.party_model(cfg, j)?.init(j, cfg.seed)))
            .collect()
    }

    /// One party's worker, ready to run.
    pub fn worker(
        &self,
        cfg: &TrainingConfig,
        party: usize,
        schedule: Arc<SampleSchedule>,
        block: ParameterBlock,
    ) -> Result<Worker> {
        Worker::new(WorkerConfig {
            party,
            model: self.party_model(cfg, party)?,
            block,
            features: Arc::clone(&self.train_parts[party]),
            labels: Arc::clone(&self.train_labels),
            schedule,
            learning_rate: LearningRate::new(cfg.learning_rate())?,
            lambda: cfg.lambda,
            reduction: cfg.reduction,
            noise: cfg.noise_for(party)?,
            retry: cfg.retry,
        })
    }
}

/// A model component that contributes one local prediction per sample.
struct Component<'a> {
    model: SubModel,
    train: &'a [SparseVector],
    test: &'a [SparseVector],
    /// Non-empty for a segmented linear prediction.
    boundaries: Vec<usize>,
}

impl Component<'_> {
    fn predict(&self, params: &[f64], x: &SparseVector) -> Result<f64> {
        if self.boundaries.is_empty() {
            self.model.predict_raw(params, x)
        } else {
            self.model.predict_segmented(params, x, &self.boundaries)
        }
    }

    fn predict_all(&self, params: &[f64], rows: &[SparseVector]) -> Result<Vec<f64>> {
        rows.iter().map(|x| self.predict(params, x)).collect()
    }
}

/// Train objective, test log loss and test AUC of a set of components.
fn measure(
    components: &[Component<'_>],
    blocks: &[ParameterBlock],
    train_labels: &[u8],
    test_labels: &[u8],
    lambda: f64,
) -> Result<(f64, f64, f64)> {
    let (train_local, test_local) = thread::scope(|s| {
        let handles: Vec<_> = components
            .iter()
            .zip(blocks)
            .map(|(c, b)| {
                s.spawn(move || -> Result<(Vec<f64>, Vec<f64>)> {
                    Ok((c.predict_all(&b.values, c.train)?, c.predict_all(&b.values, c.test)?))
                })
            })
            .collect();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for h in handles {
            let (a, b) = h.join().expect("evaluation thread panicked")?;
            train.push(a);
            test.push(b);
        }
        Ok::<_, Error>((train, test))
    })?;
    let penalty: f64 = components
        .iter()
        .zip(blocks)
        .map(|(c, b)| c.model.regularizer_value(b, lambda))
        .sum();
    let train_loss = mean_log_loss(&composite_probabilities(&train_local), train_labels);
    let test_probabilities = composite_probabilities(&test_local);
    Ok((
        train_loss + penalty,
        mean_log_loss(&test_probabilities, test_labels),
        auc(&test_probabilities, test_labels)?,
    ))
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub scheme: Scheme,
    pub models: Vec<SubModel>,
    pub blocks: Vec<ParameterBlock>,
    pub trace: Vec<EpochMetrics>,
    /// Rejected pulls per worker (FDML only).
    pub rejections: Vec<u64>,
    /// Training wall time, evaluation excluded where it runs inline.
    pub elapsed_s: f64,
}

impl TrainingOutcome {
    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.trace.last()
    }
}

fn components_for<'a>(problem: &'a FdmlProblem, models: &[SubModel]) -> Vec<Component<'a>> {
    models
        .iter()
        .enumerate()
        .map(|(j, &model)| Component {
            model,
            train: &problem.train_parts[j],
            test: &problem.test_parts[j],
            boundaries: Vec::new(),
        })
        .collect()
}

fn epoch_row(
    scheme: Scheme,
    epoch: usize,
    components: &[Component<'_>],
    blocks: &[ParameterBlock],
    problem: &FdmlProblem,
    lambda: f64,
    elapsed_s: f64,
) -> Result<EpochMetrics> {
    let (train_objective, test_logloss, test_auc) = measure(
        components,
        blocks,
        &problem.data.train.labels,
        &problem.data.test.labels,
        lambda,
    )?;
    Ok(EpochMetrics {
        scheme: scheme.name().to_string(),
        epoch,
        train_objective,
        test_logloss,
        test_auc,
        elapsed_s,
    })
}

fn wants_row(cfg: &TrainingConfig, epoch: usize) -> bool {
    cfg.evaluate_every_epoch || epoch + 1 == cfg.epochs
}

/// Trains with one of the baseline schemes or FDML.
pub fn train(problem: &FdmlProblem, cfg: &TrainingConfig, scheme: Scheme) -> Result<TrainingOutcome> {
    match scheme {
        Scheme::Fdml => run_fdml(problem, cfg),
        other => run_single(problem, cfg, other),
    }
}

/// Plain mini-batch SGD on one model: party 0's slice (`Local`) or the full
/// feature vector (`Centralized`).
///
/// A centralized linear model splits its dot product at the partition's cut
/// points, so that its sums match the coordinator's per-sample sums exactly.
pub fn run_single(problem: &FdmlProblem, cfg: &TrainingConfig, scheme: Scheme) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let (model, train_rows, test_rows, boundaries): (SubModel, &[SparseVector], &[SparseVector], Vec<usize>) =
        match scheme {
            Scheme::Local => (
                problem.party_model(cfg, 0)?,
                &problem.train_parts[0],
                &problem.test_parts[0],
                Vec::new(),
            ),
            Scheme::Centralized => {
                let kind = cfg.family_kind();
                let boundaries = match kind {
                    SubModelKind::Linear { .. } => {
                        problem.partition.contiguous_boundaries().unwrap_or_default()
                    }
                    SubModelKind::FeedForward { .. } => Vec::new(),
                };
                (
                    SubModel::new(kind, problem.data.dim())?,
                    &problem.data.train.rows,
                    &problem.data.test.rows,
                    boundaries,
                )
            }
            Scheme::Fdml => return Err(Error::config("use run_fdml for the fdml scheme")),
        };
    let component = Component {
        model,
        train: train_rows,
        test: test_rows,
        boundaries,
    };
    let schedule = cfg.schedule(problem.data.train.len())?;
    let rate = LearningRate::new(cfg.learning_rate())?;
    let mut block = model.init(0, cfg.seed);
    let labels = &problem.data.train.labels;
    let mut trace = Vec::new();
    let mut training = Duration::ZERO;
    let mut started = Instant::now();
    for (t, batch) in schedule.iter() {
        let sums = batch
            .iter()
            .map(|&i| component.predict(&block.values, &train_rows[i as usize]))
            .collect::<Result<Vec<f64>>>()?;
        let grad = batch_gradient(
            &model,
            &block.values,
            train_rows,
            labels,
            batch,
            &sums,
            cfg.lambda,
            cfg.reduction,
        )?;
        apply_step(&mut block.values, &grad, rate.at(t))?;
        if schedule.ends_epoch(t) && wants_row(cfg, schedule.epoch_of(t)) {
            training += started.elapsed();
            let epoch = schedule.epoch_of(t);
            let row = epoch_row(
                scheme,
                epoch + 1,
                std::slice::from_ref(&component),
                std::slice::from_ref(&block),
                problem,
                cfg.lambda,
                training.as_secs_f64(),
            )?;
            info!("{scheme} epoch {} test_auc {:.4}", epoch + 1, row.test_auc);
            trace.push(row);
            started = Instant::now();
        }
    }
    training += started.elapsed();
    Ok(TrainingOutcome {
        scheme,
        models: vec![model],
        blocks: vec![block],
        trace,
        rejections: Vec::new(),
        elapsed_s: training.as_secs_f64(),
    })
}

/// Optional observation points of an FDML run.
#[derive(Default, Clone)]
pub struct FdmlHooks {
    pub observer: Option<GrantObserver>,
    /// One log per worker, filled by its carrier.
    pub logs: Option<Vec<MessageLog>>,
}

pub fn run_fdml(problem: &FdmlProblem, cfg: &TrainingConfig) -> Result<TrainingOutcome> {
    run_fdml_with(problem, cfg, FdmlHooks::default())
}

/// The coordinated run: one coordinator and `m` workers in this process.
pub fn run_fdml_with(problem: &FdmlProblem, cfg: &TrainingConfig, hooks: FdmlHooks) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if cfg.parties != problem.parties() {
        return Err(Error::config(format!(
            "config has {} parties, partition has {}",
            cfg.parties,
            problem.parties()
        )));
    }
    let m = problem.parties();
    if let Some(logs) = &hooks.logs {
        if logs.len() != m {
            return Err(Error::config("one message log per worker is required"));
        }
    }
    let models = (0..m)
        .map(|j| problem.party_model(cfg, j))
        .collect::<Result<Vec<_>>>()?;
    let schedule = Arc::new(cfg.schedule(problem.data.train.len())?);
    let mut coordinator = Coordinator::new(problem.data.train.len(), m, cfg.staleness)?;
    if let Some(observer) = hooks.observer.clone() {
        coordinator = coordinator.with_observer(observer);
    }
    let coordinator = Arc::new(coordinator);
    let workers = problem
        .initial_blocks(cfg)?
        .into_iter()
        .enumerate()
        .map(|(j, block)| problem.worker(cfg, j, Arc::clone(&schedule), block))
        .collect::<Result<Vec<_>>>()?;
    if cfg.deterministic {
        run_round_robin(problem, cfg, &models, workers, &coordinator, &hooks)
    } else {
        run_threaded(problem, cfg, &models, workers, &coordinator, &hooks)
    }
}

fn in_process_links(coordinator: &Arc<Coordinator>, hooks: &FdmlHooks, m: usize) -> Vec<Box<dyn Link>> {
    (0..m)
        .map(|j| {
            let link = InProcessLink::new(Arc::clone(coordinator));
            let link = match &hooks.logs {
                Some(logs) => link.with_log(Arc::clone(&logs[j])),
                None => link,
            };
            Box::new(link) as Box<dyn Link>
        })
        .collect()
}

/// Every worker pushes iteration `t`, then every worker pulls and updates.
fn run_round_robin(
    problem: &FdmlProblem,
    cfg: &TrainingConfig,
    models: &[SubModel],
    mut workers: Vec<Worker>,
    coordinator: &Arc<Coordinator>,
    hooks: &FdmlHooks,
) -> Result<TrainingOutcome> {
    let m = workers.len();
    let mut links = in_process_links(coordinator, hooks, m);
    let schedule = workers[0].schedule().clone();
    let components = components_for(problem, models);
    let mut trace = Vec::new();
    let mut training = Duration::ZERO;
    let mut started = Instant::now();
    for t in 1..=schedule.total_iterations() {
        for (w, link) in workers.iter_mut().zip(links.iter_mut()) {
            w.push(link.as_mut(), t)?;
        }
        for (w, link) in workers.iter_mut().zip(links.iter_mut()) {
            let (sums, _) = w.pull(link.as_mut(), t)?;
            w.update(t, &sums)?;
        }
        if schedule.ends_epoch(t) && wants_row(cfg, schedule.epoch_of(t)) {
            training += started.elapsed();
            let blocks: Vec<ParameterBlock> = workers.iter().map(|w| w.block().clone()).collect();
            let epoch = schedule.epoch_of(t) + 1;
            let row = epoch_row(Scheme::Fdml, epoch, &components, &blocks, problem, cfg.lambda, training.as_secs_f64())?;
            info!("fdml epoch {epoch} test_auc {:.4}", row.test_auc);
            trace.push(row);
            started = Instant::now();
        }
    }
    training += started.elapsed();
    Ok(TrainingOutcome {
        scheme: Scheme::Fdml,
        models: models.to_vec(),
        blocks: workers.into_iter().map(Worker::into_block).collect(),
        trace,
        rejections: coordinator.rejections(),
        elapsed_s: training.as_secs_f64(),
    })
}

enum WorkerEvent {
    Epoch {
        party: usize,
        epoch: usize,
        block: ParameterBlock,
    },
    Done {
        party: usize,
        result: Result<ParameterBlock>,
    },
}

/// One thread per worker; epoch snapshots are evaluated as they complete.
type ServerHandle = thread::JoinHandle<Result<()>>;

fn run_threaded(
    problem: &FdmlProblem,
    cfg: &TrainingConfig,
    models: &[SubModel],
    workers: Vec<Worker>,
    coordinator: &Arc<Coordinator>,
    hooks: &FdmlHooks,
) -> Result<TrainingOutcome> {
    let m = workers.len();
    let total = workers[0].schedule().total_iterations();
    let (server, mut links): (Option<ServerHandle>, Vec<Box<dyn Link>>) = match cfg.carrier {
        Carrier::InProcess => (None, in_process_links(coordinator, hooks, m)),
        Carrier::Tcp => {
            let server = TcpCoordinatorServer::bind(Arc::clone(coordinator), "127.0.0.1:0")?;
            let addr = server.local_addr()?;
            let handle = server.spawn(total);
            let links = (0..m)
                .map(|j| {
                    let link = TcpLink::connect(addr, 50, Duration::from_millis(20))?;
                    let link = match &hooks.logs {
                        Some(logs) => link.with_log(Arc::clone(&logs[j])),
                        None => link,
                    };
                    Ok(Box::new(link) as Box<dyn Link>)
                })
                .collect::<Result<Vec<_>>>()?;
            (Some(handle), links)
        }
    };

    let components = components_for(problem, models);
    let started = Instant::now();
    let (tx, rx) = mpsc::channel();
    let mut handles = Vec::with_capacity(m);
    for (mut worker, mut link) in workers.into_iter().zip(links.drain(..)) {
        let tx = tx.clone();
        let jitter = cfg.jitter;
        let every_epoch = cfg.evaluate_every_epoch;
        let epochs = cfg.epochs;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6a17_7e75);
        rng.set_stream(worker.party() as u64);
        handles.push(thread::spawn(move || {
            let party = worker.party();
            let result = (|| {
                while worker.completed() < total {
                    if !jitter.is_zero() {
                        thread::sleep(jitter.mul_f64(rng.gen::<f64>()));
                    }
                    worker.step(link.as_mut())?;
                    let t = worker.completed();
                    let schedule = worker.schedule();
                    if schedule.ends_epoch(t) {
                        let epoch = schedule.epoch_of(t);
                        if every_epoch || epoch + 1 == epochs {
                            let _ = tx.send(WorkerEvent::Epoch {
                                party,
                                epoch,
                                block: worker.block().clone(),
                            });
                        }
                    }
                }
                Ok(())
            })();
            drop(link);
            let _ = tx.send(WorkerEvent::Done {
                party,
                result: result.map(|()| worker.into_block()),
            });
        }));
    }
    drop(tx);

    let mut pending: BTreeMap<usize, (Vec<Option<ParameterBlock>>, f64)> = BTreeMap::new();
    let mut finals: Vec<Option<ParameterBlock>> = vec![None; m];
    let mut trace = Vec::new();
    let mut failure = None;
    let mut elapsed_s = 0.0;
    for event in rx {
        match event {
            WorkerEvent::Epoch { party, epoch, block } => {
                let entry = pending.entry(epoch).or_insert_with(|| (vec![None; m], 0.0));
                entry.0[party] = Some(block);
                if entry.0.iter().all(Option::is_some) {
                    entry.1 = started.elapsed().as_secs_f64();
                    let (blocks, at) = pending.remove(&epoch).expect("present");
                    if failure.is_none() {
                        let blocks: Vec<ParameterBlock> = blocks.into_iter().flatten().collect();
                        match epoch_row(Scheme::Fdml, epoch + 1, &components, &blocks, problem, cfg.lambda, at) {
                            Ok(row) => {
                                info!("fdml epoch {} test_auc {:.4}", epoch + 1, row.test_auc);
                                trace.push(row);
                            }
                            Err(e) => failure = Some(e),
                        }
                    }
                }
            }
            WorkerEvent::Done { party, result } => {
                elapsed_s = started.elapsed().as_secs_f64();
                match result {
                    Ok(block) => finals[party] = Some(block),
                    Err(e) => {
                        failure.get_or_insert(e);
                    }
                }
            }
        }
    }
    for handle in handles {
        handle.join().map_err(|_| Error::Transport("worker thread panicked".into()))?;
    }
    if let Some(server) = server {
        match failure {
            // a failed worker may leave the server waiting forever
            Some(_) => drop(server),
            None => server
                .join()
                .map_err(|_| Error::Transport("coordinator thread panicked".into()))??,
        }
    }
    if let Some(e) = failure {
        return Err(e);
    }
    trace.sort_by_key(|r| r.epoch);
    Ok(TrainingOutcome {
        scheme: Scheme::Fdml,
        models: models.to_vec(),
        blocks: finals.into_iter().map(|b| b.expect("every worker reported")).collect(),
        trace,
        rejections: coordinator.rejections(),
        elapsed_s,
    })
}

/// An FDML run whose workers are interleaved in one context by a seeded
/// scheduler, so that staleness patterns are random yet reproducible.
pub struct SimulatedRun {
    pub blocks: Vec<ParameterBlock>,
    /// One record per iteration with every party's `x_t` and applied gradient.
    pub steps: Vec<InstrumentedStep>,
    /// Largest observed lead of the fastest worker over the slowest.
    pub max_spread: u64,
}

/// Runs the real coordinator with workers picked at random (with per-worker
/// speeds drawn from `interleave_seed`) and records every step.
pub fn simulate_fdml(problem: &FdmlProblem, cfg: &TrainingConfig, interleave_seed: u64) -> Result<SimulatedRun> {
    cfg.validate()?;
    let m = problem.parties();
    let schedule = Arc::new(cfg.schedule(problem.data.train.len())?);
    let total = schedule.total_iterations();
    let coordinator = Arc::new(Coordinator::new(problem.data.train.len(), m, cfg.staleness)?);
    let mut workers = problem
        .initial_blocks(cfg)?
        .into_iter()
        .enumerate()
        .map(|(j, b)| problem.worker(cfg, j, Arc::clone(&schedule), b))
        .collect::<Result<Vec<_>>>()?;
    let mut links: Vec<InProcessLink> = (0..m).map(|_| InProcessLink::new(Arc::clone(&coordinator))).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(interleave_seed);
    let speeds: Vec<f64> = (0..m).map(|_| rng.gen_range(0.2..1.0)).collect();
    // pushed[j]: whether worker j has pushed its next iteration
    let mut pushed = vec![false; m];
    let mut params: Vec<Vec<Vec<f64>>> = vec![Vec::new(); m];
    let mut applied: Vec<Vec<Vec<f64>>> = vec![Vec::new(); m];
    let mut etas = Vec::with_capacity(total as usize);
    let mut max_spread = 0;
    loop {
        let live: Vec<usize> = (0..m).filter(|&j| workers[j].completed() < total).collect();
        if live.is_empty() {
            break;
        }
        let weight: f64 = live.iter().map(|&j| speeds[j]).sum();
        let mut pick = rng.gen::<f64>() * weight;
        let mut j = *live.last().expect("non-empty");
        for &k in &live {
            if pick < speeds[k] {
                j = k;
                break;
            }
            pick -= speeds[k];
        }
        let t = workers[j].completed() + 1;
        if !pushed[j] {
            workers[j].push(&mut links[j], t)?;
            pushed[j] = true;
            continue;
        }
        let request = workers[j].pull_request(t);
        match links[j].exchange(&request)? {
            crate::transport::Message::PullGrant { sums, .. } => {
                let before = workers[j].block().values.clone();
                let (eta, grad) = workers[j].update(t, &sums)?;
                params[j].push(before);
                applied[j].push(grad);
                if j == 0 {
                    etas.push(eta);
                }
                pushed[j] = false;
                let progress = coordinator.progress();
                let spread = progress.fastest()? - progress.slowest()?;
                max_spread = max_spread.max(spread);
            }
            crate::transport::Message::PullReject { .. } => {}
            other => {
                return Err(Error::protocol(
                    crate::error::codes::UNEXPECTED_MESSAGE,
                    format!("unexpected reply tag {}", other.tag()),
                ))
            }
        }
    }
    let steps = (0..total as usize)
        .map(|k| InstrumentedStep {
            iteration: k as u64 + 1,
            eta: etas[k],
            batch: schedule.batch(k as u64 + 1).to_vec(),
            params: (0..m).map(|j| params[j][k].clone()).collect(),
            applied: (0..m).map(|j| applied[j][k].clone()).collect(),
        })
        .collect();
    Ok(SimulatedRun {
        blocks: workers.into_iter().map(Worker::into_block).collect(),
        steps,
        max_spread,
    })
}

/// Probability of the composite model for one sample given per-party rows.
pub fn composite_probability(models: &[SubModel], blocks: &[ParameterBlock], parts: &[&SparseVector]) -> Result<f64> {
    let local = models
        .iter()
        .zip(blocks)
        .zip(parts)
        .map(|((m, b), x)| m.predict(b, x))
        .collect::<Result<Vec<f64>>>()?;
    Ok(aggregate(&local))
}

/// Mean log loss of a composite model over the training rows of a problem.
pub fn train_log_loss(problem: &FdmlProblem, models: &[SubModel], blocks: &[ParameterBlock]) -> Result<f64> {
    let n = problem.data.train.len();
    let mut total = 0.0;
    for i in 0..n {
        let parts: Vec<&SparseVector> = (0..problem.parties()).map(|j| &problem.train_parts[j][i]).collect();
        total += log_loss(composite_probability(models, blocks, &parts)?, problem.data.train.labels[i]);
    }
    Ok(total / n.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{dense, DenseSpec};
    use crate::data::{make_partition, Dataset, PartitionSpec};

    fn problem(samples: usize, dim: usize, sizes: Vec<usize>) -> FdmlProblem {
        let all = dense(&DenseSpec {
            samples: samples * 2,
            dim,
            weight_scale: 1.5,
            seed: 11,
        });
        let train = Dataset::new(all.rows[..samples].to_vec(), all.labels[..samples].to_vec(), dim).unwrap();
        let test = Dataset::new(all.rows[samples..].to_vec(), all.labels[samples..].to_vec(), dim).unwrap();
        let split = DatasetSplit::new(train, test, dim).unwrap();
        let partition = make_partition(dim, &PartitionSpec::Sizes(sizes)).unwrap();
        FdmlProblem::new(split, partition).unwrap()
    }

    fn lr_config() -> TrainingConfig {
        TrainingConfig {
            eta: Some(0.5),
            batch_size: 8,
            epochs: 3,
            bias: false,
            staleness: 0,
            deterministic: true,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_parameters() {
        let p = problem(40, 6, vec![3, 3]);
        let cfg = TrainingConfig {
            epochs: 0,
            ..lr_config()
        };
        let out = run_fdml(&p, &cfg).unwrap();
        assert!(out.trace.is_empty());
        assert_eq!(out.blocks, p.initial_blocks(&cfg).unwrap());
    }

    #[test]
    fn deterministic_fdml_equals_centralized_linear_model() {
        let p = problem(50, 7, vec![4, 3]);
        let cfg = lr_config();
        let fdml = run_fdml(&p, &cfg).unwrap();
        let central = run_single(&p, &cfg, Scheme::Centralized).unwrap();
        let joined: Vec<f64> = fdml.blocks.iter().flat_map(|b| b.values.clone()).collect();
        assert_eq!(joined, central.blocks[0].values);
        for (a, b) in fdml.trace.iter().zip(&central.trace) {
            assert_eq!(a.test_auc, b.test_auc);
            assert_eq!(a.train_objective, b.train_objective);
        }
    }

    #[test]
    fn threaded_lockstep_matches_round_robin() {
        let p = problem(60, 6, vec![2, 2, 2]);
        let cfg = TrainingConfig {
            parties: 3,
            ..lr_config()
        };
        let reference = run_fdml(&p, &cfg).unwrap();
        let threaded = run_fdml(
            &p,
            &TrainingConfig {
                deterministic: false,
                ..cfg
            },
        )
        .unwrap();
        assert_eq!(reference.blocks, threaded.blocks);
    }

    #[test]
    fn simulated_runs_respect_the_bound() {
        let p = problem(40, 6, vec![3, 3]);
        for tau in [0, 2, 5] {
            let cfg = TrainingConfig {
                staleness: tau,
                deterministic: false,
                ..lr_config()
            };
            let run = simulate_fdml(&p, &cfg, 9).unwrap();
            assert!(run.max_spread <= tau + 1);
            assert_eq!(run.steps.len() as u64, cfg.schedule(40).unwrap().total_iterations());
        }
    }

    #[test]
    fn local_scheme_reads_only_party_zero() {
        let p = problem(30, 6, vec![4, 2]);
        let out = run_single(&p, &lr_config(), Scheme::Local).unwrap();
        assert_eq!(out.blocks[0].dim(), 4);
        assert_eq!(out.trace.len(), 3);
    }

    #[test]
    fn scheme_and_family_names() {
        assert_eq!("centralized".parse::<Scheme>().unwrap(), Scheme::Centralized);
        assert!("both".parse::<Scheme>().is_err());
        assert_eq!("NN".parse::<ModelFamily>().unwrap(), ModelFamily::Nn);
        assert_eq!(TrainingConfig::default().learning_rate(), 4.0);
    }
}
