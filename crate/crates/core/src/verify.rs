//! Self-contained verification suites runnable from the command line.
//!
//! Each suite builds its own small synthetic instance, so none needs data
//! files or configuration.

use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coordinator::GrantEvent;
use crate::data::synthetic::{dense, DenseSpec};
use crate::data::{make_partition, Dataset, DatasetSplit, PartitionSpec};
use crate::metrics::regret::{
    full_batch_optimum, inverse_sqrt_bound, lemma1_trace, regret_envelope, regret_trace,
    AssumptionProbe, BlockLayout, InverseSqrtSums, LogisticObjective,
};
use crate::model::{aggregate, h_term, log_loss, Activation, SparseVector, SubModel, SubModelKind};
use crate::schedule::SampleSchedule;
use crate::train::{run_fdml, run_fdml_with, run_single, simulate_fdml, FdmlHooks, FdmlProblem, Scheme, TrainingConfig};
use crate::transport::{decode, encode, Message};
use crate::{Error, Result};

pub const SUITES: &[&str] = &[
    "gradients",
    "lemma1",
    "protocol",
    "inequality",
    "schedule",
    "admission",
    "equivalence",
    "regret",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl SuiteReport {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        SuiteReport {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

/// Runs the named suites in order; unknown names are a configuration error.
pub fn run_suites(names: &[&str]) -> Result<Vec<SuiteReport>> {
    if let Some(bad) = names.iter().find(|n| !SUITES.contains(n)) {
        return Err(Error::config(format!(
            "unknown suite `{bad}`; available: {}",
            SUITES.join(", ")
        )));
    }
    names.iter().map(|&name| run_suite(name)).collect()
}

fn run_suite(name: &str) -> Result<SuiteReport> {
    match name {
        "gradients" => gradients(),
        "lemma1" => lemma1(),
        "protocol" => Ok(protocol()),
        "inequality" => Ok(inequality()),
        "schedule" => schedule(),
        "admission" => admission(Duration::from_millis(5), 30),
        "equivalence" => equivalence(),
        "regret" => regret(),
        _ => unreachable!("checked by run_suites"),
    }
}

/// Dense 2-party logistic instance with bias-free linear parties.
pub fn convex_problem(samples: usize, dim: usize, seed: u64) -> Result<FdmlProblem> {
    let all = dense(&DenseSpec {
        samples: samples * 2,
        dim,
        weight_scale: 1.0,
        seed,
    });
    let train = Dataset::new(all.rows[..samples].to_vec(), all.labels[..samples].to_vec(), dim)?;
    let test = Dataset::new(all.rows[samples..].to_vec(), all.labels[samples..].to_vec(), dim)?;
    let split = DatasetSplit::new(train, test, dim)?;
    let half = dim / 2;
    let partition = make_partition(dim, &PartitionSpec::Sizes(vec![half, dim - half]))?;
    FdmlProblem::new(split, partition)
}

/// Relative gap with a floor on the denominator, so that coordinates whose
/// true derivative vanishes are compared absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_sparse(rng: &mut ChaCha8Rng, dim: usize) -> SparseVector {
    let mut pairs = Vec::new();
    for k in 0..dim as u32 {
        if rng.gen_bool(0.6) {
            pairs.push((k, rng.gen_range(-1.0..1.0)));
        }
    }
    SparseVector::from_pairs(pairs).expect("sorted")
}

/// Largest relative error between the analytic partial gradient and central
/// differences of the per-sample objective, over `cases` random cases.
pub fn gradient_check(kind: SubModelKind, cases: usize, seed: u64) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let dim = rng.gen_range(1..6);
        let model = SubModel::new(kind, dim)?;
        let mut block = model.init(0, rng.gen());
        for v in &mut block.values {
            *v += rng.gen_range(-0.5..0.5);
        }
        let x = random_sparse(&mut rng, dim);
        let rest = rng.gen_range(-1.0..1.0);
        let label = u8::from(rng.gen_bool(0.5));
        let lambda = rng.gen_range(0.0..0.1);
        if near_kink(&model, &block.values, &x, STEP) {
            continue;
        }
        let objective = |params: &[f64]| -> Result<f64> {
            let alpha = model.predict_raw(params, &x)?;
            Ok(log_loss(aggregate(&[alpha, rest]), label) + model.regularizer_value_raw(params, lambda))
        };
        let alpha = model.predict(&block, &x)?;
        let analytic = model.partial_gradient(&block, &x, h_term(alpha + rest, label), lambda)?;
        let mut probe = block.values.clone();
        for k in 0..probe.len() {
            let base = probe[k];
            probe[k] = base + STEP;
            let up = objective(&probe)?;
            probe[k] = base - STEP;
            let down = objective(&probe)?;
            probe[k] = base;
            worst = worst.max(relative_error((up - down) / (2.0 * STEP), analytic[k]));
        }
        done += 1;
    }
    Ok(worst)
}

/// Whether a ReLU unit's pre-activation lies within reach of the difference step.
fn near_kink(model: &SubModel, params: &[f64], x: &SparseVector, step: f64) -> bool {
    let SubModelKind::FeedForward { hidden, activation: Activation::Relu } = model.kind() else {
        return false;
    };
    let d = model.input_dim();
    let slack = 1e3 * step * (1.0 + x.values().iter().map(|v| v.abs()).sum::<f64>());
    (0..hidden).any(|h| {
        let z = params[d * hidden + h] + x.iter().map(|(k, v)| params[k * hidden + h] * v).sum::<f64>();
        z.abs() < slack
    })
}

fn gradients() -> Result<SuiteReport> {
    let lr = gradient_check(SubModelKind::linear(), 100, 1)?;
    let nn = gradient_check(
        SubModelKind::FeedForward {
            hidden: 8,
            activation: Activation::Relu,
        },
        100,
        2,
    )?;
    let tanh = gradient_check(
        SubModelKind::FeedForward {
            hidden: 8,
            activation: Activation::Tanh,
        },
        100,
        3,
    )?;
    let worst = lr.max(nn).max(tanh);
    Ok(SuiteReport::new(
        "gradients",
        worst <= 1e-4,
        format!("max relative error lr {lr:.2e}, relu net {nn:.2e}, tanh net {tanh:.2e}"),
    ))
}

/// Largest lemma residual over an asynchronous run with bound `tau`.
pub fn lemma_residuals(tau: u64, seed: u64) -> Result<(usize, f64, u64)> {
    let problem = convex_problem(200, 10, seed)?;
    let cfg = TrainingConfig {
        staleness: tau,
        eta: Some(0.5),
        lambda: 1e-3,
        batch_size: 1,
        epochs: 6,
        bias: false,
        seed,
        ..TrainingConfig::default()
    };
    let run = simulate_fdml(&problem, &cfg, seed ^ 0x5eed)?;
    let layout = layout_of(&problem);
    let objective = LogisticObjective::new(&problem.data.train.rows, &problem.data.train.labels, 10, cfg.lambda);
    let optimum = full_batch_optimum(&objective, 1e-10, 1_000_000)?;
    let residuals = lemma1_trace(&run.steps, &layout, &objective, &optimum.x);
    if residuals.iter().any(|r| !r.applicable) {
        return Err(Error::Evaluation("recorded step does not match the update rule".into()));
    }
    let worst = residuals.iter().map(|r| r.residual).fold(0.0, f64::max);
    Ok((residuals.len(), worst, run.max_spread))
}

pub fn layout_of(problem: &FdmlProblem) -> BlockLayout {
    BlockLayout::new(
        (0..problem.parties())
            .map(|j| problem.partition.party_indices(j).to_vec())
            .collect(),
        problem.partition.dim(),
    )
}

fn lemma1() -> Result<SuiteReport> {
    let (steps, worst, spread) = lemma_residuals(16, 7)?;
    Ok(SuiteReport::new(
        "lemma1",
        steps >= 1000 && worst < 1e-8,
        format!("{steps} steps, max residual {worst:.2e}, max lead {spread}"),
    ))
}

pub fn random_message<R: Rng>(rng: &mut R) -> Message {
    let len = rng.gen_range(0..20);
    let value = |rng: &mut R| match rng.gen_range(0..4) {
        0 => 0.0,
        1 => f64::MAX * rng.gen_range(-1.0..1.0),
        _ => rng.gen_range(-1e6..1e6),
    };
    match rng.gen_range(0..6) {
        0 => Message::PushRequest {
            worker: rng.gen(),
            iteration: rng.gen(),
            pairs: (0..len).map(|_| (rng.gen(), value(rng))).collect(),
        },
        1 => Message::PushAck { iteration: rng.gen() },
        2 => Message::PullRequest {
            worker: rng.gen(),
            iteration: rng.gen(),
            samples: (0..len).map(|_| rng.gen()).collect(),
        },
        3 => Message::PullGrant {
            iteration: rng.gen(),
            sums: (0..len).map(|_| value(rng)).collect(),
        },
        4 => Message::PullReject {
            iteration: rng.gen(),
            slowest: rng.gen(),
        },
        _ => Message::Error {
            code: rng.gen(),
            detail: (0..len).map(|_| rng.gen_range('\u{20}'..'\u{3000}')).collect(),
        },
    }
}

fn protocol() -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let msg = random_message(&mut rng);
        if decode(&encode(&msg)).ok().as_ref() != Some(&msg) {
            mismatches += 1;
        }
    }
    let mut accepted = 0;
    for _ in 0..10_000 {
        let len = rng.gen_range(0..64);
        let mut bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        if bytes.len() >= 5 && rng.gen_bool(0.5) {
            let body = (bytes.len() - 4) as u32;
            bytes[..4].copy_from_slice(&body.to_le_bytes());
            bytes[4] = rng.gen_range(1..=6);
        }
        if decode(&bytes).is_ok() {
            accepted += 1;
        }
    }
    SuiteReport::new(
        "protocol",
        mismatches == 0,
        format!("10000 round trips ({mismatches} mismatches), 10000 fuzzed frames ({accepted} decoded)"),
    )
}

fn inequality() -> SuiteReport {
    let sums = InverseSqrtSums::new(1_000_000);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..10_000 {
        let x = rng.gen_range(1..=1_000_000u64);
        let y = rng.gen_range(1..=1_000_000u64);
        let (a, b) = (x.min(y), x.max(y));
        let margin = inverse_sqrt_bound(a, b) - sums.sum(a, b);
        tightest = tightest.min(margin);
        if margin < 0.0 {
            violations += 1;
        }
    }
    SuiteReport::new(
        "inequality",
        violations == 0,
        format!("10000 ranges, {violations} violations, smallest margin {tightest:.3e}"),
    )
}

fn schedule() -> Result<SuiteReport> {
    let a = SampleSchedule::generate(42, 1000, 7, 3)?;
    let b = SampleSchedule::generate(42, 1000, 7, 3)?;
    let agree = a == b;
    let trials = 24_000u64;
    let mut differ = 0u64;
    for seed in 0..trials {
        let s = SampleSchedule::generate(seed, 4, 4, 2)?;
        if s.batch(1) != s.batch(2) {
            differ += 1;
        }
    }
    let rate = differ as f64 / trials as f64;
    let expected = 23.0 / 24.0;
    let se = (expected * (1.0 - expected) / trials as f64).sqrt();
    Ok(SuiteReport::new(
        "schedule",
        agree && (rate - expected).abs() <= 4.0 * se,
        format!("identical replay {agree}, distinct second epoch in {rate:.4} of seeds (expected {expected:.4})"),
    ))
}

/// Largest lead of an admitted worker over the slowest pushed one at any
/// grant of a jittered threaded run, and whether that run's parameters
/// equal the round-robin run when `tau == 0`.
pub fn admission_spread(tau: u64, jitter: Duration, iterations: usize, seed: u64) -> Result<(u64, usize, bool)> {
    let problem = convex_problem(iterations * 4, 9, seed)?;
    let problem = FdmlProblem::new(
        problem.data.clone(),
        make_partition(9, &PartitionSpec::Sizes(vec![3, 3, 3]))?,
    )?;
    let cfg = TrainingConfig {
        parties: 3,
        staleness: tau,
        eta: Some(0.3),
        batch_size: 4,
        epochs: 1,
        bias: false,
        seed,
        jitter,
        evaluate_every_epoch: false,
        ..TrainingConfig::default()
    };
    let events: Arc<Mutex<Vec<GrantEvent>>> = Arc::default();
    let sink = Arc::clone(&events);
    let hooks = FdmlHooks {
        observer: Some(Arc::new(move |e: &GrantEvent| sink.lock().push(e.clone()))),
        logs: None,
    };
    let threaded = run_fdml_with(&problem, &cfg, hooks)?;
    let events = events.lock();
    let spread = events.iter().map(GrantEvent::spread).max().unwrap_or(0);
    let lockstep = if tau == 0 {
        let oracle = run_fdml(
            &problem,
            &TrainingConfig {
                deterministic: true,
                jitter: Duration::ZERO,
                ..cfg
            },
        )?;
        oracle.blocks == threaded.blocks
    } else {
        true
    };
    Ok((spread, events.len(), lockstep))
}

fn admission(jitter: Duration, iterations: usize) -> Result<SuiteReport> {
    let mut ok = true;
    let mut notes = Vec::new();
    for tau in [0, 2, 8] {
        let (spread, grants, lockstep) = admission_spread(tau, jitter, iterations, 21 + tau)?;
        ok &= spread <= tau && lockstep;
        notes.push(format!("tau {tau}: max lead {spread} over {grants} grants"));
        if tau == 0 {
            notes.push(format!("lockstep equals round-robin {lockstep}"));
        }
    }
    Ok(SuiteReport::new("admission", ok, notes.join("; ")))
}

fn equivalence() -> Result<SuiteReport> {
    let problem = convex_problem(300, 12, 5)?;
    let cfg = TrainingConfig {
        staleness: 0,
        eta: Some(0.2),
        batch_size: 10,
        epochs: 40,
        bias: false,
        deterministic: true,
        evaluate_every_epoch: false,
        ..TrainingConfig::default()
    };
    let fdml = run_fdml(&problem, &cfg)?;
    let central = run_single(&problem, &cfg, Scheme::Centralized)?;
    let joined: Vec<f64> = fdml.blocks.iter().flat_map(|b| b.values.iter().copied()).collect();
    let steps = cfg.schedule(300)?.total_iterations();
    let same = joined == central.blocks[0].values;
    Ok(SuiteReport::new(
        "equivalence",
        same,
        format!("{steps} steps, bitwise identical parameters {same}"),
    ))
}

/// Regret at 250, 1000 and 4000 iterations for one seed, with the bound
/// evaluated from probed constants at each checkpoint.
pub fn regret_checkpoints(seed: u64, tau: u64) -> Result<Vec<(u64, f64, f64)>> {
    let problem = convex_problem(200, 10, seed)?;
    let cfg = TrainingConfig {
        staleness: tau,
        eta: Some(0.5),
        lambda: 1e-3,
        batch_size: 1,
        epochs: 20,
        bias: false,
        seed,
        ..TrainingConfig::default()
    };
    let run = simulate_fdml(&problem, &cfg, seed.wrapping_mul(31))?;
    let layout = layout_of(&problem);
    let objective = LogisticObjective::new(&problem.data.train.rows, &problem.data.train.labels, 10, cfg.lambda);
    let optimum = full_batch_optimum(&objective, 1e-10, 1_000_000)?;
    let trace = regret_trace(&run.steps, &layout, &objective, &optimum.x, &[250, 1000, 4000])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe = AssumptionProbe::measure(&run.steps, &layout, &objective, &optimum.x, 2, &mut rng);
    Ok(trace
        .into_iter()
        .map(|(t, r)| (t, r, regret_envelope(cfg.learning_rate(), 2, &probe, tau, t)))
        .collect())
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

fn regret() -> Result<SuiteReport> {
    let runs = (1..=5)
        .map(|seed| regret_checkpoints(seed, 4))
        .collect::<Result<Vec<_>>>()?;
    let at = |k: usize| median(runs.iter().map(|r| r[k].1).collect());
    let (r250, r1000, r4000) = (at(0), at(1), at(2));
    let enveloped = runs.iter().flatten().all(|&(_, r, bound)| r <= bound);
    let decays = r1000 <= 0.7 * r250 && r4000 <= 0.7 * r1000;
    Ok(SuiteReport::new(
        "regret",
        decays && enveloped,
        format!("median R(250) {r250:.4e}, R(1000) {r1000:.4e}, R(4000) {r4000:.4e}, under bound {enveloped}"),
    ))
}
