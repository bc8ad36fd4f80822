use std::collections::BTreeSet;
use std::time::Duration;

use fdml::data::synthetic::{dense, DenseSpec};
use fdml::data::{make_partition, Dataset, DatasetSplit, PartitionSpec};
use fdml::metrics::{write_csv, EpochMetrics};
use fdml::model::SubModelKind;
use fdml::train::{
    run_fdml, run_fdml_with, run_single, simulate_fdml, train, train_log_loss, FdmlHooks, FdmlProblem, ModelFamily,
    Scheme, TrainingConfig,
};
use fdml::transport::{new_message_log, Direction, Message, MessageLog};
use fdml::worker::BatchReduction;
use proptest::prelude::*;

fn problem(samples: usize, dim: usize, sizes: Vec<usize>, seed: u64) -> FdmlProblem {
    let all = dense(&DenseSpec {
        samples: samples + samples / 2,
        dim,
        weight_scale: 1.0,
        seed,
    });
    let train = Dataset::new(all.rows[..samples].to_vec(), all.labels[..samples].to_vec(), dim).unwrap();
    let test = Dataset::new(all.rows[samples..].to_vec(), all.labels[samples..].to_vec(), dim).unwrap();
    let split = DatasetSplit::new(train, test, dim).unwrap();
    let partition = make_partition(dim, &PartitionSpec::Sizes(sizes)).unwrap();
    FdmlProblem::new(split, partition).unwrap()
}

fn small() -> TrainingConfig {
    TrainingConfig {
        eta: Some(0.5),
        batch_size: 16,
        epochs: 4,
        ..TrainingConfig::default()
    }
}

fn joined(outcome: &fdml::train::TrainingOutcome) -> Vec<f64> {
    outcome.blocks.iter().flat_map(|b| b.values.iter().copied()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fdml_lr_tracks_centralized_lr_bit_for_bit(
        seed in 0u64..1000,
        dim in 3usize..16,
        parties in 2usize..4,
        batch in 1usize..20,
    ) {
        let parties = parties.min(dim);
        let sizes = match PartitionSpec::even(dim, parties) {
            PartitionSpec::Sizes(s) => s,
            _ => unreachable!(),
        };
        let p = problem(120, dim, sizes, seed);
        let cfg = TrainingConfig {
            parties,
            staleness: 0,
            deterministic: true,
            bias: false,
            batch_size: batch,
            epochs: 3,
            seed,
            evaluate_every_epoch: false,
            ..small()
        };
        let fdml = run_fdml(&p, &cfg).unwrap();
        let central = run_single(&p, &cfg, Scheme::Centralized).unwrap();
        prop_assert_eq!(joined(&fdml), central.blocks[0].values.clone());
    }
}

fn without_time(mut rows: Vec<EpochMetrics>) -> Vec<u8> {
    for r in &mut rows {
        r.elapsed_s = 0.0;
    }
    let mut out = Vec::new();
    write_csv(&rows, &mut out).unwrap();
    out
}

#[test]
fn deterministic_reports_are_byte_identical() {
    let p = problem(300, 10, vec![5, 5], 4);
    let cfg = TrainingConfig {
        deterministic: true,
        noise_level: 0.5,
        noise_seed: 3,
        ..small()
    };
    let report = || {
        let mut rows = Vec::new();
        for scheme in Scheme::ALL {
            rows.extend(train(&p, &cfg, scheme).unwrap().trace);
        }
        without_time(rows)
    };
    let first = report();
    assert_eq!(first, report());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("scheme,epoch,train_objective,test_logloss,test_auc,elapsed_s\n"));
    assert_eq!(text.lines().count(), 1 + 3 * cfg.epochs);
}

#[test]
fn threaded_runs_with_tau_zero_match_the_round_robin_oracle_for_nets() {
    let p = problem(200, 8, vec![4, 4], 6);
    let cfg = TrainingConfig {
        model: ModelFamily::Nn,
        hidden: 6,
        staleness: 0,
        jitter: Duration::from_micros(300),
        evaluate_every_epoch: false,
        epochs: 2,
        ..small()
    };
    let threaded = run_fdml(&p, &cfg).unwrap();
    let oracle = run_fdml(
        &p,
        &TrainingConfig {
            deterministic: true,
            jitter: Duration::ZERO,
            ..cfg.clone()
        },
    )
    .unwrap();
    assert_eq!(threaded.blocks, oracle.blocks);
}

#[test]
fn messages_carry_only_batch_ids_and_scalars() {
    let p = problem(160, 10, vec![6, 4], 2);
    let cfg = TrainingConfig {
        model: ModelFamily::Nn,
        hidden: 5,
        staleness: 2,
        evaluate_every_epoch: false,
        ..small()
    };
    let logs: Vec<MessageLog> = (0..2).map(|_| new_message_log()).collect();
    let outcome = run_fdml_with(
        &p,
        &cfg,
        FdmlHooks {
            observer: None,
            logs: Some(logs.clone()),
        },
    )
    .unwrap();
    let schedule = cfg.schedule(160).unwrap();
    let param_values: BTreeSet<u64> = outcome
        .blocks
        .iter()
        .flat_map(|b| b.values.iter().map(|v| v.to_bits()))
        .collect();
    for (j, log) in logs.iter().enumerate() {
        let log = log.lock();
        let mut pushes = 0;
        for (direction, msg) in log.iter() {
            match (direction, msg) {
                (Direction::Request, Message::PushRequest { worker, iteration, pairs }) => {
                    pushes += 1;
                    assert_eq!(usize::from(*worker), j);
                    let ids: Vec<u32> = pairs.iter().map(|&(i, _)| i as u32).collect();
                    assert_eq!(ids, schedule.batch(*iteration));
                }
                (Direction::Request, Message::PullRequest { worker, iteration, samples }) => {
                    assert_eq!(usize::from(*worker), j);
                    let ids: Vec<u32> = samples.iter().map(|&i| i as u32).collect();
                    assert_eq!(ids, schedule.batch(*iteration));
                }
                (Direction::Response, Message::PullGrant { iteration, sums }) => {
                    assert_eq!(sums.len(), schedule.batch(*iteration).len());
                }
                (Direction::Response, Message::PushAck { .. } | Message::PullReject { .. }) => {}
                other => panic!("party {j} moved {other:?}"),
            }
            let scalars: Vec<f64> = match msg {
                Message::PushRequest { pairs, .. } => pairs.iter().map(|p| p.1).collect(),
                Message::PullGrant { sums, .. } => sums.clone(),
                _ => Vec::new(),
            };
            // a stray parameter would have to show up verbatim
            assert!(scalars.iter().filter(|v| **v != 0.0).all(|v| !param_values.contains(&v.to_bits())));
        }
        assert_eq!(pushes, schedule.total_iterations());
    }
}

#[test]
fn schemes_see_the_right_features() {
    let p = problem(200, 12, vec![7, 5], 3);
    for model in [ModelFamily::Lr, ModelFamily::Nn] {
        let cfg = TrainingConfig {
            model,
            hidden: 4,
            epochs: 1,
            ..small()
        };
        let local = run_single(&p, &cfg, Scheme::Local).unwrap();
        assert_eq!(local.models[0].input_dim(), 7);
        let central = run_single(&p, &cfg, Scheme::Centralized).unwrap();
        assert_eq!(central.models[0].input_dim(), 12);
        if model == ModelFamily::Nn {
            assert!(matches!(central.models[0].kind(), SubModelKind::FeedForward { hidden: 4, .. }));
        }
        let fdml = run_fdml(&p, &cfg).unwrap();
        let dims: Vec<usize> = fdml.models.iter().map(|m| m.input_dim()).collect();
        assert_eq!(dims, [7, 5]);
    }
}

#[test]
fn sum_reduction_is_mean_reduction_with_a_rescaled_rate() {
    let p = problem(160, 10, vec![5, 5], 8);
    let mean = TrainingConfig {
        deterministic: true,
        lambda: 0.0,
        evaluate_every_epoch: false,
        ..small()
    };
    let sum = TrainingConfig {
        reduction: BatchReduction::Sum,
        eta: Some(0.5 / 16.0),
        ..mean.clone()
    };
    let a = joined(&run_fdml(&p, &mean).unwrap());
    let b = joined(&run_fdml(&p, &sum).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn staleness_barely_moves_the_final_loss() {
    let p = problem(400, 12, vec![6, 6], 11);
    let cfg = TrainingConfig {
        bias: false,
        eta: Some(0.5),
        batch_size: 4,
        epochs: 6,
        evaluate_every_epoch: false,
        ..TrainingConfig::default()
    };
    let loss = |tau: u64| {
        let run = simulate_fdml(&p, &TrainingConfig { staleness: tau, ..cfg.clone() }, 77).unwrap();
        let models: Vec<_> = (0..2).map(|j| p.party_model(&cfg, j).unwrap()).collect();
        (train_log_loss(&p, &models, &run.blocks).unwrap(), run.max_spread)
    };
    let (base, _) = loss(0);
    for tau in [4, 16] {
        let (l, spread) = loss(tau);
        assert!(spread <= tau + 1);
        assert!(l <= base * 1.05, "tau {tau}: {l} vs {base}");
    }
}

#[test]
fn mismatched_party_counts_are_rejected() {
    let p = problem(50, 6, vec![3, 3], 1);
    let cfg = TrainingConfig {
        parties: 3,
        ..small()
    };
    assert!(run_fdml(&p, &cfg).is_err());
}
