use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use fdml::coordinator::{Coordinator, GrantEvent, PullOutcome};
use fdml::schedule::SampleSchedule;
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BASE: f64 = 1000.0;

/// Worker `k` pushes `t * BASE^k`, so a granted sum spells out which iteration
/// of every party it saw.
fn encode(k: usize, t: u64) -> f64 {
    t as f64 * BASE.powi(k as i32)
}

fn decode(mut sum: f64, parties: usize) -> Vec<u64> {
    let mut digits = Vec::with_capacity(parties);
    for _ in 0..parties {
        let d = sum.rem_euclid(BASE);
        digits.push(d as u64);
        sum = (sum - d) / BASE;
    }
    digits
}

struct Run {
    events: Vec<GrantEvent>,
    seen: Vec<(usize, u64, Vec<u64>)>,
    coordinator: Arc<Coordinator>,
}

fn stress(parties: usize, tau: u64, iterations: u64, seed: u64) -> Run {
    let samples = 60;
    let schedule = Arc::new(SampleSchedule::generate(seed, samples, 6, (iterations as usize).div_ceil(10)).unwrap());
    assert!(schedule.total_iterations() >= iterations);
    let events: Arc<Mutex<Vec<GrantEvent>>> = Arc::default();
    let sink = Arc::clone(&events);
    let coordinator = Arc::new(
        Coordinator::new(samples, parties, tau)
            .unwrap()
            .with_observer(Arc::new(move |e: &GrantEvent| sink.lock().push(e.clone()))),
    );
    let (done_tx, done_rx) = mpsc::channel();
    for k in 0..parties {
        let coordinator = Arc::clone(&coordinator);
        let schedule = Arc::clone(&schedule);
        let done = done_tx.clone();
        thread::spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 31 + k as u64);
            let mut seen = Vec::new();
            for t in 1..=iterations {
                let batch: Vec<u64> = schedule.batch(t).iter().map(|&i| u64::from(i)).collect();
                let pairs: Vec<(u64, f64)> = batch.iter().map(|&i| (i, encode(k, t))).collect();
                coordinator.handle_push(k, t, &pairs).unwrap();
                thread::sleep(Duration::from_micros(rng.gen_range(0..1500)));
                loop {
                    match coordinator.handle_pull(k, t, &batch).unwrap() {
                        PullOutcome::Granted(sums) => {
                            seen.extend(sums.iter().map(|&s| (k, t, decode(s, parties))));
                            break;
                        }
                        PullOutcome::Rejected { slowest } => {
                            assert!(t > slowest + tau);
                            thread::sleep(Duration::from_micros(200));
                        }
                    }
                }
            }
            done.send(seen).unwrap();
        });
    }
    drop(done_tx);
    let mut seen = Vec::new();
    for _ in 0..parties {
        let part = done_rx
            .recv_timeout(Duration::from_secs(60))
            .expect("a worker starved: pulls were never granted");
        seen.extend(part);
    }
    let events = std::mem::take(&mut *events.lock());
    Run {
        events,
        seen,
        coordinator,
    }
}

#[test]
fn admission_bound_holds_at_every_grant() {
    for tau in [0, 1, 3] {
        let run = stress(3, tau, 60, 5 + tau);
        assert_eq!(run.events.len(), 3 * 60);
        for e in &run.events {
            assert!(e.spread() <= tau, "tau {tau}: {e:?}");
            assert!(e.iteration <= e.slowest() + tau);
            let fastest_pushed = e.pushed.iter().max().unwrap();
            assert!(*fastest_pushed <= e.slowest() + tau + 1);
        }
    }
}

#[test]
fn grants_include_own_fresh_prediction_and_nothing_from_beyond_tau() {
    let tau = 2;
    let run = stress(3, tau, 80, 9);
    for (k, t, iterations) in &run.seen {
        assert_eq!(iterations[*k], *t, "worker {k} at {t} saw {iterations:?}");
        for (peer, &seen) in iterations.iter().enumerate() {
            assert!(seen <= t + tau, "worker {k} at {t} saw peer {peer} at {seen}");
        }
    }
}

#[test]
fn columns_are_written_only_by_their_owner() {
    let run = stress(3, 1, 40, 2);
    let matrix = run.coordinator.matrix();
    for i in 0..matrix.samples() {
        let writers = matrix.row_writers(i);
        for (k, value) in matrix.row(i).into_iter().enumerate() {
            assert_eq!(value, encode(k, writers[k]), "sample {i} party {k}");
        }
    }
    assert!(run.coordinator.finished(40));
}

#[test]
fn lockstep_when_tau_is_zero() {
    let run = stress(4, 0, 30, 3);
    for (_, t, iterations) in &run.seen {
        assert!(iterations.iter().all(|&s| s == *t), "at {t}: {iterations:?}");
    }
}

#[test]
fn status_report_surfaces_the_invariant() {
    let run = stress(2, 2, 20, 8);
    let report = run.coordinator.status_report();
    let value = |key: &str| -> u64 {
        report
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .unwrap_or_else(|| panic!("missing {key} in\n{report}"))
            .parse()
            .unwrap()
    };
    let t_min = value("t_min");
    for j in 0..2 {
        let t = value(&format!("worker.{j}.iteration"));
        assert!(t_min <= t && t <= t_min + 2);
    }
    let rejections: u64 = (0..2).map(|j| value(&format!("worker.{j}.rejections"))).sum();
    assert_eq!(rejections, value("rejections_total"));
    assert_eq!(value("grants_total"), 40);
}
