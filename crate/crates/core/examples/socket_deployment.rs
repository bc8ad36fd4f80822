//! A coordinator and two workers talking over loopback TCP, with the status
//! endpoint polled while training runs.
//!
//!     cargo run --release --example socket_deployment

use std::io::Read;
use std::net::TcpStream;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use fdml::coordinator::Coordinator;
use fdml::metrics::{auc, composite_probabilities};
use fdml::transport::{TcpCoordinatorServer, TcpLink};
use fdml::train::TrainingConfig;
use fdml::verify::convex_problem;

fn status(addr: std::net::SocketAddr) -> std::io::Result<String> {
    let mut text = String::new();
    TcpStream::connect(addr)?.read_to_string(&mut text)?;
    Ok(text)
}

fn main() -> fdml::Result<()> {
    let problem = convex_problem(4000, 20, 3)?;
    let cfg = TrainingConfig {
        staleness: 4,
        eta: Some(1.0),
        batch_size: 20,
        epochs: 5,
        ..TrainingConfig::default()
    };
    let schedule = Arc::new(cfg.schedule(problem.data.train.len())?);
    let total = schedule.total_iterations();

    let coordinator = Arc::new(Coordinator::new(problem.data.train.len(), 2, cfg.staleness)?);
    let server = TcpCoordinatorServer::bind(Arc::clone(&coordinator), "127.0.0.1:0")?.with_status("127.0.0.1:0")?;
    let addr = server.local_addr()?;
    let status_addr = server.status_addr().expect("status listener was requested");
    println!("coordinator on {addr}, status on {status_addr}, {total} iterations");
    let serving = server.spawn(total);

    let handles: Vec<_> = problem
        .initial_blocks(&cfg)?
        .into_iter()
        .enumerate()
        .map(|(j, block)| {
            let mut worker = problem.worker(&cfg, j, Arc::clone(&schedule), block)?;
            Ok(thread::spawn(move || -> fdml::Result<_> {
                let mut link = TcpLink::connect(addr, 50, Duration::from_millis(20))?;
                worker.run(&mut link, |epoch, _| println!("party {j} finished epoch {}", epoch + 1))?;
                Ok(worker.into_block())
            }))
        })
        .collect::<fdml::Result<_>>()?;

    thread::sleep(Duration::from_millis(30));
    match status(status_addr) {
        Ok(report) => print!("status mid-run:\n{report}"),
        Err(e) => println!("status endpoint: {e}"),
    }

    let blocks = handles
        .into_iter()
        .map(|h| h.join().expect("worker thread panicked"))
        .collect::<fdml::Result<Vec<_>>>()?;
    serving.join().expect("server thread panicked")?;

    let local: Vec<Vec<f64>> = (0..2)
        .map(|j| {
            let model = problem.party_model(&cfg, j)?;
            problem.test_features(j).iter().map(|x| model.predict(&blocks[j], x)).collect()
        })
        .collect::<fdml::Result<_>>()?;
    let p = composite_probabilities(&local);
    println!("test auc {:.4}", auc(&p, &problem.data.test.labels)?);
    print!("{}", coordinator.status_report());
    Ok(())
}
