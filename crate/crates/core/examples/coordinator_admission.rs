//! Drive the coordinator by hand: pushes, a pull that is too far ahead, and
//! the status report.
//!
//!     cargo run --example coordinator_admission

use fdml::coordinator::{Coordinator, PullOutcome};

fn main() -> fdml::Result<()> {
    let coordinator = Coordinator::new(4, 2, 1)?;

    coordinator.handle_push(0, 1, &[(0, 0.25), (1, -0.5)])?;
    coordinator.handle_push(1, 1, &[(0, 0.5), (1, 0.5)])?;
    if let PullOutcome::Granted(sums) = coordinator.handle_pull(0, 1, &[0, 1])? {
        println!("worker 0, t=1: sums {sums:?}");
    }

    // worker 0 runs ahead while worker 1 is still at 1
    for t in 2..=3 {
        coordinator.handle_push(0, t, &[(2, 1.0)])?;
        match coordinator.handle_pull(0, t, &[2])? {
            PullOutcome::Granted(sums) => println!("worker 0, t={t}: granted {sums:?}"),
            PullOutcome::Rejected { slowest } => {
                println!("worker 0, t={t}: rejected, slowest worker is at {slowest}")
            }
        }
    }

    coordinator.handle_push(1, 2, &[(2, -1.0)])?;
    if let PullOutcome::Granted(sums) = coordinator.handle_pull(0, 3, &[2])? {
        println!("worker 0, t=3 after worker 1 caught up: {sums:?}");
    }
    print!("{}", coordinator.status_report());
    Ok(())
}
