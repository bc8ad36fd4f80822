//! Every party derives the same mini-batch sequence from the shared seed.
//!
//!     cargo run --example shared_schedule

use fdml::schedule::{LearningRate, SampleSchedule, ScheduleRng};

fn main() -> fdml::Result<()> {
    let party0 = SampleSchedule::generate(2024, 10, 4, 2)?;
    let party1 = SampleSchedule::generate(2024, 10, 4, 2)?;
    println!("generator {}", ScheduleRng::NAME);
    println!("identical on both parties: {}", party0 == party1);

    let eta = LearningRate::new(0.5)?;
    for (t, batch) in party0.iter() {
        println!(
            "t={t:>2} epoch {} eta {:.4} batch {batch:?}{}",
            party0.epoch_of(t),
            eta.at(t),
            if party0.ends_epoch(t) { "  <- epoch end" } else { "" }
        );
    }
    Ok(())
}
