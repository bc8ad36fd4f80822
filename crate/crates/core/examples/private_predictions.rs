//! Laplace noise on the pushed local predictions, at increasing levels.
//!
//!     cargo run --release --example private_predictions

use fdml::privacy::{perturb, NoiseMechanism, NoiseSpec};
use fdml::train::{run_fdml, TrainingConfig};
use fdml::verify::convex_problem;

fn main() -> fdml::Result<()> {
    let spec = NoiseSpec::new(NoiseMechanism::Laplace, 1.0, 9, 0)?;
    let draws: Vec<f64> = (0..5).map(|k| perturb(0.3, &spec, k)).collect();
    println!("0.3 pushed five times at b=1: {draws:.3?}");
    println!("same draw index, same value: {}", perturb(0.3, &spec, 2) == draws[2]);

    let problem = convex_problem(3000, 20, 4)?;
    for level in [0.0, 0.5, 1.0, 3.0] {
        let cfg = TrainingConfig {
            eta: Some(1.0),
            batch_size: 20,
            epochs: 5,
            noise_level: level,
            noise_seed: 5,
            evaluate_every_epoch: false,
            ..TrainingConfig::default()
        };
        let outcome = run_fdml(&problem, &cfg)?;
        let last = outcome.final_metrics().expect("final epoch is evaluated");
        println!("b={level:<4} test auc {:.4}, log loss {:.4}", last.test_auc, last.test_logloss);
    }
    Ok(())
}
