//! Regret of an asynchronous run on a small convex instance, next to the
//! bound evaluated from probed constants, and the per-step identity residual.
//!
//!     cargo run --release --example convergence_probe

use fdml::verify::{lemma_residuals, regret_checkpoints};

fn main() -> fdml::Result<()> {
    for tau in [0, 4, 16] {
        println!("tau = {tau}");
        for (t, r, bound) in regret_checkpoints(1, tau)? {
            println!("  T={t:>5}  R={r:.4e}  bound={bound:.4e}");
        }
    }
    let (steps, worst, lead) = lemma_residuals(16, 7)?;
    println!("identity residual over {steps} steps: max {worst:.2e} (largest realized lead {lead})");
    Ok(())
}
