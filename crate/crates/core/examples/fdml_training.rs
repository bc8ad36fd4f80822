//! Local, centralized and FDML training on the census-like synthetic data,
//! reported as CSV rows plus a summary table.
//!
//!     cargo run --release --example fdml_training -- [lr|nn] [epochs]

use fdml::data::synthetic::{categorical, CategoricalSpec};
use fdml::data::{make_partition, DatasetSplit, PartitionSpec, A9A_FEATURES, A9A_PARTY_SIZES};
use fdml::metrics::{summary_table, write_csv};
use fdml::train::{train, FdmlProblem, ModelFamily, Scheme, TrainingConfig};

fn main() -> fdml::Result<()> {
    let model: ModelFamily = std::env::args().nth(1).as_deref().unwrap_or("lr").parse()?;
    let epochs = std::env::args().nth(2).and_then(|e| e.parse().ok()).unwrap_or(10);

    let split = categorical(&CategoricalSpec::census_like(1));
    let data = DatasetSplit::new(split.train, split.test, A9A_FEATURES)?;
    let partition = make_partition(data.dim(), &PartitionSpec::Sizes(A9A_PARTY_SIZES.to_vec()))?;
    let problem = FdmlProblem::new(data, partition)?;

    let cfg = TrainingConfig {
        model,
        epochs,
        ..TrainingConfig::default()
    };
    let mut rows = Vec::new();
    for scheme in Scheme::ALL {
        let outcome = train(&problem, &cfg, scheme)?;
        eprintln!("{} done in {:.1}s", scheme.name(), outcome.elapsed_s);
        rows.extend(outcome.trace);
    }
    write_csv(&rows, std::io::stdout())?;
    println!();
    print!("{}", summary_table(&rows));
    Ok(())
}
