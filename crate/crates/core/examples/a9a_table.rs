//! The three schemes on a9a for LR and the two-layer net.
//!
//!     FDML_A9A_DIR=/path/to/libsvm cargo run --release --example a9a_table
//!
//! The directory must hold `a9a` and `a9a.t` from the LIBSVM binary collection.

use fdml::cli::{load_data, partition_spec};
use fdml::config::ConfigMap;
use fdml::data::make_partition;
use fdml::metrics::summary_table;
use fdml::train::{train, FdmlProblem, ModelFamily, Scheme, TrainingConfig};

fn main() -> fdml::Result<()> {
    let mut settings = ConfigMap::default();
    settings.set("data", "a9a");
    let data = load_data(&settings)?;
    let spec = partition_spec(&settings, data.dim(), 2)?;
    let partition = make_partition(data.dim(), &spec)?;
    let problem = FdmlProblem::new(data, partition)?;

    for model in [ModelFamily::Lr, ModelFamily::Nn] {
        let cfg = TrainingConfig {
            model,
            evaluate_every_epoch: false,
            ..TrainingConfig::default()
        };
        let mut rows = Vec::new();
        for scheme in Scheme::ALL {
            let outcome = train(&problem, &cfg, scheme)?;
            rows.extend(outcome.trace);
        }
        println!("{model:?}");
        print!("{}", summary_table(&rows));
    }
    Ok(())
}
