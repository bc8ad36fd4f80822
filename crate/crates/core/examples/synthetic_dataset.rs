//! Write the census-like synthetic train/test pair as svmlight files.
//!
//!     cargo run --example synthetic_dataset -- /tmp/census
//!
//! The files are named `a9a` and `a9a.t` so the directory can stand in
//! wherever a data directory is expected; the content is synthetic.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::PathBuf;

use fdml::data::synthetic::{categorical, CategoricalSpec};

fn main() -> fdml::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic-data".into()));
    let seed = std::env::args().nth(2).map_or(Ok(0x5EED_DA7A), |s| s.parse()).unwrap_or(0x5EED_DA7A);
    fs::create_dir_all(&dir)?;
    let split = categorical(&CategoricalSpec::census_like(seed));
    split.train.write_svmlight(BufWriter::new(File::create(dir.join("a9a"))?))?;
    split.test.write_svmlight(BufWriter::new(File::create(dir.join("a9a.t"))?))?;
    println!(
        "wrote {} training and {} test rows over {} features to {}",
        split.train.len(),
        split.test.len(),
        split.dim(),
        dir.display()
    );
    Ok(())
}
