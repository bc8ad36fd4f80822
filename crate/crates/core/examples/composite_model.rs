//! Two parties score one sample, the aggregate goes through the sigmoid, and
//! each party gets its partial gradient from the shared `h` term.
//!
//!     cargo run --example composite_model

use fdml::model::{aggregate, h_term, log_loss, sum_predictions, SparseVector, SubModel, SubModelKind};

fn main() -> fdml::Result<()> {
    // party 0 holds 3 features, party 1 holds 4
    let linear = SubModel::new(SubModelKind::linear(), 3)?;
    let net = SubModel::new(SubModelKind::feed_forward(), 4)?;
    let blocks = [linear.init(0, 7), net.init(1, 7)];

    let x0 = SparseVector::from_pairs([(0, 1.0), (2, 0.5)])?;
    let x1 = SparseVector::from_pairs([(1, -0.3), (3, 2.0)])?;
    let label = 1;

    let local = [linear.predict(&blocks[0], &x0)?, net.predict(&blocks[1], &x1)?];
    let s = sum_predictions(&local);
    println!("local predictions {:?}", local);
    println!("p = {:.6}, loss = {:.6}", aggregate(&local), log_loss(aggregate(&local), label));

    let h = h_term(s, label);
    let lambda = 1e-3;
    let g0 = linear.partial_gradient(&blocks[0], &x0, h, lambda)?;
    let g1 = net.partial_gradient(&blocks[1], &x1, h, lambda)?;
    println!("h = {h:.6}");
    println!("party 0 gradient {:?}", g0);
    let norm1 = g1.iter().map(|g| g * g).sum::<f64>().sqrt();
    println!("party 1 gradient has {} entries, norm {norm1:.6}", g1.len());
    Ok(())
}
