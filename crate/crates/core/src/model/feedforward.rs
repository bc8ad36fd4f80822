//! Single-hidden-layer network with a scalar linear output.
//!
//! Parameter layout: `[W1 (input_dim x hidden, one row per input feature) | b1 | w2 | b2]`.
//! Feature-major `W1` rows keep the forward pass over sparse inputs contiguous.

use rand::Rng;

use super::{Activation, SparseVector};

struct Layout {
    b1: usize,
    w2: usize,
    b2: usize,
}

fn layout(input_dim: usize, hidden: usize) -> Layout {
    let b1 = input_dim * hidden;
    Layout {
        b1,
        w2: b1 + hidden,
        b2: b1 + 2 * hidden,
    }
}

pub(super) fn glorot_init<R: Rng>(params: &mut [f64], input_dim: usize, hidden: usize, rng: &mut R) {
    let l = layout(input_dim, hidden);
    let limit1 = (6.0 / (input_dim + hidden) as f64).sqrt();
    for w in &mut params[..l.b1] {
        *w = rng.gen_range(-limit1..=limit1);
    }
    let limit2 = (6.0 / (hidden + 1) as f64).sqrt();
    for w in &mut params[l.w2..l.b2] {
        *w = rng.gen_range(-limit2..=limit2);
    }
}

/// Hidden pre-activations `b1 + W1^T x`.
fn pre_activations(params: &[f64], x: &SparseVector, hidden: usize, l: &Layout) -> Vec<f64> {
    let mut z = params[l.b1..l.w2].to_vec();
    for (i, v) in x.iter() {
        let row = &params[i * hidden..(i + 1) * hidden];
        for (zk, w) in z.iter_mut().zip(row) {
            *zk += w * v;
        }
    }
    z
}

pub(super) fn predict(
    params: &[f64],
    x: &SparseVector,
    input_dim: usize,
    hidden: usize,
    activation: Activation,
) -> f64 {
    let l = layout(input_dim, hidden);
    let z = pre_activations(params, x, hidden, &l);
    let out: f64 = z
        .iter()
        .zip(&params[l.w2..l.b2])
        .map(|(&zk, w)| w * activation.apply(zk))
        .sum();
    out + params[l.b2]
}

pub(super) fn accumulate(
    params: &[f64],
    x: &SparseVector,
    input_dim: usize,
    hidden: usize,
    activation: Activation,
    h: f64,
    grad: &mut [f64],
) {
    let l = layout(input_dim, hidden);
    let z = pre_activations(params, x, hidden, &l);
    grad[l.b2] += h;
    let mut delta = vec![0.0; hidden];
    for k in 0..hidden {
        let a = activation.apply(z[k]);
        grad[l.w2 + k] += h * a;
        delta[k] = h * params[l.w2 + k] * activation.derivative(z[k], a);
        grad[l.b1 + k] += delta[k];
    }
    for (i, v) in x.iter() {
        let row = &mut grad[i * hidden..(i + 1) * hidden];
        for (g, d) in row.iter_mut().zip(&delta) {
            *g += d * v;
        }
    }
}
