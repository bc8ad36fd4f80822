use super::SparseVector;

/// `sum_{segments} (w . x restricted to the segment)` plus the bias.
///
/// Each segment's partial sum starts from `0.0`; the partial sums are then
/// folded from `0.0`. No boundaries means a single segment.
pub(super) fn predict(
    params: &[f64],
    x: &SparseVector,
    input_dim: usize,
    bias: bool,
    boundaries: &[usize],
) -> f64 {
    let mut total = 0.0;
    let mut partial = 0.0;
    let mut cuts = boundaries.iter().copied().peekable();
    for (i, v) in x.iter() {
        while cuts.next_if(|&c| c <= i).is_some() {
            total += partial;
            partial = 0.0;
        }
        partial += params[i] * v;
    }
    let dot = if boundaries.is_empty() {
        partial
    } else {
        // segments after the last nonzero contribute 0.0
        total + partial
    };
    if bias {
        dot + params[input_dim]
    } else {
        dot
    }
}

pub(super) fn accumulate(x: &SparseVector, input_dim: usize, bias: bool, h: f64, grad: &mut [f64]) {
    for (i, v) in x.iter() {
        grad[i] += h * v;
    }
    if bias {
        grad[input_dim] += h;
    }
}
