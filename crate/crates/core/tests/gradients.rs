use fdml::model::{aggregate, h_term, log_loss, sigmoid, Activation, ParameterBlock, SparseVector, SubModel, SubModelKind};
use proptest::prelude::*;

const STEP: f64 = 1e-5;

fn sparse(dim: usize) -> impl Strategy<Value = SparseVector> {
    proptest::collection::btree_map(0..dim as u32, -2.0..2.0f64, 1..=dim)
        .prop_map(|m| SparseVector::from_pairs(m).unwrap())
}

fn params(n: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-scale..scale, n)
}

/// Party 0's objective with the other parties' predictions folded into `rest`.
fn objective(model: &SubModel, p: &[f64], x: &SparseVector, rest: f64, y: u8, lambda: f64) -> f64 {
    let alpha = model.predict_raw(p, x).unwrap();
    log_loss(aggregate(&[alpha, rest]), y) + model.regularizer_value_raw(p, lambda)
}

fn check(model: &SubModel, p: Vec<f64>, x: &SparseVector, rest: f64, y: u8, lambda: f64) -> Result<(), TestCaseError> {
    let alpha = model.predict_raw(&p, x).unwrap();
    let h = h_term(alpha + rest, y);
    let block = ParameterBlock {
        party: 0,
        values: p.clone(),
    };
    let analytic = model.partial_gradient(&block, x, h, lambda).unwrap();
    for k in 0..p.len() {
        let (mut up, mut down) = (p.clone(), p.clone());
        up[k] += STEP;
        down[k] -= STEP;
        let numeric = (objective(model, &up, x, rest, y, lambda) - objective(model, &down, x, rest, y, lambda)) / (2.0 * STEP);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
        let rel = (analytic[k] - numeric).abs() / scale;
        prop_assert!(rel < 1e-4, "coordinate {k}: analytic {} numeric {numeric} rel {rel}", analytic[k]);
    }
    Ok(())
}

fn hidden_pre_activations(p: &[f64], x: &SparseVector, input_dim: usize, hidden: usize) -> Vec<f64> {
    let b1 = input_dim * hidden;
    (0..hidden)
        .map(|k| p[b1 + k] + x.iter().map(|(i, v)| p[i * hidden + k] * v).sum::<f64>())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn linear_gradient_matches_differences(
        x in sparse(6),
        p in params(7, 1.5),
        rest in -3.0..3.0f64,
        y in 0u8..2,
        lambda in 0.0..0.1f64,
    ) {
        let model = SubModel::new(SubModelKind::linear(), 6).unwrap();
        check(&model, p, &x, rest, y, lambda)?;
    }

    #[test]
    fn tanh_net_gradient_matches_differences(
        x in sparse(4),
        p in params(4 * 5 + 2 * 5 + 1, 1.0),
        rest in -3.0..3.0f64,
        y in 0u8..2,
        lambda in 0.0..0.1f64,
    ) {
        let kind = SubModelKind::FeedForward { hidden: 5, activation: Activation::Tanh };
        let model = SubModel::new(kind, 4).unwrap();
        check(&model, p, &x, rest, y, lambda)?;
    }

    #[test]
    fn relu_net_gradient_matches_differences(
        x in sparse(4),
        p in params(4 * 5 + 2 * 5 + 1, 1.0),
        rest in -3.0..3.0f64,
        y in 0u8..2,
        lambda in 0.0..0.1f64,
    ) {
        // finite differences are meaningless across the kink
        let z = hidden_pre_activations(&p, &x, 4, 5);
        prop_assume!(z.iter().all(|v| v.abs() > 1e-3));
        let kind = SubModelKind::FeedForward { hidden: 5, activation: Activation::Relu };
        let model = SubModel::new(kind, 4).unwrap();
        check(&model, p, &x, rest, y, lambda)?;
    }

    #[test]
    fn split_linear_scores_equal_concatenated(
        x in sparse(10),
        w in params(10, 2.0),
        cut in 1usize..10,
    ) {
        let whole = SubModel::new(SubModelKind::Linear { bias: false }, 10).unwrap();
        let left = SubModel::new(SubModelKind::Linear { bias: false }, cut).unwrap();
        let right = SubModel::new(SubModelKind::Linear { bias: false }, 10 - cut).unwrap();
        let xl = SparseVector::from_pairs(x.iter().filter(|(i, _)| *i < cut).map(|(i, v)| (i as u32, v))).unwrap();
        let xr = SparseVector::from_pairs(x.iter().filter(|(i, _)| *i >= cut).map(|(i, v)| ((i - cut) as u32, v))).unwrap();
        let sum = left.predict_raw(&w[..cut], &xl).unwrap() + right.predict_raw(&w[cut..], &xr).unwrap();
        let segmented = whole.predict_segmented(&w, &x, &[cut]).unwrap();
        prop_assert_eq!(sum.to_bits(), segmented.to_bits());
        let plain = whole.predict_raw(&w, &x).unwrap();
        prop_assert!((plain - sum).abs() <= 1e-12 * (1.0 + plain.abs()));
    }

    #[test]
    fn probabilities_and_losses_stay_in_range(
        local in proptest::collection::vec(-1e4..1e4f64, 1..5),
        y in 0u8..2,
    ) {
        let p = aggregate(&local);
        prop_assert!(p > 0.0 && p < 1.0);
        prop_assert!(log_loss(p, y) >= 0.0 && log_loss(p, y).is_finite());
        let h = h_term(local.iter().sum(), y);
        prop_assert!(h.abs() < 1.0);
    }
}

#[test]
fn sigmoid_is_clamped_not_saturated() {
    assert!(sigmoid(1e9) < 1.0);
    assert!(sigmoid(-1e9) > 0.0);
    assert_eq!(sigmoid(40.0), sigmoid(35.0));
}
