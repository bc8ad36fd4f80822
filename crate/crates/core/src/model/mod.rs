//! The composite model: per-party sub-models whose scalar outputs are summed
//! and squashed by a sigmoid, trained with binary log loss and an L2 penalty.

mod feedforward;
mod linear;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Logits are clamped to this magnitude before exponentiation.
pub const LOGIT_CLAMP: f64 = 35.0;
/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the log loss.
pub const PROB_EPS: f64 = 1e-15;

/// A sparse feature vector with strictly increasing indices.
///
/// Used both for whole samples (global feature indices) and for one party's
/// slice of a sample (local indices).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::config(format!(
                "sparse vector has {} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("sparse vector indices must be strictly increasing"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::config(format!("sparse vector holds non-finite value {v}")));
        }
        Ok(SparseVector { indices, values })
    }

    /// Builds a vector from `(index, value)` pairs given in strictly increasing index order.
    pub fn from_pairs<I: IntoIterator<Item = (u32, f64)>>(pairs: I) -> Result<Self> {
        let (indices, values) = pairs.into_iter().unzip();
        Self::new(indices, values)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    /// One past the largest index, or 0 for an empty vector.
    pub fn min_dim(&self) -> usize {
        self.indices.last().map_or(0, |&i| i as usize + 1)
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut dense = vec![0.0; dim];
        for (i, v) in self.iter() {
            dense[i] = v;
        }
        dense
    }
}

pub fn sigmoid(s: f64) -> f64 {
    let s = s.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    1.0 / (1.0 + (-s).exp())
}

/// Sums local predictions left to right starting from `0.0`.
///
/// Every component that forms an aggregate (coordinator, evaluators, the
/// centralized reference) goes through this so summation order is identical.
pub fn sum_predictions(local: &[f64]) -> f64 {
    local.iter().fold(0.0, |acc, &a| acc + a)
}

/// The composite prediction `sigmoid(sum_j alpha_j)`.
pub fn aggregate(local: &[f64]) -> f64 {
    sigmoid(sum_predictions(local))
}

/// Binary log loss of a probability against a 0/1 label.
pub fn log_loss(prediction: f64, label: u8) -> f64 {
    let p = prediction.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Chain-rule factor of log loss composed with the sigmoid, `sigmoid(s) - y`.
///
/// Every party's partial gradient is this scalar times its local Jacobian.
pub fn h_term(aggregate_sum: f64, label: u8) -> f64 {
    sigmoid(aggregate_sum) - f64::from(label)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => f.write_str("relu"),
            Activation::Tanh => f.write_str("tanh"),
        }
    }
}

/// The family of a party's sub-model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubModelKind {
    /// `alpha = w . xi (+ b)`; the bias is never regularized.
    Linear { bias: bool },
    /// One hidden layer, scalar linear output.
    FeedForward { hidden: usize, activation: Activation },
}

impl SubModelKind {
    pub const DEFAULT_HIDDEN: usize = 64;

    pub fn linear() -> Self {
        SubModelKind::Linear { bias: true }
    }

    pub fn feed_forward() -> Self {
        SubModelKind::FeedForward {
            hidden: Self::DEFAULT_HIDDEN,
            activation: Activation::Relu,
        }
    }

    pub fn param_dim(&self, input_dim: usize) -> usize {
        match *self {
            SubModelKind::Linear { bias } => input_dim + usize::from(bias),
            SubModelKind::FeedForward { hidden, .. } => input_dim * hidden + 2 * hidden + 1,
        }
    }
}

/// One party's trainable parameters. Never leaves the party.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterBlock {
    pub party: usize,
    pub values: Vec<f64>,
}

impl ParameterBlock {
    pub fn zeros(party: usize, dim: usize) -> Self {
        ParameterBlock {
            party,
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// A sub-model kind bound to the width of the feature slice it reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubModel {
    kind: SubModelKind,
    input_dim: usize,
}

impl SubModel {
    pub fn new(kind: SubModelKind, input_dim: usize) -> Result<Self> {
        if let SubModelKind::FeedForward { hidden: 0, .. } = kind {
            return Err(Error::config("feed-forward sub-model needs at least one hidden unit"));
        }
        Ok(SubModel { kind, input_dim })
    }

    pub fn kind(&self) -> SubModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of parameters, `D^j`.
    pub fn dim(&self) -> usize {
        self.kind.param_dim(self.input_dim)
    }

    /// Initial parameters: zeros for linear models, Glorot-uniform weights
    /// and zero biases for feed-forward nets.
    pub fn init(&self, party: usize, seed: u64) -> ParameterBlock {
        let mut block = ParameterBlock::zeros(party, self.dim());
        if let SubModelKind::FeedForward { hidden, .. } = self.kind {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(party as u64);
            feedforward::glorot_init(&mut block.values, self.input_dim, hidden, &mut rng);
        }
        block
    }

    fn check(&self, params: &[f64], x: &SparseVector) -> Result<()> {
        if params.len() != self.dim() {
            return Err(Error::config(format!(
                "parameter block has {} entries, sub-model expects {}",
                params.len(),
                self.dim()
            )));
        }
        if x.min_dim() > self.input_dim {
            return Err(Error::config(format!(
                "feature index {} outside the sub-model's {} inputs",
                x.min_dim() - 1,
                self.input_dim
            )));
        }
        Ok(())
    }

    /// The local prediction `alpha^j(x^j, xi^j)`.
    pub fn predict(&self, block: &ParameterBlock, x: &SparseVector) -> Result<f64> {
        self.predict_raw(&block.values, x)
    }

    pub fn predict_raw(&self, params: &[f64], x: &SparseVector) -> Result<f64> {
        self.check(params, x)?;
        Ok(match self.kind {
            SubModelKind::Linear { bias } => linear::predict(params, x, self.input_dim, bias, &[]),
            SubModelKind::FeedForward { hidden, activation } => {
                feedforward::predict(params, x, self.input_dim, hidden, activation)
            }
        })
    }

    /// Linear prediction whose dot product is split into partial sums at the
    /// given feature boundaries and then summed left to right from `0.0`.
    ///
    /// With boundaries at a vertical partition's cut points this reproduces,
    /// bit for bit, the sum a coordinator forms from per-party predictions.
    pub fn predict_segmented(
        &self,
        params: &[f64],
        x: &SparseVector,
        boundaries: &[usize],
    ) -> Result<f64> {
        self.check(params, x)?;
        match self.kind {
            SubModelKind::Linear { bias } => {
                Ok(linear::predict(params, x, self.input_dim, bias, boundaries))
            }
            SubModelKind::FeedForward { .. } => Err(Error::config(
                "segmented prediction is only defined for linear sub-models",
            )),
        }
    }

    /// Adds `h * d(alpha)/d(params)` into `grad`.
    pub fn accumulate_gradient(
        &self,
        params: &[f64],
        x: &SparseVector,
        h: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check(params, x)?;
        if grad.len() != params.len() {
            return Err(Error::config("gradient buffer does not match the parameter block"));
        }
        if h == 0.0 {
            return Ok(());
        }
        match self.kind {
            SubModelKind::Linear { bias } => linear::accumulate(x, self.input_dim, bias, h, grad),
            SubModelKind::FeedForward { hidden, activation } => {
                feedforward::accumulate(params, x, self.input_dim, hidden, activation, h, grad)
            }
        }
        Ok(())
    }

    /// Parameter ranges covered by the L2 penalty (everything except biases).
    pub fn regularized_ranges(&self) -> [Range<usize>; 2] {
        match self.kind {
            SubModelKind::Linear { .. } => [0..self.input_dim, 0..0],
            SubModelKind::FeedForward { hidden, .. } => {
                let w1 = self.input_dim * hidden;
                [0..w1, w1 + hidden..w1 + 2 * hidden]
            }
        }
    }

    /// `lambda * 0.5 * ||x||^2` over the regularized entries.
    pub fn regularizer_value(&self, block: &ParameterBlock, lambda: f64) -> f64 {
        self.regularizer_value_raw(&block.values, lambda)
    }

    pub fn regularizer_value_raw(&self, params: &[f64], lambda: f64) -> f64 {
        if lambda == 0.0 {
            return 0.0;
        }
        let sq: f64 = self
            .regularized_ranges()
            .into_iter()
            .flat_map(|r| params[r].iter())
            .map(|v| v * v)
            .sum();
        lambda * 0.5 * sq
    }

    /// Adds `lambda * x` on the regularized entries into `grad`.
    pub fn add_regularizer_gradient(&self, params: &[f64], lambda: f64, grad: &mut [f64]) {
        if lambda == 0.0 {
            return;
        }
        for range in self.regularized_ranges() {
            for (g, p) in grad[range.clone()].iter_mut().zip(&params[range]) {
                *g += lambda * p;
            }
        }
    }

    /// The party's partial gradient for one sample:
    /// `h * d(alpha)/d(x^j) + lambda * d(z^j)/d(x^j)`.
    pub fn partial_gradient(
        &self,
        block: &ParameterBlock,
        x: &SparseVector,
        h: f64,
        lambda: f64,
    ) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.dim()];
        self.accumulate_gradient(&block.values, x, h, &mut grad)?;
        self.add_regularizer_gradient(&block.values, lambda, &mut grad);
        Ok(grad)
    }
}
