//! Seeded synthetic binary-classification data with a planted logistic model.
//!
//! Used by the examples, the verification suites and the convergence
//! instrumentation, where a small reproducible instance is needed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, DatasetSplit};
use crate::model::{sigmoid, SparseVector};

/// Group sizes of one-hot categorical attributes summing to 123 features,
/// shaped like the census-style binarized data the a9a benchmark uses.
pub const CENSUS_LIKE_GROUPS: [usize; 14] = [5, 7, 16, 7, 16, 14, 6, 5, 2, 3, 3, 3, 5, 31];

/// Dense Gaussian-like features with a planted weight vector.
#[derive(Debug, Clone)]
pub struct DenseSpec {
    pub samples: usize,
    pub dim: usize,
    /// Scale of the planted weights.
    pub weight_scale: f64,
    pub seed: u64,
}

/// Dense real-valued features, `label ~ Bernoulli(sigmoid(w . x))`.
///
/// Values lie in `[-1, 1]`, so the per-sample gradients stay bounded.
pub fn dense(spec: &DenseSpec) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let weights: Vec<f64> = (0..spec.dim)
        .map(|_| rng.gen_range(-spec.weight_scale..=spec.weight_scale))
        .collect();
    let mut rows = Vec::with_capacity(spec.samples);
    let mut labels = Vec::with_capacity(spec.samples);
    for _ in 0..spec.samples {
        let values: Vec<f64> = (0..spec.dim).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let logit: f64 = values.iter().zip(&weights).map(|(x, w)| x * w).sum();
        labels.push(u8::from(rng.gen::<f64>() < sigmoid(logit)));
        rows.push(SparseVector::new((0..spec.dim as u32).collect(), values).expect("dense row"));
    }
    Dataset::new(rows, labels, spec.dim).expect("generated rows fit")
}

/// One-hot categorical features, a planted weight per category value and an
/// interaction between the first two groups so that nonlinear models have
/// something to find.
#[derive(Debug, Clone)]
pub struct CategoricalSpec {
    pub groups: Vec<usize>,
    pub train: usize,
    pub test: usize,
    pub weight_scale: f64,
    pub interaction: f64,
    pub bias: f64,
    pub seed: u64,
}

impl CategoricalSpec {
    /// A census-like instance with a9a's train/test sizes.
    pub fn census_like(seed: u64) -> Self {
        CategoricalSpec {
            groups: CENSUS_LIKE_GROUPS.to_vec(),
            train: 32_561,
            test: 16_281,
            weight_scale: 1.2,
            interaction: 1.0,
            bias: -1.6,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.groups.iter().sum()
    }
}

pub fn categorical(spec: &CategoricalSpec) -> DatasetSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim();
    let weights: Vec<f64> = (0..dim)
        .map(|_| rng.gen_range(-spec.weight_scale..=spec.weight_scale))
        .collect();
    // skewed category frequencies, like real census attributes
    let popularity: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.05f64..1.0).powi(2)).collect();

    let mut draw = |count: usize| {
        let mut rows = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let mut indices = Vec::with_capacity(spec.groups.len());
            let mut offset = 0;
            for &size in &spec.groups {
                let weights = &popularity[offset..offset + size];
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                let mut pick = size - 1;
                for (k, w) in weights.iter().enumerate() {
                    if u < *w {
                        pick = k;
                        break;
                    }
                    u -= w;
                }
                indices.push((offset + pick) as u32);
                offset += size;
            }
            let mut logit = spec.bias + indices.iter().map(|&i| weights[i as usize]).sum::<f64>();
            if spec.groups.len() >= 2 {
                let a = (indices[0] as usize).is_multiple_of(2);
                let b = (indices[1] as usize - spec.groups[0]).is_multiple_of(2);
                if a == b {
                    logit += spec.interaction;
                } else {
                    logit -= spec.interaction;
                }
            }
            labels.push(u8::from(rng.gen::<f64>() < sigmoid(logit)));
            let values = vec![1.0; indices.len()];
            rows.push(SparseVector::new(indices, values).expect("one-hot row"));
        }
        Dataset::new(rows, labels, dim).expect("generated rows fit")
    };
    let train = draw(spec.train);
    let test = draw(spec.test);
    DatasetSplit { train, test }
}
