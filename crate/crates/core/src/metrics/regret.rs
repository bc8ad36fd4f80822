//! Convergence instrumentation for convex (linear) FDML instances: the
//! reference optimum, regret traces, probed constants of the regret bound,
//! the per-step lemma identity and the inverse-square-root sum inequality.

use rand::Rng;

use crate::model::SparseVector;
use crate::{Error, Result};

/// L2-regularized logistic regression on the full feature vector, without a
/// bias: `F_S(w) = mean_{i in S} [log(1 + e^{w.x_i}) - y_i w.x_i] + lambda/2 ||w||^2`.
///
/// Evaluated on dense weights, independently of the sub-model code, so it
/// can serve as the reference objective for an FDML run whose parties use
/// bias-free linear sub-models.
pub struct LogisticObjective<'a> {
    rows: &'a [SparseVector],
    labels: &'a [u8],
    dim: usize,
    lambda: f64,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl<'a> LogisticObjective<'a> {
    pub fn new(rows: &'a [SparseVector], labels: &'a [u8], dim: usize, lambda: f64) -> Self {
        LogisticObjective {
            rows,
            labels,
            dim,
            lambda,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn samples(&self) -> usize {
        self.rows.len()
    }

    fn margin(&self, w: &[f64], i: usize) -> f64 {
        self.rows[i].iter().map(|(k, v)| w[k] * v).sum()
    }

    fn penalty(&self, w: &[f64]) -> f64 {
        0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    /// `F_S(w)` over the listed samples.
    pub fn value(&self, w: &[f64], samples: &[usize]) -> f64 {
        let loss: f64 = samples
            .iter()
            .map(|&i| softplus(self.margin(w, i)) - f64::from(self.labels[i]) * self.margin(w, i))
            .sum();
        loss / samples.len().max(1) as f64 + self.penalty(w)
    }

    pub fn gradient(&self, w: &[f64], samples: &[usize]) -> Vec<f64> {
        let mut grad = vec![0.0; self.dim];
        for &i in samples {
            let r = logistic(self.margin(w, i)) - f64::from(self.labels[i]);
            for (k, v) in self.rows[i].iter() {
                grad[k] += r * v;
            }
        }
        let n = samples.len().max(1) as f64;
        for (g, x) in grad.iter_mut().zip(w) {
            *g = *g / n + self.lambda * x;
        }
        grad
    }

    fn all(&self) -> Vec<usize> {
        (0..self.rows.len()).collect()
    }

    pub fn full_value(&self, w: &[f64]) -> f64 {
        self.value(w, &self.all())
    }

    pub fn full_gradient(&self, w: &[f64]) -> Vec<f64> {
        self.gradient(w, &self.all())
    }

    /// An upper bound on the curvature of every `F_S`.
    pub fn smoothness(&self) -> f64 {
        let max_sq = self
            .rows
            .iter()
            .map(|r| r.values().iter().map(|v| v * v).sum::<f64>())
            .fold(0.0, f64::max);
        0.25 * max_sq + self.lambda
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The minimizer of the full objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Full-batch gradient descent with step `1/L` until `||grad F|| < tolerance`.
pub fn full_batch_optimum(
    objective: &LogisticObjective<'_>,
    tolerance: f64,
    max_iterations: usize,
) -> Result<Optimum> {
    let step = 1.0 / objective.smoothness();
    let mut x = vec![0.0; objective.dim()];
    for iteration in 0..=max_iterations {
        let grad = objective.full_gradient(&x);
        let gradient_norm = norm(&grad);
        if gradient_norm < tolerance {
            return Ok(Optimum {
                value: objective.full_value(&x),
                x,
                gradient_norm,
                iterations: iteration,
            });
        }
        for (xi, g) in x.iter_mut().zip(&grad) {
            *xi -= step * g;
        }
    }
    Err(Error::Evaluation(format!(
        "reference optimum did not reach gradient norm {tolerance} in {max_iterations} iterations"
    )))
}

/// Maps each party's parameter block onto global feature coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    blocks: Vec<Vec<usize>>,
    dim: usize,
}

impl BlockLayout {
    pub fn new(blocks: Vec<Vec<usize>>, dim: usize) -> Self {
        BlockLayout { blocks, dim }
    }

    pub fn parties(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, j: usize) -> &[usize] {
        &self.blocks[j]
    }

    /// Concatenation in global coordinates.
    pub fn scatter(&self, parts: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (indices, values) in self.blocks.iter().zip(parts) {
            for (&k, &v) in indices.iter().zip(values) {
                out[k] = v;
            }
        }
        out
    }

    pub fn gather(&self, global: &[f64], j: usize) -> Vec<f64> {
        self.blocks[j].iter().map(|&k| global[k]).collect()
    }
}

/// One recorded iteration of an instrumented run.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentedStep {
    pub iteration: u64,
    pub eta: f64,
    pub batch: Vec<u32>,
    /// Every party's parameters at its own iteration `t`, i.e. `x_t`.
    pub params: Vec<Vec<f64>>,
    /// The gradient each party applied at iteration `t`.
    pub applied: Vec<Vec<f64>>,
}

/// Running `(1/T') sum_{t <= T'} (F_t(x_t) - F_t(x_*))`.
#[derive(Debug, Clone, Default)]
pub struct RegretTracker {
    sum: f64,
    count: u64,
}

impl RegretTracker {
    pub fn record(&mut self, loss_at_iterate: f64, loss_at_optimum: f64) {
        self.sum += loss_at_iterate - loss_at_optimum;
        self.count += 1;
    }

    pub fn steps(&self) -> u64 {
        self.count
    }

    pub fn regret(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }
}

fn batch_indices(batch: &[u32]) -> Vec<usize> {
    batch.iter().map(|&i| i as usize).collect()
}

/// Regret at each checkpoint `T'` (checkpoints beyond the run are skipped).
pub fn regret_trace(
    steps: &[InstrumentedStep],
    layout: &BlockLayout,
    objective: &LogisticObjective<'_>,
    optimum: &[f64],
    checkpoints: &[u64],
) -> Result<Vec<(u64, f64)>> {
    let mut tracker = RegretTracker::default();
    let mut out = Vec::new();
    let mut wanted = checkpoints.iter().copied().peekable();
    for step in steps {
        let x = layout.scatter(&step.params);
        let batch = batch_indices(&step.batch);
        tracker.record(objective.value(&x, &batch), objective.value(optimum, &batch));
        while wanted.peek().is_some_and(|&c| c <= tracker.steps()) {
            let c = wanted.next().expect("peeked");
            if c == tracker.steps() {
                let r = tracker.regret();
                if !r.is_finite() {
                    return Err(Error::Evaluation(format!("regret at {c} is not finite")));
                }
                out.push((c, r));
            }
        }
    }
    Ok(out)
}

/// Empirical constants of the regret bound.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionProbe {
    /// Largest observed gradient norm, stale or fresh.
    pub g: f64,
    /// Largest observed `||x_t - x_*||`.
    pub d: f64,
    /// Per-block Lipschitz estimates.
    pub l: Vec<f64>,
}

impl AssumptionProbe {
    pub fn l_max(&self) -> f64 {
        self.l.iter().copied().fold(0.0, f64::max)
    }

    /// Probes a recorded run; `pairs` random perturbations per block and step.
    pub fn measure<R: Rng>(
        steps: &[InstrumentedStep],
        layout: &BlockLayout,
        objective: &LogisticObjective<'_>,
        optimum: &[f64],
        pairs: usize,
        rng: &mut R,
    ) -> Self {
        let mut probe = AssumptionProbe {
            g: 0.0,
            d: 0.0,
            l: vec![0.0; layout.parties()],
        };
        for step in steps {
            let x = layout.scatter(&step.params);
            let batch = batch_indices(&step.batch);
            let fresh = objective.gradient(&x, &batch);
            probe.g = probe.g.max(norm(&fresh));
            probe.g = probe.g.max(norm(&layout.scatter(&step.applied)));
            let gap: Vec<f64> = x.iter().zip(optimum).map(|(a, b)| a - b).collect();
            probe.d = probe.d.max(norm(&gap));
            for _ in 0..pairs {
                let scale = 10f64.powf(rng.gen_range(-3.0..0.0));
                let y: Vec<f64> = x.iter().map(|v| v + scale * rng.gen_range(-1.0..1.0)).collect();
                let moved: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
                let distance = norm(&moved);
                if distance == 0.0 {
                    continue;
                }
                let other = objective.gradient(&y, &batch);
                for j in 0..layout.parties() {
                    let diff: Vec<f64> = layout
                        .block(j)
                        .iter()
                        .map(|&k| fresh[k] - other[k])
                        .collect();
                    probe.l[j] = probe.l[j].max(norm(&diff) / distance);
                }
            }
        }
        probe
    }
}

/// The bound
/// `eta m G^2 / sqrt(T) + D^2 / (eta sqrt(T)) + (1/2) G D m^{3/2} L_max eta tau (1/sqrt(T)) ((tau+1)/sqrt(T) + 4)`.
pub fn regret_envelope(eta: f64, parties: usize, probe: &AssumptionProbe, tau: u64, t: u64) -> f64 {
    let m = parties as f64;
    let root = (t as f64).sqrt();
    let tau = tau as f64;
    eta * m * probe.g * probe.g / root
        + probe.d * probe.d / (eta * root)
        + 0.5 * probe.g * probe.d * m.powf(1.5) * probe.l_max() * eta * tau / root
            * ((tau + 1.0) / root + 4.0)
}

/// Residual of the per-step identity
/// `<x_t - x_*, grad F_t(x_t)> = (eta/2) ||g~||^2 - (D_{t+1} - D_t)/eta + <x_t - x_*, grad F_t(x_t) - g~>`
/// where `g~` is the applied (possibly stale) gradient and `D_t = ||x_t - x_*||^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LemmaResidual {
    pub residual: f64,
    /// False when `x_{t+1} != x_t - eta g~`, e.g. when noise was injected.
    pub applicable: bool,
}

pub fn lemma1_residual(
    x_t: &[f64],
    x_next: &[f64],
    x_star: &[f64],
    eta: f64,
    applied: &[f64],
    fresh: &[f64],
) -> LemmaResidual {
    let gap: Vec<f64> = x_t.iter().zip(x_star).map(|(a, b)| a - b).collect();
    let gap_next: Vec<f64> = x_next.iter().zip(x_star).map(|(a, b)| a - b).collect();
    let d_t = 0.5 * dot(&gap, &gap);
    let d_next = 0.5 * dot(&gap_next, &gap_next);
    let lhs = dot(&gap, fresh);
    let drift: Vec<f64> = fresh.iter().zip(applied).map(|(f, a)| f - a).collect();
    let rhs = 0.5 * eta * dot(applied, applied) - (d_next - d_t) / eta + dot(&gap, &drift);
    let applicable = x_t
        .iter()
        .zip(x_next)
        .zip(applied)
        .all(|((a, b), g)| (a - eta * g - b).abs() <= 1e-12 * (1.0 + a.abs()));
    LemmaResidual {
        residual: (lhs - rhs).abs(),
        applicable,
    }
}

/// Lemma residual at every consecutive pair of recorded steps.
pub fn lemma1_trace(
    steps: &[InstrumentedStep],
    layout: &BlockLayout,
    objective: &LogisticObjective<'_>,
    optimum: &[f64],
) -> Vec<LemmaResidual> {
    steps
        .windows(2)
        .map(|w| {
            let x_t = layout.scatter(&w[0].params);
            let x_next = layout.scatter(&w[1].params);
            let applied = layout.scatter(&w[0].applied);
            let fresh = objective.gradient(&x_t, &batch_indices(&w[0].batch));
            lemma1_residual(&x_t, &x_next, optimum, w[0].eta, &applied, &fresh)
        })
        .collect()
}

/// `sum_{t=a}^{b} 1/sqrt(t)` for `1 <= a <= b <= max`.
///
/// Short ranges are summed directly; long ranges take a difference of
/// compensated prefix sums.
pub struct InverseSqrtSums {
    prefix: Vec<f64>,
}

const DIRECT_LIMIT: u64 = 10_000;

impl InverseSqrtSums {
    pub fn new(max: u64) -> Self {
        let mut prefix = Vec::with_capacity(max as usize + 1);
        prefix.push(0.0);
        let (mut sum, mut carry) = (0.0f64, 0.0f64);
        for t in 1..=max {
            let term = 1.0 / (t as f64).sqrt();
            let next = sum + term;
            carry += if sum.abs() >= term.abs() {
                (sum - next) + term
            } else {
                (term - next) + sum
            };
            sum = next;
            prefix.push(sum + carry);
        }
        InverseSqrtSums { prefix }
    }

    pub fn sum(&self, a: u64, b: u64) -> f64 {
        assert!(1 <= a && a <= b && (b as usize) < self.prefix.len(), "range {a}..={b}");
        if b - a < DIRECT_LIMIT {
            (a..=b).rev().map(|t| 1.0 / (t as f64).sqrt()).sum()
        } else {
            self.prefix[b as usize] - self.prefix[a as usize - 1]
        }
    }
}

/// `2 (sqrt(b) - sqrt(a - 1))`, evaluated without cancellation.
pub fn inverse_sqrt_bound(a: u64, b: u64) -> f64 {
    let (sb, sa) = ((b as f64).sqrt(), ((a - 1) as f64).sqrt());
    2.0 * (b - (a - 1)) as f64 / (sb + sa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance() -> (Vec<SparseVector>, Vec<u8>) {
        let rows = vec![
            SparseVector::from_pairs([(0, 1.0), (1, -0.5), (2, 0.25)]).unwrap(),
            SparseVector::from_pairs([(0, -1.0), (2, 1.0)]).unwrap(),
            SparseVector::from_pairs([(1, 0.75), (3, -1.0)]).unwrap(),
            SparseVector::from_pairs([(0, 0.5), (3, 0.5)]).unwrap(),
        ];
        (rows, vec![1, 0, 1, 0])
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let (rows, labels) = instance();
        let obj = LogisticObjective::new(&rows, &labels, 4, 0.1);
        let w = [0.3, -0.2, 0.5, 0.1];
        let grad = obj.full_gradient(&w);
        for k in 0..4 {
            let (mut up, mut down) = (w, w);
            up[k] += 1e-6;
            down[k] -= 1e-6;
            let fd = (obj.full_value(&up) - obj.full_value(&down)) / 2e-6;
            assert!((fd - grad[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn optimum_has_vanishing_gradient() {
        let (rows, labels) = instance();
        let obj = LogisticObjective::new(&rows, &labels, 4, 0.1);
        let opt = full_batch_optimum(&obj, 1e-10, 100_000).unwrap();
        assert!(opt.gradient_norm < 1e-10);
        assert!(opt.value <= obj.full_value(&[0.0; 4]));
        assert!(full_batch_optimum(&obj, 1e-10, 2).is_err());
    }

    #[test]
    fn regret_is_zero_when_sitting_at_the_optimum() {
        let (rows, labels) = instance();
        let obj = LogisticObjective::new(&rows, &labels, 4, 0.1);
        let opt = full_batch_optimum(&obj, 1e-10, 100_000).unwrap();
        let layout = BlockLayout::new(vec![vec![0, 1], vec![2, 3]], 4);
        let steps: Vec<InstrumentedStep> = (1..=8)
            .map(|t| InstrumentedStep {
                iteration: t,
                eta: 0.0,
                batch: vec![(t % 4) as u32],
                params: vec![layout.gather(&opt.x, 0), layout.gather(&opt.x, 1)],
                applied: vec![vec![0.0; 2], vec![0.0; 2]],
            })
            .collect();
        let trace = regret_trace(&steps, &layout, &obj, &opt.x, &[2, 4, 8, 16]).unwrap();
        assert_eq!(trace, vec![(2, 0.0), (4, 0.0), (8, 0.0)]);
    }

    #[test]
    fn lemma_holds_for_arbitrary_applied_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let star: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let fresh: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let applied: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let eta = rng.gen_range(1e-3..1.0);
            let next: Vec<f64> = x.iter().zip(&applied).map(|(a, g)| a - eta * g).collect();
            let r = lemma1_residual(&x, &next, &star, eta, &applied, &fresh);
            assert!(r.applicable);
            assert!(r.residual < 1e-9, "{}", r.residual);
        }
        let r = lemma1_residual(&[1.0], &[0.5], &[0.0], 0.1, &[1.0], &[1.0]);
        assert!(!r.applicable);
    }

    #[test]
    fn inverse_sqrt_sums() {
        let sums = InverseSqrtSums::new(50_000);
        assert!((sums.sum(1, 1) - 1.0).abs() < 1e-15);
        assert!((sums.sum(1, 4) - (1.0 + 0.5f64.sqrt() + 1.0 / 3f64.sqrt() + 0.5)).abs() < 1e-15);
        let direct: f64 = (3..=40_000u64).map(|t| 1.0 / (t as f64).sqrt()).sum();
        assert!((sums.sum(3, 40_000) - direct).abs() < 1e-9);
        assert_eq!(inverse_sqrt_bound(1, 4), 4.0);
        assert!(sums.sum(7, 7) <= inverse_sqrt_bound(7, 7));
    }

    #[test]
    fn envelope_grows_with_staleness() {
        let probe = AssumptionProbe {
            g: 1.0,
            d: 2.0,
            l: vec![0.5, 0.25],
        };
        let zero = regret_envelope(0.5, 2, &probe, 0, 100);
        assert!((zero - (0.5 * 2.0 / 10.0 + 4.0 / 5.0)).abs() < 1e-15);
        assert!(regret_envelope(0.5, 2, &probe, 4, 100) > zero);
    }
}
