//! Numerical laboratory for the conflicting-label effect.
//!
//! The dataset repeats one identical input with labels cycling over the
//! first `m` of `n` classes, so the model collapses to a bare logit vector.
//! Full-batch gradient descent on the mean cross-entropy then converges to
//! probability `1/m` on each conflicting class and `0` elsewhere — the
//! constrained optimum, derivable with a Lagrange multiplier — and the
//! converged per-sample cross-entropy is `ln m`, the quantitative face of
//! the "large perplexity on conflicting objectives" effect.

use serde::Serialize;
use thiserror::Error;

/// Identical-input samples labeled with each of the first `m` of `n`
/// classes.
#[derive(Debug, Clone, Copy)]
pub struct CollisionDataset {
    pub n: usize,
    pub m: usize,
}

impl CollisionDataset {
    pub fn new(n: usize, m: usize) -> Result<Self, LabError> {
        if n == 0 || m == 0 || m > n {
            return Err(LabError::Domain { n, m });
        }
        Ok(Self { n, m })
    }
}

/// A bare logit vector with its descent schedule. All inputs being
/// identical, any deeper architecture reduces to this.
#[derive(Debug, Clone)]
pub struct SoftmaxModel {
    pub logits: Vec<f64>,
    pub learning_rate: f64,
    pub steps: usize,
}

impl SoftmaxModel {
    /// Zero-initialized logits with the documented default rate of 0.1.
    pub fn new(n: usize, steps: usize) -> Self {
        Self {
            logits: vec![0.0; n],
            learning_rate: 0.1,
            steps,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }
}

#[derive(Debug, Error)]
pub enum LabError {
    #[error("class counts must satisfy 1 <= m <= n, got n={n}, m={m}")]
    Domain { n: usize, m: usize },
    #[error(
        "training diverged: loss rose for {window} consecutive steps (learning rate too large)"
    )]
    Diverged {
        window: usize,
        trajectory: Trajectory,
    },
}

/// Probabilities and loss recorded along the descent. Every step is kept up
/// to 10k steps, every 10th after that; the final step is always recorded.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub probs: Vec<f64>,
    pub loss: f64,
}

pub type Trajectory = Vec<TrajectoryPoint>;

const DENSE_RECORD_LIMIT: usize = 10_000;
const DIVERGENCE_WINDOW: usize = 50;

/// Flags a run whose loss rises for [`DIVERGENCE_WINDOW`] consecutive steps.
#[derive(Debug, Default)]
struct DivergenceDetector {
    prev: Option<f64>,
    rising: usize,
}

impl DivergenceDetector {
    fn observe(&mut self, loss: f64) -> bool {
        match self.prev {
            Some(prev) if loss > prev => self.rising += 1,
            _ => self.rising = 0,
        }
        self.prev = Some(loss);
        self.rising >= DIVERGENCE_WINDOW
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Mean cross-entropy of the collision dataset at the given logits.
pub fn mean_loss(ds: &CollisionDataset, logits: &[f64]) -> f64 {
    let probs = softmax(logits);
    -(0..ds.m).map(|i| probs[i].ln()).sum::<f64>() / ds.m as f64
}

/// Analytic gradient of [`mean_loss`] with respect to the logits:
/// `p_k - 1/m` on the conflicting classes, `p_k` elsewhere.
pub fn mean_loss_grad(ds: &CollisionDataset, logits: &[f64]) -> Vec<f64> {
    let probs = softmax(logits);
    let share = 1.0 / ds.m as f64;
    probs
        .iter()
        .enumerate()
        .map(|(k, &p)| if k < ds.m { p - share } else { p })
        .collect()
}

/// Runs full-batch gradient descent and records the probability trajectory.
/// Errors out (with the partial trajectory attached) if the loss rises for
/// 50 consecutive steps.
pub fn train(ds: &CollisionDataset, model: &SoftmaxModel) -> Result<Trajectory, LabError> {
    let mut logits = model.logits.clone();
    assert_eq!(logits.len(), ds.n, "logit vector must have n entries");
    let mut trajectory = Vec::new();
    let mut record = |step: usize, logits: &[f64], force: bool| {
        if force || step <= DENSE_RECORD_LIMIT || step.is_multiple_of(10) {
            trajectory.push(TrajectoryPoint {
                step,
                probs: softmax(logits),
                loss: mean_loss(ds, logits),
            });
        }
    };
    record(0, &logits, true);
    let mut detector = DivergenceDetector::default();
    detector.observe(mean_loss(ds, &logits));
    for step in 1..=model.steps {
        let grad = mean_loss_grad(ds, &logits);
        for (z, g) in logits.iter_mut().zip(&grad) {
            *z -= model.learning_rate * g;
        }
        let loss = mean_loss(ds, &logits);
        record(step, &logits, step == model.steps);
        if detector.observe(loss) {
            return Err(LabError::Diverged {
                window: DIVERGENCE_WINDOW,
                trajectory,
            });
        }
    }
    Ok(trajectory)
}

/// The constrained optimum: probability `1/m` on the first `m` classes,
/// `0` elsewhere.
pub fn lagrange_optimum(n: usize, m: usize) -> Result<Vec<f64>, LabError> {
    if n == 0 || m == 0 || m > n {
        return Err(LabError::Domain { n, m });
    }
    let share = 1.0 / m as f64;
    Ok((0..n).map(|i| if i < m { share } else { 0.0 }).collect())
}

/// Compares the analytic logit gradient against central finite differences
/// and returns the maximum relative error over coordinates.
pub fn grad_check(model: &SoftmaxModel, ds: &CollisionDataset, epsilon: f64) -> f64 {
    let analytic = mean_loss_grad(ds, &model.logits);
    let mut max_rel = 0.0f64;
    for k in 0..model.logits.len() {
        let mut up = model.logits.clone();
        up[k] += epsilon;
        let mut down = model.logits.clone();
        down[k] -= epsilon;
        let numeric = (mean_loss(ds, &up) - mean_loss(ds, &down)) / (2.0 * epsilon);
        let denom = analytic[k].abs().max(numeric.abs()).max(1e-12);
        max_rel = max_rel.max((analytic[k] - numeric).abs() / denom);
    }
    max_rel
}
