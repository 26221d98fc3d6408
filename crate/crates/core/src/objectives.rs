//! Training objectives with analytic gradients.
//!
//! Gradients are taken with respect to the similarity / score inputs only;
//! external trainers backpropagate them into model parameters.
//! [`finite_diff_check`] compares any of them against central differences.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("similarity matrix must be square: {len} entries is not n*n")]
    NotSquare { len: usize },
    #[error("similarity entry {value} at ({row}, {col}) is outside [-1, 1]")]
    OutOfRange { row: usize, col: usize, value: f64 },
    #[error("positive index {index} out of range for {len} candidates")]
    PositiveOutOfRange { index: usize, len: usize },
    #[error("label {value} at {index} is not 0 or 1")]
    NonBinaryLabel { index: usize, value: f64 },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("empty input")]
    Empty,
}

/// Softmax temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    /// Bi-encoder InfoNCE default.
    pub const ENCODER: Temperature = Temperature(0.05);
    /// Listwise reranker default.
    pub const LISTWISE: Temperature = Temperature(1.0);

    pub fn new(tau: f64) -> Result<Self, ObjectiveError> {
        if tau > 0.0 && tau.is_finite() {
            Ok(Self(tau))
        } else {
            Err(ObjectiveError::Temperature(tau))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Row-major B×B query-to-skill similarities; the diagonal holds positives.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    size: usize,
    data: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(data: Vec<f64>) -> Result<Self, ObjectiveError> {
        let size = isqrt(data.len()).ok_or(ObjectiveError::NotSquare { len: data.len() })?;
        for (i, &v) in data.iter().enumerate() {
            if !(-1.0..=1.0).contains(&v) {
                return Err(ObjectiveError::OutOfRange {
                    row: i / size.max(1),
                    col: i % size.max(1),
                    value: v,
                });
            }
        }
        Ok(Self { size, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ObjectiveError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(ObjectiveError::NotSquare {
                len: rows.iter().map(Vec::len).sum(),
            });
        }
        Self::new(rows.concat())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn isqrt(len: usize) -> Option<usize> {
    let n = libm::round(math::sqrt(len as f64)) as usize;
    (n * n == len).then_some(n)
}

/// Log-softmax denominator `ln Σ exp(x_j)`, stabilised by the max.
fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + math::ln(xs.iter().map(|&x| math::exp(x - max)).sum::<f64>())
}

/// Loss and gradient of one softmax cross-entropy row over `logits / tau`.
/// The gradient is with respect to the unscaled logits.
fn softmax_ce_row(logits: &[f64], positive: usize, tau: f64, grad: &mut [f64], weight: f64) -> f64 {
    let scaled: Vec<f64> = logits.iter().map(|&x| x / tau).collect();
    let lse = log_sum_exp(&scaled);
    for (j, (&s, g)) in scaled.iter().zip(grad.iter_mut()).enumerate() {
        let p = math::exp(s - lse);
        let onehot = if j == positive { 1.0 } else { 0.0 };
        *g = weight * (p - onehot) / tau;
    }
    lse - scaled[positive]
}

/// In-batch InfoNCE: mean over rows of `-log softmax(sim_i / tau)_i`.
pub fn info_nce(sim: &SimilarityMatrix, tau: Temperature) -> (f64, Vec<f64>) {
    info_nce_raw(&sim.data, sim.size, tau.0)
}

fn info_nce_raw(data: &[f64], b: usize, tau: f64) -> (f64, Vec<f64>) {
    if b == 0 {
        return (0.0, Vec::new());
    }
    let mut grad = vec![0.0; b * b];
    let weight = 1.0 / b as f64;
    let mut loss = 0.0;
    for i in 0..b {
        let row = &data[i * b..(i + 1) * b];
        loss += softmax_ce_row(row, i, tau, &mut grad[i * b..(i + 1) * b], weight);
    }
    (loss * weight, grad)
}

/// Listwise reranker scores for one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListwiseScores {
    pub scores: Vec<f64>,
    pub positive: usize,
}

impl ListwiseScores {
    pub fn new(scores: Vec<f64>, positive: usize) -> Result<Self, ObjectiveError> {
        if positive >= scores.len() {
            return Err(ObjectiveError::PositiveOutOfRange {
                index: positive,
                len: scores.len(),
            });
        }
        Ok(Self { scores, positive })
    }
}

/// Listwise cross-entropy `-log softmax(f / tau)_+` with gradient
/// `(softmax(f / tau) - onehot) / tau`.
pub fn listwise_ce(scores: &ListwiseScores, tau: Temperature) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; scores.scores.len()];
    let loss = softmax_ce_row(&scores.scores, scores.positive, tau.0, &mut grad, 1.0);
    (loss, grad)
}

/// Mean binary cross-entropy over independent sigmoid scores, with
/// gradient `(sigmoid(f) - y) / K`.
pub fn pointwise_bce(scores: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>), ObjectiveError> {
    if scores.len() != labels.len() {
        return Err(ObjectiveError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(ObjectiveError::Empty);
    }
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &y)| y != 0.0 && y != 1.0) {
        return Err(ObjectiveError::NonBinaryLabel { index, value });
    }
    let k = scores.len() as f64;
    let mut loss = 0.0;
    let grad = scores
        .iter()
        .zip(labels)
        .map(|(&f, &y)| {
            // -[y ln σ(f) + (1-y) ln(1-σ(f))] = max(f,0) - f y + ln(1 + e^{-|f|})
            loss += f.max(0.0) - f * y + math::ln_1p(math::exp(-f.abs()));
            (math::sigmoid(f) - y) / k
        })
        .collect();
    Ok((loss / k, grad))
}

/// Worst absolute gap between the analytic gradient returned by `loss_fn`
/// and central finite differences with the given step.
pub fn finite_diff_check<F>(loss_fn: F, point: &[f64], step: f64) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    assert!(step > 0.0, "finite-difference step must be positive");
    if point.is_empty() {
        return 0.0;
    }
    let (_, analytic) = loss_fn(point);
    let mut probe = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let (up, _) = loss_fn(&probe);
        probe[i] = point[i] - step;
        let (down, _) = loss_fn(&probe);
        probe[i] = point[i];
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max((numeric - analytic[i]).abs());
    }
    worst
}

/// Loss closures over flat parameter vectors, for gradient checking.
pub mod checks {
    use super::*;

    /// InfoNCE as a function of the flattened B×B matrix (no range check).
    pub fn info_nce_fn(b: usize, tau: Temperature) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
        move |x| info_nce_raw(x, b, tau.0)
    }

    pub fn listwise_fn(positive: usize, tau: Temperature) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
        move |x| {
            let mut grad = vec![0.0; x.len()];
            let loss = softmax_ce_row(x, positive, tau.0, &mut grad, 1.0);
            (loss, grad)
        }
    }

    pub fn pointwise_fn(labels: Vec<f64>) -> impl Fn(&[f64]) -> (f64, Vec<f64>) {
        move |x| pointwise_bce(x, &labels).expect("labels validated by caller")
    }
}
