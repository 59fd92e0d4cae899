//! Exact scalar loss kernels: supervised contrastive loss, GIoU loss,
//! normalized L1 box loss, and cross-entropy. Value-only computations
//! (no gradients) intended as verification oracles for external training
//! code.

use thiserror::Error;

use crate::geometry::{giou, BBox, GeometryError, ImageBounds};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("embedding batch needs at least 2 items, got {0}")]
    BatchTooSmall(usize),
    #[error("vector data length {got} is not n × dim = {expected}")]
    BadVectorLength { expected: usize, got: usize },
    #[error("label count {got} does not match item count {expected}")]
    BadLabelCount { expected: usize, got: usize },
    #[error("vector {index} has norm {norm}, expected 1 ± 1e-6")]
    NotNormalized { index: usize, norm: f64 },
    #[error("temperature must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("no anchor has a positive (all labels are unique)")]
    NoPositives,
    #[error("logits must be non-empty and finite")]
    BadLogits,
    #[error("class index {index} out of range for {len} logits")]
    ClassOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A batch of L2-normalized embeddings with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    dim: usize,
    vectors: Vec<f64>,
    labels: Vec<i64>,
}

impl EmbeddingBatch {
    pub fn new(dim: usize, vectors: Vec<f64>, labels: Vec<i64>) -> Result<Self, LossError> {
        if dim == 0 || vectors.len() % dim != 0 {
            return Err(LossError::BadVectorLength {
                expected: labels.len() * dim.max(1),
                got: vectors.len(),
            });
        }
        let n = vectors.len() / dim;
        if n < 2 {
            return Err(LossError::BatchTooSmall(n));
        }
        if labels.len() != n {
            return Err(LossError::BadLabelCount {
                expected: n,
                got: labels.len(),
            });
        }
        for i in 0..n {
            let norm = vectors[i * dim..(i + 1) * dim]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(LossError::NotNormalized { index: i, norm });
            }
        }
        Ok(EmbeddingBatch {
            dim,
            vectors,
            labels,
        })
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> i64 {
        self.labels[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(tau: f64) -> Result<Self, LossError> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(LossError::BadTemperature(tau));
        }
        Ok(Temperature(tau))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// The conventional default temperature.
impl Default for Temperature {
    fn default() -> Self {
        Temperature(0.07)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Supervised contrastive loss, anchor-averaged ("L_out") variant:
///
/// `L = mean over anchors i with |P(i)| > 0 of (−1/|P(i)|) Σ_{p∈P(i)}
/// [s_ip − logsumexp_{a≠i}(s_ia)]` with `s_uv = z_u·z_v / τ` and `P(i)`
/// the other items sharing anchor `i`'s label. The log-sum-exp subtracts
/// its maximum for stability. Errors when no anchor has a positive.
pub fn supcon_loss(batch: &EmbeddingBatch, t: Temperature) -> Result<f64, LossError> {
    let n = batch.n();
    let tau = t.value();
    let mut total = 0.0;
    let mut anchors = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n)
            .filter(|&p| p != i && batch.label(p) == batch.label(i))
            .collect();
        if positives.is_empty() {
            continue;
        }
        let sims: Vec<f64> = (0..n)
            .filter(|&a| a != i)
            .map(|a| dot(batch.vector(i), batch.vector(a)) / tau)
            .collect();
        let max = sims.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + sims.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let mut sum = 0.0;
        for &p in &positives {
            sum += dot(batch.vector(i), batch.vector(p)) / tau - lse;
        }
        total += -sum / positives.len() as f64;
        anchors += 1;
    }
    if anchors == 0 {
        return Err(LossError::NoPositives);
    }
    Ok(total / anchors as f64)
}

/// `1 − giou(pred, gt)`, in [0, 2].
pub fn giou_loss(pred: &BBox, gt: &BBox) -> Result<f64, LossError> {
    Ok(1.0 - giou(pred, gt)?)
}

/// Sum of absolute coordinate differences in normalized center form
/// `(cx/W, cy/H, w/W, h/H)`.
pub fn l1_bbox_loss(pred: &BBox, gt: &BBox, norm: ImageBounds) -> f64 {
    let (pcx, pcy, pw, ph) = pred.center_form();
    let (gcx, gcy, gw, gh) = gt.center_form();
    let w = norm.width as f64;
    let h = norm.height as f64;
    (pcx / w - gcx / w).abs()
        + (pcy / h - gcy / h).abs()
        + (pw / w - gw / w).abs()
        + (ph / h - gh / h).abs()
}

/// `−log softmax(logits)[true_class]`, computed with max subtraction so
/// large logits cannot overflow.
pub fn cross_entropy(logits: &[f64], true_class: usize) -> Result<f64, LossError> {
    if logits.is_empty() || logits.iter().any(|l| !l.is_finite()) {
        return Err(LossError::BadLogits);
    }
    if true_class >= logits.len() {
        return Err(LossError::ClassOutOfRange {
            index: true_class,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[true_class])
}
