//! Cross-attention of image tokens (queries) onto the fixed spherical
//! embedding (keys and values).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = logits.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|v| *v = (*v - max).exp());
        let sum: f64 = row.iter().sum();
        row /= sum;
    }
    out
}

/// Intermediate products of one cross-attention evaluation.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub q: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Attention weights, N×N, rows sum to one.
    pub weights: DMatrix<f64>,
    /// `weights · v`, N×D_k.
    pub output: DMatrix<f64>,
}

/// `softmax(Z W_Q (E W_K)ᵀ / √D_k) · (E W_V)`.
pub fn sphere_cross_attention(
    z: &DMatrix<f64>,
    e: &DMatrix<f64>,
    w_q: &DMatrix<f64>,
    w_k: &DMatrix<f64>,
    w_v: &DMatrix<f64>,
) -> Result<AttentionCache> {
    if z.shape() != e.shape() {
        return Err(Error::Config(format!(
            "features {:?} and embedding {:?} differ in shape",
            z.shape(),
            e.shape()
        )));
    }
    let d = z.ncols();
    for (name, w) in [("W_Q", w_q), ("W_K", w_k), ("W_V", w_v)] {
        if w.nrows() != d || w.ncols() != w_q.ncols() || w.ncols() == 0 {
            return Err(Error::Config(format!("{name} has shape {:?}, expected {d}x{}", w.shape(), w_q.ncols())));
        }
    }
    let scale = 1.0 / (w_q.ncols() as f64).sqrt();
    let q = z * w_q;
    let k = e * w_k;
    let v = e * w_v;
    let logits = (&q * k.transpose()) * scale;
    let weights = softmax_rows(&logits);
    let output = &weights * &v;
    Ok(AttentionCache { q, k, v, weights, output })
}

/// Gradients of a cross-attention evaluation.
pub struct AttentionGrads {
    pub z: DMatrix<f64>,
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
}

/// Back-propagates `∂L/∂output` through [`sphere_cross_attention`]. The
/// embedding is constant, so no gradient is produced for it.
pub fn cross_attention_backward(
    cache: &AttentionCache,
    z: &DMatrix<f64>,
    e: &DMatrix<f64>,
    w_q: &DMatrix<f64>,
    grad_output: &DMatrix<f64>,
) -> AttentionGrads {
    let scale = 1.0 / (w_q.ncols() as f64).sqrt();
    let a = &cache.weights;
    let grad_weights = grad_output * cache.v.transpose();
    let grad_v = a.tr_mul(grad_output);
    // softmax Jacobian, row by row
    let mut grad_logits = a.component_mul(&grad_weights);
    for (r, mut row) in grad_logits.row_iter_mut().enumerate() {
        let dot: f64 = row.iter().sum();
        for (c, v) in row.iter_mut().enumerate() {
            *v -= a[(r, c)] * dot;
        }
    }
    grad_logits *= scale;
    let grad_q = &grad_logits * &cache.k;
    let grad_k = grad_logits.tr_mul(&cache.q);
    AttentionGrads {
        z: &grad_q * w_q.transpose(),
        w_q: z.tr_mul(&grad_q),
        w_k: e.tr_mul(&grad_k),
        w_v: e.tr_mul(&grad_v),
    }
}
