use ndarray::{Array2, Axis};

use super::{LatentDims, MaskError};

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// (n_pixels × n_tokens), rows sum to 1.
    pub probs: Array2<f64>,
    /// probs · V.
    pub output: Array2<f64>,
}

/// softmax(Q Kᵀ / √d) V over the pixels of one box and that box's tokens.
pub fn bounded_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Result<AttentionOutput, MaskError> {
    if q.ncols() != k.ncols() || k.nrows() != v.nrows() {
        return Err(MaskError::ShapeMismatch(format!(
            "Q {:?}, K {:?}, V {:?}",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    let scale = (q.ncols() as f64).sqrt();
    let probs = softmax_rows(&(q.dot(&k.t()) / scale));
    let output = probs.dot(v);
    Ok(AttentionOutput { probs, output })
}

/// Content-token probability mass per pixel for one attention call.
pub fn content_saliency(probs: &Array2<f64>, content_mask: &[bool]) -> Vec<f64> {
    probs
        .rows()
        .into_iter()
        .map(|row| row.iter().zip(content_mask).filter(|(_, &c)| c).map(|(p, _)| p).sum())
        .collect()
}

/// Mean content saliency over all calls, scattered onto the latent grid.
/// Pixels outside `pixel_coords` are 0.
pub fn aggregate_attention(
    per_call: &[Array2<f64>],
    content_mask: &[bool],
    pixel_coords: &[(usize, usize)],
    dims: LatentDims,
) -> Result<Array2<f64>, MaskError> {
    if per_call.is_empty() {
        return Err(MaskError::ShapeMismatch("no attention calls".into()));
    }
    for p in per_call {
        if p.dim() != (pixel_coords.len(), content_mask.len()) {
            return Err(MaskError::ShapeMismatch(format!(
                "call has shape {:?}, expected ({}, {})",
                p.dim(),
                pixel_coords.len(),
                content_mask.len()
            )));
        }
    }
    let mut total = vec![0.0; pixel_coords.len()];
    for p in per_call {
        for (t, s) in total.iter_mut().zip(content_saliency(p, content_mask)) {
            *t += s;
        }
    }
    scatter_mean(&total, per_call.len(), pixel_coords, dims)
}

pub(crate) fn scatter_mean(
    total: &[f64],
    calls: usize,
    pixel_coords: &[(usize, usize)],
    dims: LatentDims,
) -> Result<Array2<f64>, MaskError> {
    let mut a = Array2::zeros((dims.height, dims.width));
    for (&(r, c), t) in pixel_coords.iter().zip(total) {
        if r >= dims.height || c >= dims.width {
            return Err(MaskError::ShapeMismatch(format!("pixel ({r}, {c}) outside {dims}")));
        }
        a[[r, c]] = t / calls as f64;
    }
    Ok(a)
}

/// Sum of every row, for normalization checks.
pub fn row_sums(p: &Array2<f64>) -> Vec<f64> {
    p.sum_axis(Axis(1)).to_vec()
}
