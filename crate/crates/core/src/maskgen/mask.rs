use ndarray::{Array2, Zip};
use serde::Serialize;

use super::{MaskError, MaskSet, SaliencyMask};

/// Fraction of box pixels marked foreground when the saliency is flat.
pub const FLAT_FOREGROUND_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum MaskWarning {
    /// No pixel was classified as foreground; the refined mask is zero.
    EmptyForeground { character_id: String },
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Splits the in-box saliency values into two clusters with minimum
/// within-cluster sum of squares. In one dimension the optimal clusters are
/// separated by a threshold, so every split of the sorted values is tried.
/// A flat box falls back to the first 20% of its pixels in row-major order.
/// Returns `(p_fg, p_bg)`; pixels outside the box are background.
pub fn cluster_fg_bg(a_bar: &Array2<f64>, in_box: &Array2<bool>) -> (Array2<bool>, Array2<bool>) {
    let idx: Vec<(usize, usize)> = in_box.indexed_iter().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    let mut p_fg = Array2::from_elem(a_bar.dim(), false);
    if !idx.is_empty() {
        let values: Vec<f64> = idx.iter().map(|&i| a_bar[i]).collect();
        match optimal_threshold(&values) {
            Some(t) => {
                for &i in &idx {
                    p_fg[i] = a_bar[i] >= t;
                }
            }
            None => {
                let take = (FLAT_FOREGROUND_FRACTION * idx.len() as f64).ceil() as usize;
                for &i in idx.iter().take(take.max(1)) {
                    p_fg[i] = true;
                }
            }
        }
    }
    let p_bg = p_fg.mapv(|f| !f);
    (p_fg, p_bg)
}

/// The smallest value of the upper cluster in the best 2-way split, or
/// `None` when all values are equal.
fn optimal_threshold(values: &[f64]) -> Option<f64> {
    let n = values.len();
    let mut raw = values.to_vec();
    raw.sort_by(f64::total_cmp);
    // centered copies keep the running sums well conditioned
    let mean = raw.iter().sum::<f64>() / n as f64;
    let sorted: Vec<f64> = raw.iter().map(|v| v - mean).collect();
    let total: f64 = sorted.iter().sum();
    let total_sq: f64 = sorted.iter().map(|v| v * v).sum();
    let (mut s, mut sq) = (0.0, 0.0);
    let mut best: Option<(f64, usize)> = None;
    for k in 1..n {
        s += sorted[k - 1];
        sq += sorted[k - 1] * sorted[k - 1];
        if raw[k] == raw[k - 1] {
            continue;
        }
        let (nl, nr) = (k as f64, (n - k) as f64);
        let cost = (sq - s * s / nl) + ((total_sq - sq) - (total - s) * (total - s) / nr);
        if best.map_or(true, |(c, _)| cost < c) {
            best = Some((cost, k));
        }
    }
    best.map(|(_, k)| raw[k])
}

fn l1_normalize(a: &Array2<f64>) -> Array2<f64> {
    let s: f64 = a.iter().map(|v| v.abs()).sum();
    if s == 0.0 {
        Array2::zeros(a.dim())
    } else {
        a / s
    }
}

/// `Norm(sigmoid(xi · Norm(a_bar − phi)))` with L1 normalization.
pub fn init_mask(a_bar: &Array2<f64>, xi: f64, phi: f64) -> Array2<f64> {
    let inner = l1_normalize(&a_bar.mapv(|v| v - phi));
    l1_normalize(&inner.mapv(|v| sigmoid(xi * v)))
}

/// Zeroes `m_init` outside the foreground and rescales by
/// `min(Σ m_init, |p_fg|)`.
pub fn refine_mask(m_init: &Array2<f64>, p_fg: &Array2<bool>) -> Result<Array2<f64>, MaskError> {
    if m_init.dim() != p_fg.dim() {
        return Err(MaskError::ShapeMismatch(format!("{:?} vs {:?}", m_init.dim(), p_fg.dim())));
    }
    let fg_count = p_fg.iter().filter(|&&b| b).count();
    if fg_count == 0 {
        return Ok(Array2::zeros(m_init.dim()));
    }
    let denom = m_init.sum().min(fg_count as f64);
    let mut out = Array2::zeros(m_init.dim());
    Zip::from(&mut out).and(m_init).and(p_fg).for_each(|o, &m, &f| {
        if f {
            *o = m / denom;
        }
    });
    Ok(out)
}

/// Assigns η_j = area_j / union_area and builds the pixelwise-max composite.
pub fn compose_masks(mut per_character: Vec<SaliencyMask>) -> Result<MaskSet, MaskError> {
    let Some(first) = per_character.first() else {
        return Err(MaskError::AllMasksEmpty);
    };
    let dim = first.m_refined.dim();
    if let Some(m) = per_character.iter().find(|m| m.m_refined.dim() != dim) {
        return Err(MaskError::ShapeMismatch(format!("{:?} vs {:?}", m.m_refined.dim(), dim)));
    }
    let mut union = Array2::from_elem(dim, false);
    for m in &per_character {
        Zip::from(&mut union).and(&m.m_refined).for_each(|u, &v| *u |= v > 0.0);
    }
    let union_area = union.iter().filter(|&&u| u).count();
    if union_area == 0 {
        return Err(MaskError::AllMasksEmpty);
    }
    let mut composite = Array2::zeros(dim);
    for m in per_character.iter_mut() {
        m.eta = m.support_area() as f64 / union_area as f64;
        let eta = m.eta;
        Zip::from(&mut composite).and(&m.m_refined).for_each(|c, &v| *c = f64::max(*c, eta * v));
    }
    Ok(MaskSet {
        per_character,
        composite,
        union_area,
    })
}
