use super::{BubbleError, Heatmap};

/// A head position in image pixels and the score map it was read from,
/// resampled to image size.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadLocation {
    pub x: usize,
    pub y: usize,
    pub logits: Heatmap,
}

/// Distance and window constants for peak suppression, in image pixels
/// at `scale = 1`.
pub const SUPPRESSION_RADIUS: f64 = 400.0;
pub const SUPPRESSION_WINDOW: f64 = 100.0;

/// Finds a head in an image of `image_dims = (width, height)`.
///
/// `maps[0]` is the character's own prompt map; every later map (the last
/// one being the generic head query) is min-max normalized and multiplied
/// in. The argmax of the product is scaled to image pixels. Any
/// previously used location closer than `400 * scale` halves the
/// resampled scores in a `round(100 * scale)` window around the current
/// pick, and the pick moves to the new maximum.
pub fn get_location(
    image_dims: (usize, usize),
    maps: &[Heatmap],
    used: &[(usize, usize)],
    scale: f64,
) -> Result<HeadLocation, BubbleError> {
    let (img_w, img_h) = image_dims;
    if img_w == 0 || img_h == 0 {
        return Err(BubbleError::DimMismatch(format!("empty image {img_w}x{img_h}")));
    }
    let first = maps
        .first()
        .ok_or_else(|| BubbleError::DimMismatch("no prompt maps".into()))?;
    if maps.len() < 2 {
        return Err(BubbleError::DimMismatch("need a prompt map and a head map".into()));
    }
    if let Some(m) = maps.iter().find(|m| (m.width, m.height) != (first.width, first.height)) {
        return Err(BubbleError::DimMismatch(format!(
            "prompt maps differ in size: {}x{} vs {}x{}",
            first.width, first.height, m.width, m.height
        )));
    }

    let mut combined = first.clone();
    for m in &maps[1..] {
        let n = m.min_max_normalized();
        for (c, v) in combined.values.iter_mut().zip(&n.values) {
            *c *= v;
        }
    }

    let (cx, cy) = combined.argmax();
    let mut x = cx * img_w / combined.width;
    let mut y = cy * img_h / combined.height;
    let mut s = combined.resize_bilinear(img_w, img_h);

    let radius = SUPPRESSION_RADIUS * scale;
    let window = (SUPPRESSION_WINDOW * scale).round() as i64;
    for &(ux, uy) in used {
        let dx = ux as f64 - x as f64;
        let dy = uy as f64 - y as f64;
        if (dx * dx + dy * dy).sqrt() < radius {
            halve_window(&mut s, x, y, window);
            (x, y) = s.argmax();
        }
    }

    Ok(HeadLocation { x, y, logits: s })
}

fn halve_window(s: &mut Heatmap, x: usize, y: usize, window: i64) {
    let clip = |lo: i64, n: usize| (lo.max(0) as usize, (lo + window).clamp(0, n as i64) as usize);
    let (x0, x1) = clip(x as i64 - window / 2, s.width);
    let (y0, y1) = clip(y as i64 - window / 2, s.height);
    for r in y0..y1 {
        for c in x0..x1 {
            *s.at_mut(c, r) *= 0.5;
        }
    }
}
