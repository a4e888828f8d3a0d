use serde::{Deserialize, Serialize};

use super::typeset::{measure_text, wrap_text};
use super::{BubbleError, Heatmap, HeadLocation};

/// Geometry constants for placement. The defaults reproduce the usual
/// comic layout at roughly 1000 px frame width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BubbleParams {
    pub font_size: u32,
    pub min_font_size: u32,
    pub padding: i64,
    pub max_words_per_line: usize,
    /// Bubbles may take at most this fraction of the frame width before
    /// the font shrinks.
    pub max_width_fraction: f64,
    /// Horizontal and vertical gap between head and bubble.
    pub offset: i64,
    pub h_min: i64,
    pub epsilon: i64,
    pub tail_half_angle: f64,
    pub resolve_passes: usize,
    pub conflict_shift: i64,
    pub suppression_scale: f64,
}

impl Default for BubbleParams {
    fn default() -> Self {
        BubbleParams {
            font_size: 16,
            min_font_size: 6,
            padding: 20,
            max_words_per_line: 4,
            max_width_fraction: 0.4,
            offset: 60,
            h_min: 0,
            epsilon: 10,
            tail_half_angle: 0.15,
            resolve_passes: 3,
            conflict_shift: 80,
            suppression_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BubblePlacement {
    pub character_id: String,
    pub x_b: i64,
    pub y_b: i64,
    pub w_bubble: i64,
    pub h_bubble: i64,
    pub edge_point: (i64, i64),
    pub wrapped_text: Vec<String>,
    pub head: (i64, i64),
    pub font_size: u32,
    /// `(x_b, y_b)` before clamping to the frame.
    pub unclamped: (i64, i64),
}

impl BubblePlacement {
    pub fn center(&self) -> (f64, f64) {
        (
            self.x_b as f64 + self.w_bubble as f64 / 2.0,
            self.y_b as f64 + self.h_bubble as f64 / 2.0,
        )
    }

    /// Whether pixel `(x, y)`'s center lies in the inscribed ellipse.
    pub fn ellipse_contains(&self, x: i64, y: i64) -> bool {
        let (cx, cy) = self.center();
        let a = self.w_bubble as f64 / 2.0;
        let b = self.h_bubble as f64 / 2.0;
        let dx = (x as f64 + 0.5 - cx) / a;
        let dy = (y as f64 + 0.5 - cy) / b;
        dx * dx + dy * dy <= 1.0
    }

    /// Interior overlap of the bounding rectangles; shared edges do not count.
    pub fn overlaps(&self, other: &BubblePlacement) -> bool {
        self.x_b < other.x_b + other.w_bubble
            && other.x_b < self.x_b + self.w_bubble
            && self.y_b < other.y_b + other.h_bubble
            && other.y_b < self.y_b + self.h_bubble
    }

    pub fn clamp_to(&mut self, width: i64, height: i64) {
        self.x_b = self.x_b.min(width - self.w_bubble).max(0);
        self.y_b = self.y_b.min(height - self.h_bubble).max(0);
    }

    pub fn inside(&self, width: i64, height: i64) -> bool {
        self.x_b >= 0 && self.y_b >= 0 && self.x_b + self.w_bubble <= width && self.y_b + self.h_bubble <= height
    }
}

/// Walks from the head toward the nearer side of the frame, two pixels
/// across and a tenth of a pixel up per step, while the heatmap stays
/// within 10% of its value at the head. Step `k` sits at
/// `(x + 2dk, y - 0.1k)` and samples the nearest pixel. Returns the last
/// accepted point, floored.
pub fn find_edge_point(head: (usize, usize), map: &Heatmap) -> (i64, i64) {
    let (x, y) = head;
    let l0 = map.at(x, y);
    let floor_level = l0 - 0.1 * l0.abs();
    let d = if 2 * x < map.width { -1.0 } else { 1.0 };
    let (max_x, max_y) = ((map.width - 1) as f64, (map.height - 1) as f64);

    let mut last = (x as f64, y as f64);
    for k in 1.. {
        let xe = x as f64 + 2.0 * d * k as f64;
        let ye = y as f64 - 0.1 * k as f64;
        if !(0.0..=max_x).contains(&xe) || !(0.0..=max_y).contains(&ye) {
            break;
        }
        if map.at(xe.round() as usize, ye.round() as usize) < floor_level {
            break;
        }
        last = (xe, ye);
    }
    (last.0.floor() as i64, last.1.floor() as i64)
}

/// Places one character's bubble beside its head.
///
/// Left-half heads get the bubble on their left (`x - 60 - W`), others on
/// their right (`x + 60`); the bubble always sits above the head. The
/// frame size is taken from the head's score map.
pub fn place_bubble(
    character_id: &str,
    head: &HeadLocation,
    dialogue: &str,
    params: &BubbleParams,
) -> Result<BubblePlacement, BubbleError> {
    let (w, h) = (head.logits.width as i64, head.logits.height as i64);
    let (x, y) = (head.x as i64, head.y as i64);
    if x >= w || y >= h {
        return Err(BubbleError::DimMismatch(format!("head ({x}, {y}) outside a {w}x{h} frame")));
    }
    let edge = find_edge_point((head.x, head.y), &head.logits);

    let lines = wrap_text(dialogue, params.max_words_per_line)?;
    let mut font_size = params.font_size;
    let size = |fs: u32| {
        let (wt, ht) = measure_text(&lines, fs);
        (wt as i64 + params.padding, ht as i64 + params.padding)
    };
    let (mut wb, mut hb) = size(font_size);
    while wb as f64 > params.max_width_fraction * w as f64 && font_size > params.min_font_size {
        font_size = font_size.saturating_sub(2).max(params.min_font_size);
        (wb, hb) = size(font_size);
    }
    if wb > w || hb > h {
        return Err(BubbleError::BubbleLargerThanFrame {
            character_id: character_id.to_string(),
            bubble: (wb, hb),
            frame: (w, h),
        });
    }

    let x_b = if 2 * x < w { x - params.offset - wb } else { x + params.offset };
    let mut y_b = y - params.offset - hb;
    if y_b < params.h_min {
        y_b = 0;
    }
    if (y_b - edge.1).abs() < params.epsilon {
        y_b = edge.1 - hb - 20;
    }

    let mut b = BubblePlacement {
        character_id: character_id.to_string(),
        x_b,
        y_b,
        w_bubble: wb,
        h_bubble: hb,
        edge_point: edge,
        wrapped_text: lines,
        head: (x, y),
        font_size,
        unclamped: (x_b, y_b),
    };
    b.clamp_to(w, h);
    Ok(b)
}

/// Result of the pairwise conflict pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub bubbles: Vec<BubblePlacement>,
    /// Full passes that changed something.
    pub passes: usize,
    /// Conflicts were still present after the last pass.
    pub unresolved: bool,
}

/// A bubble whose ellipse covers another character's head, or two bubbles
/// whose rectangles overlap.
pub fn has_conflict(bubbles: &[BubblePlacement]) -> bool {
    bubbles.iter().enumerate().any(|(i, bi)| {
        bubbles.iter().enumerate().any(|(j, bj)| {
            i != j && (bi.ellipse_contains(bj.head.0, bj.head.1) || bi.overlaps(bj))
        })
    })
}

/// Moves bubbles off foreign heads and unstacks overlapping pairs.
///
/// Each pass visits ordered pairs `(i, j)`: a bubble covering head `j`
/// shifts 80 px toward the frame's middle and drops below its edge point;
/// if `i` and `j` then overlap, `j` goes directly under `i`. Every bubble
/// is clamped back into the frame after the pass. Inputs with no conflict
/// come back unchanged.
pub fn resolve_conflicts(bubbles: &[BubblePlacement], image_dims: (usize, usize), params: &BubbleParams) -> Resolution {
    let (w, h) = (image_dims.0 as i64, image_dims.1 as i64);
    let mut out = bubbles.to_vec();
    let mut passes = 0;
    while passes < params.resolve_passes && has_conflict(&out) {
        for i in 0..out.len() {
            for j in 0..out.len() {
                if i == j {
                    continue;
                }
                let (hx, hy) = out[j].head;
                if out[i].ellipse_contains(hx, hy) {
                    let b = &mut out[i];
                    b.x_b += params.conflict_shift * (w - 2 * b.x_b).signum();
                    b.y_b = b.edge_point.1 + b.h_bubble + params.conflict_shift;
                }
                if out[i].overlaps(&out[j]) {
                    out[j].y_b = out[i].y_b + out[i].h_bubble;
                }
            }
        }
        for b in &mut out {
            b.clamp_to(w, h);
        }
        passes += 1;
    }
    let unresolved = has_conflict(&out);
    Resolution {
        bubbles: out,
        passes,
        unresolved,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_head(x: usize, y: usize, w: usize, h: usize) -> HeadLocation {
        HeadLocation {
            x,
            y,
            logits: Heatmap::filled(w, h, 1.0),
        }
    }

    fn bubble(id: &str, x_b: i64, y_b: i64, w: i64, h: i64, head: (i64, i64)) -> BubblePlacement {
        BubblePlacement {
            character_id: id.into(),
            x_b,
            y_b,
            w_bubble: w,
            h_bubble: h,
            edge_point: head,
            wrapped_text: vec!["hi".into()],
            head,
            font_size: 16,
            unclamped: (x_b, y_b),
        }
    }

    #[test]
    fn uniform_walk_reaches_the_left_edge() {
        let map = Heatmap::filled(100, 100, 1.0);
        // Steps land on x = 8, 6, 4, 2, 0; the fifth is at y = 49.5.
        assert_eq!(find_edge_point((10, 50), &map), (0, 49));
    }

    #[test]
    fn cliff_stops_the_walk_at_the_head() {
        let mut map = Heatmap::filled(20, 10, 0.0);
        for y in 0..10 {
            for x in 5..20 {
                *map.at_mut(x, y) = 1.0;
            }
        }
        assert_eq!(find_edge_point((5, 5), &map), (5, 5));
    }

    #[test]
    fn middle_column_walks_right() {
        let map = Heatmap::filled(10, 10, 1.0);
        let (xe, _) = find_edge_point((5, 5), &map);
        assert_eq!(xe, 9);
    }

    #[test]
    fn side_rule_literal() {
        let p = BubbleParams::default();
        // "hello world" at 16px: 11 glyphs * 10 + 20 = 130 wide, 20 + 20 tall.
        let left = place_bubble("a", &uniform_head(300, 400, 1000, 800), "hello world", &p).unwrap();
        assert_eq!((left.w_bubble, left.h_bubble), (130, 40));
        assert_eq!(left.x_b, 300 - 60 - 130);
        assert_eq!(left.y_b, 400 - 60 - 40);
        let right = place_bubble("a", &uniform_head(700, 400, 1000, 800), "hello world", &p).unwrap();
        assert_eq!(right.x_b, 760);
    }

    #[test]
    fn corner_head_clamps_to_origin() {
        let p = BubbleParams::default();
        let b = place_bubble("a", &uniform_head(10, 10, 1000, 800), "hello world", &p).unwrap();
        assert_eq!((b.x_b, b.y_b), (0, 0));
        assert_eq!(b.unclamped.0, 10 - 60 - 130);
    }

    #[test]
    fn font_shrinks_for_narrow_frames() {
        let p = BubbleParams::default();
        let b = place_bubble("a", &uniform_head(50, 50, 200, 200), "abcdefghij abcdefghij", &p).unwrap();
        assert!(b.font_size < 16);
        assert!(b.w_bubble as f64 <= 80.0 || b.font_size == 6);
    }

    #[test]
    fn oversized_bubble_errors() {
        let p = BubbleParams::default();
        let err = place_bubble("a", &uniform_head(5, 5, 30, 30), "abcdefghijklmnop", &p).unwrap_err();
        assert!(matches!(err, BubbleError::BubbleLargerThanFrame { .. }));
    }

    #[test]
    fn disjoint_bubbles_are_left_alone() {
        let bs = vec![bubble("a", 0, 0, 100, 50, (300, 300)), bubble("b", 500, 0, 100, 50, (700, 300))];
        let r = resolve_conflicts(&bs, (1000, 800), &BubbleParams::default());
        assert_eq!(r.bubbles, bs);
        assert_eq!(r.passes, 0);
        assert!(!r.unresolved);
    }

    #[test]
    fn covering_bubble_moves_toward_center_and_down() {
        // a sits right on b's head.
        let a = bubble("a", 100, 100, 100, 50, (150, 300));
        let b = bubble("b", 600, 0, 100, 50, (150, 125));
        let r = resolve_conflicts(&[a.clone(), b], (1000, 800), &BubbleParams::default());
        let moved = &r.bubbles[0];
        assert_eq!(moved.x_b, 100 + 80);
        assert_eq!(moved.y_b, 300 + 50 + 80);
        assert!(!r.unresolved);
    }

    #[test]
    fn overlap_stacks_below() {
        let a = bubble("a", 100, 100, 100, 50, (900, 700));
        let b = bubble("b", 150, 120, 100, 50, (900, 10));
        let r = resolve_conflicts(&[a, b], (1000, 800), &BubbleParams::default());
        assert_eq!(r.bubbles[1].y_b, 150);
        assert!(!r.unresolved);
    }
}
