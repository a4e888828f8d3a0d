//! Brute-force reference implementations used to check the library.

use taleforge_core::bubbles::BubblePlacement;

/// Head lookup written from the textual rule, pixel by pixel: multiply
/// the first map by min-max normalized copies of the others, take the
/// first maximum, scale it to the image, resample, and halve a window
/// around the pick for every nearby used location.
pub fn locate(
    image: (usize, usize),
    map_dims: (usize, usize),
    maps: &[Vec<f64>],
    used: &[(usize, usize)],
    scale: f64,
) -> (usize, usize, Vec<f64>) {
    let (iw, ih) = image;
    let (mw, mh) = map_dims;
    let n = mw * mh;
    let mut c = maps[0].clone();
    for m in &maps[1..] {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in m {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        for p in 0..n {
            let norm = if hi > lo { (m[p] - lo) / (hi - lo) } else { 0.0 };
            c[p] *= norm;
        }
    }
    let first_max = |v: &[f64], w: usize| {
        let mut best = 0;
        for p in 1..v.len() {
            if v[p] > v[best] {
                best = p;
            }
        }
        (best % w, best / w)
    };
    let (cx, cy) = first_max(&c, mw);
    let mut x = cx * iw / mw;
    let mut y = cy * ih / mh;

    let src = |i: usize, n_in: usize, n_out: usize| {
        let mut s = (i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
        if s < 0.0 {
            s = 0.0;
        }
        let mut i0 = s.floor() as usize;
        if i0 > n_in - 1 {
            i0 = n_in - 1;
        }
        let i1 = if i0 + 1 < n_in { i0 + 1 } else { n_in - 1 };
        (i0, i1, s - i0 as f64)
    };
    let mut s = vec![0.0; iw * ih];
    for yy in 0..ih {
        let (y0, y1, fy) = src(yy, mh, ih);
        for xx in 0..iw {
            let (x0, x1, fx) = src(xx, mw, iw);
            let a = c[y0 * mw + x0];
            let b = c[y0 * mw + x1];
            let cc = c[y1 * mw + x0];
            let d = c[y1 * mw + x1];
            s[yy * iw + xx] = (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * cc + fx * d);
        }
    }

    let window = (100.0 * scale).round() as i64;
    for &(ux, uy) in used {
        let dist = ((ux as f64 - x as f64).powi(2) + (uy as f64 - y as f64).powi(2)).sqrt();
        if dist >= 400.0 * scale {
            continue;
        }
        let left = x as i64 - window / 2;
        let top = y as i64 - window / 2;
        for yy in 0..ih as i64 {
            for xx in 0..iw as i64 {
                if xx >= left && xx < left + window && yy >= top && yy < top + window {
                    s[yy as usize * iw + xx as usize] *= 0.5;
                }
            }
        }
        (x, y) = first_max(&s, iw);
    }
    (x, y, s)
}

/// Whether the pixel `(px, py)` has its center inside the ellipse
/// inscribed in the bubble's rectangle, in exact integer arithmetic.
pub fn covers(b: &BubblePlacement, px: i64, py: i64) -> bool {
    let (w, h) = (b.w_bubble as i128, b.h_bubble as i128);
    let dx = 2 * px as i128 + 1 - 2 * b.x_b as i128 - w;
    let dy = 2 * py as i128 + 1 - 2 * b.y_b as i128 - h;
    dx * dx * h * h + dy * dy * w * w <= w * w * h * h
}

fn boxes_overlap(a: &BubblePlacement, b: &BubblePlacement) -> bool {
    let sep_x = a.x_b + a.w_bubble <= b.x_b || b.x_b + b.w_bubble <= a.x_b;
    let sep_y = a.y_b + a.h_bubble <= b.y_b || b.y_b + b.h_bubble <= a.y_b;
    !(sep_x || sep_y)
}

/// Pairs `(i, j)` where bubble `i` covers head `j`.
pub fn foreign_head_coverage(bubbles: &[BubblePlacement]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, b) in bubbles.iter().enumerate() {
        for (j, o) in bubbles.iter().enumerate() {
            if i != j && covers(b, o.head.0, o.head.1) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Any foreign-head coverage or overlapping bubble rectangles.
pub fn any_conflict(bubbles: &[BubblePlacement]) -> bool {
    if !foreign_head_coverage(bubbles).is_empty() {
        return true;
    }
    for i in 0..bubbles.len() {
        for j in i + 1..bubbles.len() {
            if boxes_overlap(&bubbles[i], &bubbles[j]) {
                return true;
            }
        }
    }
    false
}

pub fn in_frame(b: &BubblePlacement, w: i64, h: i64) -> bool {
    b.x_b >= 0 && b.y_b >= 0 && b.x_b + b.w_bubble <= w && b.y_b + b.h_bubble <= h
}

/// Pixels a convex polygon covers, by testing each pixel center against
/// every edge. Degenerate (zero-area) polygons cover nothing.
pub fn polygon_pixels(pts: &[(f64, f64)], w: usize, h: usize) -> Vec<(usize, usize)> {
    let n = pts.len();
    let area2: f64 = (0..n)
        .map(|i| {
            let (a, b) = (pts[i], pts[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    if area2 == 0.0 {
        return Vec::new();
    }
    let sign = area2.signum();
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = (0..n).all(|i| {
                let (a, b) = (pts[i], pts[(i + 1) % n]);
                sign * ((b.0 - a.0) * (py - a.1) - (b.1 - a.1) * (px - a.0)) >= 0.0
            });
            if inside {
                out.push((x, y));
            }
        }
    }
    out
}
