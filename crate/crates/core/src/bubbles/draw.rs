use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use font8x8::{UnicodeFonts, BASIC_FONTS, GREEK_FONTS, HIRAGANA_FONTS, LATIN_FONTS};

use crate::raster::{RgbImage, BLACK, WHITE};

use super::typeset::{glyph_advance, line_height};
use super::{BubbleError, BubblePlacement};

/// Source of glyph bitmaps. `glyph` returns a row-major ink mask of
/// exactly `w × h` cells, or `None` if the character is not covered.
pub trait GlyphProvider {
    fn glyph(&self, ch: char, w: usize, h: usize) -> Option<Vec<bool>>;
}

/// The embedded 8×8 bitmap font with every row doubled to 8×16, scaled
/// nearest-neighbor to the cell. Covers ASCII, Latin-1, Greek and
/// Hiragana.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinFont;

impl BuiltinFont {
    fn rows(ch: char) -> Option<[u8; 8]> {
        BASIC_FONTS
            .get(ch)
            .or_else(|| LATIN_FONTS.get(ch))
            .or_else(|| GREEK_FONTS.get(ch))
            .or_else(|| HIRAGANA_FONTS.get(ch))
    }
}

impl GlyphProvider for BuiltinFont {
    fn glyph(&self, ch: char, w: usize, h: usize) -> Option<Vec<bool>> {
        let rows = Self::rows(ch)?;
        Some(sample(w, h, 8, 16, |x, y| rows[y / 2] & (1 << x) != 0))
    }
}

/// Glyphs cut from a grayscale sheet (`atlas.pgm`, binary P5) using the
/// rectangles listed in `atlas.map` as `<codepoint-hex> <x> <y> <w> <h>`.
/// Pixels of value 128 or more are ink.
#[derive(Debug, Clone)]
pub struct GlyphAtlas {
    width: usize,
    pixels: Vec<u8>,
    rects: BTreeMap<char, (usize, usize, usize, usize)>,
}

impl GlyphAtlas {
    pub fn load(dir: &Path) -> Result<Self, BubbleError> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read(&p).map_err(|source| BubbleError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        let (width, height, pixels) = parse_pgm(&read("atlas.pgm")?)?;
        let map = String::from_utf8(read("atlas.map")?).map_err(|_| BubbleError::Atlas("atlas.map is not UTF-8".into()))?;

        let mut rects = BTreeMap::new();
        for (n, line) in map.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || BubbleError::Atlas(format!("atlas.map line {}: {line:?}", n + 1));
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(bad());
            }
            let ch = u32::from_str_radix(f[0].trim_start_matches("0x"), 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(bad)?;
            let mut r = [0usize; 4];
            for (slot, s) in r.iter_mut().zip(&f[1..]) {
                *slot = s.parse().map_err(|_| bad())?;
            }
            let [x, y, w, h] = r;
            if w == 0 || h == 0 || x + w > width || y + h > height {
                return Err(bad());
            }
            rects.insert(ch, (x, y, w, h));
        }
        Ok(GlyphAtlas { width, pixels, rects })
    }
}

impl GlyphProvider for GlyphAtlas {
    fn glyph(&self, ch: char, w: usize, h: usize) -> Option<Vec<bool>> {
        let &(x0, y0, gw, gh) = self.rects.get(&ch)?;
        Some(sample(w, h, gw, gh, |x, y| self.pixels[(y0 + y) * self.width + x0 + x] >= 128))
    }
}

/// Tries each provider in order.
pub struct FontChain<'a>(pub Vec<&'a dyn GlyphProvider>);

impl GlyphProvider for FontChain<'_> {
    fn glyph(&self, ch: char, w: usize, h: usize) -> Option<Vec<bool>> {
        self.0.iter().find_map(|p| p.glyph(ch, w, h))
    }
}

fn sample(w: usize, h: usize, sw: usize, sh: usize, ink: impl Fn(usize, usize) -> bool) -> Vec<bool> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            out.push(ink(x * sw / w, y * sh / h));
        }
    }
    out
}

fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), BubbleError> {
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(BubbleError::Atlas(format!("truncated PGM header at byte {pos}")));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(BubbleError::Atlas("atlas.pgm is not binary PGM (P5)".into()));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| BubbleError::Atlas(format!("bad PGM field {s:?}")));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(BubbleError::Atlas(format!("PGM maxval {maxval} unsupported")));
    }
    let start = pos + 1;
    if bytes.len() < start + w * h {
        return Err(BubbleError::Atlas(format!("PGM payload truncated at byte {}", bytes.len())));
    }
    Ok((w, h, bytes[start..start + w * h].to_vec()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DrawWarning {
    GlyphMissing { character_id: String, ch: char },
}

/// Tail base points on the ellipse at `θ ± half_angle`, where `θ` points
/// from the bubble center to the edge point.
pub fn tail_points(b: &BubblePlacement, half_angle: f64) -> [(f64, f64); 2] {
    let (cx, cy) = b.center();
    let (a, r) = (b.w_bubble as f64 / 2.0, b.h_bubble as f64 / 2.0);
    let theta = (b.edge_point.1 as f64 - cy).atan2(b.edge_point.0 as f64 - cx);
    let at = |t: f64| (cx + a * t.cos(), cy + r * t.sin());
    [at(theta - half_angle), at(theta + half_angle)]
}

/// Paints bubbles in order: white ellipse with a 2 px outline, white
/// tail triangle with black long sides, then the text centered line by
/// line. Missing glyphs become hollow boxes.
pub fn draw_bubbles(
    image: &mut RgbImage,
    bubbles: &[BubblePlacement],
    font: &dyn GlyphProvider,
    tail_half_angle: f64,
) -> Vec<DrawWarning> {
    let mut warnings = Vec::new();
    for b in bubbles {
        let (x0, y0, w, h) = (b.x_b as f64, b.y_b as f64, b.w_bubble as f64, b.h_bubble as f64);
        image.fill_ellipse(x0, y0, w, h, WHITE);
        image.stroke_ellipse(x0, y0, w, h, 2.0, BLACK);

        let [p1, p2] = tail_points(b, tail_half_angle);
        let tip = (b.edge_point.0 as f64 + 0.5, b.edge_point.1 as f64 + 0.5);
        image.fill_triangle([p1, p2, tip], WHITE);
        let ip = |p: (f64, f64)| (p.0.floor() as i64, p.1.floor() as i64);
        image.draw_line(ip(p1), b.edge_point, BLACK);
        image.draw_line(ip(p2), b.edge_point, BLACK);

        let adv = glyph_advance(b.font_size) as usize;
        let lh = line_height(b.font_size) as usize;
        let block_h = b.wrapped_text.len() * lh;
        let top = b.y_b + (b.h_bubble - block_h as i64) / 2;
        for (i, line) in b.wrapped_text.iter().enumerate() {
            let n = line.chars().count();
            let left = b.x_b + (b.w_bubble - (n * adv) as i64) / 2;
            let y = top + (i * lh) as i64;
            for (k, ch) in line.chars().enumerate() {
                let x = left + (k * adv) as i64;
                match font.glyph(ch, adv, lh) {
                    Some(mask) => image.blit_mask(x, y, adv, lh, &mask, BLACK),
                    None => {
                        image.blit_mask(x, y, adv, lh, &hollow_box(adv, lh), BLACK);
                        warnings.push(DrawWarning::GlyphMissing {
                            character_id: b.character_id.clone(),
                            ch,
                        });
                    }
                }
            }
        }
    }
    warnings
}

fn hollow_box(w: usize, h: usize) -> Vec<bool> {
    let mut m = vec![false; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if y == 1 || y + 2 == h || x == 1 || x + 2 == w {
                m[y * w + x] = true;
            }
        }
    }
    m
}
