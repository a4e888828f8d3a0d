//! A small RGB canvas with the few primitives the renderer needs, plus
//! binary PPM (P6) input/output and optional PNG output.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("PPM format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[cfg(feature = "png")]
    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        RgbImage { width, height, data }
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    /// Writes the pixel if `(x, y)` is on the canvas.
    pub fn put_signed(&mut self, x: i64, y: i64, c: Rgb) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.put(x as usize, y as usize, c);
        }
    }

    /// Nearest-neighbor enlargement by an integer factor.
    pub fn upscale(&self, k: usize) -> RgbImage {
        let mut out = RgbImage::new(self.width * k, self.height * k, BLACK);
        for y in 0..out.height {
            for x in 0..out.width {
                out.put(x, y, self.get(x / k, y / k));
            }
        }
        out
    }

    /// Fills every pixel whose center is inside the axis-aligned ellipse
    /// inscribed in the rectangle `[x0, x0+w) × [y0, y0+h)`.
    pub fn fill_ellipse(&mut self, x0: f64, y0: f64, w: f64, h: f64, c: Rgb) {
        let (cx, cy, a, b) = (x0 + w / 2.0, y0 + h / 2.0, w / 2.0, h / 2.0);
        if a <= 0.0 || b <= 0.0 {
            return;
        }
        let ylo = (cy - b).floor().max(0.0) as i64;
        let yhi = ((cy + b).ceil() as i64).min(self.height as i64);
        for y in ylo..yhi {
            let dy = (y as f64 + 0.5 - cy) / b;
            let span = 1.0 - dy * dy;
            if span < 0.0 {
                continue;
            }
            let half = a * span.sqrt();
            let xlo = (cx - half - 0.5).ceil() as i64;
            let xhi = (cx + half - 0.5).floor() as i64;
            for x in xlo..=xhi {
                self.put_signed(x, y, c);
            }
        }
    }

    /// A ring of width `thickness` just inside the inscribed ellipse.
    pub fn stroke_ellipse(&mut self, x0: f64, y0: f64, w: f64, h: f64, thickness: f64, c: Rgb) {
        let (cx, cy, a, b) = (x0 + w / 2.0, y0 + h / 2.0, w / 2.0, h / 2.0);
        let (ai, bi) = (a - thickness, b - thickness);
        let ylo = (cy - b).floor().max(0.0) as i64;
        let yhi = ((cy + b).ceil() as i64).min(self.height as i64);
        let xlo = (cx - a).floor().max(0.0) as i64;
        let xhi = ((cx + a).ceil() as i64).min(self.width as i64);
        for y in ylo..yhi {
            for x in xlo..xhi {
                let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let outer = (px / a).powi(2) + (py / b).powi(2) <= 1.0;
                let inner = ai > 0.0 && bi > 0.0 && (px / ai).powi(2) + (py / bi).powi(2) <= 1.0;
                if outer && !inner {
                    self.put(x as usize, y as usize, c);
                }
            }
        }
    }

    /// Fills pixels whose centers are inside or on the triangle.
    /// Degenerate (zero-area) triangles paint nothing.
    pub fn fill_triangle(&mut self, p: [(f64, f64); 3], c: Rgb) {
        let area = edge(p[0], p[1], p[2]);
        if area == 0.0 {
            return;
        }
        let ylo = p.iter().map(|q| q.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as i64;
        let yhi = (p.iter().map(|q| q.1).fold(f64::NEG_INFINITY, f64::max).ceil() as i64).min(self.height as i64 - 1);
        let xlo = p.iter().map(|q| q.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as i64;
        let xhi = (p.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max).ceil() as i64).min(self.width as i64 - 1);
        for y in ylo..=yhi {
            for x in xlo..=xhi {
                let q = (x as f64 + 0.5, y as f64 + 0.5);
                let w0 = edge(p[1], p[2], q);
                let w1 = edge(p[2], p[0], q);
                let w2 = edge(p[0], p[1], q);
                let inside = if area > 0.0 {
                    w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0
                } else {
                    w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0
                };
                if inside {
                    self.put(x as usize, y as usize, c);
                }
            }
        }
    }

    /// Bresenham line between integer endpoints, both included.
    pub fn draw_line(&mut self, from: (i64, i64), to: (i64, i64), c: Rgb) {
        let (mut x, mut y) = from;
        let dx = (to.0 - x).abs();
        let dy = -(to.1 - y).abs();
        let sx = if x < to.0 { 1 } else { -1 };
        let sy = if y < to.1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.put_signed(x, y, c);
            if (x, y) == to {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Paints `c` wherever `mask` (row-major, `w × h`) is set, offset by
    /// `(x0, y0)` and clipped to the canvas.
    pub fn blit_mask(&mut self, x0: i64, y0: i64, w: usize, h: usize, mask: &[bool], c: Rgb) {
        for r in 0..h {
            for col in 0..w {
                if mask[r * w + col] {
                    self.put_signed(x0 + col as i64, y0 + r as i64, c);
                }
            }
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// Reads binary PPM with maxval 255; `#` comments in the header are skipped.
    pub fn from_ppm(bytes: &[u8]) -> Result<RgbImage, RasterError> {
        let mut pos = 0;
        let magic = header_token(bytes, &mut pos)?;
        if magic.1 != "P6" {
            return Err(format_err(magic.0, "expected P6 magic"));
        }
        let mut num = |what: &str| -> Result<usize, RasterError> {
            let (at, tok) = header_token(bytes, &mut pos)?;
            tok.parse().map_err(|_| format_err(at, format!("bad {what} {tok:?}")))
        };
        let width = num("width")?;
        let height = num("height")?;
        let maxval = num("maxval")?;
        if maxval != 255 {
            return Err(format_err(pos, format!("unsupported maxval {maxval}")));
        }
        // exactly one whitespace byte separates the header from the raster
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(format_err(pos, "missing whitespace after header"));
        }
        pos += 1;
        let need = width * height * 3;
        let data = &bytes[pos..];
        if data.len() < need {
            return Err(format_err(pos + data.len() / 3 * 3, "truncated pixel data"));
        }
        if data.len() > need {
            return Err(format_err(pos + need, "trailing bytes after pixel data"));
        }
        Ok(RgbImage {
            width,
            height,
            data: data.to_vec(),
        })
    }

    pub fn save_ppm(&self, path: &Path) -> Result<(), RasterError> {
        std::fs::write(path, self.to_ppm()).map_err(|e| io_err(path, e))
    }

    pub fn load_ppm(path: &Path) -> Result<RgbImage, RasterError> {
        Self::from_ppm(&std::fs::read(path).map_err(|e| io_err(path, e))?)
    }

    /// Blends `c` over pixels where `mask` (row-major, canvas-sized) is
    /// at least 0.5: `out = round((1 - alpha) * old + alpha * c)`.
    pub fn overlay_mask(&mut self, mask: &[f64], c: Rgb, alpha: f64) {
        assert_eq!(mask.len(), self.width * self.height, "mask must match the canvas");
        for (i, &m) in mask.iter().enumerate() {
            if m >= 0.5 {
                for k in 0..3 {
                    let old = self.data[i * 3 + k] as f64;
                    self.data[i * 3 + k] = ((1.0 - alpha) * old + alpha * c[k] as f64).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }

    #[cfg(feature = "png")]
    pub fn to_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.data)?;
        writer.finish()?;
        Ok(out)
    }

    #[cfg(feature = "png")]
    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        std::fs::write(path, self.to_png()?).map_err(|e| io_err(path, e))
    }
}

fn edge(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn format_err(offset: usize, reason: impl Into<String>) -> RasterError {
    RasterError::Format {
        offset,
        reason: reason.into(),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> RasterError {
    RasterError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<(usize, &'a str), RasterError> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err(start, "unexpected end of header"));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map(|s| (start, s))
        .map_err(|_| format_err(start, "non-ASCII header"))
}

/// Writes a PPM to any sink; used by tests and the CLI's stdout mode.
pub fn write_ppm(img: &RgbImage, mut w: impl Write) -> std::io::Result<()> {
    w.write_all(&img.to_ppm())
}
