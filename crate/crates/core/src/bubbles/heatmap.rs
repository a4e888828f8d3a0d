use std::path::Path;

use crate::hmap::{Hmap, HmapError};

use super::BubbleError;

/// A single-channel score map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self, BubbleError> {
        if width == 0 || height == 0 {
            return Err(BubbleError::DimMismatch(format!("empty heatmap {width}x{height}")));
        }
        if values.len() != width * height {
            return Err(BubbleError::DimMismatch(format!(
                "{} values for a {width}x{height} heatmap",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(BubbleError::NonFinite { index: i });
        }
        Ok(Heatmap { width, height, values })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Heatmap {
            width,
            height,
            values: vec![v; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, x: usize, y: usize) -> &mut f64 {
        &mut self.values[y * self.width + x]
    }

    /// Row-major first maximum, as `(x, y)`.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }

    /// `(v - min) / (max - min)`; a constant map becomes all zeros.
    pub fn min_max_normalized(&self) -> Heatmap {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let values = if span > 0.0 {
            self.values.iter().map(|v| (v - lo) / span).collect()
        } else {
            vec![0.0; self.values.len()]
        };
        Heatmap { values, ..*self }
    }

    /// Bilinear resampling with half-pixel centers: output pixel `i` reads
    /// source coordinate `max(0, (i + 0.5) * in / out - 0.5)`, and the two
    /// neighbours are blended as `(1-fy)*((1-fx)*a + fx*b) + fy*((1-fx)*c + fx*d)`.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Heatmap {
        let xs: Vec<_> = (0..width).map(|i| source_coord(i, self.width, width)).collect();
        let ys: Vec<_> = (0..height).map(|i| source_coord(i, self.height, height)).collect();
        let mut values = Vec::with_capacity(width * height);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let a = self.at(x0, y0);
                let b = self.at(x1, y0);
                let c = self.at(x0, y1);
                let d = self.at(x1, y1);
                values.push((1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * c + fx * d));
            }
        }
        Heatmap { width, height, values }
    }

    /// Values are stored as `f32`; maps loaded from disk round-trip exactly.
    pub fn to_hmap(&self) -> Hmap {
        Hmap::new(self.height, self.width, 1, self.values.iter().map(|&v| v as f32).collect())
    }

    /// Takes channel `channel` of a multi-channel file.
    pub fn from_hmap(h: &Hmap, channel: usize) -> Result<Self, BubbleError> {
        if channel >= h.channels {
            return Err(BubbleError::DimMismatch(format!(
                "channel {channel} requested from a {}-channel map",
                h.channels
            )));
        }
        let values = h.data.iter().skip(channel).step_by(h.channels).map(|&v| v as f64).collect();
        Heatmap::new(h.width, h.height, values)
    }

    /// All channels of a file as location maps, the head query last. A
    /// single channel serves as both the prompt map and the head map.
    pub fn stack_from_hmap(h: &Hmap) -> Result<Vec<Self>, BubbleError> {
        let mut maps = (0..h.channels).map(|c| Heatmap::from_hmap(h, c)).collect::<Result<Vec<_>, _>>()?;
        if maps.len() == 1 {
            maps.push(maps[0].clone());
        }
        Ok(maps)
    }

    pub fn load(path: &Path) -> Result<Self, BubbleError> {
        let h = Hmap::load(path)?;
        if h.channels != 1 {
            return Err(HmapError::Format {
                offset: 0,
                reason: format!("heatmaps have one channel, file has {}", h.channels),
            }
            .into());
        }
        Heatmap::from_hmap(&h, 0)
    }

    pub fn save(&self, path: &Path) -> Result<(), BubbleError> {
        Ok(self.to_hmap().save(path)?)
    }
}

fn source_coord(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(n_in - 1);
    let i1 = (i0 + 1).min(n_in - 1);
    (i0, i1, s - i0 as f64)
}
