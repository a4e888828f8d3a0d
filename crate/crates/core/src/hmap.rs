//! HMAP1 float-grid files.
//!
//! Layout: an ASCII header line `HMAP1 <H> <W> <C>\n` followed by `H*W*C`
//! little-endian IEEE-754 `f32` values, row-major, channel-minor.

use std::fs;
use std::path::Path;

use thiserror::Error;

const MAGIC: &str = "HMAP1";

#[derive(Debug, Error)]
pub enum HmapError {
    #[error("HMAP1 format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HmapError {
    fn format(offset: usize, reason: impl Into<String>) -> Self {
        HmapError::Format {
            offset,
            reason: reason.into(),
        }
    }

    pub fn offset(&self) -> Option<usize> {
        match self {
            HmapError::Format { offset, .. } => Some(*offset),
            HmapError::Io { .. } => None,
        }
    }
}

/// A raw HMAP1 payload.
#[derive(Debug, Clone, PartialEq)]
pub struct Hmap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Hmap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * channels, "hmap payload size");
        Hmap {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = format!("{MAGIC} {} {} {}\n", self.height, self.width, self.channels);
        let mut out = Vec::with_capacity(header.len() + self.data.len() * 4);
        out.extend_from_slice(header.as_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HmapError> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| HmapError::format(bytes.len(), "missing header newline"))?;
        let header = std::str::from_utf8(&bytes[..newline])
            .map_err(|e| HmapError::format(e.valid_up_to(), "header is not ASCII"))?;

        let mut fields = Vec::new();
        let mut pos = 0;
        for part in header.split(' ') {
            fields.push((pos, part));
            pos += part.len() + 1;
        }
        if fields.len() != 4 {
            return Err(HmapError::format(0, format!("expected 4 header fields, got {}", fields.len())));
        }
        if fields[0].1 != MAGIC {
            return Err(HmapError::format(0, "bad magic"));
        }
        let mut dims = [0usize; 3];
        for (slot, (off, text)) in dims.iter_mut().zip(&fields[1..]) {
            *slot = text
                .parse::<usize>()
                .map_err(|_| HmapError::format(*off, format!("invalid dimension {text:?}")))?;
        }
        let [height, width, channels] = dims;
        if height == 0 || width == 0 || channels == 0 {
            return Err(HmapError::format(fields[1].0, "dimensions must be positive"));
        }

        let start = newline + 1;
        let count = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| HmapError::format(fields[1].0, "dimensions overflow"))?;
        let expected_end = start + count * 4;
        let payload = &bytes[start..];
        if payload.len() < count * 4 {
            // Report where the first missing float should have started.
            let whole = payload.len() / 4;
            return Err(HmapError::format(
                start + whole * 4,
                format!("truncated payload: {} of {} floats", whole, count),
            ));
        }
        if payload.len() > count * 4 {
            return Err(HmapError::format(expected_end, "trailing bytes after payload"));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Hmap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), HmapError> {
        fs::write(path, self.to_bytes()).map_err(|source| HmapError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, HmapError> {
        let bytes = fs::read(path).map_err(|source| HmapError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}
