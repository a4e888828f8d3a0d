//! Per-frame layouts: character boxes, foreground prompts and a background
//! prompt, proposed by an LLM and corrected against a caption rebuilt from
//! the layout.

mod caption;
mod correction;
mod propose;
mod similarity;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::narrative::BackendError;

pub use caption::reconstruct_caption;
pub use correction::{correct_layout_iteratively, ConvergenceTracker, CorrectionOutcome, StopReason};
pub use propose::{build_layout_prompt, propose_layout, LayoutProposal, PreviousAttempt};
pub use similarity::{reconstruction_error, ReconstructionError, MU_COS, MU_EDIT, MU_JAC};

pub const MAX_BOXES: usize = 4;

/// One character box in normalized canvas coordinates, origin top-left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharacterBox {
    pub character_id: String,
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl CharacterBox {
    pub fn new(id: impl Into<String>, x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        CharacterBox {
            character_id: id.into(),
            x0,
            y0,
            x1,
            y1,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    fn in_range(&self) -> bool {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        ok(self.x0) && ok(self.y0) && ok(self.x1) && ok(self.y1) && self.x0 < self.x1 && self.y0 < self.y1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLayout {
    pub boxes: Vec<CharacterBox>,
    pub fg_prompts: Vec<String>,
    pub bg_prompt: String,
}

/// How the minimum box area is derived in strict mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum MinAreaMode {
    /// 1/4 of the canvas for up to two boxes, 1/(4n) per box beyond that.
    #[default]
    Scaled,
    /// 1/4 of the canvas for every box.
    Literal,
    /// A fixed fraction of the canvas.
    Fixed(f64),
}

impl MinAreaMode {
    pub fn threshold(&self, box_count: usize) -> f64 {
        match *self {
            MinAreaMode::Scaled if box_count <= 2 => 0.25,
            MinAreaMode::Scaled => 1.0 / (4.0 * box_count as f64),
            MinAreaMode::Literal => 0.25,
            MinAreaMode::Fixed(f) => f,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutOptions {
    pub strict: bool,
    pub min_area: MinAreaMode,
    pub max_iters: usize,
}

impl Default for LayoutOptions {
    fn default() -> Self {
        LayoutOptions {
            strict: false,
            min_area: MinAreaMode::Scaled,
            max_iters: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum LayoutViolation {
    OutOfRange { index: usize },
    Clipped { index: usize, original: [f64; 4] },
    TooManyBoxes { count: usize },
    MinAreaViolation { index: usize, area: f64, threshold: f64 },
}

impl fmt::Display for LayoutViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutViolation::OutOfRange { index } => write!(f, "box {} out of range", index + 1),
            LayoutViolation::Clipped { index, original } => {
                write!(f, "box {} clipped from {:?}", index + 1, original)
            }
            LayoutViolation::TooManyBoxes { count } => {
                write!(f, "TooManyBoxes: {count} boxes, at most {MAX_BOXES} allowed")
            }
            LayoutViolation::MinAreaViolation { index, area, threshold } => write!(
                f,
                "MinAreaViolation: box {} area {area:.4} below {threshold:.4}",
                index + 1
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LayoutParseError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("no BOX lines")]
    NoBoxes,
    #[error("missing FG prompt for box {0}")]
    MissingForeground(usize),
    #[error("FG index {0} does not match a box")]
    ForegroundOutOfRange(usize),
    #[error("duplicate FG prompt for box {0}")]
    DuplicateForeground(usize),
    #[error("missing BG line")]
    MissingBackground,
    #[error("box {0} is empty after clipping")]
    DegenerateBox(usize),
    #[error("box references unknown character {0:?}")]
    UnknownCharacter(String),
    #[error("TooManyBoxes: {0} boxes, at most {MAX_BOXES} allowed")]
    TooManyBoxes(usize),
    #[error("MinAreaViolation: box {index} area {area:.4} below {threshold:.4}")]
    MinArea { index: usize, area: f64, threshold: f64 },
}

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("layout parse error: {0}")]
    Parse(#[from] LayoutParseError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("NoLayoutFound: all {iterations} iterations failed; last error: {last}")]
    NoLayoutFound { iterations: usize, last: LayoutParseError },
    #[error("frame description is empty")]
    EmptyDescription,
    #[error("max_iters must be at least 1")]
    ZeroIterations,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Reports out-of-range boxes, more than four boxes and, when `strict`,
/// boxes smaller than the configured minimum area. Empty means valid.
pub fn validate_layout(layout: &FrameLayout, opts: &LayoutOptions) -> Vec<LayoutViolation> {
    let mut v = Vec::new();
    for (index, b) in layout.boxes.iter().enumerate() {
        if !b.in_range() {
            v.push(LayoutViolation::OutOfRange { index });
        }
    }
    let n = layout.boxes.len();
    if n > MAX_BOXES {
        v.push(LayoutViolation::TooManyBoxes { count: n });
    }
    if opts.strict {
        let threshold = opts.min_area.threshold(n);
        for (index, b) in layout.boxes.iter().enumerate() {
            let area = b.area();
            if area < threshold {
                v.push(LayoutViolation::MinAreaViolation { index, area, threshold });
            }
        }
    }
    v
}

impl FrameLayout {
    /// `BOX`/`FG`/`BG` lines; floats use the shortest exact representation.
    pub fn to_wire(&self) -> String {
        let mut out = String::new();
        for b in &self.boxes {
            out.push_str(&format!("BOX {} {} {} {} {}\n", b.character_id, b.x0, b.y0, b.x1, b.y1));
        }
        for (i, p) in self.fg_prompts.iter().enumerate() {
            out.push_str(&format!("FG {} {}\n", i + 1, p));
        }
        out.push_str(&format!("BG {}\n", self.bg_prompt));
        out
    }

    /// Parses the wire format, ignoring lines that are not `BOX`, `FG` or
    /// `BG`. Coordinates are clipped to [0, 1]; each clip is reported.
    pub fn parse_wire(text: &str) -> Result<(FrameLayout, Vec<LayoutViolation>), LayoutParseError> {
        let mut boxes = Vec::new();
        let mut fg: Vec<(usize, String)> = Vec::new();
        let mut bg = None;
        let mut warnings = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let malformed = |reason: &str| LayoutParseError::MalformedLine {
                line: ln + 1,
                reason: reason.to_string(),
            };
            let (keyword, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let rest = rest.trim();
            match keyword {
                "BOX" => {
                    let parts: Vec<&str> = rest.split_whitespace().collect();
                    if parts.len() != 5 {
                        return Err(malformed("BOX needs an id and four coordinates"));
                    }
                    let mut c = [0f64; 4];
                    for (slot, p) in c.iter_mut().zip(&parts[1..]) {
                        *slot = p
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| malformed("coordinate is not a finite number"))?;
                    }
                    let index = boxes.len();
                    let clipped = c.map(|v| v.clamp(0.0, 1.0));
                    if clipped != c {
                        warnings.push(LayoutViolation::Clipped { index, original: c });
                    }
                    let b = CharacterBox::new(parts[0], clipped[0], clipped[1], clipped[2], clipped[3]);
                    if b.x0 >= b.x1 || b.y0 >= b.y1 {
                        return Err(LayoutParseError::DegenerateBox(index + 1));
                    }
                    boxes.push(b);
                }
                "FG" => {
                    let (idx, prompt) = rest
                        .split_once(char::is_whitespace)
                        .ok_or_else(|| malformed("FG needs an index and a prompt"))?;
                    let idx: usize = idx.parse().map_err(|_| malformed("FG index is not an integer"))?;
                    let prompt = prompt.trim();
                    if prompt.is_empty() {
                        return Err(malformed("empty FG prompt"));
                    }
                    fg.push((idx, prompt.to_string()));
                }
                "BG" => {
                    if rest.is_empty() {
                        return Err(malformed("empty BG prompt"));
                    }
                    bg = Some(rest.to_string());
                }
                _ => {}
            }
        }
        if boxes.is_empty() {
            return Err(LayoutParseError::NoBoxes);
        }
        let mut fg_prompts: Vec<Option<String>> = vec![None; boxes.len()];
        for (idx, prompt) in fg {
            let slot = idx
                .checked_sub(1)
                .and_then(|i| fg_prompts.get_mut(i))
                .ok_or(LayoutParseError::ForegroundOutOfRange(idx))?;
            if slot.replace(prompt).is_some() {
                return Err(LayoutParseError::DuplicateForeground(idx));
            }
        }
        let fg_prompts = fg_prompts
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or(LayoutParseError::MissingForeground(i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let bg_prompt = bg.ok_or(LayoutParseError::MissingBackground)?;
        Ok((
            FrameLayout {
                boxes,
                fg_prompts,
                bg_prompt,
            },
            warnings,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<(), LayoutError> {
        std::fs::write(path, self.to_wire()).map_err(|source| LayoutError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<FrameLayout, LayoutError> {
        let text = std::fs::read_to_string(path).map_err(|source| LayoutError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse_wire(&text)?.0)
    }
}
