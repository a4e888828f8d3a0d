//! Speech bubbles: head localization on score maps, placement beside the
//! head, pairwise conflict fixing, and drawing with a bitmap font.

mod draw;
mod heatmap;
mod locate;
mod place;
mod typeset;

use thiserror::Error;

use crate::hmap::HmapError;

pub use draw::{draw_bubbles, tail_points, BuiltinFont, DrawWarning, FontChain, GlyphAtlas, GlyphProvider};
pub use heatmap::Heatmap;
pub use locate::{get_location, HeadLocation, SUPPRESSION_RADIUS, SUPPRESSION_WINDOW};
pub use place::{
    find_edge_point, has_conflict, place_bubble, resolve_conflicts, BubbleParams, BubblePlacement, Resolution,
};
pub use typeset::{glyph_advance, line_height, measure_text, wrap_text};

#[derive(Debug, Error)]
pub enum BubbleError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("non-finite heatmap value at index {index}")]
    NonFinite { index: usize },
    #[error("dialogue is empty")]
    EmptyText,
    #[error("bubble for {character_id:?} is {}x{} but the frame is {}x{}", bubble.0, bubble.1, frame.0, frame.1)]
    BubbleLargerThanFrame {
        character_id: String,
        bubble: (i64, i64),
        frame: (i64, i64),
    },
    #[error("glyph atlas: {0}")]
    Atlas(String),
    #[error(transparent)]
    Hmap(#[from] HmapError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
