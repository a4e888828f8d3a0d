//! Solved demonstrations for in-context prompting.
//!
//! Each record is a block:
//!
//! ```text
//! ### DEMONSTRATION
//! SUMMARY: <one-line story summary>
//! CHARACTER <id> | <name> | <physical description> | <personality>
//! FRAMES: <n>
//! === FRAME 1 ===
//! <description>
//! <id>: <utterance>
//! ```
//!
//! A block ends at the next line starting with `### `. The same rendering is
//! embedded in prompts, so prompts parse back into their demonstrations.

use std::path::Path;

use super::candidate::{parse_candidate, Candidate};
use super::{CharacterSpec, DialogueLine, NarrativeError};

pub const DEMO_HEADER: &str = "### DEMONSTRATION";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demonstration {
    pub summary: String,
    pub characters: Vec<CharacterSpec>,
    pub frame_descriptions: Vec<String>,
    pub dialogues: Vec<Vec<DialogueLine>>,
}

/// An immutable set of demonstrations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemonstrationSet {
    records: Vec<Demonstration>,
}

fn clean_field(s: &str) -> String {
    s.replace('|', "/").replace('\n', " ")
}

pub(crate) fn render_character(c: &CharacterSpec) -> String {
    format!(
        "CHARACTER {} | {} | {} | {}",
        c.id,
        clean_field(&c.name),
        clean_field(&c.physical_description),
        clean_field(&c.personality)
    )
}

fn parse_character(rest: &str) -> Option<CharacterSpec> {
    let parts: Vec<&str> = rest.split('|').map(str::trim).collect();
    if parts.len() != 4 || parts[0].is_empty() {
        return None;
    }
    Some(CharacterSpec {
        id: parts[0].to_string(),
        name: parts[1].to_string(),
        physical_description: parts[2].to_string(),
        personality: parts[3].to_string(),
    })
}

impl Demonstration {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(DEMO_HEADER);
        out.push('\n');
        out.push_str(&format!("SUMMARY: {}\n", clean_field(&self.summary)));
        for c in &self.characters {
            out.push_str(&render_character(c));
            out.push('\n');
        }
        out.push_str(&format!("FRAMES: {}\n", self.frame_descriptions.len()));
        let cand = Candidate {
            frame_descriptions: self.frame_descriptions.clone(),
            dialogues: self.dialogues.clone(),
        };
        out.push_str(&cand.to_wire());
        out
    }

    fn parse_block(lines: &[&str], index: usize) -> Result<Self, NarrativeError> {
        let err = |m: String| NarrativeError::Demonstrations(format!("record {}: {m}", index + 1));
        let mut summary = None;
        let mut characters = Vec::new();
        let mut declared_frames = None;
        let mut body_start = lines.len();
        for (i, line) in lines.iter().enumerate() {
            let t = line.trim();
            if let Some(s) = t.strip_prefix("SUMMARY:") {
                summary = Some(s.trim().to_string());
            } else if let Some(c) = t.strip_prefix("CHARACTER ") {
                characters.push(parse_character(c).ok_or_else(|| err(format!("bad character line {t:?}")))?);
            } else if let Some(n) = t.strip_prefix("FRAMES:") {
                declared_frames = Some(n.trim().parse::<usize>().map_err(|_| err("bad FRAMES line".into()))?);
            } else if t.starts_with("===") {
                body_start = i;
                break;
            }
        }
        let summary = summary.ok_or_else(|| err("missing SUMMARY".into()))?;
        let ids: Vec<&str> = characters.iter().map(|c| c.id.as_str()).collect();
        let body = lines[body_start..].join("\n");
        let cand = parse_candidate(&body, &ids).map_err(|e| err(e.to_string()))?;
        if let Some(n) = declared_frames {
            if n != cand.frame_descriptions.len() {
                return Err(err(format!("FRAMES says {n}, found {}", cand.frame_descriptions.len())));
            }
        }
        Ok(Demonstration {
            summary,
            characters,
            frame_descriptions: cand.frame_descriptions,
            dialogues: cand.dialogues,
        })
    }
}

impl DemonstrationSet {
    pub fn new(records: Vec<Demonstration>) -> Self {
        DemonstrationSet { records }
    }

    pub fn records(&self) -> &[Demonstration] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Extracts every `### DEMONSTRATION` block from `text`; anything
    /// outside such blocks is ignored.
    pub fn parse(text: &str) -> Result<Self, NarrativeError> {
        let lines: Vec<&str> = text.lines().collect();
        let mut records = Vec::new();
        let mut i = 0;
        while i < lines.len() {
            if lines[i].trim_end() == DEMO_HEADER {
                let start = i + 1;
                let mut end = start;
                while end < lines.len() && !lines[end].starts_with("### ") {
                    end += 1;
                }
                records.push(Demonstration::parse_block(&lines[start..end], records.len())?);
                i = end;
            } else {
                i += 1;
            }
        }
        Ok(DemonstrationSet { records })
    }

    pub fn load(path: &Path) -> Result<Self, NarrativeError> {
        let text = std::fs::read_to_string(path).map_err(|source| NarrativeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// The five demonstrations shipped with the crate.
    pub fn builtin() -> Self {
        Self::parse(include_str!("../../fixtures/demonstrations.txt")).expect("shipped demonstrations parse")
    }

    pub fn render(&self) -> String {
        self.records.iter().map(Demonstration::render).collect::<Vec<_>>().join("\n")
    }
}
