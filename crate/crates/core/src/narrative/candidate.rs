//! Candidate expansions: the `=== FRAME k ===` wire format and the
//! deterministic score used to pick among candidates.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use super::{CharacterSpec, DialogueLine, StoryBundle};
use crate::text;

/// One parsed completion: a description and dialogue list per frame.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Candidate {
    pub frame_descriptions: Vec<String>,
    pub dialogues: Vec<Vec<DialogueLine>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CandidateParseError {
    #[error("no `=== FRAME k ===` headers found")]
    NoFrames,
    #[error("frame header {found} out of sequence (expected {expected})")]
    OutOfSequence { expected: usize, found: usize },
    #[error("frame {0} has no description")]
    EmptyDescription(usize),
}

fn frame_header() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*===\s*FRAME\s+(\d+)\s*===\s*$").unwrap())
}

fn dialogue_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*([A-Za-z0-9_\-]+)\s*:\s*(.*\S)\s*$").unwrap())
}

/// Parses a completion. Lines of the form `ID: text` whose `ID` is one of
/// `character_ids` are dialogue; other non-blank lines form the frame
/// description. Text before the first header is ignored.
pub fn parse_candidate(text: &str, character_ids: &[&str]) -> Result<Candidate, CandidateParseError> {
    let mut cand = Candidate::default();
    let mut current: Option<(Vec<String>, Vec<DialogueLine>)> = None;

    let close = |cand: &mut Candidate, frame: Option<(Vec<String>, Vec<DialogueLine>)>| {
        if let Some((desc, dia)) = frame {
            let n = cand.frame_descriptions.len() + 1;
            if desc.is_empty() {
                return Err(CandidateParseError::EmptyDescription(n));
            }
            cand.frame_descriptions.push(desc.join(" "));
            cand.dialogues.push(dia);
        }
        Ok(())
    };

    for line in text.lines() {
        if let Some(caps) = frame_header().captures(line) {
            close(&mut cand, current.take())?;
            let expected = cand.frame_descriptions.len() + 1;
            let found: usize = caps[1].parse().unwrap_or(0);
            if found != expected {
                return Err(CandidateParseError::OutOfSequence { expected, found });
            }
            current = Some((Vec::new(), Vec::new()));
            continue;
        }
        let Some((desc, dia)) = current.as_mut() else {
            continue;
        };
        if line.trim().is_empty() {
            continue;
        }
        match dialogue_line().captures(line) {
            Some(caps) if character_ids.contains(&&caps[1]) => dia.push(DialogueLine {
                character_id: caps[1].to_string(),
                utterance: caps[2].to_string(),
            }),
            _ => desc.push(line.trim().to_string()),
        }
    }
    close(&mut cand, current.take())?;
    if cand.frame_descriptions.is_empty() {
        return Err(CandidateParseError::NoFrames);
    }
    Ok(cand)
}

impl Candidate {
    /// Renders back to the wire format.
    pub fn to_wire(&self) -> String {
        let mut out = String::new();
        for (k, (desc, lines)) in self.frame_descriptions.iter().zip(&self.dialogues).enumerate() {
            out.push_str(&format!("=== FRAME {} ===\n{}\n", k + 1, desc));
            for l in lines {
                out.push_str(&format!("{}: {}\n", l.character_id, l.utterance));
            }
        }
        out
    }
}

/// The four weighted terms of a candidate score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBreakdown {
    pub characters_mentioned: f64,
    pub frame_count_match: f64,
    pub frames_with_dialogue: f64,
    pub story_overlap: f64,
}

impl ScoreBreakdown {
    pub fn total(&self) -> f64 {
        let s = 0.4 * self.characters_mentioned
            + 0.3 * self.frame_count_match
            + 0.2 * self.frames_with_dialogue
            + 0.1 * self.story_overlap;
        s.clamp(0.0, 1.0)
    }
}

fn mentions(desc_words: &[String], c: &CharacterSpec) -> bool {
    let id = c.id.to_lowercase();
    if desc_words.iter().any(|w| *w == id) {
        return true;
    }
    let name = text::words(&c.name);
    !name.is_empty() && desc_words.windows(name.len()).any(|w| w == name.as_slice())
}

pub fn score_breakdown(candidate: &Candidate, story: &StoryBundle) -> ScoreBreakdown {
    let joined = candidate.frame_descriptions.join(" ");
    let desc_words = text::words(&joined);

    let characters_mentioned = if story.characters.is_empty() {
        0.0
    } else {
        let hit = story.characters.iter().filter(|c| mentions(&desc_words, c)).count();
        hit as f64 / story.characters.len() as f64
    };
    let n = candidate.frame_descriptions.len();
    let frame_count_match = if n == story.frame_count { 1.0 } else { 0.0 };
    let frames_with_dialogue = if n == 0 {
        0.0
    } else {
        candidate.dialogues.iter().take(n).filter(|d| !d.is_empty()).count() as f64 / n as f64
    };
    let story_overlap = text::jaccard(&text::word_set(&story.story_text), &text::word_set(&joined));
    ScoreBreakdown {
        characters_mentioned,
        frame_count_match,
        frames_with_dialogue,
        story_overlap,
    }
}

/// Composite score in [0, 1]:
/// `0.4·mentioned + 0.3·frame_match + 0.2·dialogue_cover + 0.1·jaccard`.
pub fn score_candidate(candidate: &Candidate, story: &StoryBundle) -> f64 {
    score_breakdown(candidate, story).total()
}
