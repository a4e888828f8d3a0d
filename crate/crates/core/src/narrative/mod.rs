//! Story expansion: turns a short story into per-frame descriptions and
//! dialogues by prompting an LLM backend with solved demonstrations and
//! keeping the best-scoring of several candidates.

mod backend;
mod candidate;
mod demos;
mod expand;
mod wire;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    prompt_sha256, BackendError, LlmBackend, MockBackend, RecordingBackend, ScriptedBackend,
};
pub use candidate::{parse_candidate, score_candidate, Candidate, CandidateParseError, ScoreBreakdown};
pub use demos::{Demonstration, DemonstrationSet};
pub use expand::{build_icl_prompt, expand_story, Expansion};
pub use wire::{WireBackend, WireConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterSpec {
    pub id: String,
    pub name: String,
    pub physical_description: String,
    #[serde(default)]
    pub personality: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueLine {
    pub character_id: String,
    pub utterance: String,
}

/// A story, its cast and, once expanded, the per-frame text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoryBundle {
    #[serde(rename = "story")]
    pub story_text: String,
    #[serde(rename = "frames")]
    pub frame_count: usize,
    pub characters: Vec<CharacterSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frame_descriptions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dialogues: Vec<Vec<DialogueLine>>,
}

#[derive(Debug, Error)]
pub enum NarrativeError {
    #[error("at least one demonstration is required to build a prompt")]
    EmptyDemonstrations,
    #[error("no valid candidate among {tried} completions")]
    NoValidCandidate { tried: usize },
    #[error("k_candidates must be at least 1")]
    ZeroCandidates,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid story: {0}")]
    InvalidStory(String),
    #[error("demonstration fixture error: {0}")]
    Demonstrations(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl StoryBundle {
    /// A bundle with no frames expanded yet.
    pub fn skeleton(story_text: impl Into<String>, frame_count: usize, characters: Vec<CharacterSpec>) -> Self {
        StoryBundle {
            story_text: story_text.into(),
            frame_count,
            characters,
            frame_descriptions: Vec::new(),
            dialogues: Vec::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, NarrativeError> {
        let bundle: StoryBundle =
            serde_json::from_str(text).map_err(|e| NarrativeError::InvalidStory(e.to_string()))?;
        bundle.validate_skeleton()?;
        if bundle.is_expanded() {
            bundle.validate_expanded()?;
        }
        Ok(bundle)
    }

    pub fn load(path: &Path) -> Result<Self, NarrativeError> {
        let text = std::fs::read_to_string(path).map_err(|source| NarrativeError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("story bundle serializes")
    }

    pub fn is_expanded(&self) -> bool {
        !self.frame_descriptions.is_empty()
    }

    pub fn character(&self, id: &str) -> Option<&CharacterSpec> {
        self.characters.iter().find(|c| c.id == id)
    }

    pub fn validate_skeleton(&self) -> Result<(), NarrativeError> {
        let bad = |msg: String| Err(NarrativeError::InvalidStory(msg));
        if self.story_text.trim().is_empty() {
            return bad("story text is empty".into());
        }
        if self.frame_count == 0 {
            return bad("frame count must be positive".into());
        }
        let mut seen = HashSet::new();
        for c in &self.characters {
            if c.id.trim().is_empty() || c.id.chars().any(char::is_whitespace) {
                return bad(format!("character id {:?} must be a single non-empty token", c.id));
            }
            if !seen.insert(c.id.as_str()) {
                return bad(format!("duplicate character id {:?}", c.id));
            }
            if c.name.trim().is_empty() || c.physical_description.trim().is_empty() {
                return bad(format!("character {:?} needs a name and a physical description", c.id));
            }
        }
        Ok(())
    }

    pub fn validate_expanded(&self) -> Result<(), NarrativeError> {
        if self.frame_descriptions.len() != self.frame_count {
            return Err(NarrativeError::InvalidStory(format!(
                "{} frame descriptions for {} frames",
                self.frame_descriptions.len(),
                self.frame_count
            )));
        }
        if self.dialogues.len() != self.frame_count {
            return Err(NarrativeError::InvalidStory(format!(
                "{} dialogue lists for {} frames",
                self.dialogues.len(),
                self.frame_count
            )));
        }
        for (k, lines) in self.dialogues.iter().enumerate() {
            for line in lines {
                if self.character(&line.character_id).is_none() {
                    return Err(NarrativeError::InvalidStory(format!(
                        "frame {} dialogue references unknown character {:?}",
                        k + 1,
                        line.character_id
                    )));
                }
            }
        }
        Ok(())
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn story_json_round_trip_uses_short_keys() {
        let b = StoryBundle::skeleton("A trip.", 2, testutil::cast());
        let json = b.to_json();
        assert!(json.contains("\"story\""));
        assert!(json.contains("\"frames\""));
        assert!(!json.contains("frame_descriptions"));
        assert_eq!(StoryBundle::from_json(&json).unwrap(), b);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut cast = testutil::cast();
        cast[1].id = "mira".into();
        let b = StoryBundle::skeleton("x", 1, cast);
        assert!(matches!(b.validate_skeleton(), Err(NarrativeError::InvalidStory(_))));
    }

    #[test]
    fn expanded_bundle_checks_dialogue_ids() {
        let mut b = StoryBundle::skeleton("x", 1, testutil::cast());
        b.frame_descriptions = vec!["Mira waves.".into()];
        b.dialogues = vec![vec![DialogueLine {
            character_id: "ghost".into(),
            utterance: "boo".into(),
        }]];
        assert!(b.validate_expanded().is_err());
        b.dialogues[0][0].character_id = "mira".into();
        assert!(b.validate_expanded().is_ok());
    }
}
