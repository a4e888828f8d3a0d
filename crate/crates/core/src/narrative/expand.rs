use rayon::prelude::*;

use super::candidate::{parse_candidate, score_candidate, Candidate};
use super::demos::{render_character, DemonstrationSet};
use super::{LlmBackend, NarrativeError, StoryBundle};

const PREAMBLE: &str = "You expand short stories into comic frames.\n\
Each solved example below gives a story summary, its characters, and the frame-by-frame \
descriptions with dialogue. Solve the target the same way.\n";

/// Builds the in-context prompt: demonstrations, then the target story, then
/// the output-format instruction.
pub fn build_icl_prompt(demos: &DemonstrationSet, story: &StoryBundle) -> Result<String, NarrativeError> {
    if demos.is_empty() {
        return Err(NarrativeError::EmptyDemonstrations);
    }
    let mut p = String::from(PREAMBLE);
    p.push('\n');
    for d in demos.records() {
        p.push_str(&d.render());
        p.push('\n');
    }
    p.push_str("### TARGET\n");
    p.push_str(&format!("SUMMARY: {}\n", story.story_text.replace('\n', " ")));
    for c in &story.characters {
        p.push_str(&render_character(c));
        p.push('\n');
    }
    p.push_str(&format!("FRAMES: {}\n\n", story.frame_count));
    p.push_str("### OUTPUT FORMAT\n");
    p.push_str(&format!(
        "Write exactly {n} frames. Start frame k with the line `=== FRAME k ===` for k = 1..{n}. \
After each header write one line describing the scene that names the characters present, \
then zero or more dialogue lines of the form `CHARACTER_ID: utterance` using only these ids: {ids}.\n",
        n = story.frame_count,
        ids = story.characters.iter().map(|c| c.id.as_str()).collect::<Vec<_>>().join(", "),
    ));
    Ok(p)
}

/// Result of a story expansion.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub bundle: StoryBundle,
    /// Index of the chosen candidate.
    pub chosen: usize,
    /// Score per candidate; `None` for discarded candidates.
    pub scores: Vec<Option<f64>>,
}

/// Requests `k_candidates` completions, keeps those that parse into a
/// bundle with the requested frame count, and returns the highest-scoring
/// one (lowest index on ties). Candidate `j` is sampled with seed
/// `seed + j`.
pub fn expand_story(
    story: &StoryBundle,
    demos: &DemonstrationSet,
    backend: &dyn LlmBackend,
    k_candidates: usize,
    seed: u64,
) -> Result<Expansion, NarrativeError> {
    if k_candidates == 0 {
        return Err(NarrativeError::ZeroCandidates);
    }
    story.validate_skeleton()?;
    let prompt = build_icl_prompt(demos, story)?;

    // Completion order is irrelevant: results are collected by index.
    let completions: Vec<_> = (0..k_candidates)
        .into_par_iter()
        .map(|j| backend.complete(&prompt, seed.wrapping_add(j as u64)))
        .collect();

    let ids: Vec<&str> = story.characters.iter().map(|c| c.id.as_str()).collect();
    let mut parsed: Vec<Option<Candidate>> = Vec::with_capacity(k_candidates);
    for (j, c) in completions.into_iter().enumerate() {
        let text = c?;
        match parse_candidate(&text, &ids) {
            Ok(cand) if cand.frame_descriptions.len() == story.frame_count => parsed.push(Some(cand)),
            Ok(cand) => {
                log::warn!(
                    "candidate {j}: {} frames, expected {}; discarded",
                    cand.frame_descriptions.len(),
                    story.frame_count
                );
                parsed.push(None);
            }
            Err(e) => {
                log::warn!("candidate {j} unparseable: {e}");
                parsed.push(None);
            }
        }
    }

    let scores: Vec<Option<f64>> = parsed
        .iter()
        .map(|c| c.as_ref().map(|c| score_candidate(c, story)))
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (j, s) in scores.iter().enumerate() {
        if let Some(s) = *s {
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((j, s));
            }
        }
    }
    let (chosen, _) = best.ok_or(NarrativeError::NoValidCandidate { tried: k_candidates })?;
    let cand = parsed.swap_remove(chosen).expect("chosen candidate parsed");

    let mut bundle = story.clone();
    bundle.frame_descriptions = cand.frame_descriptions;
    bundle.dialogues = cand.dialogues;
    bundle.validate_expanded()?;
    Ok(Expansion { bundle, chosen, scores })
}
