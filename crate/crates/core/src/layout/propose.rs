use serde::Serialize;

use super::{
    validate_layout, FrameLayout, LayoutError, LayoutOptions, LayoutParseError,
    LayoutViolation, ReconstructionError,
};
use crate::narrative::{CharacterSpec, LlmBackend};

/// A parsed layout plus any non-fatal violations found while parsing it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayoutProposal {
    pub layout: FrameLayout,
    pub warnings: Vec<LayoutViolation>,
}

/// The attempt a refinement request is conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviousAttempt {
    pub layout: FrameLayout,
    pub caption: String,
    pub error: ReconstructionError,
}

pub fn build_layout_prompt(
    frame_desc: &str,
    characters: &[CharacterSpec],
    previous: Option<&PreviousAttempt>,
) -> String {
    let mut p = String::from(
        "You place characters on a comic panel. Coordinates are fractions of the canvas, origin at the top-left.\n\n",
    );
    p.push_str(&format!("SCENE: {}\n", frame_desc.replace('\n', " ")));
    for c in characters {
        p.push_str(&format!("CHARACTER {} | {} | {}\n", c.id, c.name, c.physical_description));
    }
    if let Some(prev) = previous {
        p.push_str("\n### PREVIOUS LAYOUT\n");
        p.push_str(&prev.layout.to_wire());
        p.push_str(&format!("CAPTION: {}\n", prev.caption));
        p.push_str(&format!("E_REC: {}\n", prev.error.e_rec));
        p.push_str("The caption above was rebuilt from the previous layout. Revise the layout so the caption matches the scene more closely (lower E_REC is better).\n");
    }
    p.push_str(&format!(
        "\n### OUTPUT FORMAT\n\
One line `BOX <character_id> <x0> <y0> <x1> <y1>` per character in the scene (at most {max}), \
then `FG <i> <prompt>` describing box i (1-based), then one `BG <prompt>` line for the background. \
Keep each box at least a quarter of the canvas where possible.\n",
        max = super::MAX_BOXES
    ));
    p
}

/// Asks the backend for a layout and parses it. In strict mode more than
/// four boxes or an undersized box is an error; otherwise those are
/// returned as warnings alongside any clipping.
pub fn propose_layout(
    frame_desc: &str,
    characters: &[CharacterSpec],
    backend: &dyn LlmBackend,
    seed: u64,
    opts: &LayoutOptions,
    previous: Option<&PreviousAttempt>,
) -> Result<LayoutProposal, LayoutError> {
    if frame_desc.trim().is_empty() {
        return Err(LayoutError::EmptyDescription);
    }
    let prompt = build_layout_prompt(frame_desc, characters, previous);
    let text = backend.complete(&prompt, seed)?;
    Ok(parse_proposal(&text, characters, opts)?)
}

pub(crate) fn parse_proposal(
    text: &str,
    characters: &[CharacterSpec],
    opts: &LayoutOptions,
) -> Result<LayoutProposal, LayoutParseError> {
    let (layout, mut warnings) = FrameLayout::parse_wire(text)?;
    if let Some(b) = layout.boxes.iter().find(|b| !characters.iter().any(|c| c.id == b.character_id)) {
        return Err(LayoutParseError::UnknownCharacter(b.character_id.clone()));
    }
    let checks = LayoutOptions { strict: true, ..*opts };
    for v in validate_layout(&layout, &checks) {
        match v {
            LayoutViolation::TooManyBoxes { count } if opts.strict => {
                return Err(LayoutParseError::TooManyBoxes(count))
            }
            LayoutViolation::MinAreaViolation { index, area, threshold } if opts.strict => {
                return Err(LayoutParseError::MinArea { index: index + 1, area, threshold })
            }
            v => warnings.push(v),
        }
    }
    Ok(LayoutProposal { layout, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{reconstruct_caption, reconstruction_error, CharacterBox, MinAreaMode};
    use crate::narrative::ScriptedBackend;

    fn cast(ids: &[&str]) -> Vec<CharacterSpec> {
        ids.iter()
            .map(|id| CharacterSpec {
                id: id.to_string(),
                name: id.to_string(),
                physical_description: format!("{id} looks like {id}"),
                personality: String::new(),
            })
            .collect()
    }

    #[test]
    fn single_box_parse_identity() {
        let b = ScriptedBackend::new(["BOX hero 0.1 0.2 0.6 0.9\nFG 1 a hero\nBG a field"]);
        let p = propose_layout("a hero in a field", &cast(&["hero"]), &b, 3, &LayoutOptions::default(), None).unwrap();
        assert_eq!(p.layout.boxes, vec![CharacterBox::new("hero", 0.1, 0.2, 0.6, 0.9)]);
        assert!(p.warnings.is_empty());
        assert_eq!(b.calls()[0].1, 3);
    }

    fn five_boxes() -> String {
        let mut s = String::new();
        for i in 0..5 {
            let x = i as f64 * 0.2;
            s.push_str(&format!("BOX c{i} {} 0 {} 1\n", x, x + 0.2));
        }
        for i in 1..=5 {
            s.push_str(&format!("FG {i} someone\n"));
        }
        s + "BG a crowd"
    }

    #[test]
    fn five_boxes_rejected_in_strict_mode() {
        let ids = ["c0", "c1", "c2", "c3", "c4"];
        let b = ScriptedBackend::new([five_boxes()]);
        let opts = LayoutOptions { strict: true, min_area: MinAreaMode::Fixed(0.0), ..Default::default() };
        let err = propose_layout("crowd", &cast(&ids), &b, 0, &opts, None).unwrap_err();
        assert!(matches!(err, LayoutError::Parse(LayoutParseError::TooManyBoxes(5))), "{err}");

        let b = ScriptedBackend::new([five_boxes()]);
        let p = propose_layout("crowd", &cast(&ids), &b, 0, &LayoutOptions::default(), None).unwrap();
        assert!(p.warnings.contains(&LayoutViolation::TooManyBoxes { count: 5 }));
    }

    #[test]
    fn clipped_box_warns() {
        let b = ScriptedBackend::new(["BOX a -0.1 0 0.5 0.5\nFG 1 x\nBG y"]);
        let p = propose_layout("x", &cast(&["a"]), &b, 0, &LayoutOptions::default(), None).unwrap();
        assert_eq!(p.layout.boxes[0], CharacterBox::new("a", 0.0, 0.0, 0.5, 0.5));
        assert!(matches!(p.warnings[0], LayoutViolation::Clipped { index: 0, .. }));
    }

    #[test]
    fn small_box_rejected_only_when_strict() {
        let text = "BOX a 0 0 0.1 0.1\nFG 1 x\nBG y";
        let strict = LayoutOptions { strict: true, ..Default::default() };
        let b = ScriptedBackend::new([text]);
        let err = propose_layout("x", &cast(&["a"]), &b, 0, &strict, None).unwrap_err();
        assert!(matches!(err, LayoutError::Parse(LayoutParseError::MinArea { index: 1, .. })));
        let b = ScriptedBackend::new([text]);
        let p = propose_layout("x", &cast(&["a"]), &b, 0, &LayoutOptions::default(), None).unwrap();
        assert!(matches!(p.warnings[0], LayoutViolation::MinAreaViolation { .. }));
    }

    #[test]
    fn unknown_character_and_empty_description() {
        let b = ScriptedBackend::new(["BOX ghost 0 0 1 1\nFG 1 x\nBG y"]);
        let err = propose_layout("x", &cast(&["a"]), &b, 0, &LayoutOptions::default(), None).unwrap_err();
        assert!(matches!(err, LayoutError::Parse(LayoutParseError::UnknownCharacter(ref id)) if id == "ghost"));
        let b = ScriptedBackend::new(Vec::<String>::new());
        assert!(matches!(
            propose_layout("  ", &cast(&["a"]), &b, 0, &LayoutOptions::default(), None),
            Err(LayoutError::EmptyDescription)
        ));
        assert_eq!(b.call_count(), 0);
    }

    #[test]
    fn refinement_prompt_carries_previous_layout_and_error() {
        let layout = FrameLayout::parse_wire("BOX a 0 0 1 1\nFG 1 a cat\nBG a mat").unwrap().0;
        let caption = reconstruct_caption(&layout);
        let error = reconstruction_error("a cat on a mat", &caption);
        let prev = PreviousAttempt { layout: layout.clone(), caption: caption.clone(), error };
        let p = build_layout_prompt("a cat on a mat", &cast(&["a"]), Some(&prev));
        assert!(p.contains(&layout.to_wire()));
        assert!(p.contains(&format!("E_REC: {}", error.e_rec)));
        assert!(p.contains(&caption));
        assert!(!build_layout_prompt("a cat on a mat", &cast(&["a"]), None).contains("PREVIOUS"));
    }
}
