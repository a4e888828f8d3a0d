use super::FrameLayout;

/// Centers further apart than this on an axis produce a relation phrase.
const RELATION_GAP: f64 = 0.15;

fn band(v: f64, names: [&'static str; 3]) -> &'static str {
    if v < 1.0 / 3.0 {
        names[0]
    } else if v < 2.0 / 3.0 {
        names[1]
    } else {
        names[2]
    }
}

/// Deterministic layout-to-text: one placement phrase per box, pairwise
/// left-of/above relations, then the background.
///
/// `"a knight at the middle-center. background: castle"`
pub fn reconstruct_caption(layout: &FrameLayout) -> String {
    let centers: Vec<(f64, f64)> = layout.boxes.iter().map(|b| b.center()).collect();

    let placements: Vec<String> = layout
        .fg_prompts
        .iter()
        .zip(&centers)
        .map(|(p, &(cx, cy))| {
            format!(
                "{} at the {}-{}",
                p,
                band(cy, ["top", "middle", "bottom"]),
                band(cx, ["left", "center", "right"])
            )
        })
        .collect();

    let mut relations = Vec::new();
    for (a, &(ax, ay)) in centers.iter().enumerate() {
        for (b, &(bx, by)) in centers.iter().enumerate() {
            if a == b {
                continue;
            }
            if bx - ax > RELATION_GAP {
                relations.push(format!("{} is left of {}", layout.fg_prompts[a], layout.fg_prompts[b]));
            }
            if by - ay > RELATION_GAP {
                relations.push(format!("{} is above {}", layout.fg_prompts[a], layout.fg_prompts[b]));
            }
        }
    }

    let mut sections = Vec::new();
    if !placements.is_empty() {
        sections.push(placements.join(", "));
    }
    if !relations.is_empty() {
        sections.push(relations.join(", "));
    }
    sections.push(format!("background: {}", layout.bg_prompt));
    sections.join(". ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::CharacterBox;

    fn layout(items: &[(&str, [f64; 4])], bg: &str) -> FrameLayout {
        FrameLayout {
            boxes: items
                .iter()
                .map(|(p, c)| CharacterBox::new(p.replace(' ', "_"), c[0], c[1], c[2], c[3]))
                .collect(),
            fg_prompts: items.iter().map(|(p, _)| p.to_string()).collect(),
            bg_prompt: bg.into(),
        }
    }

    #[test]
    fn single_centered_box() {
        let l = layout(&[("a knight", [0.25, 0.25, 0.75, 0.75])], "castle");
        assert_eq!(reconstruct_caption(&l), "a knight at the middle-center. background: castle");
    }

    #[test]
    fn left_of_relation() {
        let l = layout(&[("a", [0.1, 0.4, 0.3, 0.6]), ("b", [0.7, 0.4, 0.9, 0.6])], "x");
        let c = reconstruct_caption(&l);
        assert!(c.contains("a is left of b"), "{c}");
        assert!(!c.contains("above"));
    }

    #[test]
    fn three_box_fixture_hand_expanded() {
        // centers: knight (0.2, 0.7), dragon (0.75, 0.3), page (0.5, 0.8)
        let l = layout(
            &[
                ("a knight", [0.1, 0.5, 0.3, 0.9]),
                ("a dragon", [0.6, 0.1, 0.9, 0.5]),
                ("a page", [0.4, 0.7, 0.6, 0.9]),
            ],
            "a rocky valley",
        );
        // knight->dragon: dx 0.55 left-of; dy -0.4 none
        // knight->page:   dx 0.3 left-of;  dy 0.1 none
        // dragon->knight: dx < 0;          dy 0.4 above
        // dragon->page:   dx < 0;          dy 0.5 above
        // page->knight:   none;            dy -0.1 none
        // page->dragon:   dx 0.25 left-of; dy < 0
        let expected = "a knight at the bottom-left, a dragon at the top-right, a page at the bottom-center. \
a knight is left of a dragon, a knight is left of a page, a dragon is above a knight, \
a dragon is above a page, a page is left of a dragon. background: a rocky valley";
        assert_eq!(reconstruct_caption(&l), expected);
    }

    #[test]
    fn caption_is_pure() {
        let l = layout(&[("a", [0.0, 0.0, 0.5, 0.5])], "b");
        assert_eq!(reconstruct_caption(&l), reconstruct_caption(&l.clone()));
    }
}
