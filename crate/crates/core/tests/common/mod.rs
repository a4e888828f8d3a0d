//! Shared helpers: fixture paths and a rule-based backend that answers
//! expansion and layout prompts. The mock fixture is recorded from it.
#![allow(dead_code)]

pub mod oracles;

use std::path::{Path, PathBuf};

use taleforge_core::narrative::{BackendError, LlmBackend, MockBackend, RecordingBackend, StoryBundle};
use taleforge_core::pipeline::{Engine, PipelineConfig};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn story_path(name: &str) -> PathBuf {
    fixtures().join("stories").join(name)
}

pub fn config(name: &str) -> PipelineConfig {
    PipelineConfig::load(&fixtures().join(name)).unwrap()
}

pub fn mock() -> MockBackend {
    MockBackend::load(&fixtures().join("mock_llm.txt")).unwrap()
}

/// Writes stories in a fixed pattern: the first two characters open, the
/// whole cast gathers in the middle frames, the first and last close.
/// Layouts put every named character side by side; revisions nudge the
/// boxes by the sampling seed.
pub struct Storyteller;

struct Cast {
    id: String,
    name: String,
    desc: String,
}

fn cast(prompt: &str, after: &str) -> Vec<Cast> {
    let start = prompt.find(after).map_or(0, |i| i + after.len());
    prompt[start..]
        .lines()
        .filter_map(|l| l.strip_prefix("CHARACTER "))
        .map(|l| {
            let f: Vec<&str> = l.split(" | ").collect();
            Cast {
                id: f[0].to_string(),
                name: f[1].to_string(),
                desc: f[2].to_string(),
            }
        })
        .collect()
}

fn names(c: &[&Cast]) -> String {
    match c {
        [] => String::new(),
        [a] => a.name.clone(),
        [rest @ .., last] => format!(
            "{} and {}",
            rest.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", "),
            last.name
        ),
    }
}

const OPENINGS: [&str; 3] = [
    "meet on a windswept shore under a grey sky",
    "stand face to face on a windswept shore",
    "stop on the wet sand of a windswept shore",
];
const GATHERINGS: [&str; 3] = [
    "crowd together in a small warm room lit by lanterns",
    "gather around a table in a warm lantern-lit room",
    "huddle close in a lantern-lit room",
];
const CLOSINGS: [&str; 3] = [
    "watch the sunrise from the end of a stone pier",
    "stand on a stone pier at dawn",
    "wave goodbye on a stone pier at sunrise",
];
const LINES: [&str; 4] = [
    "Did you see that?",
    "We should hurry before the tide turns.",
    "I told you it would work out.",
    "Look, over there!",
];

impl Storyteller {
    fn expand(prompt: &str, seed: u64) -> String {
        let cast = cast(prompt, "### TARGET");
        let target = &prompt[prompt.find("### TARGET").unwrap_or(0)..];
        let n: usize = target
            .lines()
            .find_map(|l| l.strip_prefix("FRAMES: "))
            .and_then(|s| s.trim().parse().ok())
            .unwrap_or(1);
        let v = (seed % 3) as usize;
        let mut out = String::new();
        for k in 1..=n {
            let present: Vec<&Cast> = if k == 1 {
                cast.iter().take(2).collect()
            } else if k == n {
                let mut p = vec![&cast[0]];
                if cast.len() > 1 {
                    p.push(cast.last().unwrap());
                }
                p
            } else {
                cast.iter().collect()
            };
            let action = if k == 1 {
                OPENINGS[v]
            } else if k == n {
                CLOSINGS[v]
            } else {
                GATHERINGS[v]
            };
            out.push_str(&format!("=== FRAME {k} ===\n{} {action}.\n", names(&present)));
            for (i, c) in present.iter().enumerate().take(2) {
                out.push_str(&format!("{}: {}\n", c.id, LINES[(k + i + v) % LINES.len()]));
            }
        }
        out
    }

    fn layout(prompt: &str, seed: u64) -> String {
        let scene = prompt
            .lines()
            .find_map(|l| l.strip_prefix("SCENE: "))
            .unwrap_or_default()
            .to_string();
        let cast = cast(prompt, "");
        let present: Vec<&Cast> = cast.iter().filter(|c| scene.contains(&c.name)).collect();
        let revising = prompt.contains("### PREVIOUS LAYOUT");
        let n = present.len().max(1) as f64;
        let lift = if revising { 0.05 * (seed % 4) as f64 } else { 0.0 };
        let mut out = String::new();
        for (i, c) in present.iter().enumerate() {
            let x0 = i as f64 / n + 0.02;
            let x1 = (i + 1) as f64 / n - 0.02;
            out.push_str(&format!("BOX {} {x0:.3} {:.3} {x1:.3} {:.3}\n", c.id, 0.25 - lift, 0.95 - lift));
        }
        for (i, c) in present.iter().enumerate() {
            out.push_str(&format!("FG {} {}, {}\n", i + 1, c.name, c.desc));
        }
        let place = scene.split(" in ").nth(1).or_else(|| scene.split(" on ").nth(1)).unwrap_or(&scene);
        out.push_str(&format!("BG {}\n", place.trim_end_matches('.')));
        out
    }
}

impl LlmBackend for Storyteller {
    fn complete(&self, prompt: &str, seed: u64) -> Result<String, BackendError> {
        if prompt.contains("### TARGET") {
            Ok(Self::expand(prompt, seed))
        } else if prompt.contains("SCENE: ") {
            Ok(Self::layout(prompt, seed))
        } else {
            Err(BackendError::Config("storyteller cannot answer this prompt".into()))
        }
    }
}

/// Records every exchange the fixture configs make against the storyteller
/// and returns the resulting fixture text.
pub fn record_fixture() -> String {
    let rec = RecordingBackend::new(Storyteller);
    for (cfg, story) in [("run.toml", "three_frames.json"), ("run_strict.toml", "crowded.json")] {
        let cfg = config(cfg);
        let story = StoryBundle::load(&story_path(story)).unwrap();
        let engine = Engine::new(cfg, &story, &fixtures()).unwrap();
        let expanded = engine.expand(&story, &rec).unwrap();
        for k in 1..=expanded.frame_count {
            // Failures (strict mode) are part of what gets recorded.
            let _ = engine.layout(&expanded, k, &rec);
        }
    }
    rec.recorded().to_fixture_string()
}
