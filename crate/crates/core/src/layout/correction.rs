use serde::Serialize;

use super::propose::parse_proposal;
use super::{
    build_layout_prompt, reconstruct_caption, reconstruction_error, FrameLayout, LayoutError, LayoutOptions,
    LayoutParseError, LayoutViolation, PreviousAttempt, ReconstructionError,
};
use crate::narrative::{CharacterSpec, LlmBackend};

/// Two consecutive errors closer than this count as converged.
pub const CONVERGENCE_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The caption reproduced the description exactly (e_rec = −1).
    Perfect,
    /// |e_prev − e| < 1e-4.
    Converged,
    /// An iteration failed to improve on the run minimum.
    MinimumRepeated,
    /// The iteration budget ran out.
    MaxIters,
}

/// Stopping rules applied to the sequence of observed errors.
#[derive(Debug, Clone, Default)]
pub struct ConvergenceTracker {
    prev: Option<f64>,
    best: Option<(usize, f64)>,
    seen: usize,
}

impl ConvergenceTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records one error and returns why the loop should stop, if it should.
    pub fn observe(&mut self, e_rec: f64) -> Option<StopReason> {
        let index = self.seen;
        self.seen += 1;
        let prev = self.prev.replace(e_rec);
        let improved = match self.best {
            Some((_, b)) => e_rec < b,
            None => true,
        };
        if improved {
            self.best = Some((index, e_rec));
        }
        if e_rec <= -1.0 {
            return Some(StopReason::Perfect);
        }
        match prev {
            Some(p) if (p - e_rec).abs() < CONVERGENCE_EPS => Some(StopReason::Converged),
            Some(_) if !improved => Some(StopReason::MinimumRepeated),
            _ => None,
        }
    }

    /// Index (among observations) and value of the first minimum.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrectionOutcome {
    /// The layout with the lowest observed error.
    pub layout: FrameLayout,
    pub caption: String,
    pub warnings: Vec<LayoutViolation>,
    /// One entry per iteration that produced a parseable layout.
    pub trace: Vec<ReconstructionError>,
    /// Position of the chosen layout in `trace`.
    pub best: usize,
    /// Backend calls made, including ones whose output failed to parse.
    pub iterations: usize,
    pub stop: StopReason,
}

impl CorrectionOutcome {
    pub fn best_error(&self) -> &ReconstructionError {
        &self.trace[self.best]
    }
}

/// Proposes, rebuilds a caption from, and re-proposes a layout until one of
/// the stopping rules fires. Iteration `i` (0-based) samples with
/// `seed + i`; every request after the first carries the latest parsed
/// layout with its caption and error.
pub fn correct_layout_iteratively(
    frame_desc: &str,
    characters: &[CharacterSpec],
    backend: &dyn LlmBackend,
    opts: &LayoutOptions,
    seed: u64,
) -> Result<CorrectionOutcome, LayoutError> {
    correct_layout_with_scorer(frame_desc, characters, backend, opts, seed, |layout| {
        let caption = reconstruct_caption(layout);
        let err = reconstruction_error(frame_desc, &caption);
        (caption, err)
    })
}

/// Same loop with a caller-supplied caption and scoring function.
pub fn correct_layout_with_scorer<F>(
    frame_desc: &str,
    characters: &[CharacterSpec],
    backend: &dyn LlmBackend,
    opts: &LayoutOptions,
    seed: u64,
    mut score: F,
) -> Result<CorrectionOutcome, LayoutError>
where
    F: FnMut(&FrameLayout) -> (String, ReconstructionError),
{
    if frame_desc.trim().is_empty() {
        return Err(LayoutError::EmptyDescription);
    }
    if opts.max_iters == 0 {
        return Err(LayoutError::ZeroIterations);
    }
    let mut tracker = ConvergenceTracker::new();
    let mut trace = Vec::new();
    let mut kept: Vec<(FrameLayout, String, Vec<LayoutViolation>)> = Vec::new();
    let mut previous: Option<PreviousAttempt> = None;
    let mut last_failure: Option<LayoutParseError> = None;
    let mut stop = StopReason::MaxIters;
    let mut iterations = 0;

    for i in 0..opts.max_iters {
        iterations += 1;
        let prompt = build_layout_prompt(frame_desc, characters, previous.as_ref());
        let text = backend.complete(&prompt, seed.wrapping_add(i as u64))?;
        let proposal = match parse_proposal(&text, characters, opts) {
            Ok(p) => p,
            Err(e) => {
                log::debug!("layout iteration {i} failed to parse: {e}");
                last_failure = Some(e);
                continue;
            }
        };
        let (caption, err) = score(&proposal.layout);
        log::debug!("layout iteration {i}: e_rec {}", err.e_rec);
        trace.push(err);
        previous = Some(PreviousAttempt {
            layout: proposal.layout.clone(),
            caption: caption.clone(),
            error: err,
        });
        kept.push((proposal.layout, caption, proposal.warnings));
        if let Some(reason) = tracker.observe(err.e_rec) {
            stop = reason;
            break;
        }
    }

    let Some((best, _)) = tracker.best() else {
        return Err(LayoutError::NoLayoutFound {
            iterations,
            last: last_failure.expect("every iteration either parsed or failed"),
        });
    };
    let (layout, caption, warnings) = kept.swap_remove(best);
    Ok(CorrectionOutcome {
        layout,
        caption,
        warnings,
        trace,
        best,
        iterations,
        stop,
    })
}
