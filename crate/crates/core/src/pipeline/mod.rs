//! End-to-end runs: expand the story, then for each frame correct a
//! layout, build masks, optimize the foreground latent, denoise the
//! background, decode, and place and draw speech bubbles.
//!
//! Every random stream hangs off the master seed; per-frame streams hang
//! off `derive(seed, ["frame", k])`, so frames can run in any order or in
//! parallel and still produce the same bytes.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bubbles::{
    draw_bubbles, get_location, place_bubble, resolve_conflicts, BubbleError, BubblePlacement, BuiltinFont,
    FontChain, GlyphAtlas, GlyphProvider, Heatmap,
};
use crate::hmap::Hmap;
use crate::latent::{
    build_character_db, decode_latent, denoise_background, optimize_fg_latent, AttentionProjections, CharacterBank,
    FgProblem, LatentError, LatentTensor, StepEnergy,
};
use crate::layout::{correct_layout_iteratively, CorrectionOutcome, FrameLayout, LayoutError, StopReason};
use crate::maskgen::{generate_masks, MaskError, MaskSet};
use crate::narrative::{expand_story, BackendError, DemonstrationSet, LlmBackend, NarrativeError, StoryBundle};
use crate::raster::{RasterError, RgbImage};
use crate::seeds;
use crate::tags;

pub use config::{BackendConfig, ForegroundConfig, ImageFormat, PipelineConfig};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Narrative(#[from] NarrativeError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error(transparent)]
    Bubble(#[from] BubbleError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("story has {frames} frames; frame {frame} requested")]
    NoSuchFrame { frame: usize, frames: usize },
    #[error("story is not expanded")]
    NotExpanded,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Seed for everything in frame `k` (1-based).
pub fn frame_seed(seed: u64, k: usize) -> u64 {
    seeds::derive(seed, tags!["frame", k])
}

/// An in-memory output file.
pub type Artifact = (String, Vec<u8>);

/// Shared, read-only state for a run: the character bank and attention
/// weights are built once so identities stay consistent across frames.
pub struct Engine {
    pub config: PipelineConfig,
    pub bank: CharacterBank,
    pub projections: AttentionProjections,
    atlas: Option<GlyphAtlas>,
    base_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayoutReport {
    pub iterations: usize,
    pub stop: StopReason,
    pub e_rec: Vec<f64>,
    pub best: usize,
    pub caption: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BubbleReport {
    pub passes: usize,
    pub unresolved: bool,
}

/// Diagnostics written next to each panel.
#[derive(Debug, Clone, Serialize)]
pub struct FrameReport {
    pub frame: usize,
    pub layout: LayoutReport,
    pub energy: Vec<StepEnergy>,
    pub bubbles: BubbleReport,
    pub warnings: Vec<String>,
}

/// Latents and image of one frame.
pub struct Composition {
    pub z_fg: LatentTensor,
    pub z_bg: LatentTensor,
    pub image: RgbImage,
    pub energy: Vec<StepEnergy>,
}

/// Result of bubble placement and drawing.
pub struct Lettering {
    pub bubbles: Vec<BubblePlacement>,
    pub report: BubbleReport,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
struct BubbleSidecar<'a> {
    image: [usize; 2],
    unresolved: bool,
    bubbles: &'a [BubblePlacement],
}

impl Engine {
    /// `base_dir` anchors relative paths in the config.
    pub fn new(config: PipelineConfig, story: &StoryBundle, base_dir: &Path) -> Result<Self, PipelineError> {
        config.validate()?;
        let bank = build_character_db(&story.characters, config.bank, config.seed)?;
        let projections = AttentionProjections::new(config.bank.d_e, config.foreground.n_layers, config.seed);
        let atlas = match &config.atlas {
            Some(dir) => Some(GlyphAtlas::load(&base_dir.join(dir))?),
            None => None,
        };
        Ok(Engine {
            config,
            bank,
            projections,
            atlas,
            base_dir: base_dir.to_path_buf(),
        })
    }

    pub fn demonstrations(&self) -> Result<DemonstrationSet, PipelineError> {
        Ok(match &self.config.demonstrations {
            Some(p) => DemonstrationSet::load(&self.base_dir.join(p))?,
            None => DemonstrationSet::builtin(),
        })
    }

    /// Expands the story unless it already carries frame text.
    pub fn expand(&self, story: &StoryBundle, backend: &dyn LlmBackend) -> Result<StoryBundle, PipelineError> {
        if story.is_expanded() {
            story.validate_expanded()?;
            return Ok(story.clone());
        }
        let mut skeleton = story.clone();
        if let Some(n) = self.config.frames {
            skeleton.frame_count = n;
        }
        let seed = seeds::derive(self.config.seed, tags!["expand"]);
        let exp = expand_story(&skeleton, &self.demonstrations()?, backend, self.config.k_candidates, seed)?;
        Ok(exp.bundle)
    }

    pub fn layout(
        &self,
        story: &StoryBundle,
        k: usize,
        backend: &dyn LlmBackend,
    ) -> Result<CorrectionOutcome, PipelineError> {
        let desc = frame_description(story, k)?;
        let seed = seeds::derive(frame_seed(self.config.seed, k), tags!["layout"]);
        Ok(correct_layout_iteratively(desc, &story.characters, backend, &self.config.layout, seed)?)
    }

    pub fn masks(&self, layout: &FrameLayout, k: usize) -> Result<MaskSet, PipelineError> {
        frame_masks(&self.config, layout, k)
    }

    /// Foreground guidance, background denoising and decoding. Pixels
    /// owned by a character take the foreground latent, the rest the
    /// background.
    pub fn compose(&self, masks: &MaskSet, layout: &FrameLayout, k: usize) -> Result<Composition, PipelineError> {
        let fs = frame_seed(self.config.seed, k);
        let problem = FgProblem::new(masks, &self.bank, fs)?;
        let fg = optimize_fg_latent(
            &problem,
            &self.projections,
            &self.config.fg_params(),
            seeds::derive(fs, tags!["fg"]),
        )?;
        let z_bg = denoise_background(
            &fg.z_fg,
            &layout.bg_prompt,
            &self.projections,
            &self.config.bg_params(),
            seeds::derive(fs, tags!["bg"]),
        )?;
        let mut values: Array2<f64> = z_bg.values.clone();
        for (p, owner) in problem.owners().into_iter().enumerate() {
            if owner.is_some() {
                values.row_mut(p).assign(&fg.z_fg.values.row(p));
            }
        }
        let z = LatentTensor::new(z_bg.dims, values);
        let image = decode_latent(&z, self.config.upscale, self.config.seed);
        Ok(Composition {
            z_fg: fg.z_fg,
            z_bg,
            image,
            energy: fg.trace,
        })
    }

    /// Prompt maps for a character's head: either `frame_<k>_<id>.hmap`
    /// from the configured directory (one channel per prompt, the head
    /// query last; a lone channel plays both roles) or the character's refined mask followed by a ramp
    /// that favours the top of the frame.
    pub fn head_maps(&self, masks: &MaskSet, j: usize, k: usize) -> Result<Vec<Heatmap>, PipelineError> {
        let id = &masks.per_character[j].character_id;
        if let Some(dir) = &self.config.heatmaps {
            let path = self.base_dir.join(dir).join(format!("frame_{k}_{id}.hmap"));
            let h = Hmap::load(&path).map_err(BubbleError::from)?;
            return Ok(Heatmap::stack_from_hmap(&h)?);
        }
        let m = &masks.per_character[j].m_refined;
        let (rows, cols) = m.dim();
        let own = Heatmap::new(cols, rows, m.iter().copied().collect())?;
        let ramp = (0..rows)
            .flat_map(|r| std::iter::repeat(1.0 - r as f64 / rows as f64).take(cols))
            .collect();
        Ok(vec![own, Heatmap::new(cols, rows, ramp)?])
    }

    /// Places one bubble per speaking character in declaration order, fixes
    /// conflicts and draws them onto `image`.
    pub fn letter(
        &self,
        story: &StoryBundle,
        masks: &MaskSet,
        k: usize,
        image: &mut RgbImage,
    ) -> Result<Lettering, PipelineError> {
        let params = &self.config.bubbles;
        let dims = (image.width, image.height);
        let lines = story.dialogues.get(k - 1).map(Vec::as_slice).unwrap_or_default();
        let mut warnings = Vec::new();
        let mut used = Vec::new();
        let mut placed = Vec::new();
        for c in &story.characters {
            let said: Vec<&str> = lines
                .iter()
                .filter(|l| l.character_id == c.id)
                .map(|l| l.utterance.as_str())
                .collect();
            if said.is_empty() {
                continue;
            }
            let Some(j) = masks.per_character.iter().position(|m| m.character_id == c.id) else {
                warnings.push(format!("{} speaks but has no box; dialogue dropped", c.id));
                continue;
            };
            let maps = self.head_maps(masks, j, k)?;
            let head = get_location(dims, &maps, &used, params.suppression_scale)?;
            used.push((head.x, head.y));
            placed.push(place_bubble(&c.id, &head, &said.join(" "), params)?);
        }
        let res = resolve_conflicts(&placed, dims, params);
        let chain;
        let font: &dyn GlyphProvider = match &self.atlas {
            Some(a) => {
                chain = FontChain(vec![a, &BuiltinFont]);
                &chain
            }
            None => &BuiltinFont,
        };
        for w in draw_bubbles(image, &res.bubbles, font, params.tail_half_angle) {
            warnings.push(format!("{w:?}"));
        }
        if res.unresolved {
            warnings.push(format!("bubble conflicts remain after {} passes", res.passes));
        }
        Ok(Lettering {
            report: BubbleReport {
                passes: res.passes,
                unresolved: res.unresolved,
            },
            bubbles: res.bubbles,
            warnings,
        })
    }

    /// Runs every stage for frame `k` and returns its files. Nothing is
    /// written, so a failure leaves no partial output.
    pub fn frame(&self, story: &StoryBundle, k: usize, backend: &dyn LlmBackend) -> Result<Vec<Artifact>, PipelineError> {
        let outcome = self.layout(story, k, backend)?;
        let masks = self.masks(&outcome.layout, k)?;
        let comp = self.compose(&masks, &outcome.layout, k)?;
        let mut image = comp.image;
        let lettering = self.letter(story, &masks, k, &mut image)?;

        let mut warnings: Vec<String> = masks.info().warnings;
        warnings.extend(lettering.warnings);
        let report = FrameReport {
            frame: k,
            layout: LayoutReport {
                iterations: outcome.iterations,
                stop: outcome.stop,
                e_rec: outcome.trace.iter().map(|e| e.e_rec).collect(),
                best: outcome.best,
                caption: outcome.caption.clone(),
                warnings: outcome.warnings.iter().map(ToString::to_string).collect(),
            },
            energy: comp.energy,
            bubbles: lettering.report,
            warnings,
        };

        let mut files = vec![(format!("frame_{k}.layout.txt"), outcome.layout.to_wire().into_bytes())];
        files.extend(masks.files(k));
        files.push((format!("frame_{k}.zfg.hmap"), comp.z_fg.to_hmap().to_bytes()));
        files.push((format!("frame_{k}.zbg.hmap"), comp.z_bg.to_hmap().to_bytes()));
        let sidecar = BubbleSidecar {
            image: [image.width, image.height],
            unresolved: report.bubbles.unresolved,
            bubbles: &lettering.bubbles,
        };
        files.push((format!("frame_{k}.bubbles.json"), pretty(&sidecar)));
        files.push((format!("frame_{k}.report.json"), pretty(&report)));
        files.extend(encode_image(&image, self.config.image_format, &format!("frame_{k}"))?);
        Ok(files)
    }
}

/// Masks for frame `k`; needs no character bank.
pub fn frame_masks(config: &PipelineConfig, layout: &FrameLayout, k: usize) -> Result<MaskSet, PipelineError> {
    let seed = seeds::derive(frame_seed(config.seed, k), tags!["masks"]);
    Ok(generate_masks(layout, config.latent, &config.masks, seed)?)
}

fn frame_description(story: &StoryBundle, k: usize) -> Result<&str, PipelineError> {
    if !story.is_expanded() {
        return Err(PipelineError::NotExpanded);
    }
    if k == 0 || k > story.frame_descriptions.len() {
        return Err(PipelineError::NoSuchFrame {
            frame: k,
            frames: story.frame_descriptions.len(),
        });
    }
    Ok(&story.frame_descriptions[k - 1])
}

fn pretty<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

pub fn encode_image(image: &RgbImage, format: ImageFormat, stem: &str) -> Result<Vec<Artifact>, PipelineError> {
    let mut out = Vec::new();
    if matches!(format, ImageFormat::Ppm | ImageFormat::Both) {
        out.push((format!("{stem}.ppm"), image.to_ppm()));
    }
    if matches!(format, ImageFormat::Png | ImageFormat::Both) {
        #[cfg(feature = "png")]
        out.push((format!("{stem}.png"), image.to_png()?));
        #[cfg(not(feature = "png"))]
        return Err(PipelineError::Config("built without PNG support".into()));
    }
    Ok(out)
}

pub fn write_artifacts(dir: &Path, files: &[Artifact]) -> Result<(), PipelineError> {
    for (name, bytes) in files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| PipelineError::io(&path, e))?;
    }
    Ok(())
}

/// Paths of one successfully rendered panel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PanelArtifact {
    pub frame: usize,
    pub image: PathBuf,
    pub layout: PathBuf,
    pub maskset: PathBuf,
    pub latents: [PathBuf; 2],
    pub bubbles: PathBuf,
    pub report: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FrameStatus {
    Ok { files: Vec<String> },
    Failed { error: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifestFrame {
    pub frame: usize,
    #[serde(flatten)]
    pub status: FrameStatus,
}

/// Run-level record. Holds no wall-clock data so reruns are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub config_hash: String,
    pub seed: u64,
    pub story_sha256: String,
    pub frames: Vec<ManifestFrame>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub panels: Vec<PanelArtifact>,
    /// `(frame, error)` for every failed frame.
    pub failures: Vec<(usize, String)>,
    pub manifest: PathBuf,
}

/// Runs the whole pipeline into `config.out`. Frames that fail get a
/// `frame_<k>.error.txt` and are listed in the manifest; the others are
/// unaffected. Only run-level problems (config, expansion, I/O) are
/// returned as errors.
pub fn run_pipeline(
    config: &PipelineConfig,
    story_path: &Path,
    base_dir: &Path,
    backend: &dyn LlmBackend,
) -> Result<RunSummary, PipelineError> {
    let story_bytes = fs::read(story_path).map_err(|e| PipelineError::io(story_path, e))?;
    let story = StoryBundle::from_json(&String::from_utf8_lossy(&story_bytes))?;
    let engine = Engine::new(config.clone(), &story, base_dir)?;
    let out = &config.out;
    fs::create_dir_all(out).map_err(|e| PipelineError::io(out, e))?;

    let expanded = engine.expand(&story, backend)?;
    write_artifacts(out, &[("story.expanded.json".into(), (expanded.to_json() + "\n").into_bytes())])?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let results: Vec<(usize, Result<Vec<Artifact>, PipelineError>)> = pool.install(|| {
        (1..=expanded.frame_count)
            .into_par_iter()
            .map(|k| (k, engine.frame(&expanded, k, backend)))
            .collect()
    });

    let mut panels = Vec::new();
    let mut failures = Vec::new();
    let mut frames = Vec::new();
    for (k, r) in results {
        let status = match r.and_then(|files| write_artifacts(out, &files).map(|_| files)) {
            Ok(files) => {
                let p = |s: &str| out.join(format!("frame_{k}{s}"));
                let image_ext = if config.image_format == ImageFormat::Png { ".png" } else { ".ppm" };
                panels.push(PanelArtifact {
                    frame: k,
                    image: p(image_ext),
                    layout: p(".layout.txt"),
                    maskset: p(".maskset.json"),
                    latents: [p(".zfg.hmap"), p(".zbg.hmap")],
                    bubbles: p(".bubbles.json"),
                    report: p(".report.json"),
                });
                FrameStatus::Ok {
                    files: files.into_iter().map(|(n, _)| n).collect(),
                }
            }
            Err(e) => {
                let msg = e.to_string();
                log::error!("frame {k} failed: {msg}");
                write_artifacts(out, &[(format!("frame_{k}.error.txt"), format!("{msg}\n").into_bytes())])?;
                failures.push((k, msg.clone()));
                FrameStatus::Failed { error: msg }
            }
        };
        frames.push(ManifestFrame { frame: k, status });
    }

    let manifest = Manifest {
        tool: format!("taleforge {}", env!("CARGO_PKG_VERSION")),
        config_hash: config.hash(),
        seed: config.seed,
        story_sha256: hex::encode(Sha256::digest(&story_bytes)),
        frames,
        config: serde_json::from_str(&config.canonical_json()).expect("canonical json parses"),
    };
    let manifest_path = out.join("manifest.json");
    write_artifacts(out, &[("manifest.json".into(), pretty(&manifest))])?;
    Ok(RunSummary {
        panels,
        failures,
        manifest: manifest_path,
    })
}
