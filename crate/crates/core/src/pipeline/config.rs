use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::bubbles::BubbleParams;
use crate::latent::{BankShape, BgParams, FgParams, GuidanceParams, LoraShape};
use crate::layout::LayoutOptions;
use crate::maskgen::{LatentDims, MaskParams};
use crate::narrative::{BackendError, LlmBackend, MockBackend, WireBackend, WireConfig};

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Canned responses from a fixture file. Relative paths resolve
    /// against the directory of the config file.
    Mock { fixture: PathBuf },
    Wire(WireConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Mock {
            fixture: PathBuf::from("mock_llm.txt"),
        }
    }
}

impl BackendConfig {
    pub fn build(&self, base_dir: &Path) -> Result<Box<dyn LlmBackend>, BackendError> {
        match self {
            BackendConfig::Mock { fixture } => Ok(Box::new(MockBackend::load(&base_dir.join(fixture))?)),
            BackendConfig::Wire(cfg) => Ok(Box::new(WireBackend::from_env(cfg.clone())?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImageFormat {
    #[default]
    Ppm,
    Png,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForegroundConfig {
    pub delta_omega: f64,
    pub guidance_scale: f64,
    pub lr: f64,
    pub max_inner: usize,
    pub max_backtracks: usize,
    /// LoRA rank.
    pub rank: usize,
    pub alpha: f64,
    /// Attention layers sharing the character bank.
    pub n_layers: usize,
}

impl Default for ForegroundConfig {
    fn default() -> Self {
        ForegroundConfig {
            delta_omega: 0.7,
            guidance_scale: 7.5,
            lr: 0.05,
            max_inner: 5,
            max_backtracks: 30,
            rank: 8,
            alpha: 16.0,
            n_layers: 2,
        }
    }
}

/// Everything that decides a run's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Overrides the frame count in the story file.
    pub frames: Option<usize>,
    pub latent: LatentDims,
    /// Nearest-neighbor enlargement from latent to image pixels.
    pub upscale: usize,
    /// Denoising steps for both foreground and background.
    pub steps: usize,
    pub k_candidates: usize,
    /// Background step size.
    pub lambda: f64,
    pub layout: LayoutOptions,
    pub masks: MaskParams,
    pub bank: BankShape,
    pub foreground: ForegroundConfig,
    pub bubbles: BubbleParams,
    pub backend: BackendConfig,
    pub image_format: ImageFormat,
    /// Demonstration file; the built-in set when absent.
    pub demonstrations: Option<PathBuf>,
    /// Directory of externally produced head maps replacing the
    /// mask-derived ones.
    pub heatmaps: Option<PathBuf>,
    /// Glyph atlas directory tried before the built-in font.
    pub atlas: Option<PathBuf>,
    pub out: PathBuf,
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            frames: None,
            latent: LatentDims::new(64, 64),
            upscale: 8,
            steps: 20,
            k_candidates: 3,
            lambda: 0.95,
            layout: LayoutOptions::default(),
            masks: MaskParams::default(),
            bank: BankShape::default(),
            foreground: ForegroundConfig::default(),
            bubbles: BubbleParams::default(),
            backend: BackendConfig::default(),
            image_format: ImageFormat::Ppm,
            demonstrations: None,
            heatmaps: None,
            atlas: None,
            out: PathBuf::from("out"),
            workers: 1,
        }
    }
}

/// Fields that only affect where and how fast a run happens.
const UNHASHED: &[&str] = &["out", "workers"];

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.latent.height == 0 || self.latent.width == 0 {
            return bad(format!("latent dims {} must be positive", self.latent));
        }
        if self.upscale == 0 {
            return bad("upscale must be at least 1".into());
        }
        if self.steps < 4 {
            return bad(format!("steps must be at least 4, got {}", self.steps));
        }
        if self.k_candidates == 0 || self.layout.max_iters == 0 {
            return bad("k_candidates and layout.max_iters must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.foreground.delta_omega) {
            return bad(format!("foreground.delta_omega {} outside [0, 1]", self.foreground.delta_omega));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be positive", self.lambda));
        }
        if self.foreground.rank == 0 || self.foreground.n_layers == 0 || self.bank.n_char_tokens == 0 {
            return bad("rank, n_layers and bank.n_char_tokens must be positive".into());
        }
        if self.masks.n_heads == 0 || self.masks.n_layers == 0 || self.masks.n_timesteps == 0 {
            return bad("mask heads, layers and timesteps must be positive".into());
        }
        if self.bubbles.font_size < 4 || self.bubbles.min_font_size < 4 {
            return bad("bubble font sizes must be at least 4".into());
        }
        if self.bubbles.max_words_per_line == 0 {
            return bad("bubbles.max_words_per_line must be positive".into());
        }
        Ok(())
    }

    /// Canonical JSON of every output-relevant field: object keys sorted,
    /// `out` and `workers` left out.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            for k in UNHASHED {
                obj.remove(*k);
            }
        }
        v.to_string()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn fg_params(&self) -> FgParams {
        FgParams {
            steps: self.steps,
            guidance: GuidanceParams {
                delta_omega: self.foreground.delta_omega,
                guidance_scale: self.foreground.guidance_scale,
            },
            lr: self.foreground.lr,
            max_inner: self.foreground.max_inner,
            max_backtracks: self.foreground.max_backtracks,
            lora: LoraShape {
                rank: self.foreground.rank,
                alpha: self.foreground.alpha,
            },
        }
    }

    pub fn bg_params(&self) -> BgParams {
        BgParams {
            steps: self.steps,
            lambda: self.lambda,
        }
    }
}
