//! Identity-consistent foreground guidance and region-aware background
//! denoising over small seeded tensors.
//!
//! Latents are stored as `(pixels × channels)` matrices with pixels in
//! row-major order.

mod bank;
mod decode;
mod guidance;
mod icsa;
mod proj;
mod raca;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::hmap::Hmap;
use crate::maskgen::LatentDims;
use crate::seeds::{self, Tag};

pub use bank::{build_character_db, BankShape, CharacterBank};
pub use decode::decode_latent;
pub use guidance::{
    compose_steps, fg_energy, inner_updates, optimize_fg_latent, pixel_assignment, squared_distance, theta, theta_sigma,
    FgOutcome, FgParams, FgProblem, GuidanceParams, StepEnergy,
};
pub use icsa::{icsa, icsa_backward, icsa_forward, IcsaForward};
pub use proj::{orthogonal, AdapterSet, AttentionProjections, LayerProjections, LoraAdapter, LoraShape};
pub use raca::{
    background_gradient, background_objective, background_tokens, denoise_background, denoise_from, raca, raca_weights,
    BgParams,
};

#[derive(Debug, Error)]
pub enum LatentError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no mask/bank entry for character {0:?}")]
    CharacterMaskMismatch(String),
    #[error("character bank needs at least one character")]
    EmptyBank,
    #[error("foreground optimization needs at least 4 steps, got {0}")]
    TooFewSteps(usize),
    #[error("energy became non-finite ({energy}) at timestep {t}")]
    NonFiniteEnergy { t: usize, energy: f64 },
    #[error("background latent became non-finite after update {step}")]
    NonFiniteLatent { step: usize },
    #[error("background prompt is empty")]
    EmptyPrompt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub dims: LatentDims,
    /// (H·W) × d.
    pub values: Array2<f64>,
}

impl LatentTensor {
    pub fn new(dims: LatentDims, values: Array2<f64>) -> Self {
        assert_eq!(values.nrows(), dims.pixels(), "latent rows must match the grid");
        LatentTensor { dims, values }
    }

    pub fn zeros(dims: LatentDims, d: usize) -> Self {
        LatentTensor::new(dims, Array2::zeros((dims.pixels(), d)))
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn to_hmap(&self) -> Hmap {
        Hmap::new(
            self.dims.height,
            self.dims.width,
            self.channels(),
            self.values.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn from_hmap(m: &Hmap) -> Self {
        let values = Array2::from_shape_vec((m.height * m.width, m.channels), m.data.iter().map(|&v| v as f64).collect())
            .expect("hmap payload matches its header");
        LatentTensor::new(LatentDims::new(m.height, m.width), values)
    }
}

/// Standard Gaussian latent from the stream at `path`.
pub fn gaussian_latent(dims: LatentDims, d: usize, seed: u64, path: &[Tag<'_>]) -> LatentTensor {
    let mut rng = seeds::rng(seed, path);
    LatentTensor::new(
        dims,
        Array2::from_shape_simple_fn((dims.pixels(), d), || rng.sample(StandardNormal)),
    )
}
