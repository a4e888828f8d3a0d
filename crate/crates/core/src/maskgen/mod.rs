//! Per-character subject masks from a layout: bounded attention between a
//! box's pixel queries and its prompt tokens, averaged over heads, layers
//! and timesteps, clustered into foreground and background, softly
//! binarized and composed with area weights.

mod attention;
mod encode;
mod mask;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hmap::{Hmap, HmapError};
use crate::layout::FrameLayout;
use crate::seeds;
use crate::tags;

pub use attention::{aggregate_attention, bounded_attention, content_saliency, row_sums, softmax_rows, AttentionOutput};
pub use encode::{box_pixels, encode_region, encode_tokens, token_vector, RegionQueries, TokenEmbeddings, BOS, EOS};
pub use mask::{cluster_fg_bg, compose_masks, init_mask, refine_mask, sigmoid, MaskWarning, FLAT_FOREGROUND_FRACTION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatentDims {
    pub height: usize,
    pub width: usize,
}

impl LatentDims {
    pub const fn new(height: usize, width: usize) -> Self {
        LatentDims { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for LatentDims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

impl FromStr for LatentDims {
    type Err = String;

    /// `"64x64"`, height first.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
        match (parse(h), parse(w)) {
            (Some(height), Some(width)) => Ok(LatentDims { height, width }),
            _ => Err(format!("expected positive HxW, got {s:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("box for {character_id:?} covers no latent pixel")]
    DegenerateBox { character_id: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("every per-character mask is empty")]
    AllMasksEmpty,
    #[error(transparent)]
    Hmap(#[from] HmapError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskParams {
    pub d_e: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub n_timesteps: usize,
    /// Sharpness of the soft binarization.
    pub xi: f64,
    /// Soft threshold, shared by every character unless overridden.
    pub phi: f64,
    pub phi_overrides: BTreeMap<String, f64>,
    /// Std of the per-call query jitter.
    pub jitter: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams {
            d_e: 64,
            n_heads: 2,
            n_layers: 4,
            n_timesteps: 8,
            xi: 10.0,
            phi: 0.2,
            phi_overrides: BTreeMap::new(),
            jitter: 0.1,
        }
    }
}

impl MaskParams {
    pub fn phi_for(&self, character_id: &str) -> f64 {
        self.phi_overrides.get(character_id).copied().unwrap_or(self.phi)
    }

    /// All (head, layer, timestep) triples in nested order.
    pub fn calls(&self) -> Vec<CallIndex> {
        let mut v = Vec::with_capacity(self.n_heads * self.n_layers * self.n_timesteps);
        for head in 0..self.n_heads {
            for layer in 0..self.n_layers {
                for step in 0..self.n_timesteps {
                    v.push(CallIndex { head, layer, step });
                }
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallIndex {
    pub head: usize,
    pub layer: usize,
    pub step: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMask {
    pub character_id: String,
    pub a_bar: Array2<f64>,
    pub m_init: Array2<f64>,
    pub m_refined: Array2<f64>,
    pub p_fg: Array2<bool>,
    /// Area weight; set by [`compose_masks`].
    pub eta: f64,
    pub warnings: Vec<MaskWarning>,
}

impl SaliencyMask {
    /// Pixels where the refined mask is positive.
    pub fn support_area(&self) -> usize {
        self.m_refined.iter().filter(|&&v| v > 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub per_character: Vec<SaliencyMask>,
    /// Pixelwise max of η_j · m_refined_j.
    pub composite: Array2<f64>,
    /// Pixels covered by at least one refined mask.
    pub union_area: usize,
}

/// Sidecar describing an exported mask set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSetInfo {
    pub latent: LatentDims,
    pub character_ids: Vec<String>,
    pub eta: Vec<f64>,
    pub support_area: Vec<usize>,
    pub union_area: usize,
    pub warnings: Vec<String>,
}

impl MaskSet {
    pub fn etas(&self) -> Vec<f64> {
        self.per_character.iter().map(|m| m.eta).collect()
    }

    /// Σ η computed as total support area over union area, so disjoint
    /// supports give exactly 1.
    pub fn eta_sum(&self) -> f64 {
        let total: usize = self.per_character.iter().map(SaliencyMask::support_area).sum();
        total as f64 / self.union_area as f64
    }

    pub fn dims(&self) -> LatentDims {
        let (h, w) = self.composite.dim();
        LatentDims::new(h, w)
    }

    pub fn info(&self) -> MaskSetInfo {
        MaskSetInfo {
            latent: self.dims(),
            character_ids: self.per_character.iter().map(|m| m.character_id.clone()).collect(),
            eta: self.etas(),
            support_area: self.per_character.iter().map(SaliencyMask::support_area).collect(),
            union_area: self.union_area,
            warnings: self
                .per_character
                .iter()
                .flat_map(|m| m.warnings.iter().map(|w| format!("{w:?}")))
                .collect(),
        }
    }

    /// File name of character `j`'s (0-based) mask in frame `k` (1-based).
    pub fn mask_file_name(frame: usize, j: usize) -> String {
        format!("frame_{frame}_char_{}.mask.hmap", j + 1)
    }

    pub fn info_file_name(frame: usize) -> String {
        format!("frame_{frame}.maskset.json")
    }

    /// File names and contents of the per-character masks and sidecar.
    pub fn files(&self, frame: usize) -> Vec<(String, Vec<u8>)> {
        let mut out: Vec<(String, Vec<u8>)> = self
            .per_character
            .iter()
            .enumerate()
            .map(|(j, m)| (Self::mask_file_name(frame, j), array_to_hmap(&m.m_refined).to_bytes()))
            .collect();
        let json = serde_json::to_string_pretty(&self.info()).expect("mask info serializes");
        out.push((Self::info_file_name(frame), (json + "\n").into_bytes()));
        out
    }

    /// Writes one HMAP1 file per refined mask plus the JSON sidecar.
    pub fn save(&self, dir: &Path, frame: usize) -> Result<(), MaskError> {
        for (name, bytes) in self.files(frame) {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|source| MaskError::Io {
                path: path.display().to_string(),
                source,
            })?;
        }
        Ok(())
    }

    /// Reads back what [`MaskSet::save`] wrote. Only the refined masks are
    /// stored, so the attention and initial maps are set to them too, and η
    /// is recomputed from the (f32-rounded) supports.
    pub fn load(dir: &Path, frame: usize) -> Result<MaskSet, MaskError> {
        let info_path = dir.join(Self::info_file_name(frame));
        let text = std::fs::read_to_string(&info_path).map_err(|source| MaskError::Io {
            path: info_path.display().to_string(),
            source,
        })?;
        let info: MaskSetInfo =
            serde_json::from_str(&text).map_err(|e| MaskError::ShapeMismatch(format!("{}: {e}", info_path.display())))?;
        let mut per_character = Vec::with_capacity(info.character_ids.len());
        for (j, id) in info.character_ids.iter().enumerate() {
            let m = hmap_to_array(&Hmap::load(&dir.join(Self::mask_file_name(frame, j)))?)?;
            if (m.nrows(), m.ncols()) != (info.latent.height, info.latent.width) {
                return Err(MaskError::ShapeMismatch(format!("mask {} is {:?}, sidecar says {}", j + 1, m.dim(), info.latent)));
            }
            per_character.push(SaliencyMask {
                character_id: id.clone(),
                a_bar: m.clone(),
                m_init: m.clone(),
                p_fg: m.mapv(|v| v > 0.0),
                m_refined: m,
                eta: 0.0,
                warnings: Vec::new(),
            });
        }
        compose_masks(per_character)
    }
}

pub fn array_to_hmap(a: &Array2<f64>) -> Hmap {
    let (h, w) = a.dim();
    Hmap::new(h, w, 1, a.iter().map(|&v| v as f32).collect())
}

pub fn hmap_to_array(m: &Hmap) -> Result<Array2<f64>, MaskError> {
    if m.channels != 1 {
        return Err(MaskError::ShapeMismatch(format!("expected 1 channel, got {}", m.channels)));
    }
    Array2::from_shape_vec((m.height, m.width), m.data.iter().map(|&v| v as f64).collect())
        .map_err(|e| MaskError::ShapeMismatch(e.to_string()))
}

/// Runs the whole mask pipeline for every box of a layout.
pub fn generate_masks(layout: &FrameLayout, dims: LatentDims, params: &MaskParams, seed: u64) -> Result<MaskSet, MaskError> {
    generate_masks_ordered(layout, dims, params, seed, &params.calls())
}

/// [`generate_masks`] with an explicit order for the attention calls. The
/// jitter of each call depends only on its index, so any permutation of the
/// same calls yields the same masks up to summation order.
pub fn generate_masks_ordered(
    layout: &FrameLayout,
    dims: LatentDims,
    params: &MaskParams,
    seed: u64,
    order: &[CallIndex],
) -> Result<MaskSet, MaskError> {
    let masks = layout
        .boxes
        .par_iter()
        .zip(layout.fg_prompts.par_iter())
        .enumerate()
        .map(|(j, (b, prompt))| {
            let tokens = encode_tokens(prompt, params.d_e, seed);
            let region = encode_region(b, dims, params.d_e, seed)?;
            let a_bar = box_saliency(&region, &tokens, dims, params, seed, j, order)?;
            let mut in_box = Array2::from_elem((dims.height, dims.width), false);
            for &p in &region.pixel_coords {
                in_box[p] = true;
            }
            let (p_fg, _) = cluster_fg_bg(&a_bar, &in_box);
            let m_init = init_mask(&a_bar, params.xi, params.phi_for(&b.character_id));
            let m_refined = refine_mask(&m_init, &p_fg)?;
            let mut warnings = Vec::new();
            if !p_fg.iter().any(|&f| f) {
                log::warn!("empty foreground for {}", b.character_id);
                warnings.push(MaskWarning::EmptyForeground {
                    character_id: b.character_id.clone(),
                });
            }
            Ok(SaliencyMask {
                character_id: b.character_id.clone(),
                a_bar,
                m_init,
                m_refined,
                p_fg,
                eta: 0.0,
                warnings,
            })
        })
        .collect::<Result<Vec<_>, MaskError>>()?;
    compose_masks(masks)
}

fn box_saliency(
    region: &RegionQueries,
    tokens: &TokenEmbeddings,
    dims: LatentDims,
    params: &MaskParams,
    seed: u64,
    box_index: usize,
    order: &[CallIndex],
) -> Result<Array2<f64>, MaskError> {
    let mut total = vec![0.0; region.pixel_coords.len()];
    for call in order {
        let mut rng = seeds::rng(seed, tags!["jitter", box_index, call.head, call.layer, call.step]);
        let q = region.grid.mapv(|v| v + params.jitter * rng.sample::<f64, _>(StandardNormal));
        let out = bounded_attention(&q, &tokens.vectors, &tokens.vectors)?;
        for (t, s) in total.iter_mut().zip(content_saliency(&out.probs, &tokens.content_mask)) {
            *t += s;
        }
    }
    attention::scatter_mean(&total, order.len(), &region.pixel_coords, dims)
}
