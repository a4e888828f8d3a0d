use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bank::CharacterBank;
use super::icsa::{icsa_backward, icsa_forward, IcsaForward};
use super::proj::{AdapterSet, AttentionProjections, LayerProjections, LoraShape};
use super::{gaussian_latent, LatentError, LatentTensor};
use crate::maskgen::{sigmoid, LatentDims, MaskSet};
use crate::seeds;
use crate::tags;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceParams {
    /// Blend between the masked conditional branch and the sigmoid branch.
    pub delta_omega: f64,
    /// Multiplier on the conditional branch.
    pub guidance_scale: f64,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        GuidanceParams {
            delta_omega: 0.7,
            guidance_scale: 1.0,
        }
    }
}

/// Everything the foreground energy needs apart from the noise sample and
/// the adapters.
#[derive(Debug, Clone)]
pub struct FgProblem {
    pub dims: LatentDims,
    pub character_ids: Vec<String>,
    /// Stacked features of the whole bank; the queries of every ICSA call.
    pub x_bank: Array2<f64>,
    /// Features of the masked characters, in mask order.
    pub features: Vec<Array2<f64>>,
    /// η_j · m_refined_j, flattened row-major.
    pub masks: Vec<Array1<f64>>,
    /// For each character, the ICSA output row shown at each pixel.
    pub assignment: Vec<Vec<usize>>,
}

/// A seeded permutation of the bank rows, tiled over all pixels in
/// row-major order.
pub fn pixel_assignment(n_rows: usize, n_pixels: usize, seed: u64, character: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n_rows).collect();
    perm.shuffle(&mut seeds::rng(seed, tags!["assignment", character]));
    (0..n_pixels).map(|p| perm[p % n_rows]).collect()
}

impl FgProblem {
    pub fn new(mask_set: &MaskSet, bank: &CharacterBank, seed: u64) -> Result<Self, LatentError> {
        let dims = mask_set.dims();
        let features = mask_set
            .per_character
            .iter()
            .map(|m| {
                bank.features_of(&m.character_id)
                    .cloned()
                    .ok_or_else(|| LatentError::CharacterMaskMismatch(m.character_id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let masks = mask_set
            .per_character
            .iter()
            .map(|m| m.m_refined.iter().map(|v| m.eta * v).collect())
            .collect();
        Self::from_parts(
            dims,
            mask_set.per_character.iter().map(|m| m.character_id.clone()).collect(),
            bank.stacked(),
            features,
            masks,
            seed,
        )
    }

    pub fn from_parts(
        dims: LatentDims,
        character_ids: Vec<String>,
        x_bank: Array2<f64>,
        features: Vec<Array2<f64>>,
        masks: Vec<Array1<f64>>,
        seed: u64,
    ) -> Result<Self, LatentError> {
        let d = x_bank.ncols();
        if features.len() != masks.len() || character_ids.len() != masks.len() {
            return Err(LatentError::CharacterMaskMismatch(format!(
                "{} features, {} masks",
                features.len(),
                masks.len()
            )));
        }
        if features.iter().any(|f| f.ncols() != d) || masks.iter().any(|m| m.len() != dims.pixels()) {
            return Err(LatentError::ShapeMismatch("features or masks disagree with the bank".into()));
        }
        let assignment = (0..masks.len())
            .map(|i| pixel_assignment(x_bank.nrows(), dims.pixels(), seed, i))
            .collect();
        Ok(FgProblem {
            dims,
            character_ids,
            x_bank,
            features,
            masks,
            assignment,
        })
    }

    pub fn n_chars(&self) -> usize {
        self.masks.len()
    }

    pub fn d(&self) -> usize {
        self.x_bank.ncols()
    }

    fn check_noise(&self, z: &LatentTensor) -> Result<(), LatentError> {
        if z.dims != self.dims || z.values.ncols() != self.d() {
            return Err(LatentError::ShapeMismatch(format!(
                "noise {}x{} does not match {}x{}",
                z.dims,
                z.values.ncols(),
                self.dims,
                self.d()
            )));
        }
        Ok(())
    }

    /// ICSA for character `i` at every layer, with the layer weights given
    /// by `weights`, plus the outputs spread over the pixel grid.
    fn grids(&self, i: usize, weights: &[LayerProjections]) -> Result<Vec<(IcsaForward, Array2<f64>)>, LatentError> {
        weights
            .iter()
            .map(|w| {
                let fw = icsa_forward(&self.x_bank, &self.features[i], w)?;
                let grid = fw.output.select(Axis(0), &self.assignment[i]);
                Ok((fw, grid))
            })
            .collect()
    }

    fn adapted(proj: &AttentionProjections, adapters: &AdapterSet, i: usize) -> Vec<LayerProjections> {
        proj.layers
            .iter()
            .zip(&adapters.adapters[i])
            .map(|(w, a)| LayerProjections {
                wq: a[0].adapted(&w.wq),
                wk: a[1].adapted(&w.wk),
                wv: a[2].adapted(&w.wv),
            })
            .collect()
    }

    fn check_adapters(&self, proj: &AttentionProjections, adapters: &AdapterSet) -> Result<(), LatentError> {
        if adapters.adapters.len() != self.n_chars() || adapters.adapters.iter().any(|a| a.len() != proj.n_layers()) {
            return Err(LatentError::ShapeMismatch("adapter set does not match characters × layers".into()));
        }
        Ok(())
    }

    /// Σ_l m ⊙ z ⊙ g_l.
    fn conditional(m: &Array1<f64>, z: &Array2<f64>, grids: &[Array2<f64>]) -> Array2<f64> {
        let mut acc = Array2::zeros(z.dim());
        for g in grids {
            for ((p, c), a) in acc.indexed_iter_mut() {
                *a += m[p] * z[[p, c]] * g[[p, c]];
            }
        }
        acc
    }

    /// Σ_l 2σ(z ⊙ g_l).
    fn unconditional(z: &Array2<f64>, grids: &[Array2<f64>]) -> Array2<f64> {
        let mut acc = Array2::zeros(z.dim());
        for g in grids {
            for ((p, c), a) in acc.indexed_iter_mut() {
                *a += 2.0 * sigmoid(z[[p, c]] * g[[p, c]]);
            }
        }
        acc
    }

    /// Masked guidance with the base projections, shape (chars, pixels, d).
    pub fn theta(&self, z: &LatentTensor, proj: &AttentionProjections) -> Result<Array3<f64>, LatentError> {
        self.check_noise(z)?;
        let per_char = (0..self.n_chars())
            .into_par_iter()
            .map(|i| {
                let grids: Vec<Array2<f64>> = self.grids(i, &proj.layers)?.into_iter().map(|(_, g)| g).collect();
                Ok(Self::conditional(&self.masks[i], &z.values, &grids))
            })
            .collect::<Result<Vec<_>, LatentError>>()?;
        Ok(stack(per_char))
    }

    fn theta_sigma_char(
        &self,
        i: usize,
        z: &Array2<f64>,
        proj: &AttentionProjections,
        adapters: &AdapterSet,
        gp: GuidanceParams,
    ) -> Result<(Vec<(IcsaForward, Array2<f64>)>, Array2<f64>), LatentError> {
        let fwd = self.grids(i, &Self::adapted(proj, adapters, i))?;
        let grids: Vec<Array2<f64>> = fwd.iter().map(|(_, g)| g.clone()).collect();
        let cond = Self::conditional(&self.masks[i], z, &grids);
        let uncond = Self::unconditional(z, &grids);
        let a = gp.delta_omega * gp.guidance_scale;
        let b = (1.0 - gp.delta_omega) / proj.n_layers() as f64;
        Ok((fwd, cond * a + uncond * b))
    }

    /// Adapted guidance blended with the sigmoid branch, shape (chars, pixels, d).
    pub fn theta_sigma(
        &self,
        z: &LatentTensor,
        proj: &AttentionProjections,
        adapters: &AdapterSet,
        gp: GuidanceParams,
    ) -> Result<Array3<f64>, LatentError> {
        self.check_noise(z)?;
        self.check_adapters(proj, adapters)?;
        let per_char = (0..self.n_chars())
            .into_par_iter()
            .map(|i| Ok(self.theta_sigma_char(i, &z.values, proj, adapters, gp)?.1))
            .collect::<Result<Vec<_>, LatentError>>()?;
        Ok(stack(per_char))
    }

    /// ‖θ − θ_σ‖².
    pub fn energy(
        &self,
        z: &LatentTensor,
        proj: &AttentionProjections,
        adapters: &AdapterSet,
        gp: GuidanceParams,
    ) -> Result<f64, LatentError> {
        let theta = self.theta(z, proj)?;
        let ts = self.theta_sigma(z, proj, adapters, gp)?;
        Ok(squared_distance(&theta, &ts))
    }

    /// Energy and its gradient with respect to every adapter matrix.
    /// `theta` is the output of [`FgProblem::theta`] for the same noise.
    pub fn energy_and_gradient(
        &self,
        z: &LatentTensor,
        theta: &Array3<f64>,
        proj: &AttentionProjections,
        adapters: &AdapterSet,
        gp: GuidanceParams,
    ) -> Result<(f64, AdapterSet), LatentError> {
        self.check_noise(z)?;
        self.check_adapters(proj, adapters)?;
        let a = gp.delta_omega * gp.guidance_scale;
        let b = (1.0 - gp.delta_omega) / proj.n_layers() as f64;
        let zv = &z.values;
        let per_char = (0..self.n_chars())
            .into_par_iter()
            .map(|i| {
                let (fwd, ts) = self.theta_sigma_char(i, zv, proj, adapters, gp)?;
                let r = &ts - &theta.index_axis(Axis(0), i);
                let energy: f64 = r.iter().map(|v| v * v).sum();
                let m = &self.masks[i];
                let mut grads = Vec::with_capacity(fwd.len());
                for (l, (fw, grid)) in fwd.iter().enumerate() {
                    let mut d_out = Array2::<f64>::zeros(fw.output.dim());
                    for (p, &row) in self.assignment[i].iter().enumerate() {
                        for c in 0..zv.ncols() {
                            let zc = zv[[p, c]];
                            let s = sigmoid(zc * grid[[p, c]]);
                            let d_grid = 2.0 * r[[p, c]] * (a * m[p] * zc + b * 2.0 * s * (1.0 - s) * zc);
                            d_out[[row, c]] += d_grid;
                        }
                    }
                    let (dwq, dwk, dwv) = icsa_backward(&self.x_bank, &self.features[i], fw, &d_out);
                    let ad = &adapters.adapters[i][l];
                    grads.push([ad[0].backward(&dwq), ad[1].backward(&dwk), ad[2].backward(&dwv)]);
                }
                Ok((energy, grads))
            })
            .collect::<Result<Vec<_>, LatentError>>()?;
        let mut grad = adapters.clone();
        let mut energy = 0.0;
        for (i, (e, layer_grads)) in per_char.into_iter().enumerate() {
            energy += e;
            for (l, g) in layer_grads.into_iter().enumerate() {
                for (slot, (dd, du)) in grad.adapters[i][l].iter_mut().zip(g) {
                    slot.down = dd;
                    slot.up = du;
                }
            }
        }
        Ok((energy, grad))
    }

    /// Pixelwise owner of the composite mask: the character with the largest
    /// weighted mask value, `None` where every mask is zero.
    pub fn owners(&self) -> Vec<Option<usize>> {
        (0..self.dims.pixels())
            .map(|p| {
                let mut best: Option<(usize, f64)> = None;
                for (i, m) in self.masks.iter().enumerate() {
                    if m[p] > 0.0 && best.map_or(true, |(_, v)| m[p] > v) {
                        best = Some((i, m[p]));
                    }
                }
                best.map(|(i, _)| i)
            })
            .collect()
    }

    /// Writes each owned pixel's row from that owner's slice of `per_char`.
    pub fn compose(&self, per_char: &Array3<f64>) -> LatentTensor {
        let mut out = Array2::zeros((self.dims.pixels(), self.d()));
        for (p, owner) in self.owners().into_iter().enumerate() {
            if let Some(i) = owner {
                out.row_mut(p).assign(&per_char.slice(ndarray::s![i, p, ..]));
            }
        }
        LatentTensor::new(self.dims, out)
    }
}

fn stack(per_char: Vec<Array2<f64>>) -> Array3<f64> {
    let views: Vec<_> = per_char.iter().map(|a| a.view()).collect();
    ndarray::stack(Axis(0), &views).expect("characters share the latent shape")
}

pub fn squared_distance(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn theta(problem: &FgProblem, z: &LatentTensor, proj: &AttentionProjections) -> Result<Array3<f64>, LatentError> {
    problem.theta(z, proj)
}

pub fn theta_sigma(
    problem: &FgProblem,
    z: &LatentTensor,
    proj: &AttentionProjections,
    adapters: &AdapterSet,
    gp: GuidanceParams,
) -> Result<Array3<f64>, LatentError> {
    problem.theta_sigma(z, proj, adapters, gp)
}

pub fn fg_energy(
    problem: &FgProblem,
    z: &LatentTensor,
    proj: &AttentionProjections,
    adapters: &AdapterSet,
    gp: GuidanceParams,
) -> Result<f64, LatentError> {
    problem.energy(z, proj, adapters, gp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FgParams {
    pub steps: usize,
    pub guidance: GuidanceParams,
    /// Initial step size of each adapter update; halved until the energy
    /// does not increase.
    pub lr: f64,
    /// Inner updates at the first step; decreases linearly to 1.
    pub max_inner: usize,
    pub max_backtracks: usize,
    pub lora: LoraShape,
}

impl Default for FgParams {
    fn default() -> Self {
        FgParams {
            steps: 20,
            guidance: GuidanceParams::default(),
            lr: 0.05,
            max_inner: 5,
            max_backtracks: 30,
            lora: LoraShape::default(),
        }
    }
}

/// Inner updates at step index `s` (0-based) of `steps`.
pub fn inner_updates(s: usize, steps: usize, max_inner: usize) -> usize {
    if steps <= 1 {
        return max_inner;
    }
    let span = (max_inner - 1) as f64;
    (max_inner as f64 - span * s as f64 / (steps - 1) as f64).round() as usize
}

/// Number of leading steps that write into the foreground latent.
pub fn compose_steps(steps: usize) -> usize {
    steps.div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepEnergy {
    /// Timestep, counting down from `steps` to 1.
    pub t: usize,
    pub inner_updates: usize,
    pub before: f64,
    pub after: f64,
}

#[derive(Debug, Clone)]
pub struct FgOutcome {
    pub z_fg: LatentTensor,
    pub trace: Vec<StepEnergy>,
    pub adapters: AdapterSet,
}

/// Fits the adapters to the energy at every timestep and composes the
/// adapted guidance into the foreground latent during the first quarter.
pub fn optimize_fg_latent(
    problem: &FgProblem,
    proj: &AttentionProjections,
    params: &FgParams,
    seed: u64,
) -> Result<FgOutcome, LatentError> {
    if params.steps < 4 {
        return Err(LatentError::TooFewSteps(params.steps));
    }
    let mut adapters = AdapterSet::init(problem.n_chars(), proj.n_layers(), problem.d(), params.lora, seed);
    let mut z_fg = LatentTensor::zeros(problem.dims, problem.d());
    let mut trace = Vec::with_capacity(params.steps);
    let gp = params.guidance;
    for s in 0..params.steps {
        let t = params.steps - s;
        let z = gaussian_latent(problem.dims, problem.d(), seed, tags!["fg-noise", t]);
        let theta = problem.theta(&z, proj)?;
        let r = inner_updates(s, params.steps, params.max_inner);
        let before = squared_distance(&theta, &problem.theta_sigma(&z, proj, &adapters, gp)?);
        if !before.is_finite() {
            return Err(LatentError::NonFiniteEnergy { t, energy: before });
        }
        let mut current = before;
        for _ in 0..r {
            let (_, grad) = problem.energy_and_gradient(&z, &theta, proj, &adapters, gp)?;
            let mut lr = params.lr;
            let mut accepted = false;
            for _ in 0..params.max_backtracks {
                let mut trial = adapters.clone();
                trial.add_scaled(-lr, &grad);
                let e = squared_distance(&theta, &problem.theta_sigma(&z, proj, &trial, gp)?);
                if e.is_finite() && e <= current {
                    adapters = trial;
                    current = e;
                    accepted = true;
                    break;
                }
                lr *= 0.5;
            }
            if !accepted {
                log::debug!("step {t}: no descent step found, keeping adapters");
                break;
            }
        }
        trace.push(StepEnergy {
            t,
            inner_updates: r,
            before,
            after: current,
        });
        if s < compose_steps(params.steps) {
            z_fg = problem.compose(&problem.theta_sigma(&z, proj, &adapters, gp)?);
        }
    }
    Ok(FgOutcome { z_fg, trace, adapters })
}
