use ndarray::{s, Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::proj::{AttentionProjections, LayerProjections};
use super::{gaussian_latent, LatentError, LatentTensor};
use crate::maskgen::{encode_tokens, sigmoid};
use crate::tags;

/// Query rows processed together; fixed so results do not depend on the
/// thread count.
const BLOCK: usize = 64;

struct Keys {
    k: Array2<f64>,
    v: Array2<f64>,
    scale: f64,
}

fn keys(zf: &Array2<f64>, w: &LayerProjections) -> Keys {
    Keys {
        k: zf.dot(&w.wk),
        v: zf.dot(&w.wv),
        scale: (w.wq.nrows() as f64).sqrt(),
    }
}

fn check(zb: &LatentTensor, zf: &LatentTensor, w: &LayerProjections) -> Result<(), LatentError> {
    if zb.dims != zf.dims || zb.values.ncols() != zf.values.ncols() || zb.values.ncols() != w.wq.nrows() {
        return Err(LatentError::ShapeMismatch(format!(
            "background {}x{}, foreground {}x{}, projection {:?}",
            zb.dims,
            zb.values.ncols(),
            zf.dims,
            zf.values.ncols(),
            w.wq.dim()
        )));
    }
    Ok(())
}

/// Sigmoid affinities of a block of queries, each row divided by its sum.
fn block_weights(q: &Array2<f64>, keys: &Keys) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let a = (q.dot(&keys.k.t()) / keys.scale).mapv(sigmoid);
    let rho = a.sum_axis(Axis(1));
    let wn = &a / &rho.view().insert_axis(Axis(1));
    (a, wn, rho)
}

fn blocks(n: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(BLOCK).map(|s| (s, (s + BLOCK).min(n))).collect()
}

/// Row-normalized sigmoid cross-attention weights (pixels × pixels).
pub fn raca_weights(zb: &LatentTensor, zf: &LatentTensor, w: &LayerProjections) -> Result<Array2<f64>, LatentError> {
    check(zb, zf, w)?;
    let keys = keys(&zf.values, w);
    let q = zb.values.dot(&w.wq);
    Ok(block_weights(&q, &keys).1)
}

/// Background queries attend to foreground keys and values.
pub fn raca(zb: &LatentTensor, zf: &LatentTensor, w: &LayerProjections) -> Result<LatentTensor, LatentError> {
    check(zb, zf, w)?;
    let keys = keys(&zf.values, w);
    let q = zb.values.dot(&w.wq);
    let parts: Vec<Array2<f64>> = blocks(q.nrows())
        .into_par_iter()
        .map(|(a, b)| {
            let (_, wn, _) = block_weights(&q.slice(s![a..b, ..]).to_owned(), &keys);
            wn.dot(&keys.v)
        })
        .collect();
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    Ok(LatentTensor::new(
        zb.dims,
        ndarray::concatenate(Axis(0), &views).expect("blocks share d"),
    ))
}

/// Sum of the background token vectors; every token is broadcast over the
/// whole grid, so only the sum enters the objective.
pub fn background_tokens(bg_prompt: &str, d: usize, seed: u64) -> Array1<f64> {
    encode_tokens(bg_prompt, d, seed).vectors.sum_axis(Axis(0))
}

/// G(Z_bg) = Σ_h Σ(Z_bg ⊙ h) + Σ_l Σ(Z_fg ⊙ RACA_l(Z_bg, Z_fg)).
pub fn background_objective(
    zb: &LatentTensor,
    zf: &LatentTensor,
    h_sum: &Array1<f64>,
    proj: &AttentionProjections,
) -> Result<f64, LatentError> {
    let mut g = zb.values.dot(h_sum).sum();
    for w in &proj.layers {
        g += (&zf.values * &raca(zb, zf, w)?.values).sum();
    }
    Ok(g)
}

/// ∇ of [`background_objective`] with respect to Z_bg.
pub fn background_gradient(
    zb: &LatentTensor,
    zf: &LatentTensor,
    h_sum: &Array1<f64>,
    proj: &AttentionProjections,
) -> Result<Array2<f64>, LatentError> {
    let n = zb.values.nrows();
    let mut grad = Array2::zeros(zb.values.dim());
    for mut row in grad.rows_mut() {
        row.assign(h_sum);
    }
    for w in &proj.layers {
        check(zb, zf, w)?;
        let keys = keys(&zf.values, w);
        let q = zb.values.dot(&w.wq);
        let parts: Vec<Array2<f64>> = blocks(n)
            .into_par_iter()
            .map(|(a, b)| {
                let (act, wn, rho) = block_weights(&q.slice(s![a..b, ..]).to_owned(), &keys);
                let out = wn.dot(&keys.v);
                let d_out = zf.values.slice(s![a..b, ..]);
                // Σ_c dWn·Wn per row equals Σ_c dOut·Out
                let beta = (&d_out * &out).sum_axis(Axis(1));
                let d_wn = d_out.dot(&keys.v.t());
                let mut ds = d_wn;
                for ((r, c), v) in ds.indexed_iter_mut() {
                    let a_rc = act[[r, c]];
                    *v = (*v - beta[r]) / rho[r] * a_rc * (1.0 - a_rc);
                }
                let dq = ds.dot(&keys.k) / keys.scale;
                dq.dot(&w.wq.t())
            })
            .collect();
        for ((a, b), part) in blocks(n).into_iter().zip(parts) {
            let mut slot = grad.slice_mut(s![a..b, ..]);
            slot += &part;
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BgParams {
    pub steps: usize,
    /// Step size of each gradient update.
    pub lambda: f64,
}

impl Default for BgParams {
    fn default() -> Self {
        BgParams { steps: 20, lambda: 0.95 }
    }
}

/// `steps` updates `Z ← Z − λ ∇G(Z)` from a seeded Gaussian start.
pub fn denoise_background(
    z_fg: &LatentTensor,
    bg_prompt: &str,
    proj: &AttentionProjections,
    params: &BgParams,
    seed: u64,
) -> Result<LatentTensor, LatentError> {
    if bg_prompt.trim().is_empty() {
        return Err(LatentError::EmptyPrompt);
    }
    let d = z_fg.values.ncols();
    let h_sum = background_tokens(bg_prompt, d, seed);
    let start = gaussian_latent(z_fg.dims, d, seed, tags!["bg-init"]);
    denoise_from(start, z_fg, &h_sum, proj, params)
}

/// [`denoise_background`] from an explicit start and token sum.
pub fn denoise_from(
    mut zb: LatentTensor,
    z_fg: &LatentTensor,
    h_sum: &Array1<f64>,
    proj: &AttentionProjections,
    params: &BgParams,
) -> Result<LatentTensor, LatentError> {
    for step in 0..params.steps {
        let g = background_gradient(&zb, z_fg, h_sum, proj)?;
        zb.values.scaled_add(-params.lambda, &g);
        if zb.values.iter().any(|v| !v.is_finite()) {
            return Err(LatentError::NonFiniteLatent { step });
        }
    }
    Ok(zb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maskgen::LatentDims;
    use rand::{Rng, SeedableRng};

    fn rand_latent(dims: LatentDims, d: usize, rng: &mut impl Rng) -> LatentTensor {
        LatentTensor::new(dims, Array2::from_shape_simple_fn((dims.pixels(), d), || rng.gen_range(-1.0..1.0)))
    }

    #[test]
    fn zero_queries_average_values() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let dims = LatentDims::new(3, 3);
        let mut w = AttentionProjections::new(4, 1, 0).layers.remove(0);
        w.wq.fill(0.0);
        let zb = rand_latent(dims, 4, &mut rng);
        let zf = rand_latent(dims, 4, &mut rng);
        let out = raca(&zb, &zf, &w).unwrap();
        let mean = zf.values.dot(&w.wv).mean_axis(Axis(0)).unwrap();
        for row in out.values.rows() {
            assert!(row.iter().zip(mean.iter()).all(|(a, b)| (a - b).abs() < 1e-15));
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let dims = LatentDims::new(12, 12);
        let w = AttentionProjections::new(8, 1, 0).layers.remove(0);
        let zb = rand_latent(dims, 8, &mut rng);
        let zf = rand_latent(dims, 8, &mut rng);
        let wn = raca_weights(&zb, &zf, &w).unwrap();
        assert!(wn.sum_axis(Axis(1)).iter().all(|s| (s - 1.0).abs() < 1e-9));
    }

    #[test]
    fn four_pixel_scalar_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let dims = LatentDims::new(2, 2);
        let d = 3;
        let w = LayerProjections {
            wq: Array2::from_shape_simple_fn((d, d), || rng.gen_range(-1.0..1.0)),
            wk: Array2::from_shape_simple_fn((d, d), || rng.gen_range(-1.0..1.0)),
            wv: Array2::from_shape_simple_fn((d, d), || rng.gen_range(-1.0..1.0)),
        };
        let zb = rand_latent(dims, d, &mut rng);
        let zf = rand_latent(dims, d, &mut rng);
        let out = raca(&zb, &zf, &w).unwrap();
        let lin = |z: &LatentTensor, m: &Array2<f64>, p: usize, c: usize| (0..d).map(|t| z.values[[p, t]] * m[[t, c]]).sum::<f64>();
        for p in 0..4 {
            let aff: Vec<f64> = (0..4)
                .map(|j| {
                    let s: f64 = (0..d).map(|c| lin(&zb, &w.wq, p, c) * lin(&zf, &w.wk, j, c)).sum();
                    1.0 / (1.0 + (-s / (d as f64).sqrt()).exp())
                })
                .collect();
            let tot: f64 = aff.iter().sum();
            for c in 0..d {
                let want: f64 = (0..4).map(|j| aff[j] / tot * lin(&zf, &w.wv, j, c)).sum();
                assert!((out.values[[p, c]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let dims = LatentDims::new(8, 8);
        let d = 16;
        let proj = AttentionProjections::new(d, 2, 4);
        let zb = rand_latent(dims, d, &mut rng);
        let zf = rand_latent(dims, d, &mut rng);
        let h = Array1::from_shape_simple_fn(d, || rng.gen_range(-0.3..0.3));
        let g = background_gradient(&zb, &zf, &h, &proj).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for k in (0..dims.pixels() * d).step_by(37) {
            let (p, c) = (k / d, k % d);
            let mut plus = zb.clone();
            plus.values[[p, c]] += eps;
            let mut minus = zb.clone();
            minus.values[[p, c]] -= eps;
            let fd = (background_objective(&plus, &zf, &h, &proj).unwrap()
                - background_objective(&minus, &zf, &h, &proj).unwrap())
                / (2.0 * eps);
            worst = worst.max((fd - g[[p, c]]).abs() / fd.abs().max(g[[p, c]].abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn zero_step_size_keeps_start() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let dims = LatentDims::new(4, 4);
        let proj = AttentionProjections::new(4, 2, 5);
        let zb = rand_latent(dims, 4, &mut rng);
        let zf = rand_latent(dims, 4, &mut rng);
        let h = background_tokens("a quiet market", 4, 5);
        let out = denoise_from(zb.clone(), &zf, &h, &proj, &BgParams { steps: 20, lambda: 0.0 }).unwrap();
        assert_eq!(out, zb);
    }

    #[test]
    fn null_objective_keeps_start() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let dims = LatentDims::new(4, 4);
        let proj = AttentionProjections::new(4, 2, 6);
        let zb = rand_latent(dims, 4, &mut rng);
        let zf = LatentTensor::zeros(dims, 4);
        let h = Array1::zeros(4);
        let out = denoise_from(zb.clone(), &zf, &h, &proj, &BgParams::default()).unwrap();
        assert_eq!(out, zb);
    }

    #[test]
    fn deterministic_and_prompt_checked() {
        let dims = LatentDims::new(6, 6);
        let proj = AttentionProjections::new(4, 2, 7);
        let zf = gaussian_latent(dims, 4, 7, tags!["zf"]);
        let a = denoise_background(&zf, "a forest", &proj, &BgParams::default(), 7).unwrap();
        let b = denoise_background(&zf, "a forest", &proj, &BgParams::default(), 7).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            denoise_background(&zf, " ", &proj, &BgParams::default(), 7),
            Err(LatentError::EmptyPrompt)
        ));
    }
}
