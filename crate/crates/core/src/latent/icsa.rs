use ndarray::{Array1, Array2, Axis};

use super::proj::LayerProjections;
use super::LatentError;
use crate::maskgen::softmax_rows;

/// Intermediate values of one ICSA evaluation, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct IcsaForward {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// (N_bank × n_char_tokens), rows sum to 1.
    pub weights: Array2<f64>,
    /// (N_bank × d).
    pub output: Array2<f64>,
}

fn check(x_bank: &Array2<f64>, f: &Array2<f64>, w: &LayerProjections) -> Result<(), LatentError> {
    let d = w.wq.nrows();
    if x_bank.ncols() != d || f.ncols() != d || w.wk.nrows() != d || w.wv.nrows() != d || w.wq.ncols() != w.wk.ncols() {
        return Err(LatentError::ShapeMismatch(format!(
            "X {:?}, f {:?}, Wq {:?}, Wk {:?}, Wv {:?}",
            x_bank.dim(),
            f.dim(),
            w.wq.dim(),
            w.wk.dim(),
            w.wv.dim()
        )));
    }
    Ok(())
}

/// softmax((X Wq)(f Wk)ᵀ / √d) (f Wv): the bank's tokens query one
/// character's keys and values.
pub fn icsa_forward(x_bank: &Array2<f64>, f: &Array2<f64>, w: &LayerProjections) -> Result<IcsaForward, LatentError> {
    check(x_bank, f, w)?;
    let q = x_bank.dot(&w.wq);
    let k = f.dot(&w.wk);
    let v = f.dot(&w.wv);
    let scale = (w.wq.nrows() as f64).sqrt();
    let weights = softmax_rows(&(q.dot(&k.t()) / scale));
    let output = weights.dot(&v);
    Ok(IcsaForward { q, k, v, weights, output })
}

pub fn icsa(x_bank: &Array2<f64>, f: &Array2<f64>, w: &LayerProjections) -> Result<Array2<f64>, LatentError> {
    Ok(icsa_forward(x_bank, f, w)?.output)
}

/// Gradients with respect to (Wq, Wk, Wv) given the gradient on the output.
pub fn icsa_backward(
    x_bank: &Array2<f64>,
    f: &Array2<f64>,
    fw: &IcsaForward,
    d_out: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let scale = (x_bank.ncols() as f64).sqrt();
    let p = &fw.weights;
    let dv = p.t().dot(d_out);
    let dp = d_out.dot(&fw.v.t());
    let row_dot: Array1<f64> = (&dp * p).sum_axis(Axis(1));
    let ds = p * &(&dp - &row_dot.insert_axis(Axis(1)));
    let dq = ds.dot(&fw.k) / scale;
    let dk = ds.t().dot(&fw.q) / scale;
    (x_bank.t().dot(&dq), f.t().dot(&dk), f.t().dot(&dv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::proj::AttentionProjections;
    use rand::{Rng, SeedableRng};

    fn rand_mat(rng: &mut impl Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((r, c), || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn zero_query_weights_average_values() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut w = AttentionProjections::new(4, 1, 0).layers.remove(0);
        w.wq.fill(0.0);
        let x = rand_mat(&mut rng, 6, 4);
        let f = rand_mat(&mut rng, 3, 4);
        let out = icsa(&x, &f, &w).unwrap();
        let mean = f.dot(&w.wv).mean_axis(Axis(0)).unwrap();
        for row in out.rows() {
            for (a, b) in row.iter().zip(mean.iter()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bank_of_several_frames() {
        // n_p = 3 frames of N = 5 tokens each
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let w = AttentionProjections::new(8, 1, 0).layers.remove(0);
        let x = rand_mat(&mut rng, 15, 8);
        let f = rand_mat(&mut rng, 4, 8);
        let fw = icsa_forward(&x, &f, &w).unwrap();
        assert_eq!(fw.weights.dim(), (15, 4));
        assert_eq!(fw.output.dim(), (15, 8));
        let frame2 = fw.weights.slice(ndarray::s![5..10, ..]);
        assert_eq!(frame2.dim(), (5, 4));
    }

    #[test]
    fn four_by_four_scalar_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = 4;
        let w = LayerProjections {
            wq: rand_mat(&mut rng, d, d),
            wk: rand_mat(&mut rng, d, d),
            wv: rand_mat(&mut rng, d, d),
        };
        let x = rand_mat(&mut rng, 4, d);
        let f = rand_mat(&mut rng, 4, d);
        let out = icsa(&x, &f, &w).unwrap();
        let mm = |a: &Array2<f64>, b: &Array2<f64>, i: usize, j: usize| (0..d).map(|t| a[[i, t]] * b[[t, j]]).sum::<f64>();
        for i in 0..4 {
            let qi: Vec<f64> = (0..d).map(|c| mm(&x, &w.wq, i, c)).collect();
            let logits: Vec<f64> = (0..4)
                .map(|j| (0..d).map(|c| qi[c] * mm(&f, &w.wk, j, c)).sum::<f64>() / 2.0)
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for c in 0..d {
                let want: f64 = (0..4).map(|j| logits[j].exp() / z * mm(&f, &w.wv, j, c)).sum();
                assert!((out[[i, c]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch() {
        let w = AttentionProjections::new(4, 1, 0).layers.remove(0);
        let x = Array2::zeros((3, 5));
        let f = Array2::zeros((3, 4));
        assert!(matches!(icsa(&x, &f, &w), Err(LatentError::ShapeMismatch(_))));
    }

    fn slot(w: &mut LayerProjections, which: usize) -> &mut Array2<f64> {
        match which {
            0 => &mut w.wq,
            1 => &mut w.wk,
            _ => &mut w.wv,
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let d = 5;
        let w = LayerProjections {
            wq: rand_mat(&mut rng, d, d),
            wk: rand_mat(&mut rng, d, d),
            wv: rand_mat(&mut rng, d, d),
        };
        let x = rand_mat(&mut rng, 7, d);
        let f = rand_mat(&mut rng, 3, d);
        let g = rand_mat(&mut rng, 7, d);
        let loss = |w: &LayerProjections| (&icsa(&x, &f, w).unwrap() * &g).sum();
        let fw = icsa_forward(&x, &f, &w).unwrap();
        let grads = icsa_backward(&x, &f, &fw, &g);
        let h = 1e-6;
        for (which, grad) in [&grads.0, &grads.1, &grads.2].into_iter().enumerate() {
            for idx in [(0, 0), (2, 3), (4, 1)] {
                let mut wp = w.clone();
                let mut wm = w.clone();
                slot(&mut wp, which)[idx] += h;
                slot(&mut wm, which)[idx] -= h;
                let fd = (loss(&wp) - loss(&wm)) / (2.0 * h);
                assert!((fd - grad[idx]).abs() < 1e-7 * (1.0 + fd.abs()), "{which} {idx:?}: {fd} vs {}", grad[idx]);
            }
        }
    }
}
