use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::seeds;
use crate::tags;

/// Query, key and value projections of one attention layer. Rows are
/// input features: `q = x · wq`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerProjections {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProjections {
    pub layers: Vec<LayerProjections>,
}

/// Gram–Schmidt on the rows of a seeded Gaussian matrix.
pub fn orthogonal(d: usize, rng: &mut impl Rng) -> Array2<f64> {
    loop {
        let mut m = Array2::from_shape_simple_fn((d, d), || rng.sample::<f64, _>(StandardNormal));
        let mut ok = true;
        for i in 0..d {
            for j in 0..i {
                let p = m.row(i).dot(&m.row(j));
                let rj = m.row(j).to_owned();
                m.row_mut(i).scaled_add(-p, &rj);
            }
            let n = m.row(i).dot(&m.row(i)).sqrt();
            if n < 1e-8 {
                ok = false;
                break;
            }
            m.row_mut(i).mapv_inplace(|v| v / n);
        }
        if ok {
            return m;
        }
    }
}

impl AttentionProjections {
    /// Orthogonal matrices scaled by 1/√d.
    pub fn new(d: usize, n_layers: usize, seed: u64) -> Self {
        let scale = 1.0 / (d as f64).sqrt();
        let layers = (0..n_layers)
            .map(|l| {
                let make = |name: &str| {
                    let mut rng = seeds::rng(seed, tags!["projection", l, name]);
                    orthogonal(d, &mut rng) * scale
                };
                LayerProjections {
                    wq: make("q"),
                    wk: make("k"),
                    wv: make("v"),
                }
            })
            .collect();
        AttentionProjections { layers }
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn d(&self) -> usize {
        self.layers.first().map_or(0, |l| l.wq.nrows())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraShape {
    pub rank: usize,
    pub alpha: f64,
}

impl Default for LoraShape {
    fn default() -> Self {
        LoraShape { rank: 8, alpha: 16.0 }
    }
}

/// Low-rank update `scale · down · up` added to a base projection.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// d × rank.
    pub down: Array2<f64>,
    /// rank × d.
    pub up: Array2<f64>,
    pub scale: f64,
}

impl LoraAdapter {
    /// Gaussian `down` (std 1/√d) and zero `up`, so the adapter starts as
    /// the identity update.
    pub fn init(d: usize, shape: LoraShape, rng: &mut impl Rng) -> Self {
        let std = 1.0 / (d as f64).sqrt();
        LoraAdapter {
            down: Array2::from_shape_simple_fn((d, shape.rank), || std * rng.sample::<f64, _>(StandardNormal)),
            up: Array2::zeros((shape.rank, d)),
            scale: shape.alpha / shape.rank as f64,
        }
    }

    pub fn adapted(&self, base: &Array2<f64>) -> Array2<f64> {
        base + &(self.down.dot(&self.up) * self.scale)
    }

    /// Chain rule from a gradient on the adapted weight to (down, up).
    pub fn backward(&self, d_weight: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        (
            d_weight.dot(&self.up.t()) * self.scale,
            self.down.t().dot(d_weight) * self.scale,
        )
    }
}

/// One adapter per (character, layer, projection); projections ordered q, k, v.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSet {
    pub adapters: Vec<Vec<[LoraAdapter; 3]>>,
}

impl AdapterSet {
    pub fn init(n_chars: usize, n_layers: usize, d: usize, shape: LoraShape, seed: u64) -> Self {
        let adapters = (0..n_chars)
            .map(|i| {
                (0..n_layers)
                    .map(|l| {
                        let mut rng = seeds::rng(seed, tags!["lora", i, l]);
                        [
                            LoraAdapter::init(d, shape, &mut rng),
                            LoraAdapter::init(d, shape, &mut rng),
                            LoraAdapter::init(d, shape, &mut rng),
                        ]
                    })
                    .collect()
            })
            .collect();
        AdapterSet { adapters }
    }

    /// Same shapes, every matrix zero; used to hold gradients.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|v| *v = 0.0);
        z
    }

    fn matrices(&self) -> impl Iterator<Item = &Array2<f64>> {
        self.adapters.iter().flatten().flatten().flat_map(|a| [&a.down, &a.up])
    }

    fn matrices_mut(&mut self) -> impl Iterator<Item = &mut Array2<f64>> {
        self.adapters
            .iter_mut()
            .flatten()
            .flatten()
            .flat_map(|a| [&mut a.down, &mut a.up])
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for m in self.matrices_mut() {
            m.iter_mut().for_each(&mut f);
        }
    }

    /// Every trainable value in a fixed order.
    pub fn flatten(&self) -> Vec<f64> {
        self.matrices().flat_map(|m| m.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        self.for_each_mut(|v| *v = *it.next().expect("length matches"));
    }

    /// `self += k · other`.
    pub fn add_scaled(&mut self, k: f64, other: &AdapterSet) {
        for (a, b) in self.matrices_mut().zip(other.matrices()) {
            a.scaled_add(k, b);
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.matrices().map(|m| m.iter().map(|v| v * v).sum::<f64>()).sum()
    }
}
