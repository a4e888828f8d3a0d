use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{LatentDims, MaskError};
use crate::layout::CharacterBox;
use crate::seeds;
use crate::tags;

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";

/// Frequencies per coordinate in the positional features.
const N_FREQ: usize = 8;
const PIXEL_FEATURES: usize = 2 * 2 * N_FREQ;
const CORNER_FEATURES: usize = 4 * 2 * N_FREQ;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    pub tokens: Vec<String>,
    /// One unit-norm row per token.
    pub vectors: Array2<f64>,
    /// False for the begin/end markers.
    pub content_mask: Vec<bool>,
}

impl TokenEmbeddings {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A pseudo-random unit vector keyed by `(token, seed)`.
pub fn token_vector(token: &str, d_e: usize, seed: u64) -> Array1<f64> {
    let mut rng = seeds::rng(seed, tags!["token", token]);
    let mut v: Array1<f64> = (0..d_e).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = v.dot(&v).sqrt();
    v /= norm;
    v
}

/// Whitespace tokens wrapped in begin/end markers.
pub fn encode_tokens(text: &str, d_e: usize, seed: u64) -> TokenEmbeddings {
    let mut tokens = vec![BOS.to_string()];
    tokens.extend(text.split_whitespace().map(String::from));
    tokens.push(EOS.to_string());
    let mut vectors = Array2::zeros((tokens.len(), d_e));
    for (i, t) in tokens.iter().enumerate() {
        vectors.row_mut(i).assign(&token_vector(t, d_e, seed));
    }
    let last = tokens.len() - 1;
    let content_mask = (0..tokens.len()).map(|i| i != 0 && i != last).collect();
    TokenEmbeddings {
        tokens,
        vectors,
        content_mask,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionQueries {
    /// One query row per latent pixel inside the box, row-major.
    pub grid: Array2<f64>,
    pub pixel_coords: Vec<(usize, usize)>,
}

/// Latent pixels whose centers lie strictly inside the box, row-major.
pub fn box_pixels(b: &CharacterBox, dims: LatentDims) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..dims.height {
        let y = (r as f64 + 0.5) / dims.height as f64;
        if y <= b.y0 || y >= b.y1 {
            continue;
        }
        for c in 0..dims.width {
            let x = (c as f64 + 0.5) / dims.width as f64;
            if x > b.x0 && x < b.x1 {
                out.push((r, c));
            }
        }
    }
    out
}

fn push_sinusoids(out: &mut Vec<f64>, v: f64) {
    for f in 0..N_FREQ {
        let w = std::f64::consts::PI * (1u32 << f) as f64 * v;
        out.push(w.sin());
        out.push(w.cos());
    }
}

fn projection(d_e: usize, seed: u64) -> Array2<f64> {
    let mut rng = seeds::rng(seed, tags!["region-projection"]);
    let n = PIXEL_FEATURES + CORNER_FEATURES;
    Array2::from_shape_simple_fn((n, d_e), || rng.sample(StandardNormal))
}

/// Positional queries for every pixel in the box: sinusoids of the pixel
/// position and of the four box corners, through a fixed seeded projection.
pub fn encode_region(b: &CharacterBox, dims: LatentDims, d_e: usize, seed: u64) -> Result<RegionQueries, MaskError> {
    let pixel_coords = box_pixels(b, dims);
    if pixel_coords.is_empty() {
        return Err(MaskError::DegenerateBox {
            character_id: b.character_id.clone(),
        });
    }
    let mut corner = Vec::with_capacity(CORNER_FEATURES);
    for v in [b.x0, b.y0, b.x1, b.y1] {
        push_sinusoids(&mut corner, v);
    }
    let n = PIXEL_FEATURES + CORNER_FEATURES;
    let mut feats = Array2::zeros((pixel_coords.len(), n));
    for (i, &(r, c)) in pixel_coords.iter().enumerate() {
        let mut f = Vec::with_capacity(n);
        push_sinusoids(&mut f, r as f64 / dims.height as f64);
        push_sinusoids(&mut f, c as f64 / dims.width as f64);
        f.extend_from_slice(&corner);
        feats.row_mut(i).assign(&Array1::from(f));
    }
    Ok(RegionQueries {
        grid: feats.dot(&projection(d_e, seed)),
        pixel_coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn token_structure() {
        let t = encode_tokens("red knight", 16, 1);
        assert_eq!(t.tokens, vec!["<bos>", "red", "knight", "<eos>"]);
        assert_eq!(t.content_mask, vec![false, true, true, false]);
        for row in t.vectors.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
        assert_eq!(t, encode_tokens("red knight", 16, 1));
        // same token, same vector regardless of position
        let u = encode_tokens("knight red", 16, 1);
        assert_eq!(t.vectors.row(2), u.vectors.row(1));
    }

    #[test]
    fn distinct_tokens_are_near_orthogonal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut total = 0.0;
        for _ in 0..1000 {
            let a = format!("w{}", rng.gen::<u32>());
            let b = format!("v{}", rng.gen::<u32>());
            total += token_vector(&a, 64, 3).dot(&token_vector(&b, 64, 3)).abs();
        }
        // E|N(0, 1/64)| is about 0.1
        assert!(total / 1000.0 < 0.2, "{}", total / 1000.0);
    }

    #[test]
    fn full_box_covers_grid() {
        let dims = LatentDims::new(8, 8);
        let q = encode_region(&CharacterBox::new("a", 0.0, 0.0, 1.0, 1.0), dims, 16, 0).unwrap();
        assert_eq!(q.grid.nrows(), 64);
        assert_eq!(q.pixel_coords[0], (0, 0));
        assert_eq!(q.pixel_coords[63], (7, 7));
    }

    #[test]
    fn single_pixel_box() {
        let dims = LatentDims::new(8, 8);
        let b = CharacterBox::new("a", 4.0 / 8.0, 3.0 / 8.0, 5.0 / 8.0, 4.0 / 8.0);
        let q = encode_region(&b, dims, 16, 0).unwrap();
        assert_eq!(q.pixel_coords, vec![(3, 4)]);
        assert_eq!(q.grid.nrows(), 1);
    }

    #[test]
    fn tiny_box_is_degenerate() {
        let b = CharacterBox::new("a", 0.01, 0.01, 0.02, 0.02);
        assert!(matches!(
            encode_region(&b, LatentDims::new(8, 8), 16, 0),
            Err(MaskError::DegenerateBox { .. })
        ));
    }

    #[test]
    fn box_corners_change_queries() {
        let dims = LatentDims::new(8, 8);
        let a = encode_region(&CharacterBox::new("a", 0.0, 0.0, 1.0, 1.0), dims, 16, 0).unwrap();
        let b = encode_region(&CharacterBox::new("a", 0.25, 0.25, 0.75, 0.75), dims, 16, 0).unwrap();
        // pixel (3,3) is row 27 in the full box and row 5 in the 4x4 box
        assert_eq!(a.pixel_coords[27], (3, 3));
        assert_eq!(b.pixel_coords[5], (3, 3));
        let diff: f64 = (&a.grid.row(27) - &b.grid.row(5)).mapv(f64::abs).sum();
        assert!(diff > 1e-3, "{diff}");
    }
}
