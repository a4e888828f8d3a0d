use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::LatentTensor;
use crate::raster::RgbImage;
use crate::seeds;
use crate::tags;

/// Fixed affine map from latent channels to RGB, clamped to [0, 255], then
/// enlarged by `upscale` with nearest-neighbor sampling.
pub fn decode_latent(z: &LatentTensor, upscale: usize, seed: u64) -> RgbImage {
    let d = z.values.ncols();
    let mut rng = seeds::rng(seed, tags!["decoder"]);
    let bias: [f64; 3] = [rng.gen_range(64.0..192.0), rng.gen_range(64.0..192.0), rng.gen_range(64.0..192.0)];
    let std = 40.0 / (d.max(1) as f64).sqrt();
    let weights = Array2::from_shape_simple_fn((d, 3), || std * rng.sample::<f64, _>(StandardNormal));
    let rgb = z.values.dot(&weights);
    let mut img = RgbImage::new(z.dims.width, z.dims.height, [0, 0, 0]);
    for (p, row) in rgb.rows().into_iter().enumerate() {
        let px = std::array::from_fn(|c| (bias[c] + row[c]).round().clamp(0.0, 255.0) as u8);
        img.put(p % z.dims.width, p / z.dims.width, px);
    }
    img.upscale(upscale.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::gaussian_latent;
    use crate::maskgen::LatentDims;

    #[test]
    fn zero_latent_is_flat() {
        let img = decode_latent(&LatentTensor::zeros(LatentDims::new(3, 4), 8), 2, 1);
        let first = img.get(0, 0);
        assert!((0..img.height).all(|y| (0..img.width).all(|x| img.get(x, y) == first)));
        assert!(first.iter().all(|&c| (64..=192).contains(&c)));
    }

    #[test]
    fn change_stays_in_its_block() {
        let dims = LatentDims::new(4, 4);
        let a = gaussian_latent(dims, 8, 2, crate::tags!["z"]);
        let mut b = a.clone();
        b.values.row_mut(5).mapv_inplace(|v| v + 3.0);
        let (ia, ib) = (decode_latent(&a, 3, 2), decode_latent(&b, 3, 2));
        assert_eq!(ia, decode_latent(&a, 3, 2));
        for y in 0..12 {
            for x in 0..12 {
                if (x / 3, y / 3) != (1, 1) {
                    assert_eq!(ia.get(x, y), ib.get(x, y));
                }
            }
        }
        assert_ne!(ia.get(4, 4), ib.get(4, 4));
    }
}
