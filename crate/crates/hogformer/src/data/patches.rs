//! Aligned patch sampling with flip augmentation.

use super::ImageSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sample `n` aligned clean/degraded crops of `size`×`size`. The same crop
/// window and flip choices apply to both images; everything is a pure
/// function of the seed.
pub fn sample_patches(
    sample: &ImageSample,
    size: usize,
    n: usize,
    seed: u64,
    flips: bool,
) -> Result<Vec<(Tensor<f32>, Tensor<f32>)>> {
    let s = sample.clean.shape();
    let (h, w) = (s[1], s[2]);
    if h < size || w < size {
        return Err(Error::Input(format!(
            "sample_patches: image {h}x{w} smaller than crop {size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = sample.clean.to_vec();
    let degraded = sample.degraded.to_vec();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let y0 = if h == size { 0 } else { rng.gen_range(0..=h - size) };
        let x0 = if w == size { 0 } else { rng.gen_range(0..=w - size) };
        let (fh, fv) = if flips { (rng.gen_bool(0.5), rng.gen_bool(0.5)) } else { (false, false) };
        out.push((
            crop_flip(&clean, h, w, y0, x0, size, fh, fv),
            crop_flip(&degraded, h, w, y0, x0, size, fh, fv),
        ));
    }
    Ok(out)
}

fn crop_flip(
    data: &[f32],
    h: usize,
    w: usize,
    y0: usize,
    x0: usize,
    size: usize,
    flip_h: bool,
    flip_v: bool,
) -> Tensor<f32> {
    let mut out = vec![0.0f32; 3 * size * size];
    for c in 0..3 {
        for y in 0..size {
            let sy = if flip_v { y0 + size - 1 - y } else { y0 + y };
            for x in 0..size {
                let sx = if flip_h { x0 + size - 1 - x } else { x0 + x };
                out[c * size * size + y * size + x] = data[c * h * w + sy * w + sx];
            }
        }
    }
    Tensor::new(vec![3, size, size], out, false)
}
