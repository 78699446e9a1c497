//! Procedural clean images and smooth random fields.
//!
//! Every generator is a pure function of its seed, so corpora regenerate
//! bit-identically from the repository alone.

use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth scalar field in roughly [0,1]: a seeded mixture of low-frequency
/// sinusoids. Useful wherever finite differences need gradients bounded away
/// from zero.
pub fn smooth_field(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 4;
    let waves: Vec<(f64, f64, f64, f64)> = (0..k)
        .map(|_| {
            (
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.08..0.22),
            )
        })
        .collect();
    let scale = h.max(w) as f64;
    let mut out = vec![0.5f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.5;
            for &(fy, fx, phase, amp) in &waves {
                v += amp
                    * (std::f64::consts::TAU * (fy * y as f64 + fx * x as f64) / scale + phase)
                        .sin();
            }
            out[y * w + x] = v.clamp(0.02, 0.98);
        }
    }
    out
}

/// Smooth single-channel tensor for gradient-check fixtures.
pub fn smooth_image_1ch(h: usize, w: usize, seed: u64) -> Tensor<f64> {
    Tensor::new(vec![1, h, w], smooth_field(h, w, seed), false)
}

/// Gradient-check fixture with Sobel magnitudes bounded away from zero: a
/// diagonal ramp plus a small smooth perturbation. Reflective boundaries
/// null the normal derivative on each border, so the ramp needs components
/// along both axes; orientation coordinates stay well inside one bin.
pub fn ramp_field(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let smooth = smooth_field(h, w, seed);
    (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            0.5 * x as f64 + 0.35 * y as f64 + 0.05 * smooth[i]
        })
        .collect()
}

/// Smooth (C,H,W) tensor with per-channel fields.
pub fn smooth_image<T: crate::tensor::Scalar>(c: usize, h: usize, w: usize, seed: u64) -> Tensor<T> {
    let mut data = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        data.extend(smooth_field(h, w, seed.wrapping_add(ch as u64 * 0x9e37)).into_iter());
    }
    Tensor::new(vec![c, h, w], data.iter().map(|&v| T::from_f64(v)).collect(), false)
}

/// Procedural clean photo stand-in: smooth background, oriented line
/// segments with stratified angles, filled rectangles, and fine speckle
/// texture. RGB, values kept inside [0.02, 0.98].
pub fn clean_image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC1EA_11AB);
    let mut img = vec![0.0f32; 3 * h * w];

    // Background: two-corner gradient in each channel.
    for c in 0..3 {
        let a = rng.gen_range(0.25..0.65) as f32;
        let b = rng.gen_range(0.25..0.65) as f32;
        let horizontal = rng.gen_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let t = if horizontal { x as f32 / w as f32 } else { y as f32 / h as f32 };
                img[c * h * w + y * w + x] = a + (b - a) * t;
            }
        }
    }

    // Filled rectangles.
    for _ in 0..4 {
        let rw = rng.gen_range(w / 8..w / 3);
        let rh = rng.gen_range(h / 8..h / 3);
        let x0 = rng.gen_range(0..w - rw);
        let y0 = rng.gen_range(0..h - rh);
        let col: [f32; 3] = [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)];
        let alpha = rng.gen_range(0.5..0.9) as f32;
        for y in y0..y0 + rh {
            for x in x0..x0 + rw {
                for c in 0..3 {
                    let p = &mut img[c * h * w + y * w + x];
                    *p = *p * (1.0 - alpha) + col[c] * alpha;
                }
            }
        }
    }

    // Line segments with stratified angles covering [0, π).
    let n_lines = 12;
    for i in 0..n_lines {
        let angle = (i as f64 + rng.gen_range(0.0..1.0)) * std::f64::consts::PI / n_lines as f64;
        let (dy, dx) = (angle.sin(), angle.cos());
        let cy = rng.gen_range(0.2..0.8) * h as f64;
        let cx = rng.gen_range(0.2..0.8) * w as f64;
        let len = rng.gen_range(0.25..0.55) * h.min(w) as f64;
        let bright = rng.gen_bool(0.5);
        let col: f32 = if bright { rng.gen_range(0.8..0.95) } else { rng.gen_range(0.05..0.2) };
        let steps = (len * 2.0) as usize;
        for s in 0..steps {
            let t = s as f64 / steps.max(1) as f64 - 0.5;
            let py = cy + t * len * dy;
            let px = cx + t * len * dx;
            splat(&mut img, h, w, py, px, col, 0.9);
        }
    }

    // Fine speckle texture: coordinate-hashed, amplitude 0.035.
    for y in 0..h {
        for x in 0..w {
            let n = coord_hash(seed ^ 0x5BEC_57E1, y as u64, x as u64, 0);
            let v = (n as f32 / u64::MAX as f32 - 0.5) * 0.07;
            for c in 0..3 {
                let p = &mut img[c * h * w + y * w + x];
                *p = (*p + v).clamp(0.02, 0.98);
            }
        }
    }

    Tensor::new(vec![3, h, w], img, false)
}

/// Bilinear splat of a colored dot into all three channels.
fn splat(img: &mut [f32], h: usize, w: usize, py: f64, px: f64, col: f32, alpha: f32) {
    let y0 = py.floor() as isize;
    let x0 = px.floor() as isize;
    let fy = (py - y0 as f64) as f32;
    let fx = (px - x0 as f64) as f32;
    for (dy, wy) in [(0isize, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0isize, 1.0 - fx), (1, fx)] {
            let y = y0 + dy;
            let x = x0 + dx;
            if y < 0 || y >= h as isize || x < 0 || x >= w as isize {
                continue;
            }
            let wgt = (wy * wx * alpha).clamp(0.0, 1.0);
            for c in 0..3 {
                let p = &mut img[c * h * w + y as usize * w + x as usize];
                *p = *p * (1.0 - wgt) + col * wgt;
            }
        }
    }
}

/// Seeded corpus of procedural clean images.
pub fn clean_corpus(n: usize, h: usize, w: usize, seed: u64) -> Vec<Tensor<f32>> {
    (0..n).map(|i| clean_image(h, w, seed.wrapping_add(i as u64 * 0x100))).collect()
}

/// Position-stable hash used for per-pixel randomness (splitmix64 over the
/// packed coordinate), so pointwise noise commutes with cropping.
pub fn coord_hash(seed: u64, y: u64, x: u64, c: u64) -> u64 {
    let mut z = seed ^ (y.wrapping_mul(0x9E3779B97F4A7C15))
        ^ (x.wrapping_mul(0xBF58476D1CE4E5B9))
        ^ (c.wrapping_mul(0x94D049BB133111EB));
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
