//! Synthetic degradation generators.
//!
//! Each spec fully determines the degraded output given the clean image and
//! the embedded seed. Pointwise kinds (noise, lowlight, identity, haze) use
//! coordinate-stable randomness, so they commute with cropping when the crop
//! origin is supplied.

use super::synth::coord_hash;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One synthetic corruption: kind plus parameters plus rng seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    #[serde(flatten)]
    pub kind: DegradationKind,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DegradationKind {
    Noise {
        sigma: f64,
    },
    Blur {
        sigma: f64,
    },
    Rain {
        count: usize,
        length: f64,
        angle_deg: f64,
        intensity: f64,
        width: f64,
    },
    Haze {
        t: f64,
        airlight: f64,
    },
    Lowlight {
        gamma: f64,
        gain: f64,
    },
    Snow {
        density: f64,
        size: f64,
        brightness: f64,
    },
    Identity,
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, seed: u64) -> Self {
        DegradationSpec { kind, seed }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            DegradationKind::Noise { .. } => "noise",
            DegradationKind::Blur { .. } => "blur",
            DegradationKind::Rain { .. } => "rain",
            DegradationKind::Haze { .. } => "haze",
            DegradationKind::Lowlight { .. } => "lowlight",
            DegradationKind::Snow { .. } => "snow",
            DegradationKind::Identity => "identity",
        }
    }

    /// Validate parameters, listing the documented bounds on failure.
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Input(msg));
        match &self.kind {
            DegradationKind::Noise { sigma } => {
                if !(0.0..=1.0).contains(sigma) {
                    return fail(format!("noise sigma {sigma} outside [0, 1]"));
                }
            }
            DegradationKind::Blur { sigma } => {
                if !(*sigma > 0.0 && *sigma <= 8.0) {
                    return fail(format!("blur sigma {sigma} outside (0, 8]"));
                }
            }
            DegradationKind::Rain { count, length, angle_deg, intensity, width } => {
                if *count == 0 || *count > 100_000 {
                    return fail(format!("rain count {count} outside [1, 100000]"));
                }
                if !(*length > 0.0 && *length <= 512.0) {
                    return fail(format!("rain length {length} outside (0, 512]"));
                }
                if !(0.0..=180.0).contains(angle_deg) {
                    return fail(format!("rain angle {angle_deg} outside [0, 180] degrees"));
                }
                if !(*intensity > 0.0 && *intensity <= 1.0) {
                    return fail(format!("rain intensity {intensity} outside (0, 1]"));
                }
                if !(*width > 0.0 && *width <= 8.0) {
                    return fail(format!("rain width {width} outside (0, 8]"));
                }
            }
            DegradationKind::Haze { t, airlight } => {
                if !(0.0..=1.0).contains(t) {
                    return fail(format!("haze transmission {t} outside [0, 1]"));
                }
                if !(0.0..=1.0).contains(airlight) {
                    return fail(format!("haze airlight {airlight} outside [0, 1]"));
                }
            }
            DegradationKind::Lowlight { gamma, gain } => {
                if !(*gamma >= 1.0 && *gamma <= 8.0) {
                    return fail(format!("lowlight gamma {gamma} outside [1, 8]"));
                }
                if !(*gain > 0.0 && *gain <= 1.0) {
                    return fail(format!("lowlight gain {gain} outside (0, 1]"));
                }
            }
            DegradationKind::Snow { density, size, brightness } => {
                if !(*density > 0.0 && *density <= 0.05) {
                    return fail(format!("snow density {density} outside (0, 0.05]"));
                }
                if !(*size > 0.0 && *size <= 16.0) {
                    return fail(format!("snow size {size} outside (0, 16]"));
                }
                if !(0.0..=1.0).contains(brightness) {
                    return fail(format!("snow brightness {brightness} outside [0, 1]"));
                }
            }
            DegradationKind::Identity => {}
        }
        Ok(())
    }
}

/// Apply a degradation to a clean (3,H,W) image in [0,1].
pub fn degrade(clean: &Tensor<f32>, spec: &DegradationSpec) -> Result<Tensor<f32>> {
    degrade_at(clean, spec, (0, 0))
}

/// Apply a degradation treating the image as a window of a larger one whose
/// top-left corner sits at `origin` (y, x). Pointwise kinds use absolute
/// coordinates, so degrade-then-crop equals crop-then-degrade for them.
pub fn degrade_at(clean: &Tensor<f32>, spec: &DegradationSpec, origin: (usize, usize)) -> Result<Tensor<f32>> {
    spec.validate()?;
    let s = clean.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Input(format!("degrade: expected (3,H,W), got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut img = clean.to_vec();
    let (oy, ox) = origin;
    match &spec.kind {
        DegradationKind::Identity => {}
        DegradationKind::Noise { sigma } => {
            let sg = *sigma as f32;
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        let n = gaussian_from_hash(spec.seed, (y + oy) as u64, (x + ox) as u64, c as u64);
                        let p = &mut img[c * h * w + y * w + x];
                        *p = (*p + sg * n).clamp(0.0, 1.0);
                    }
                }
            }
        }
        DegradationKind::Blur { sigma } => {
            img = gaussian_blur(&img, h, w, *sigma);
        }
        DegradationKind::Rain { count, length, angle_deg, intensity, width } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5A1E);
            let theta = angle_deg.to_radians();
            // Angle measured from the horizontal axis: 90° falls vertically.
            let (dy, dx) = (theta.sin(), theta.cos());
            for _ in 0..*count {
                let cy = rng.gen_range(-0.1..1.1) * h as f64;
                let cx = rng.gen_range(-0.1..1.1) * w as f64;
                let len = length * rng.gen_range(0.6..1.4);
                let amp = intensity * rng.gen_range(0.6..1.0);
                let steps = (len * 2.0).ceil() as usize;
                for sstep in 0..steps {
                    let t = sstep as f64 / steps.max(1) as f64 - 0.5;
                    let py = cy + t * len * dy;
                    let px = cx + t * len * dx;
                    add_gaussian_dot(&mut img, h, w, py, px, amp as f32, *width);
                }
            }
            for p in img.iter_mut() {
                *p = p.clamp(0.0, 1.0);
            }
        }
        DegradationKind::Haze { t, airlight } => {
            let tv = *t as f32;
            let av = *airlight as f32;
            for p in img.iter_mut() {
                *p = (*p * tv + av * (1.0 - tv)).clamp(0.0, 1.0);
            }
        }
        DegradationKind::Lowlight { gamma, gain } => {
            let gm = *gamma as f32;
            let gn = *gain as f32;
            for p in img.iter_mut() {
                *p = (gn * p.max(0.0).powf(gm)).clamp(0.0, 1.0);
            }
        }
        DegradationKind::Snow { density, size, brightness } => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x540F);
            let n = ((h * w) as f64 * density).ceil() as usize;
            let b = *brightness as f32;
            for _ in 0..n {
                let cy = rng.gen_range(0.0..1.0) * h as f64;
                let cx = rng.gen_range(0.0..1.0) * w as f64;
                let r = size * rng.gen_range(0.5..1.3);
                let y0 = ((cy - r - 1.0).floor().max(0.0)) as usize;
                let y1 = ((cy + r + 1.0).ceil() as usize).min(h);
                let x0 = ((cx - r - 1.0).floor().max(0.0)) as usize;
                let x1 = ((cx + r + 1.0).ceil() as usize).min(w);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                        let alpha = (r - d + 0.5).clamp(0.0, 1.0) as f32;
                        if alpha > 0.0 {
                            for c in 0..3 {
                                let p = &mut img[c * h * w + y * w + x];
                                *p = *p * (1.0 - alpha) + b * alpha;
                            }
                        }
                    }
                }
            }
            for p in img.iter_mut() {
                *p = p.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Tensor::new(vec![3, h, w], img, false))
}

/// Standard normal from the coordinate hash via Box–Muller.
fn gaussian_from_hash(seed: u64, y: u64, x: u64, c: u64) -> f32 {
    let h1 = coord_hash(seed, y, x, c * 2);
    let h2 = coord_hash(seed, y, x, c * 2 + 1);
    let u1 = ((h1 >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (h2 >> 11) as f64 / (1u64 << 53) as f64;
    ((-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()) as f32
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    let mut sum = 0.0f64;
    for i in 0..=2 * radius {
        let d = i as f64 - radius as f64;
        let v = (-d * d / (2.0 * sigma * sigma)).exp();
        k.push(v);
        sum += v;
    }
    k.into_iter().map(|v| (v / sum) as f32).collect()
}

/// Separable Gaussian blur with reflective boundaries.
fn gaussian_blur(img: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    let radius = k.len() / 2;
    let reflect = |t: isize, n: usize| -> usize {
        if n == 1 {
            return 0;
        }
        let period = 2 * (n as isize - 1);
        let mut t = t % period;
        if t < 0 {
            t += period;
        }
        if t >= n as isize {
            (period - t) as usize
        } else {
            t as usize
        }
    };
    let mut tmp = vec![0.0f32; img.len()];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for (i, &kv) in k.iter().enumerate() {
                    let sx = reflect(x as isize + i as isize - radius as isize, w);
                    acc += kv * img[c * h * w + y * w + sx];
                }
                tmp[c * h * w + y * w + x] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; img.len()];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f32;
                for (i, &kv) in k.iter().enumerate() {
                    let sy = reflect(y as isize + i as isize - radius as isize, h);
                    acc += kv * tmp[c * h * w + sy * w + x];
                }
                out[c * h * w + y * w + x] = acc.clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Additive white dot with a Gaussian cross-profile of the given width.
fn add_gaussian_dot(img: &mut [f32], h: usize, w: usize, py: f64, px: f64, amp: f32, width: f64) {
    let r = (2.5 * width).ceil() as isize;
    let y0 = py.round() as isize;
    let x0 = px.round() as isize;
    for dy in -r..=r {
        for dx in -r..=r {
            let y = y0 + dy;
            let x = x0 + dx;
            if y < 0 || y >= h as isize || x < 0 || x >= w as isize {
                continue;
            }
            let d2 = (y as f64 - py).powi(2) + (x as f64 - px).powi(2);
            let wgt = (-d2 / (2.0 * width * width)).exp() as f32;
            for c in 0..3 {
                img[c * h * w + y as usize * w + x as usize] += amp * wgt;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::clean_image;

    fn spec(kind: DegradationKind) -> DegradationSpec {
        DegradationSpec::new(kind, 42)
    }

    #[test]
    fn identity_is_exact() {
        let img = clean_image(24, 24, 1);
        let out = degrade(&img, &spec(DegradationKind::Identity)).unwrap();
        assert_eq!(out.to_vec(), img.to_vec());
    }

    #[test]
    fn haze_endpoints() {
        let img = clean_image(16, 16, 2);
        let full = degrade(&img, &spec(DegradationKind::Haze { t: 1.0, airlight: 0.8 })).unwrap();
        assert_eq!(full.to_vec(), img.to_vec());
        let opaque = degrade(&img, &spec(DegradationKind::Haze { t: 0.0, airlight: 0.8 })).unwrap();
        assert!(opaque.to_vec().iter().all(|v| (v - 0.8).abs() < 1e-6));
    }

    #[test]
    fn noise_sigma01_on_midgray_is_about_20db() {
        let gray = Tensor::new(vec![3, 64, 64], vec![0.5f32; 3 * 64 * 64], false);
        let out = degrade(&gray, &spec(DegradationKind::Noise { sigma: 0.1 })).unwrap();
        let mse: f64 = out
            .to_vec()
            .iter()
            .zip(gray.to_vec())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / (3.0 * 64.0 * 64.0);
        let psnr = 10.0 * (1.0 / mse).log10();
        assert!((psnr - 20.0).abs() < 0.5, "psnr {psnr}");
    }

    #[test]
    fn all_kinds_stay_in_unit_range_and_are_deterministic() {
        let img = clean_image(32, 32, 3);
        let kinds = vec![
            DegradationKind::Noise { sigma: 0.15 },
            DegradationKind::Blur { sigma: 1.5 },
            DegradationKind::Rain { count: 40, length: 12.0, angle_deg: 90.0, intensity: 0.3, width: 0.8 },
            DegradationKind::Haze { t: 0.55, airlight: 0.85 },
            DegradationKind::Lowlight { gamma: 2.2, gain: 0.85 },
            DegradationKind::Snow { density: 0.004, size: 2.0, brightness: 0.95 },
            DegradationKind::Identity,
        ];
        for kind in kinds {
            let sp = spec(kind);
            let a = degrade(&img, &sp).unwrap();
            let b = degrade(&img, &sp).unwrap();
            assert_eq!(a.to_vec(), b.to_vec(), "{} must be seed-deterministic", sp.kind_name());
            assert!(
                a.to_vec().iter().all(|v| (0.0..=1.0).contains(v)),
                "{} must stay in [0,1]",
                sp.kind_name()
            );
        }
    }

    #[test]
    fn out_of_range_params_rejected_with_bounds() {
        let img = clean_image(16, 16, 4);
        let err = degrade(&img, &spec(DegradationKind::Noise { sigma: 2.0 })).unwrap_err();
        assert!(err.to_string().contains("[0, 1]"));
        assert!(degrade(&img, &spec(DegradationKind::Lowlight { gamma: 0.5, gain: 1.0 })).is_err());
    }

    #[test]
    fn pointwise_noise_commutes_with_cropping() {
        let img = clean_image(32, 32, 5);
        let sp = spec(DegradationKind::Noise { sigma: 0.1 });
        let full = degrade(&img, &sp).unwrap();
        // Crop 8x8 window at (4, 6) from both clean and degraded.
        let crop = |t: &Tensor<f32>, y0: usize, x0: usize| -> Vec<f32> {
            let d = t.to_vec();
            let mut out = Vec::new();
            for c in 0..3 {
                for y in 0..8 {
                    for x in 0..8 {
                        out.push(d[c * 32 * 32 + (y0 + y) * 32 + x0 + x]);
                    }
                }
            }
            out
        };
        let clean_crop = Tensor::new(vec![3, 8, 8], crop(&img, 4, 6), false);
        let local = degrade_at(&clean_crop, &sp, (4, 6)).unwrap();
        assert_eq!(local.to_vec(), crop(&full, 4, 6));
    }

    #[test]
    fn spec_json_roundtrip() {
        let sp = spec(DegradationKind::Rain { count: 10, length: 8.0, angle_deg: 90.0, intensity: 0.2, width: 1.0 });
        let s = serde_json::to_string(&sp).unwrap();
        assert!(s.contains("\"kind\":\"rain\""));
        let back: DegradationSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, sp);
    }
}
