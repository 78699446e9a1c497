//! Histogram-of-oriented-gradients machinery: Sobel gradients, magnitude and
//! quantized orientation, differentiable soft cell histograms, sort keys, and
//! pixel-/patch-level sort plans.

mod hist;
mod plan;
pub mod profile;

pub use hist::{broadcast_patch_values, soft_bin_votes, soft_cell_histogram, HogMap};
pub use plan::{patch_sort_plan, pixel_sort_plan, Granularity, SortPlan};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, reflect_pad, Scalar, Tensor};

/// Magnitude floor: m = sqrt(gx² + gy² + EPS_M), differentiable at zero.
pub const EPS_M: f64 = 1e-12;

/// Default number of orientation bins.
pub const DEFAULT_N_BIN: usize = 9;

/// Default cell / patch side for histograms.
pub const DEFAULT_CELL: usize = 8;

/// Per-channel directional gradients of a feature map.
pub struct GradientField<T: Scalar> {
    pub gx: Tensor<T>,
    pub gy: Tensor<T>,
}

/// Quantized orientation bins, one per pixel per channel. Constant with
/// respect to the graph: orientation is a floor and carries no gradient.
#[derive(Clone, Debug)]
pub struct OrientationField {
    pub shape: Vec<usize>,
    pub bins: Vec<u32>,
    pub n_bin: usize,
}

/// Sobel gradients of a (C,H,W) map with reflective boundary handling,
/// computed as a per-channel depthwise convolution. Differentiable.
pub fn sobel_gradients<T: Scalar>(x: &Tensor<T>) -> Result<GradientField<T>> {
    if x.shape().len() != 3 {
        return Err(Error::Config(format!(
            "sobel_gradients: expected (C,H,W), got {:?}",
            x.shape()
        )));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if h < 3 || w < 3 {
        return Err(Error::Config(format!(
            "sobel_gradients: spatial extent {h}x{w} is smaller than the 3x3 kernel"
        )));
    }
    let padded = reflect_pad(x, 1, 1, 1, 1);
    let kx = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    let ky = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let mut wx = Vec::with_capacity(c * 9);
    let mut wy = Vec::with_capacity(c * 9);
    for _ in 0..c {
        wx.extend_from_slice(&kx);
        wy.extend_from_slice(&ky);
    }
    let wx = Tensor::from_f64_slice(vec![c, 1, 3, 3], &wx, false);
    let wy = Tensor::from_f64_slice(vec![c, 1, 3, 3], &wy, false);
    let gx = conv2d(&padded, &wx, None, 1, 0, c)?;
    let gy = conv2d(&padded, &wy, None, 1, 0, c)?;
    Ok(GradientField { gx, gy })
}

/// Gradient magnitude (differentiable) and quantized orientation (constant).
///
/// m = sqrt(gx² + gy² + 1e-12); o = ⌊(atan2(gy,gx)+π)/(2π)·n_bin⌋ with the
/// boundary value n_bin wrapped to 0, since −π and π are the same direction.
pub fn magnitude_orientation<T: Scalar>(
    g: &GradientField<T>,
    n_bin: usize,
) -> (Tensor<T>, OrientationField) {
    assert!(n_bin >= 1, "n_bin must be at least 1");
    let m = g
        .gx
        .mul(&g.gx)
        .add(&g.gy.mul(&g.gy))
        .add_scalar(T::from_f64(EPS_M))
        .sqrt();
    let gxd = g.gx.data();
    let gyd = g.gy.data();
    // Components below 1e-9 are treated as exactly zero before quantizing:
    // cancellation residues of reflective boundaries would otherwise flip
    // the bin across the ±π axis on every re-evaluation.
    let snap = |v: f64| if v.abs() < 1e-9 { 0.0 } else { v };
    let bins: Vec<u32> = gxd
        .iter()
        .zip(gyd.iter())
        .map(|(&x, &y)| {
            let c = orientation_coordinate(snap(y.as_f64()), snap(x.as_f64()), n_bin);
            let mut b = c.floor() as i64;
            if b >= n_bin as i64 {
                b -= n_bin as i64;
            }
            b.max(0) as u32
        })
        .collect();
    drop(gxd);
    drop(gyd);
    (
        m,
        OrientationField { shape: g.gx.shape().to_vec(), bins, n_bin },
    )
}

/// Continuous orientation coordinate in [0, n_bin].
pub(crate) fn orientation_coordinate(gy: f64, gx: f64, n_bin: usize) -> f64 {
    (gy.atan2(gx) + std::f64::consts::PI) / (2.0 * std::f64::consts::PI) * n_bin as f64
}

/// Sort key m·o per pixel, with the integer bin cast to floating point.
/// Computed per channel; differentiability is irrelevant because keys only
/// ever order positions.
pub fn sort_keys<T: Scalar>(m: &Tensor<T>, o: &OrientationField) -> Tensor<T> {
    assert_eq!(m.shape(), &o.shape[..], "sort_keys: m and o shapes differ");
    let md = m.data();
    let keys: Vec<T> = md
        .iter()
        .zip(o.bins.iter())
        .map(|(&mv, &bv)| mv * T::from_usize(bv as usize))
        .collect();
    drop(md);
    Tensor::new(o.shape.clone(), keys, false)
}

/// Detached m·o keys straight from a feature map: the standard key pipeline
/// for sort plans.
pub fn feature_sort_keys<T: Scalar>(x: &Tensor<T>, n_bin: usize) -> Result<Tensor<T>> {
    let g = sobel_gradients(&x.detach())?;
    let (m, o) = magnitude_orientation(&g, n_bin);
    Ok(sort_keys(&m.detach(), &o))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_image(c: usize, h: usize, w: usize, mut seed: u64) -> Tensor<f64> {
        let data: Vec<f64> = (0..c * h * w)
            .map(|_| {
                seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (seed >> 33) as f64 / (1u64 << 31) as f64 * 0.5
            })
            .collect();
        Tensor::new(vec![c, h, w], data, false)
    }

    /// Brute-force Sobel on a horizontal unit ramp f(x,y)=x, via direct 3x3
    /// correlation: interior gx = 8, gy = 0.
    #[test]
    fn ramp_gradients_match_hand_convolution() {
        let (h, w) = (6, 7);
        let data: Vec<f64> = (0..h).flat_map(|_| (0..w).map(|x| x as f64)).collect();
        let x = Tensor::new(vec![1, h, w], data, false);
        let g = sobel_gradients(&x).unwrap();
        let gx = g.gx.to_vec();
        let gy = g.gy.to_vec();
        for y in 1..h - 1 {
            for xx in 1..w - 1 {
                assert!((gx[y * w + xx] - 8.0).abs() < 1e-12, "gx interior");
                assert!(gy[y * w + xx].abs() < 1e-12, "gy interior");
            }
        }
    }

    #[test]
    fn constant_image_has_zero_gradients() {
        let x = Tensor::<f64>::new(vec![2, 5, 5], vec![0.42; 50], false);
        let g = sobel_gradients(&x).unwrap();
        assert!(g.gx.to_vec().iter().all(|v| v.abs() < 1e-12));
        assert!(g.gy.to_vec().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn transpose_swaps_gradient_roles() {
        let (h, w) = (5, 5);
        let x = lcg_image(1, h, w, 7);
        let xt_data: Vec<f64> = {
            let d = x.to_vec();
            (0..w).flat_map(|j| (0..h).map(move |i| (i, j)).map(|(i, j)| d[i * w + j]).collect::<Vec<_>>()).collect()
        };
        let xt = Tensor::new(vec![1, w, h], xt_data, false);
        let g = sobel_gradients(&x).unwrap();
        let gt = sobel_gradients(&xt).unwrap();
        let (gx, gy) = (g.gx.to_vec(), g.gy.to_vec());
        let (tgx, tgy) = (gt.gx.to_vec(), gt.gy.to_vec());
        for i in 0..h {
            for j in 0..w {
                assert!((gx[i * w + j] - tgy[j * h + i]).abs() < 1e-12);
                assert!((gy[i * w + j] - tgx[j * h + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_small_input_is_config_error() {
        let x = Tensor::<f64>::new(vec![1, 2, 5], vec![0.0; 10], false);
        assert!(sobel_gradients(&x).is_err());
    }

    #[test]
    fn magnitude_345() {
        let g = GradientField {
            gx: Tensor::<f64>::new(vec![1, 1, 1], vec![3.0], false),
            gy: Tensor::<f64>::new(vec![1, 1, 1], vec![4.0], false),
        };
        let (m, _) = magnitude_orientation(&g, 9);
        assert!((m.item() - 5.0).abs() < 1e-9);
    }

    #[test]
    fn orientation_of_pure_gx_is_bin_4() {
        // atan2(0,1)=0 → (0+π)/(2π)·9 = 4.5 → floor 4.
        let g = GradientField {
            gx: Tensor::<f64>::new(vec![1, 1, 1], vec![1.0], false),
            gy: Tensor::<f64>::new(vec![1, 1, 1], vec![0.0], false),
        };
        let (_, o) = magnitude_orientation(&g, 9);
        assert_eq!(o.bins, vec![4]);
    }

    #[test]
    fn boundary_angle_wraps_to_bin_zero() {
        // atan2(0,-1)=π → coordinate exactly n_bin → bin 0.
        let g = GradientField {
            gx: Tensor::<f64>::new(vec![1, 1, 1], vec![-1.0], false),
            gy: Tensor::<f64>::new(vec![1, 1, 1], vec![0.0], false),
        };
        let (_, o) = magnitude_orientation(&g, 9);
        assert_eq!(o.bins, vec![0]);
    }

    #[test]
    fn zero_gradient_keys_are_zero() {
        let g = GradientField {
            gx: Tensor::<f64>::new(vec![1, 1, 2], vec![0.0, 0.0], false),
            gy: Tensor::<f64>::new(vec![1, 1, 2], vec![0.0, 0.0], false),
        };
        let (m, o) = magnitude_orientation(&g, 9);
        let keys = sort_keys(&m, &o);
        // m ≈ 1e-6 and whatever bin atan2(0,0) lands in, the key stays ~0.
        assert!(keys.to_vec().iter().all(|v| v.abs() < 1e-5));
    }

    #[test]
    fn sort_key_direct_product() {
        let m = Tensor::<f64>::new(vec![1, 1, 1], vec![5.0], false);
        let o = OrientationField { shape: vec![1, 1, 1], bins: vec![4], n_bin: 9 };
        assert_eq!(sort_keys(&m, &o).item(), 20.0);
    }

    #[test]
    fn scaling_preserves_orientation_and_scales_magnitude() {
        let x = lcg_image(1, 8, 8, 3);
        let s = 2.0;
        let xs = Tensor::new(vec![1, 8, 8], x.to_vec().iter().map(|v| v * s).collect(), false);
        let g1 = sobel_gradients(&x).unwrap();
        let g2 = sobel_gradients(&xs).unwrap();
        let (m1, o1) = magnitude_orientation(&g1, 9);
        let (m2, o2) = magnitude_orientation(&g2, 9);
        assert_eq!(o1.bins, o2.bins, "orientation must be scale-invariant");
        for (a, b) in m1.to_vec().iter().zip(m2.to_vec().iter()) {
            if *a > 1e-5 {
                assert!((b / a - s).abs() < 1e-6, "magnitude must scale by s");
            }
        }
    }

    #[test]
    fn rotation_180_preserves_magnitude_and_shifts_bins() {
        // Needs an anisotropic image whose gradients mostly point one way;
        // a white-noise image has a uniform orientation histogram and no
        // detectable shift.
        let (h, w) = (12, 12);
        let data: Vec<f64> = (0..h)
            .flat_map(|y| {
                (0..w).map(move |x| 0.1 * x as f64 + 0.02 * y as f64 + 0.03 * (0.9 * y as f64).sin())
            })
            .collect();
        let x = Tensor::new(vec![1, h, w], data, false);
        let rot: Vec<f64> = {
            let d = x.to_vec();
            (0..h * w).map(|i| d[h * w - 1 - i]).collect()
        };
        let xr = Tensor::new(vec![1, h, w], rot, false);
        let g = sobel_gradients(&x).unwrap();
        let gr = sobel_gradients(&xr).unwrap();
        let (m, _o) = magnitude_orientation(&g, 9);
        let (mr, _or) = magnitude_orientation(&gr, 9);
        let md = m.to_vec();
        let mrd = mr.to_vec();
        for i in 0..h * w {
            assert!((md[i] - mrd[h * w - 1 - i]).abs() < 1e-12, "m is rotation-equivariant");
        }
        // Aggregate orientation histogram of the rotated image is the
        // original circularly shifted by n_bin/2 = 4.5; the best circular
        // alignment must land on shift 4 or 5.
        let hist = |o: &OrientationField, m: &[f64]| {
            let mut hst = [0.0f64; 9];
            for (i, &b) in o.bins.iter().enumerate() {
                hst[b as usize] += m[i];
            }
            hst
        };
        let h0 = hist(&_o, &md);
        let h1 = hist(&_or, &mrd);
        let mut best_shift = 0;
        let mut best = f64::MAX;
        for s in 0..9 {
            let d: f64 = (0..9).map(|b| (h1[(b + s) % 9] - h0[b]).powi(2)).sum();
            if d < best {
                best = d;
                best_shift = s;
            }
        }
        assert!(best_shift == 4 || best_shift == 5, "shift {best_shift}");
    }
}
