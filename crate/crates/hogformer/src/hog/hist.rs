//! Differentiable soft cell histograms.

use super::{magnitude_orientation, orientation_coordinate, sobel_gradients, OrientationField, EPS_M};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Per-pixel magnitude, orientation bins and per-cell soft histograms for one
/// feature map.
pub struct HogMap<T: Scalar> {
    pub m: Tensor<T>,
    pub o: OrientationField,
    pub soft_hist: Tensor<T>,
    pub n_bin: usize,
    pub cell: usize,
}

impl<T: Scalar> HogMap<T> {
    /// Full HOG readout of a (C,H,W) map: per-channel m/o plus channel-mean
    /// soft cell histograms.
    pub fn compute(x: &Tensor<T>, cell: usize, n_bin: usize) -> Result<Self> {
        let g = sobel_gradients(x)?;
        let (m, o) = magnitude_orientation(&g, n_bin);
        let soft_hist = soft_cell_histogram(x, cell, n_bin)?;
        Ok(HogMap { m, o, soft_hist, n_bin, cell })
    }
}

/// Soft cell histogram of a feature map, differentiable end to end.
///
/// Multi-channel input is reduced by channel mean first. Each pixel votes its
/// Sobel magnitude into the two orientation bins adjacent to its continuous
/// bin coordinate with linear interpolation, circular across the bin
/// boundary, so per-cell histogram mass equals per-cell magnitude mass.
/// Output shape: (H/cell, W/cell, n_bin).
pub fn soft_cell_histogram<T: Scalar>(
    x: &Tensor<T>,
    cell: usize,
    n_bin: usize,
) -> Result<Tensor<T>> {
    if x.shape().len() != 3 {
        return Err(Error::Config(format!(
            "soft_cell_histogram: expected (C,H,W), got {:?}",
            x.shape()
        )));
    }
    let (h, w) = (x.shape()[1], x.shape()[2]);
    if cell == 0 || h % cell != 0 || w % cell != 0 {
        return Err(Error::Config(format!(
            "soft_cell_histogram: spatial {h}x{w} not divisible by cell {cell}"
        )));
    }
    let gray = if x.shape()[0] == 1 { x.clone() } else { x.mean_channels() };
    let g = sobel_gradients(&gray)?;
    let m = g
        .gx
        .mul(&g.gx)
        .add(&g.gy.mul(&g.gy))
        .add_scalar(T::from_f64(EPS_M))
        .sqrt();
    // Continuous bin coordinate in [0, n_bin]; smooth away from the origin,
    // eps-guarded gradient at it.
    let scale = T::from_f64(n_bin as f64 / (2.0 * std::f64::consts::PI));
    let coord = g
        .gy
        .atan2(&g.gx)
        .add_scalar(T::from_f64(std::f64::consts::PI))
        .mul_scalar(scale);
    Ok(soft_bin_votes(&m, &coord, cell, n_bin))
}

/// Linear-interpolation voting of magnitudes into circular orientation bins,
/// pooled per cell. `m` and `coord` are (1,H,W); coord lives in [0, n_bin].
///
/// One fused op: the backward pass routes each histogram gradient back into
/// the magnitude (by the interpolation weights) and into the coordinate (by
/// the vote difference m·(∂w)).
pub fn soft_bin_votes<T: Scalar>(
    m: &Tensor<T>,
    coord: &Tensor<T>,
    cell: usize,
    n_bin: usize,
) -> Tensor<T> {
    assert_eq!(m.shape(), coord.shape(), "soft_bin_votes shape mismatch");
    assert_eq!(m.shape()[0], 1, "soft_bin_votes expects a single channel");
    let (h, w) = (m.shape()[1], m.shape()[2]);
    assert!(h % cell == 0 && w % cell == 0);
    let (cy, cx) = (h / cell, w / cell);

    let md = m.data();
    let cd = coord.data();
    let mut hist = vec![T::zero(); cy * cx * n_bin];
    let mut lower = vec![0u32; h * w];
    let mut frac = vec![T::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let c = cd[i].as_f64();
            let mut l = c.floor();
            let mut f = c - l;
            let mut li = l as i64;
            if li >= n_bin as i64 {
                li -= n_bin as i64;
                l = li as f64;
                f = (c - n_bin as f64 - l).max(0.0);
            }
            let li = li.max(0) as usize % n_bin;
            lower[i] = li as u32;
            frac[i] = T::from_f64(f);
            let cell_idx = (y / cell) * cx + (x / cell);
            let base = cell_idx * n_bin;
            let mv = md[i];
            hist[base + li] += mv * (T::one() - frac[i]);
            hist[base + (li + 1) % n_bin] += mv * frac[i];
        }
    }
    drop(md);
    drop(cd);
    Tensor::from_op(
        vec![cy, cx, n_bin],
        hist,
        vec![m.clone(), coord.clone()],
        Box::new(move |g, parents| {
            let md = parents[0].data().clone();
            let mut gm = vec![T::zero(); h * w];
            let mut gc = vec![T::zero(); h * w];
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    let li = lower[i] as usize;
                    let ui = (li + 1) % n_bin;
                    let f = frac[i];
                    let base = ((y / cell) * cx + (x / cell)) * n_bin;
                    let gl = g[base + li];
                    let gu = g[base + ui];
                    gm[i] = (T::one() - f) * gl + f * gu;
                    gc[i] = md[i] * (gu - gl);
                }
            }
            parents[0].accum_grad(&gm);
            parents[1].accum_grad(&gc);
        }),
    )
}

/// Broadcast one value vector per patch over that patch's pixels:
/// (P, C) → (C, H, W) with P = (H/patch)·(W/patch) patches in raster order.
pub fn broadcast_patch_values<T: Scalar>(
    vals: &Tensor<T>,
    patch: usize,
    h: usize,
    w: usize,
) -> Tensor<T> {
    assert_eq!(vals.shape().len(), 2, "broadcast_patch_values expects (P,C)");
    let (p, c) = (vals.shape()[0], vals.shape()[1]);
    assert!(h % patch == 0 && w % patch == 0);
    let px = w / patch;
    assert_eq!(p, (h / patch) * px, "patch count mismatch");
    let vd = vals.data();
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let pi = (y / patch) * px + (x / patch);
                out[ch * h * w + y * w + x] = vd[pi * c + ch];
            }
        }
    }
    drop(vd);
    Tensor::from_op(
        vec![c, h, w],
        out,
        vec![vals.clone()],
        Box::new(move |g, parents| {
            let mut gv = vec![T::zero(); p * c];
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let pi = (y / patch) * px + (x / patch);
                        gv[pi * c + ch] += g[ch * h * w + y * w + x];
                    }
                }
            }
            parents[0].accum_grad(&gv);
        }),
    )
}
