//! Spatial ops on (C,H,W) tensors: convolution, padding, cropping, pooling.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use rayon::prelude::*;

/// 2-d convolution (cross-correlation) with zero padding.
///
/// `x` is (Cin,H,W), `weight` is (Cout, Cin/groups, k, k). Reflective
/// boundaries are the caller's job via [`reflect_pad`]. Differentiable in
/// the input, weight and bias.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    if x.shape().len() != 3 {
        return Err(Error::Config(format!(
            "conv2d: input must be (C,H,W), got {:?}",
            x.shape()
        )));
    }
    if weight.shape().len() != 4 {
        return Err(Error::Config(format!(
            "conv2d: weight must be (O,I,k,k), got {:?}",
            weight.shape()
        )));
    }
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout, icpg, kh, kw) = (
        weight.shape()[0],
        weight.shape()[1],
        weight.shape()[2],
        weight.shape()[3],
    );
    if groups == 0 || cin % groups != 0 {
        return Err(Error::Config(format!(
            "conv2d: input channels {cin} not divisible by groups {groups}"
        )));
    }
    if cout % groups != 0 {
        return Err(Error::Config(format!(
            "conv2d: output channels {cout} not divisible by groups {groups}"
        )));
    }
    if icpg != cin / groups {
        return Err(Error::Config(format!(
            "conv2d: weight in-channels {icpg} != input channels {cin} / groups {groups}"
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::Config(format!(
                "conv2d: bias shape {:?} != ({cout},)",
                b.shape()
            )));
        }
    }
    if stride == 0 {
        return Err(Error::Config("conv2d: stride must be positive".into()));
    }
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::Config(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    let ho = (h + 2 * padding - kh) / stride + 1;
    let wo = (w + 2 * padding - kw) / stride + 1;

    let out = {
        let xd = x.data();
        let wd = weight.data();
        let bd = bias.map(|b| b.to_vec());
        conv_forward_kernel(
            &xd, &wd, bd.as_deref(), cin, h, w, cout, icpg, kh, kw, stride, padding, groups, ho, wo,
        )
    };

    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    Ok(Tensor::from_op(
        vec![cout, ho, wo],
        out,
        parents,
        Box::new(move |g, parents| {
            let xd = parents[0].data().clone();
            let wd = parents[1].data().clone();
            let (gx, gw, gb) = conv_backward_kernel(
                g, &xd, &wd, cin, h, w, cout, icpg, kh, kw, stride, padding, groups, ho, wo,
            );
            parents[0].accum_grad(&gx);
            parents[1].accum_grad(&gw);
            if has_bias {
                parents[2].accum_grad(&gb);
            }
        }),
    ))
}

#[allow(clippy::too_many_arguments)]
fn conv_forward_kernel<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    cin: usize,
    h: usize,
    wdt: usize,
    cout: usize,
    icpg: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    ho: usize,
    wo: usize,
) -> Vec<T> {
    let ocpg = cout / groups;
    let mut out = vec![T::zero(); cout * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(oc, oplane)| {
        let g = oc / ocpg;
        if let Some(b) = bias {
            let bv = b[oc];
            for v in oplane.iter_mut() {
                *v = bv;
            }
        }
        for icl in 0..icpg {
            let ic = g * icpg + icl;
            let xplane = &x[ic * h * wdt..(ic + 1) * h * wdt];
            for dy in 0..kh {
                for dx in 0..kw {
                    let wv = w[((oc * icpg + icl) * kh + dy) * kw + dx];
                    if wv == T::zero() {
                        continue;
                    }
                    if stride == 1 {
                        // ih = oh + dy - pad, iw = ow + dx - pad
                        let oh0 = pad.saturating_sub(dy);
                        let oh1 = (h + pad - dy).min(ho);
                        let ow0 = pad.saturating_sub(dx);
                        let ow1 = (wdt + pad - dx).min(wo);
                        for oh in oh0..oh1 {
                            let ih = oh + dy - pad;
                            let xrow = &xplane[ih * wdt..(ih + 1) * wdt];
                            let orow = &mut oplane[oh * wo..(oh + 1) * wo];
                            let shift = dx as isize - pad as isize;
                            for ow in ow0..ow1 {
                                let iw = (ow as isize + shift) as usize;
                                orow[ow] += wv * xrow[iw];
                            }
                        }
                    } else {
                        for oh in 0..ho {
                            let ih = oh as isize * stride as isize + dy as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let xrow = &xplane[ih as usize * wdt..(ih as usize + 1) * wdt];
                            let orow = &mut oplane[oh * wo..(oh + 1) * wo];
                            for ow in 0..wo {
                                let iw =
                                    ow as isize * stride as isize + dx as isize - pad as isize;
                                if iw < 0 || iw >= wdt as isize {
                                    continue;
                                }
                                orow[ow] += wv * xrow[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_kernel<T: Scalar>(
    g: &[T],
    x: &[T],
    w: &[T],
    cin: usize,
    h: usize,
    wdt: usize,
    cout: usize,
    icpg: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    groups: usize,
    ho: usize,
    wo: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let ocpg = cout / groups;

    // Bias gradient: per-channel sum of upstream.
    let gb: Vec<T> = (0..cout)
        .map(|oc| {
            let mut acc = T::zero();
            for &v in &g[oc * ho * wo..(oc + 1) * ho * wo] {
                acc += v;
            }
            acc
        })
        .collect();

    // Weight gradient, parallel over output channels.
    let mut gw = vec![T::zero(); cout * icpg * kh * kw];
    gw.par_chunks_mut(icpg * kh * kw).enumerate().for_each(|(oc, wchunk)| {
        let grp = oc / ocpg;
        let gplane = &g[oc * ho * wo..(oc + 1) * ho * wo];
        for icl in 0..icpg {
            let ic = grp * icpg + icl;
            let xplane = &x[ic * h * wdt..(ic + 1) * h * wdt];
            for dy in 0..kh {
                for dx in 0..kw {
                    let mut acc = T::zero();
                    for oh in 0..ho {
                        let ih = oh as isize * stride as isize + dy as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let xrow = &xplane[ih as usize * wdt..(ih as usize + 1) * wdt];
                        let grow = &gplane[oh * wo..(oh + 1) * wo];
                        for ow in 0..wo {
                            let iw = ow as isize * stride as isize + dx as isize - pad as isize;
                            if iw < 0 || iw >= wdt as isize {
                                continue;
                            }
                            acc += grow[ow] * xrow[iw as usize];
                        }
                    }
                    wchunk[(icl * kh + dy) * kw + dx] = acc;
                }
            }
        }
    });

    // Input gradient, parallel over input channels.
    let mut gx = vec![T::zero(); cin * h * wdt];
    gx.par_chunks_mut(h * wdt).enumerate().for_each(|(ic, xchunk)| {
        let grp = ic / icpg;
        let icl = ic % icpg;
        for ocl in 0..ocpg {
            let oc = grp * ocpg + ocl;
            let gplane = &g[oc * ho * wo..(oc + 1) * ho * wo];
            for dy in 0..kh {
                for dx in 0..kw {
                    let wv = w[((oc * icpg + icl) * kh + dy) * kw + dx];
                    if wv == T::zero() {
                        continue;
                    }
                    for oh in 0..ho {
                        let ih = oh as isize * stride as isize + dy as isize - pad as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let xrow = &mut xchunk[ih as usize * wdt..(ih as usize + 1) * wdt];
                        let grow = &gplane[oh * wo..(oh + 1) * wo];
                        for ow in 0..wo {
                            let iw = ow as isize * stride as isize + dx as isize - pad as isize;
                            if iw < 0 || iw >= wdt as isize {
                                continue;
                            }
                            xrow[iw as usize] += wv * grow[ow];
                        }
                    }
                }
            }
        }
    });

    (gx, gw, gb)
}

/// Reflective padding of a (C,H,W) tensor (edge pixel not repeated). Pads
/// larger than the extent fold back and forth, so any target size works.
pub fn reflect_pad<T: Scalar>(
    x: &Tensor<T>,
    top: usize,
    bottom: usize,
    left: usize,
    right: usize,
) -> Tensor<T> {
    assert_eq!(x.shape().len(), 3, "reflect_pad expects (C,H,W)");
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ho, wo) = (h + top + bottom, w + left + right);
    let row_map: Vec<usize> = (0..ho)
        .map(|i| reflect_index(i as isize - top as isize, h))
        .collect();
    let col_map: Vec<usize> = (0..wo)
        .map(|j| reflect_index(j as isize - left as isize, w))
        .collect();
    let xd = x.data();
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        let xplane = &xd[ch * h * w..(ch + 1) * h * w];
        let oplane = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for (i, &si) in row_map.iter().enumerate() {
            let xrow = &xplane[si * w..(si + 1) * w];
            let orow = &mut oplane[i * wo..(i + 1) * wo];
            for (j, &sj) in col_map.iter().enumerate() {
                orow[j] = xrow[sj];
            }
        }
    }
    drop(xd);
    Tensor::from_op(
        vec![c, ho, wo],
        out,
        vec![x.clone()],
        Box::new(move |g, parents| {
            let mut gx = vec![T::zero(); c * h * w];
            for ch in 0..c {
                let gplane = &g[ch * ho * wo..(ch + 1) * ho * wo];
                let xchunk = &mut gx[ch * h * w..(ch + 1) * h * w];
                for (i, &si) in row_map.iter().enumerate() {
                    let grow = &gplane[i * wo..(i + 1) * wo];
                    for (j, &sj) in col_map.iter().enumerate() {
                        xchunk[si * w + sj] += grow[j];
                    }
                }
            }
            parents[0].accum_grad(&gx);
        }),
    )
}

/// Triangle-wave fold of an out-of-range coordinate into [0, n).
fn reflect_index(t: isize, n: usize) -> usize {
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
}

/// Crop a (C,H,W) tensor to `h`×`w` starting at (top,left).
pub fn crop_hw<T: Scalar>(x: &Tensor<T>, top: usize, left: usize, h: usize, w: usize) -> Tensor<T> {
    assert_eq!(x.shape().len(), 3, "crop_hw expects (C,H,W)");
    let (c, hin, win) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert!(top + h <= hin && left + w <= win, "crop_hw out of range");
    let xd = x.data();
    let mut out = vec![T::zero(); c * h * w];
    for ch in 0..c {
        for i in 0..h {
            let src = ch * hin * win + (top + i) * win + left;
            out[ch * h * w + i * w..ch * h * w + (i + 1) * w]
                .copy_from_slice(&xd[src..src + w]);
        }
    }
    drop(xd);
    Tensor::from_op(
        vec![c, h, w],
        out,
        vec![x.clone()],
        Box::new(move |g, parents| {
            let mut gx = vec![T::zero(); c * hin * win];
            for ch in 0..c {
                for i in 0..h {
                    let dst = ch * hin * win + (top + i) * win + left;
                    gx[dst..dst + w].copy_from_slice(&g[ch * h * w + i * w..ch * h * w + (i + 1) * w]);
                }
            }
            parents[0].accum_grad(&gx);
        }),
    )
}

/// Average pooling with zero padding; the divisor is always k², so padded
/// positions count as zeros. k = stride = 1 is the identity.
pub fn avg_pool<T: Scalar>(x: &Tensor<T>, k: usize, stride: usize, pad: usize) -> Tensor<T> {
    assert_eq!(x.shape().len(), 3, "avg_pool expects (C,H,W)");
    assert!(k > 0 && stride > 0);
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert!(h + 2 * pad >= k && w + 2 * pad >= k, "avg_pool window exceeds input");
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    let inv = T::from_f64(1.0 / (k * k) as f64);
    let xd = x.data();
    let mut out = vec![T::zero(); c * ho * wo];
    for ch in 0..c {
        let xplane = &xd[ch * h * w..(ch + 1) * h * w];
        let oplane = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = T::zero();
                for dy in 0..k {
                    let ih = oh as isize * stride as isize + dy as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    for dx in 0..k {
                        let iw = ow as isize * stride as isize + dx as isize - pad as isize;
                        if iw < 0 || iw >= w as isize {
                            continue;
                        }
                        acc += xplane[ih as usize * w + iw as usize];
                    }
                }
                oplane[oh * wo + ow] = acc * inv;
            }
        }
    }
    drop(xd);
    Tensor::from_op(
        vec![c, ho, wo],
        out,
        vec![x.clone()],
        Box::new(move |g, parents| {
            let mut gx = vec![T::zero(); c * h * w];
            for ch in 0..c {
                let gplane = &g[ch * ho * wo..(ch + 1) * ho * wo];
                let xchunk = &mut gx[ch * h * w..(ch + 1) * h * w];
                for oh in 0..ho {
                    for ow in 0..wo {
                        let gv = gplane[oh * wo + ow] * inv;
                        for dy in 0..k {
                            let ih = oh as isize * stride as isize + dy as isize - pad as isize;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for dx in 0..k {
                                let iw =
                                    ow as isize * stride as isize + dx as isize - pad as isize;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                xchunk[ih as usize * w + iw as usize] += gv;
                            }
                        }
                    }
                }
            }
            parents[0].accum_grad(&gx);
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;
    use super::*;

    /// Brute-force correlation oracle, independent of the kernel above.
    fn conv_oracle(
        x: &[f64],
        (cin, h, w): (usize, usize, usize),
        wts: &[f64],
        (cout, icpg, k): (usize, usize, usize),
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Vec<f64> {
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let ocpg = cout / groups;
        let mut out = vec![0.0; cout * ho * wo];
        for oc in 0..cout {
            let g = oc / ocpg;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = 0.0;
                    for icl in 0..icpg {
                        let ic = g * icpg + icl;
                        for dy in 0..k {
                            for dx in 0..k {
                                let ih = (oh * stride + dy) as isize - pad as isize;
                                let iw = (ow * stride + dx) as isize - pad as isize;
                                if ih < 0 || ih >= h as isize || iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                acc += x[(ic * h + ih as usize) * w + iw as usize]
                                    * wts[((oc * icpg + icl) * k + dy) * k + dx];
                            }
                        }
                    }
                    out[(oc * ho + oh) * wo + ow] = acc;
                }
            }
        }
        let _ = cin;
        out
    }

    #[test]
    fn identity_1x1_kernel() {
        let x = Tensor::<f64>::new(vec![1, 3, 3], (0..9).map(|v| v as f64).collect(), false);
        let w = Tensor::<f64>::new(vec![1, 1, 1, 1], vec![1.0], false);
        let y = conv2d(&x, &w, None, 1, 0, 1).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn ones_kernel_center_is_nine() {
        let x = Tensor::<f64>::new(vec![1, 3, 3], vec![1.0; 9], false);
        let w = Tensor::<f64>::new(vec![1, 1, 3, 3], vec![1.0; 9], false);
        let y = conv2d(&x, &w, None, 1, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        // Center tap sees the full 9-sample window.
        assert_eq!(y.to_vec()[4], 9.0);
    }

    #[test]
    fn depthwise_shape_contract() {
        let x = Tensor::<f64>::new(vec![4, 5, 5], vec![0.5; 100], false);
        let w = Tensor::<f64>::new(vec![4, 1, 3, 3], vec![0.1; 36], false);
        let y = conv2d(&x, &w, None, 1, 1, 4).unwrap();
        assert_eq!(y.shape(), &[4, 5, 5]);
    }

    #[test]
    fn matches_bruteforce_oracle_with_groups_and_stride() {
        let mut seed = 0x12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let (cin, h, w) = (4, 7, 6);
        let (cout, k, groups, stride, pad) = (6, 3, 2, 2, 1);
        let icpg = cin / groups;
        let x: Vec<f64> = (0..cin * h * w).map(|_| next()).collect();
        let wts: Vec<f64> = (0..cout * icpg * k * k).map(|_| next()).collect();
        let xt = Tensor::<f64>::new(vec![cin, h, w], x.clone(), false);
        let wt = Tensor::<f64>::new(vec![cout, icpg, k, k], wts.clone(), false);
        let y = conv2d(&xt, &wt, None, stride, pad, groups).unwrap();
        let want = conv_oracle(&x, (cin, h, w), &wts, (cout, icpg, k), stride, pad, groups);
        for (a, b) in y.to_vec().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let x = Tensor::<f64>::new(vec![3, 4, 4], vec![0.0; 48], false);
        let w = Tensor::<f64>::new(vec![2, 2, 3, 3], vec![0.0; 36], false);
        let err = conv2d(&x, &w, None, 1, 1, 1).unwrap_err();
        assert!(err.to_string().contains("configuration"));
    }

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        let x = Tensor::<f64>::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0], false);
        let y = reflect_pad(&x, 0, 0, 2, 2);
        assert_eq!(y.to_vec(), vec![3.0, 2.0, 1.0, 2.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn reflect_pad_beyond_extent_folds() {
        let x = Tensor::<f64>::new(vec![1, 1, 2], vec![1.0, 2.0], false);
        let y = reflect_pad(&x, 0, 0, 0, 4);
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn reflect_pad_gradient_folds_back() {
        let x = Tensor::<f64>::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0], true);
        reflect_pad(&x, 0, 0, 1, 1).sum_all().backward().unwrap();
        // Pad left reads index 1, pad right reads index 1: center counted thrice.
        assert_eq!(x.grad().unwrap(), vec![1.0, 3.0, 1.0]);
    }

    #[test]
    fn avg_pool_constant_stays_constant() {
        let x = Tensor::<f64>::new(vec![1, 4, 4], vec![0.7; 16], false);
        let y = avg_pool(&x, 2, 2, 0);
        assert_eq!(y.shape(), &[1, 2, 2]);
        for v in y.to_vec() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn avg_pool_k1_s1_identity() {
        let x = Tensor::<f64>::new(vec![2, 3, 3], (0..18).map(|v| v as f64).collect(), false);
        assert_eq!(avg_pool(&x, 1, 1, 0).to_vec(), x.to_vec());
    }

    #[test]
    fn crop_inverts_pad_position() {
        let x = Tensor::<f64>::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0], false);
        let padded = reflect_pad(&x, 1, 1, 1, 1);
        let back = crop_hw(&padded, 1, 1, 2, 2);
        assert_eq!(back.to_vec(), x.to_vec());
    }
}
