//! Layer normalization and softmax.

use super::{Scalar, Tensor};

/// Layer norm over the channel axis at each spatial position of a (C,H,W)
/// map, with per-channel affine.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Tensor<T> {
    assert_eq!(x.shape().len(), 3, "layer_norm expects (C,H,W)");
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert_eq!(gamma.shape(), &[c], "layer_norm gamma shape");
    assert_eq!(beta.shape(), &[c], "layer_norm beta shape");
    let hw = h * w;
    let xd = x.data();
    let gd = gamma.data();
    let bd = beta.data();
    let invc = T::from_f64(1.0 / c as f64);
    let mut out = vec![T::zero(); c * hw];
    let mut xhat = vec![T::zero(); c * hw];
    let mut inv_std = vec![T::zero(); hw];
    for p in 0..hw {
        let mut mean = T::zero();
        for ch in 0..c {
            mean += xd[ch * hw + p];
        }
        mean *= invc;
        let mut var = T::zero();
        for ch in 0..c {
            let d = xd[ch * hw + p] - mean;
            var += d * d;
        }
        var *= invc;
        let istd = T::one() / (var + eps).sqrt();
        inv_std[p] = istd;
        for ch in 0..c {
            let xh = (xd[ch * hw + p] - mean) * istd;
            xhat[ch * hw + p] = xh;
            out[ch * hw + p] = gd[ch] * xh + bd[ch];
        }
    }
    drop(xd);
    drop(gd);
    drop(bd);
    Tensor::from_op(
        vec![c, h, w],
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, parents| {
            let gd = parents[1].data().clone();
            let mut gx = vec![T::zero(); c * hw];
            let mut ggamma = vec![T::zero(); c];
            let mut gbeta = vec![T::zero(); c];
            for ch in 0..c {
                let mut sg = T::zero();
                let mut sgx = T::zero();
                for p in 0..hw {
                    let gv = g[ch * hw + p];
                    sg += gv;
                    sgx += gv * xhat[ch * hw + p];
                }
                gbeta[ch] = sg;
                ggamma[ch] = sgx;
            }
            for p in 0..hw {
                // Standard layer-norm backward over the channel slice.
                let mut mean_dxhat = T::zero();
                let mut mean_dxhat_xhat = T::zero();
                for ch in 0..c {
                    let dxh = g[ch * hw + p] * gd[ch];
                    mean_dxhat += dxh;
                    mean_dxhat_xhat += dxh * xhat[ch * hw + p];
                }
                mean_dxhat *= invc;
                mean_dxhat_xhat *= invc;
                for ch in 0..c {
                    let dxh = g[ch * hw + p] * gd[ch];
                    gx[ch * hw + p] = inv_std[p]
                        * (dxh - mean_dxhat - xhat[ch * hw + p] * mean_dxhat_xhat);
                }
            }
            parents[0].accum_grad(&gx);
            parents[1].accum_grad(&ggamma);
            parents[2].accum_grad(&gbeta);
        }),
    )
}

/// Numerically stable softmax along the last axis.
pub fn softmax_last<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let shape = x.shape().to_vec();
    let l = *shape.last().expect("softmax on rank-0 tensor");
    let rows = x.numel() / l;
    let xd = x.data();
    let mut out = vec![T::zero(); rows * l];
    for r in 0..rows {
        let row = &xd[r * l..(r + 1) * l];
        let orow = &mut out[r * l..(r + 1) * l];
        let mut m = row[0];
        for &v in row.iter() {
            if v > m {
                m = v;
            }
        }
        let mut sum = T::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = (v - m).exp();
            *o = e;
            sum += e;
        }
        let inv = T::one() / sum;
        for o in orow.iter_mut() {
            *o *= inv;
        }
    }
    drop(xd);
    Tensor::from_op(
        shape,
        out.clone(),
        vec![x.clone()],
        Box::new(move |g, parents| {
            let mut gx = vec![T::zero(); rows * l];
            for r in 0..rows {
                let y = &out[r * l..(r + 1) * l];
                let grow = &g[r * l..(r + 1) * l];
                let mut dot = T::zero();
                for i in 0..l {
                    dot += grow[i] * y[i];
                }
                let gxrow = &mut gx[r * l..(r + 1) * l];
                for i in 0..l {
                    gxrow[i] = y[i] * (grow[i] - dot);
                }
            }
            parents[0].accum_grad(&gx);
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layer_norm_constant_input_is_zero() {
        let x = Tensor::<f64>::new(vec![4, 2, 2], vec![3.5; 16], false);
        let gamma = Tensor::<f64>::new(vec![4], vec![1.0; 4], false);
        let beta = Tensor::<f64>::new(vec![4], vec![0.0; 4], false);
        let y = layer_norm(&x, &gamma, &beta, 1e-6);
        for v in y.to_vec() {
            assert!(v.abs() < 1e-3, "expected ~0, got {v}");
        }
    }

    #[test]
    fn layer_norm_unit_pair_passes_through() {
        // Channel pair (1,-1): mean 0, biased variance 1.
        let x = Tensor::<f64>::new(vec![2, 1, 1], vec![1.0, -1.0], false);
        let gamma = Tensor::<f64>::new(vec![2], vec![1.0; 2], false);
        let beta = Tensor::<f64>::new(vec![2], vec![0.0; 2], false);
        let y = layer_norm(&x, &gamma, &beta, 1e-6).to_vec();
        assert!((y[0] - 1.0).abs() < 1e-4 && (y[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_zero_gamma_collapses_to_beta() {
        let x = Tensor::<f64>::new(vec![3, 2, 1], vec![0.3, 1.0, -2.0, 0.1, 5.0, 2.0], false);
        let gamma = Tensor::<f64>::new(vec![3], vec![0.0; 3], false);
        let beta = Tensor::<f64>::new(vec![3], vec![0.7, -0.2, 0.4], false);
        let y = layer_norm(&x, &gamma, &beta, 1e-6).to_vec();
        assert_eq!(&y[0..2], &[0.7, 0.7]);
        assert_eq!(&y[2..4], &[-0.2, -0.2]);
        assert_eq!(&y[4..6], &[0.4, 0.4]);
    }

    #[test]
    fn softmax_symmetry_and_direct_value() {
        let x = Tensor::<f64>::new(vec![2, 2], vec![0.0, 0.0, (2.0f64).ln(), 0.0], false);
        let y = softmax_last(&x).to_vec();
        assert!((y[0] - 0.5).abs() < 1e-12);
        assert!((y[1] - 0.5).abs() < 1e-12);
        assert!((y[2] - 2.0 / 3.0).abs() < 1e-12);
        assert!((y[3] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_normalize() {
        let x = Tensor::<f64>::new(vec![3, 4], (0..12).map(|v| (v as f64).sin()).collect(), false);
        let y = softmax_last(&x).to_vec();
        for r in 0..3 {
            let s: f64 = y[r * 4..(r + 1) * 4].iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(y[r * 4..(r + 1) * 4].iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
