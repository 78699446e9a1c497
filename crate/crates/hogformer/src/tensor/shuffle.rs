//! Pixel shuffle / unshuffle resampling.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Space-to-depth: (C,H,W) → (C·r², H/r, W/r). Exact inverse of
/// [`pixel_shuffle_up`]; the roundtrip is bit-exact.
pub fn pixel_shuffle_down<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    assert_eq!(x.shape().len(), 3, "pixel_shuffle_down expects (C,H,W)");
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::Config(format!(
            "pixel_shuffle_down: spatial {h}x{w} not divisible by r={r}"
        )));
    }
    let (ho, wo) = (h / r, w / r);
    let co = c * r * r;
    let perm = down_permutation(c, h, w, r);
    let xd = x.data();
    let out: Vec<T> = perm.iter().map(|&src| xd[src]).collect();
    drop(xd);
    let n = c * h * w;
    Ok(Tensor::from_op(
        vec![co, ho, wo],
        out,
        vec![x.clone()],
        Box::new(move |g, parents| {
            let mut gx = vec![T::zero(); n];
            for (dst, &src) in perm.iter().enumerate() {
                gx[src] = g[dst];
            }
            parents[0].accum_grad(&gx);
        }),
    ))
}

/// Depth-to-space: (C,H,W) → (C/r², H·r, W·r).
pub fn pixel_shuffle_up<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    assert_eq!(x.shape().len(), 3, "pixel_shuffle_up expects (C,H,W)");
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if r == 0 || c % (r * r) != 0 {
        return Err(Error::Config(format!(
            "pixel_shuffle_up: channels {c} not divisible by r²={}",
            r * r
        )));
    }
    let co = c / (r * r);
    let (ho, wo) = (h * r, w * r);
    // The up map is the inverse of the down permutation on the output grid.
    let perm = down_permutation(co, ho, wo, r);
    let xd = x.data();
    let n = c * h * w;
    let mut out = vec![T::zero(); n];
    for (src_down, &dst_up) in perm.iter().enumerate() {
        out[dst_up] = xd[src_down];
    }
    drop(xd);
    Ok(Tensor::from_op(
        vec![co, ho, wo],
        out,
        vec![x.clone()],
        Box::new(move |g, parents| {
            let gx: Vec<T> = perm.iter().map(|&i| g[i]).collect();
            parents[0].accum_grad(&gx);
        }),
    ))
}

/// For each element of the down-sampled output, the flat source index:
/// out[c·r² + dy·r + dx, y, x] = in[c, y·r+dy, x·r+dx].
fn down_permutation(c: usize, h: usize, w: usize, r: usize) -> Vec<usize> {
    let (ho, wo) = (h / r, w / r);
    let mut perm = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for dy in 0..r {
            for dx in 0..r {
                for y in 0..ho {
                    for x in 0..wo {
                        perm.push(ch * h * w + (y * r + dy) * w + (x * r + dx));
                    }
                }
            }
        }
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn down_shape_contract() {
        let x = Tensor::<f64>::new(vec![1, 4, 4], (0..16).map(|v| v as f64).collect(), false);
        let y = pixel_shuffle_down(&x, 2).unwrap();
        assert_eq!(y.shape(), &[4, 2, 2]);
    }

    #[test]
    fn up_shape_contract() {
        let x = Tensor::<f64>::new(vec![8, 2, 2], (0..32).map(|v| v as f64).collect(), false);
        let y = pixel_shuffle_up(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4]);
    }

    #[test]
    fn roundtrip_bit_exact() {
        let x = Tensor::<f64>::new(vec![3, 6, 4], (0..72).map(|v| v as f64 * 0.37).collect(), false);
        let down = pixel_shuffle_down(&x, 2).unwrap();
        let back = pixel_shuffle_up(&down, 2).unwrap();
        assert_eq!(back.to_vec(), x.to_vec());
        let up = pixel_shuffle_up(&Tensor::<f64>::new(vec![4, 3, 2], (0..24).map(|v| v as f64).collect(), false), 2).unwrap();
        let again = pixel_shuffle_down(&up, 2).unwrap();
        assert_eq!(again.to_vec(), (0..24).map(|v| v as f64).collect::<Vec<_>>());
    }

    #[test]
    fn divisibility_violation_is_config_error() {
        let x = Tensor::<f64>::new(vec![1, 3, 3], vec![0.0; 9], false);
        assert!(pixel_shuffle_down(&x, 2).is_err());
        let x = Tensor::<f64>::new(vec![3, 2, 2], vec![0.0; 12], false);
        assert!(pixel_shuffle_up(&x, 2).is_err());
    }
}
