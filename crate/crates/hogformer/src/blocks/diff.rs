//! Dynamic interaction feed-forward: parallel multi-scale depthwise
//! branches, cross sigmoid gating, channel shuffle, aggregation.

use crate::error::Result;
use crate::params::ParamReg;
use crate::tensor::{conv2d, interleave0, reflect_pad, Scalar, Tensor};

/// Expansion factor γ: the expand conv maps C → 2γC, each branch gets γC.
pub const DIFF_GAMMA: usize = 2;

#[derive(Clone)]
pub struct DiffParams<T: Scalar> {
    pub expand: Tensor<T>,
    pub depthwise3: Tensor<T>,
    pub depthwise5: Tensor<T>,
    pub aggregate: Tensor<T>,
    pub width: usize,
}

impl<T: Scalar> DiffParams<T> {
    pub fn init(reg: &mut ParamReg<T>, c: usize) -> Result<Self> {
        let gc = DIFF_GAMMA * c;
        Ok(DiffParams {
            expand: reg.conv_weight("expand", 2 * gc, c, 1),
            depthwise3: reg.trunc_normal("depthwise3", vec![gc, 1, 3, 3], 9),
            depthwise5: reg.trunc_normal("depthwise5", vec![gc, 1, 5, 5], 25),
            aggregate: reg.conv_weight("aggregate", c, 2 * gc, 1),
            width: c,
        })
    }
}

/// Expand, split, convolve each half at a different scale, cross-gate with
/// sigmoids, interleave (2-group channel shuffle) and aggregate back to C.
pub fn diff_forward<T: Scalar>(x: &Tensor<T>, p: &DiffParams<T>) -> Result<Tensor<T>> {
    let gc = DIFF_GAMMA * p.width;
    let expanded = conv2d(x, &p.expand, None, 1, 0, 1)?;
    let u = expanded.narrow0(0, gc);
    let wv = expanded.narrow0(gc, gc);
    let u = conv2d(&reflect_pad(&u, 1, 1, 1, 1), &p.depthwise3, None, 1, 0, gc)?;
    let wv = conv2d(&reflect_pad(&wv, 2, 2, 2, 2), &p.depthwise5, None, 1, 0, gc)?;
    let u_gated = u.mul(&wv.sigmoid());
    let w_gated = wv.mul(&u.sigmoid());
    let shuffled = interleave0(&u_gated, &w_gated);
    conv2d(&shuffled, &p.aggregate, None, 1, 0, 1)
}

/// Plain feed-forward stand-in for ablations: pointwise expand, GELU,
/// pointwise contract.
#[derive(Clone)]
pub struct PlainFfnParams<T: Scalar> {
    pub expand: Tensor<T>,
    pub contract: Tensor<T>,
}

impl<T: Scalar> PlainFfnParams<T> {
    pub fn init(reg: &mut ParamReg<T>, c: usize) -> Result<Self> {
        Ok(PlainFfnParams {
            expand: reg.conv_weight("expand", DIFF_GAMMA * c, c, 1),
            contract: reg.conv_weight("contract", c, DIFF_GAMMA * c, 1),
        })
    }
}

pub fn plain_ffn_forward<T: Scalar>(x: &Tensor<T>, p: &PlainFfnParams<T>) -> Result<Tensor<T>> {
    let h = conv2d(x, &p.expand, None, 1, 0, 1)?;
    conv2d(&h.gelu(), &p.contract, None, 1, 0, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{ramp_field, smooth_image};
    use crate::tensor::finite_diff_check;

    fn params(c: usize, seed: u64) -> DiffParams<f64> {
        let mut reg = ParamReg::<f64>::new(seed);
        DiffParams::init(&mut reg, c).unwrap()
    }

    #[test]
    fn shape_preserved() {
        let p = params(4, 1);
        let x: Tensor<f64> = smooth_image(4, 6, 6, 2);
        assert_eq!(diff_forward(&x, &p).unwrap().shape(), x.shape());
    }

    #[test]
    fn zero_weights_collapse_to_zero_output() {
        let mut p = params(4, 3);
        p.depthwise3 = Tensor::new(vec![8, 1, 3, 3], vec![0.0; 72], false);
        p.depthwise5 = Tensor::new(vec![8, 1, 5, 5], vec![0.0; 200], false);
        p.aggregate = Tensor::new(vec![4, 16, 1, 1], vec![0.0; 64], false);
        let x: Tensor<f64> = smooth_image(4, 6, 6, 4);
        let y = diff_forward(&x, &p).unwrap();
        assert!(y.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gates_strictly_inside_unit_interval() {
        let p = params(4, 5);
        let x: Tensor<f64> = smooth_image(4, 6, 6, 6);
        let expanded = conv2d(&x, &p.expand, None, 1, 0, 1).unwrap();
        let u = expanded.narrow0(0, 8);
        let g = u.sigmoid().to_vec();
        assert!(g.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn finite_diff_through_diff() {
        let p = params(4, 7);
        let data: Vec<f64> = (0..4).flat_map(|ch| ramp_field(6, 6, 70 + ch)).collect();
        let x = Tensor::new(vec![4, 6, 6], data, true);
        let err = finite_diff_check(|ins| diff_forward(&ins[0], &p).unwrap().sum_all(), &[x], 1e-4);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn plain_ffn_shape_and_grad() {
        let mut reg = ParamReg::<f64>::new(8);
        let p = PlainFfnParams::init(&mut reg, 4).unwrap();
        let data: Vec<f64> = (0..4).flat_map(|ch| ramp_field(6, 6, 80 + ch)).collect();
        let x = Tensor::new(vec![4, 6, 6], data, true);
        assert_eq!(plain_ffn_forward(&x, &p).unwrap().shape(), x.shape());
        let err =
            finite_diff_check(|ins| plain_ffn_forward(&ins[0], &p).unwrap().sum_all(), &[x], 1e-4);
        assert!(err < 1e-4, "max rel err {err}");
    }
}
