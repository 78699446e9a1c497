//! Local dynamic-range convolution: HOG-guided patch sorting plus learnable
//! histogram-prior modulation, then pointwise and depthwise convolution.

use crate::error::{Error, Result};
use crate::hog::{broadcast_patch_values, feature_sort_keys, patch_sort_plan, soft_cell_histogram};
use crate::params::ParamReg;
use crate::tensor::{concat0, conv2d, gather_last, reflect_pad, Scalar, Tensor};

#[derive(Clone)]
pub struct LdrConvParams<T: Scalar> {
    /// Learnable projection of the n_bin patch histogram to C/2 channels,
    /// bias-free so a zero histogram contributes exactly nothing.
    pub hog_projection: Tensor<T>,
    pub pointwise: Tensor<T>,
    pub depthwise: Tensor<T>,
    pub patch: usize,
    pub n_bin: usize,
    /// Keep convolving in sorted space instead of undoing the permutation.
    pub no_unsort: bool,
}

impl<T: Scalar> LdrConvParams<T> {
    pub fn init(
        reg: &mut ParamReg<T>,
        c: usize,
        patch: usize,
        n_bin: usize,
        no_unsort: bool,
    ) -> Result<Self> {
        if c % 2 != 0 {
            return Err(Error::Config(format!(
                "ldrconv: channel width {c} must be even for the F1/F2 split"
            )));
        }
        Ok(LdrConvParams {
            hog_projection: reg.linear_weight("hog_projection", n_bin, c / 2),
            pointwise: reg.conv_weight("pointwise", c, c, 1),
            depthwise: reg.trunc_normal("depthwise", vec![c, 1, 3, 3], 9),
            patch,
            n_bin,
            no_unsort,
        })
    }
}

/// Projection of the per-patch soft histogram of pre-sort F1, broadcast over
/// each patch's pixels. Linear and bias-free: constant input → zero output.
pub fn hog_prior_modulation<T: Scalar>(f1: &Tensor<T>, p: &LdrConvParams<T>) -> Result<Tensor<T>> {
    let (h, w) = (f1.shape()[1], f1.shape()[2]);
    let hist = soft_cell_histogram(f1, p.patch, p.n_bin)?;
    let (py, px) = (hist.shape()[0], hist.shape()[1]);
    let flat = hist.reshape(vec![py * px, p.n_bin]);
    let projected = flat.matmul(&p.hog_projection);
    Ok(broadcast_patch_values(&projected, p.patch, h, w))
}

/// Split F into halves, patch-sort the first by its HOG keys, add the
/// histogram-prior modulation, undo the sort (spatial alignment for the
/// convolutions that follow), concatenate and convolve.
pub fn ldrconv_forward<T: Scalar>(x: &Tensor<T>, p: &LdrConvParams<T>) -> Result<Tensor<T>> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if c % 2 != 0 {
        return Err(Error::Config(format!("ldrconv_forward: odd channel count {c}")));
    }
    if h % p.patch != 0 || w % p.patch != 0 {
        return Err(Error::Config(format!(
            "ldrconv_forward: spatial {h}x{w} not divisible by patch {}",
            p.patch
        )));
    }
    let half = c / 2;
    let f1 = x.narrow0(0, half);
    let f2 = x.narrow0(half, half);

    let keys = feature_sort_keys(&f1, p.n_bin)?;
    let plan = patch_sort_plan(&keys, p.patch)?;

    let f1_flat = f1.reshape(vec![half, h * w]);
    let sorted = gather_last(&f1_flat, &plan.perm)?;
    let modulation = hog_prior_modulation(&f1, p)?.reshape(vec![half, h * w]);
    let mixed = sorted.add(&modulation);
    let f1_out = if p.no_unsort {
        mixed
    } else {
        gather_last(&mixed, &plan.inv)?
    };

    let merged = concat0(&[&f1_out.reshape(vec![half, h, w]), &f2]);
    let pw = conv2d(&merged, &p.pointwise, None, 1, 0, 1)?;
    let padded = reflect_pad(&pw, 1, 1, 1, 1);
    conv2d(&padded, &p.depthwise, None, 1, 0, c)
}
