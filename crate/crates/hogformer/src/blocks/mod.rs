//! Transformer building blocks: LDRConv, the HOG-aware attention stage, the
//! dynamic-interaction feed-forward, and their residual composition.

pub mod dhogsa;
pub mod diff;
pub mod ldrconv;

pub use dhogsa::{
    dhogsa_forward, histogram_reshape, histogram_unreshape, segment_len, AttnCore, AttnScale,
    DhogsaCore, DhogsaParams, ReshapeMode, StdAttnCore,
};
pub use diff::{diff_forward, plain_ffn_forward, DiffParams, PlainFfnParams, DIFF_GAMMA};
pub use ldrconv::{hog_prior_modulation, ldrconv_forward, LdrConvParams};

use crate::error::Result;
use crate::params::ParamReg;
use crate::tensor::{layer_norm, Scalar, Tensor};

/// Channel-wise affine layer-norm parameters.
#[derive(Clone)]
pub struct LayerNormParams<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Scalar> LayerNormParams<T> {
    pub fn init(reg: &mut ParamReg<T>, c: usize) -> Self {
        LayerNormParams { gamma: reg.ones("gamma", vec![c]), beta: reg.zeros("beta", vec![c]) }
    }

    pub fn apply(&self, x: &Tensor<T>) -> Tensor<T> {
        layer_norm(x, &self.gamma, &self.beta, T::from_f64(1e-6))
    }
}

#[derive(Clone)]
pub enum FfnStage<T: Scalar> {
    Diff(DiffParams<T>),
    Plain(PlainFfnParams<T>),
}

/// One transformer block: pre-norm attention and feed-forward, each in
/// residual form.
#[derive(Clone)]
pub struct HogtbParams<T: Scalar> {
    pub ln1: LayerNormParams<T>,
    pub attn: DhogsaParams<T>,
    pub ln2: LayerNormParams<T>,
    pub ffn: FfnStage<T>,
}

/// Per-block configuration distilled from the model config.
#[derive(Clone, Copy, Debug)]
pub struct BlockConfig {
    pub channels: usize,
    pub heads: usize,
    pub n_bin: usize,
    pub ldr_patch: usize,
    pub use_ldrconv: bool,
    pub use_dhogsa: bool,
    pub use_diff: bool,
    pub scale: AttnScale,
    pub ldr_no_unsort: bool,
    pub use_bhogr: bool,
    pub use_fhogr: bool,
}

impl<T: Scalar> HogtbParams<T> {
    pub fn init(reg: &mut ParamReg<T>, cfg: &BlockConfig) -> Result<Self> {
        let c = cfg.channels;
        let ln1 = reg.scoped("ln1", |r| LayerNormParams::init(r, c));
        let ldr = if cfg.use_ldrconv {
            Some(reg.scoped("ldr", |r| {
                LdrConvParams::init(r, c, cfg.ldr_patch, cfg.n_bin, cfg.ldr_no_unsort)
            })?)
        } else {
            None
        };
        let core = if cfg.use_dhogsa {
            AttnCore::Sorted(reg.scoped("attn", |r| {
                DhogsaCore::init(r, c, cfg.heads, cfg.n_bin, cfg.scale, cfg.use_bhogr, cfg.use_fhogr)
            })?)
        } else {
            AttnCore::Standard(
                reg.scoped("attn", |r| StdAttnCore::init(r, c, cfg.heads, cfg.scale))?,
            )
        };
        let ln2 = reg.scoped("ln2", |r| LayerNormParams::init(r, c));
        let ffn = if cfg.use_diff {
            FfnStage::Diff(reg.scoped("ffn", |r| DiffParams::init(r, c))?)
        } else {
            FfnStage::Plain(reg.scoped("ffn", |r| PlainFfnParams::init(r, c))?)
        };
        Ok(HogtbParams { ln1, attn: DhogsaParams { ldr, core }, ln2, ffn })
    }
}

/// F' = F + Attn(LN(F)); F'' = F' + Ffn(LN(F')).
pub fn hogtb_forward<T: Scalar>(x: &Tensor<T>, p: &HogtbParams<T>) -> Result<Tensor<T>> {
    let attn_out = dhogsa_forward(&p.ln1.apply(x), &p.attn)?;
    let mid = x.add(&attn_out);
    let ffn_out = match &p.ffn {
        FfnStage::Diff(d) => diff_forward(&p.ln2.apply(&mid), d)?,
        FfnStage::Plain(f) => plain_ffn_forward(&p.ln2.apply(&mid), f)?,
    };
    Ok(mid.add(&ffn_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{ramp_field, smooth_image};
    use crate::tensor::finite_diff_check;

    fn block_cfg(c: usize, heads: usize) -> BlockConfig {
        BlockConfig {
            channels: c,
            heads,
            n_bin: 9,
            ldr_patch: 4,
            use_ldrconv: true,
            use_dhogsa: true,
            use_diff: true,
            scale: AttnScale::DHead,
            ldr_no_unsort: false,
            use_bhogr: true,
            use_fhogr: true,
        }
    }

    #[test]
    fn shape_preserved_and_deterministic() {
        let mut reg = ParamReg::<f64>::new(1);
        let p = HogtbParams::init(&mut reg, &block_cfg(4, 2)).unwrap();
        let x: Tensor<f64> = smooth_image(4, 8, 8, 2);
        let a = hogtb_forward(&x, &p).unwrap();
        let b = hogtb_forward(&x, &p).unwrap();
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a.to_vec(), b.to_vec());
    }

    #[test]
    fn zeroed_output_projections_make_identity() {
        let mut reg = ParamReg::<f64>::new(3);
        let p = HogtbParams::init(&mut reg, &block_cfg(4, 2)).unwrap();
        // Zero the attention output projection and the DIFF aggregate: both
        // residual stages then contribute nothing.
        if let AttnCore::Sorted(core) = &p.attn.core {
            core.out_pointwise.set_data(&vec![0.0; core.out_pointwise.numel()]);
        }
        if let FfnStage::Diff(d) = &p.ffn {
            d.aggregate.set_data(&vec![0.0; d.aggregate.numel()]);
        }
        let x: Tensor<f64> = smooth_image(4, 8, 8, 4);
        let y = hogtb_forward(&x, &p).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn finite_diff_through_full_block() {
        let mut reg = ParamReg::<f64>::new(5);
        let p = HogtbParams::init(&mut reg, &block_cfg(4, 2)).unwrap();
        let data: Vec<f64> = (0..4).flat_map(|ch| ramp_field(8, 8, 90 + ch)).collect();
        let x = Tensor::new(vec![4, 8, 8], data, true);
        let err =
            finite_diff_check(|ins| hogtb_forward(&ins[0], &p).unwrap().sum_all(), &[x], 1e-4);
        assert!(err < 1e-4, "max rel err {err}");
    }

    #[test]
    fn all_flag_combinations_build_and_run() {
        let x: Tensor<f64> = smooth_image(4, 8, 8, 6);
        for ldr in [false, true] {
            for dhogsa in [false, true] {
                for diff in [false, true] {
                    let mut cfg = block_cfg(4, 2);
                    cfg.use_ldrconv = ldr;
                    cfg.use_dhogsa = dhogsa;
                    cfg.use_diff = diff;
                    let mut reg = ParamReg::<f64>::new(7);
                    let p = HogtbParams::init(&mut reg, &cfg).unwrap();
                    let y = hogtb_forward(&x, &p).unwrap();
                    assert_eq!(y.shape(), x.shape());
                }
            }
        }
    }
}
