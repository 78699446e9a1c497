//! The U-shaped restoration model: stem, encoder/decoder levels of
//! transformer blocks, pixel-shuffle resampling, symmetric and coarse skip
//! connections, global residual head.

mod checkpoint;
mod count;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use count::parameter_count;

use crate::blocks::{hogtb_forward, AttnScale, BlockConfig, HogtbParams};
use crate::error::{Error, Result};
use crate::params::ParamReg;
use crate::tensor::{
    avg_pool, concat0, conv2d, crop_hw, pixel_shuffle_down, pixel_shuffle_up, reflect_pad, Scalar,
    Tensor,
};
use serde::{Deserialize, Serialize};

fn default_true() -> bool {
    true
}

/// Architecture and component-flag configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub base_width: usize,
    pub levels: usize,
    pub blocks_per_level: Vec<usize>,
    pub heads_per_level: Vec<usize>,
    /// Orientation bins of all HOG machinery.
    #[serde(default = "default_n_bin")]
    pub n_bin: usize,
    /// Patch side of the LDRConv sorting and histogram cells.
    #[serde(default = "default_ldr_patch")]
    pub ldr_patch: usize,
    #[serde(default = "default_true")]
    pub use_ldrconv: bool,
    #[serde(default = "default_true")]
    pub use_dhogsa: bool,
    #[serde(default = "default_true")]
    pub use_diff: bool,
    #[serde(default = "default_true")]
    pub use_hog_loss: bool,
    /// Scale attention logits by 1/√heads instead of 1/√d_head.
    #[serde(default)]
    pub sqrt_heads_scaling: bool,
    /// Leave LDRConv features in sorted order (no inverse permutation).
    #[serde(default)]
    pub ldr_no_unsort: bool,
    #[serde(default = "default_true")]
    pub use_bhogr: bool,
    #[serde(default = "default_true")]
    pub use_fhogr: bool,
    /// Additive symmetric skips instead of concatenation + pointwise.
    #[serde(default)]
    pub skip_add: bool,
}

fn default_n_bin() -> usize {
    9
}

fn default_ldr_patch() -> usize {
    8
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::tiny()
    }
}

impl ModelConfig {
    fn base(base_width: usize, blocks: Vec<usize>, heads: Vec<usize>) -> Self {
        ModelConfig {
            base_width,
            levels: blocks.len(),
            blocks_per_level: blocks,
            heads_per_level: heads,
            n_bin: 9,
            ldr_patch: 8,
            use_ldrconv: true,
            use_dhogsa: true,
            use_diff: true,
            use_hog_loss: true,
            sqrt_heads_scaling: false,
            ldr_no_unsort: false,
            use_bhogr: true,
            use_fhogr: true,
            skip_add: false,
        }
    }

    /// Test-scale preset.
    pub fn tiny() -> Self {
        ModelConfig::base(16, vec![1, 1, 1, 1], vec![1, 2, 2, 4])
    }

    /// Roughly 2.9M parameters.
    pub fn small_like() -> Self {
        ModelConfig::base(24, vec![2, 2, 3, 3], vec![1, 2, 4, 8])
    }

    /// Roughly 16.6M parameters.
    pub fn large_like() -> Self {
        ModelConfig::base(48, vec![3, 4, 4, 5], vec![1, 2, 4, 8])
    }

    /// Small shallow preset whose padding multiple is 16, so a 16×16 input
    /// runs unpadded: every architectural element stays active while keeping
    /// finite-difference sweeps fast.
    pub fn grad_check() -> Self {
        let mut cfg = ModelConfig::base(8, vec![1, 1, 1], vec![1, 2, 2]);
        cfg.ldr_patch = 4;
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(ModelConfig::tiny()),
            "small" => Ok(ModelConfig::small_like()),
            "large" => Ok(ModelConfig::large_like()),
            "grad-check" => Ok(ModelConfig::grad_check()),
            other => Err(Error::Usage(format!(
                "unknown preset '{other}' (tiny, small, large, grad-check)"
            ))),
        }
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Spatial extents are padded to a multiple of this before the stem, so
    /// every level satisfies its patch and bin divisibility requirements.
    pub fn pad_multiple(&self) -> usize {
        self.ldr_patch * (1 << (self.levels - 1))
    }

    /// Validate all structural invariants, listing every failure.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.levels == 0 {
            problems.push("levels must be at least 1".to_string());
        }
        if self.base_width == 0 || self.base_width % 2 != 0 {
            problems.push(format!("base_width {} must be positive and even", self.base_width));
        }
        if self.blocks_per_level.len() != self.levels {
            problems.push(format!(
                "blocks_per_level has {} entries for {} levels",
                self.blocks_per_level.len(),
                self.levels
            ));
        }
        if self.heads_per_level.len() != self.levels {
            problems.push(format!(
                "heads_per_level has {} entries for {} levels",
                self.heads_per_level.len(),
                self.levels
            ));
        }
        if self.n_bin == 0 {
            problems.push("n_bin must be at least 1".to_string());
        }
        if self.ldr_patch == 0 {
            problems.push("ldr_patch must be at least 1".to_string());
        }
        for (lvl, &b) in self.blocks_per_level.iter().enumerate() {
            if b == 0 {
                problems.push(format!("level {lvl} has zero blocks"));
            }
        }
        if self.blocks_per_level.len() == self.levels && self.heads_per_level.len() == self.levels
        {
            let pp = self.ldr_patch * self.ldr_patch;
            for (lvl, &h) in self.heads_per_level.iter().enumerate() {
                let c = self.width(lvl);
                if h == 0 {
                    problems.push(format!("level {lvl} has zero heads"));
                    continue;
                }
                if c % h != 0 {
                    problems.push(format!("level {lvl}: width {c} not divisible by heads {h}"));
                }
                if c % 2 != 0 {
                    problems.push(format!("level {lvl}: width {c} must be even"));
                }
                if pp % h != 0 {
                    problems.push(format!(
                        "level {lvl}: heads {h} must divide ldr_patch² = {pp} so every padded \
                         sequence length is segmentable"
                    ));
                }
            }
        }
        if !self.use_bhogr && !self.use_fhogr {
            problems.push("at least one of use_bhogr/use_fhogr must be set".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn block_config(&self, level: usize) -> BlockConfig {
        BlockConfig {
            channels: self.width(level),
            heads: self.heads_per_level[level],
            n_bin: self.n_bin,
            ldr_patch: self.ldr_patch,
            use_ldrconv: self.use_ldrconv,
            use_dhogsa: self.use_dhogsa,
            use_diff: self.use_diff,
            scale: if self.sqrt_heads_scaling { AttnScale::Heads } else { AttnScale::DHead },
            ldr_no_unsort: self.ldr_no_unsort,
            use_bhogr: self.use_bhogr,
            use_fhogr: self.use_fhogr,
        }
    }
}

/// Coarse encoder-to-decoder skip: pooled, pointwise- and depthwise-processed
/// encoder features fused into the decoder stream.
#[derive(Clone)]
pub struct CoarseSkipParams<T: Scalar> {
    pub pool_pointwise: Tensor<T>,
    pub depthwise: Tensor<T>,
    pub fuse: Tensor<T>,
}

impl<T: Scalar> CoarseSkipParams<T> {
    fn init(reg: &mut ParamReg<T>, c: usize) -> Self {
        CoarseSkipParams {
            pool_pointwise: reg.conv_weight("pool_pointwise", c, c, 1),
            depthwise: reg.trunc_normal("depthwise", vec![c, 1, 3, 3], 9),
            fuse: reg.conv_weight("fuse", c, 2 * c, 1),
        }
    }
}

/// processed = dw3×3(pw(avg_pool₃ˢ¹(enc))); fuse(concat(processed, dec)).
pub fn coarse_skip_fuse<T: Scalar>(
    enc_feat: &Tensor<T>,
    dec_feat: &Tensor<T>,
    p: &CoarseSkipParams<T>,
) -> Result<Tensor<T>> {
    if enc_feat.shape()[1..] != dec_feat.shape()[1..] {
        return Err(Error::Runtime(format!(
            "coarse_skip_fuse: spatial mismatch {:?} vs {:?} (padding bug)",
            enc_feat.shape(),
            dec_feat.shape()
        )));
    }
    let c = enc_feat.shape()[0];
    let pooled = avg_pool(enc_feat, 3, 1, 1);
    let pw = conv2d(&pooled, &p.pool_pointwise, None, 1, 0, 1)?;
    let processed = conv2d(&reflect_pad(&pw, 1, 1, 1, 1), &p.depthwise, None, 1, 0, c)?;
    conv2d(&concat0(&[&processed, dec_feat]), &p.fuse, None, 1, 0, 1)
}

/// The full parameter tree plus its configuration.
pub struct HogformerModel<T: Scalar> {
    pub config: ModelConfig,
    stem_w: Tensor<T>,
    stem_b: Tensor<T>,
    enc: Vec<Vec<HogtbParams<T>>>,
    downs: Vec<Tensor<T>>,
    /// Decoder-side stacks indexed so that entry i serves level levels-2-i.
    ups: Vec<Tensor<T>>,
    sym: Vec<Option<Tensor<T>>>,
    coarse: Vec<CoarseSkipParams<T>>,
    dec: Vec<Vec<HogtbParams<T>>>,
    head_w: Tensor<T>,
    head_b: Tensor<T>,
    params: Vec<(String, Tensor<T>)>,
}

/// Deterministic construction from config and seed.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<HogformerModel<T>> {
    cfg.validate()?;
    let mut reg = ParamReg::<T>::new(seed);

    let stem_w = reg.scoped("stem", |r| r.conv_weight("weight", cfg.base_width, 3, 3));
    let stem_b = reg.scoped("stem", |r| r.zeros("bias", vec![cfg.base_width]));

    let mut enc = Vec::with_capacity(cfg.levels);
    let mut downs = Vec::new();
    for lvl in 0..cfg.levels {
        let bc = cfg.block_config(lvl);
        let mut blocks = Vec::with_capacity(cfg.blocks_per_level[lvl]);
        for b in 0..cfg.blocks_per_level[lvl] {
            blocks.push(
                reg.scoped(&format!("enc{lvl}"), |r| {
                    r.scoped(&format!("block{b}"), |r| HogtbParams::init(r, &bc))
                })?,
            );
        }
        enc.push(blocks);
        if lvl < cfg.levels - 1 {
            let c = cfg.width(lvl);
            downs.push(
                reg.scoped(&format!("down{lvl}"), |r| r.conv_weight("weight", 2 * c, 4 * c, 1)),
            );
        }
    }

    let mut ups = Vec::new();
    let mut sym = Vec::new();
    let mut coarse = Vec::new();
    let mut dec = Vec::new();
    for lvl in (0..cfg.levels - 1).rev() {
        let c = cfg.width(lvl);
        ups.push(reg.scoped(&format!("up{lvl}"), |r| r.conv_weight("weight", c, c / 2, 1)));
        sym.push(if cfg.skip_add {
            None
        } else {
            Some(reg.scoped(&format!("sym{lvl}"), |r| r.conv_weight("weight", c, 2 * c, 1)))
        });
        coarse.push(reg.scoped(&format!("coarse{lvl}"), |r| CoarseSkipParams::init(r, c)));
        let bc = cfg.block_config(lvl);
        let mut blocks = Vec::with_capacity(cfg.blocks_per_level[lvl]);
        for b in 0..cfg.blocks_per_level[lvl] {
            blocks.push(
                reg.scoped(&format!("dec{lvl}"), |r| {
                    r.scoped(&format!("block{b}"), |r| HogtbParams::init(r, &bc))
                })?,
            );
        }
        dec.push(blocks);
    }

    // Zero-initialized head: a fresh model is the identity restorer.
    let head_w = reg.scoped("head", |r| r.zeros("weight", vec![3, cfg.base_width, 3, 3]));
    let head_b = reg.scoped("head", |r| r.zeros("bias", vec![3]));

    Ok(HogformerModel {
        config: cfg.clone(),
        stem_w,
        stem_b,
        enc,
        downs,
        ups,
        sym,
        coarse,
        dec,
        head_w,
        head_b,
        params: reg.entries,
    })
}

impl<T: Scalar> std::fmt::Debug for HogformerModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HogformerModel")
            .field("config", &self.config)
            .field("param_count", &self.param_count())
            .finish()
    }
}

impl<T: Scalar> HogformerModel<T> {
    pub fn parameters(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn param_count(&self) -> u64 {
        self.params.iter().map(|(_, t)| t.numel() as u64).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.params {
            t.zero_grad();
        }
    }

    /// Restore an RGB image in [0,1]. Padding is internal; the result has
    /// the input's extent and is NOT clamped — clamp at the image-emission
    /// boundary, never inside a loss.
    pub fn forward_restore(&self, img: &Tensor<T>) -> Result<Tensor<T>> {
        let s = img.shape();
        if s.len() != 3 || s[0] != 3 {
            return Err(Error::Input(format!("forward_restore: expected (3,H,W), got {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        if h < 16 || w < 16 {
            return Err(Error::Input(format!(
                "forward_restore: extent {h}x{w} below the 16-pixel minimum"
            )));
        }
        let m = self.config.pad_multiple();
        let hp = h.div_ceil(m) * m;
        let wp = w.div_ceil(m) * m;
        let padded = reflect_pad(img, 0, hp - h, 0, wp - w);

        let mut x = conv2d(&reflect_pad(&padded, 1, 1, 1, 1), &self.stem_w, Some(&self.stem_b), 1, 0, 1)?;
        let mut skips = Vec::with_capacity(self.config.levels - 1);
        for lvl in 0..self.config.levels {
            for block in &self.enc[lvl] {
                x = hogtb_forward(&x, block)?;
            }
            if lvl < self.config.levels - 1 {
                skips.push(x.clone());
                let down = pixel_shuffle_down(&x, 2)?;
                x = conv2d(&down, &self.downs[lvl], None, 1, 0, 1)?;
            }
        }

        for (i, lvl) in (0..self.config.levels - 1).rev().enumerate() {
            let up = pixel_shuffle_up(&x, 2)?;
            x = conv2d(&up, &self.ups[i], None, 1, 0, 1)?;
            let enc_feat = &skips[lvl];
            x = match &self.sym[i] {
                Some(wt) => conv2d(&concat0(&[enc_feat, &x]), wt, None, 1, 0, 1)?,
                None => x.add(enc_feat),
            };
            x = coarse_skip_fuse(enc_feat, &x, &self.coarse[i])?;
            for block in &self.dec[i] {
                x = hogtb_forward(&x, block)?;
            }
        }

        let residual =
            conv2d(&reflect_pad(&x, 1, 1, 1, 1), &self.head_w, Some(&self.head_b), 1, 0, 1)?;
        let full = padded.add(&residual);
        Ok(crop_hw(&full, 0, 0, h, w))
    }
}

/// Clamp a restored image into [0,1] for emission.
pub fn clamp_unit(t: &Tensor<f32>) -> Tensor<f32> {
    Tensor::new(
        t.shape().to_vec(),
        t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        false,
    )
}
