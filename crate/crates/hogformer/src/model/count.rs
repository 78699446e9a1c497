//! Closed-form parameter counting, written against the architecture
//! specification alone. The builder must agree with these formulas exactly;
//! any drift is a bug in one of the two.

use super::ModelConfig;

/// Parameters of one transformer block at width `c`.
fn block_params(cfg: &ModelConfig, c: u64) -> u64 {
    let nb = cfg.n_bin as u64;
    // Two layer norms, gamma and beta each.
    let mut n = 4 * c;
    if cfg.use_ldrconv {
        // hog projection (nb × c/2), pointwise c→c, depthwise 3×3.
        n += nb * (c / 2) + c * c + 9 * c;
    }
    if cfg.use_dhogsa {
        // qkv pointwise c→5c, depthwise 3×3 on 5c, output pointwise.
        n += 5 * c * c + 45 * c + c * c;
    } else {
        // Standard attention: qkv c→3c, depthwise on 3c, output pointwise.
        n += 3 * c * c + 27 * c + c * c;
    }
    if cfg.use_diff {
        // expand c→4c, depthwise 3×3 and 5×5 on 2c each, aggregate 4c→c.
        n += 4 * c * c + 18 * c + 50 * c + 4 * c * c;
    } else {
        // Plain FFN: expand c→2c, contract 2c→c.
        n += 2 * c * c + 2 * c * c;
    }
    n
}

/// Total learnable parameter count for a configuration.
pub fn parameter_count(cfg: &ModelConfig) -> u64 {
    let c0 = cfg.base_width as u64;
    let width = |lvl: usize| c0 << lvl;
    let mut n = 0u64;

    // Stem 3×3 conv with bias.
    n += 3 * c0 * 9 + c0;

    // Encoder stacks at every level.
    for lvl in 0..cfg.levels {
        n += cfg.blocks_per_level[lvl] as u64 * block_params(cfg, width(lvl));
    }
    // Downsamplers: pixel-unshuffle then pointwise 4C→2C.
    for lvl in 0..cfg.levels - 1 {
        let c = width(lvl);
        n += 8 * c * c;
    }
    // Decoder side, shallowest levels 0..levels-2.
    for lvl in 0..cfg.levels - 1 {
        let c = width(lvl);
        // Upsampler: pixel-shuffle then pointwise C/2→C.
        n += c * c / 2;
        // Symmetric skip fusion 2C→C unless skips are additive.
        if !cfg.skip_add {
            n += 2 * c * c;
        }
        // Coarse skip: pointwise C→C, depthwise 3×3, fusion 2C→C.
        n += 3 * c * c + 9 * c;
        // Decoder block stack.
        n += cfg.blocks_per_level[lvl] as u64 * block_params(cfg, c);
    }

    // Output head 3×3 conv with bias.
    n += c0 * 3 * 9 + 3;
    n
}
