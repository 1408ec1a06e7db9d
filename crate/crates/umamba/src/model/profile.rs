//! Analytic parameter and multiply-accumulate budgets. These mirror the
//! forward pass layer by layer, so they must be updated in lockstep with any
//! architecture change; the test suite pins them against both the actual
//! parameter tensors and an instrumented forward pass.

use super::block::{DOWN_KERNEL, UP_KERNEL};
use super::mamba::{dt_rank, CONV_KERNEL, EXPAND};
use super::{ModelConfig, Upsampling};

/// Exact learnable-scalar count for a config.
pub fn count_params(cfg: &ModelConfig) -> u64 {
    let f = cfg.feature_channels as u64;
    let w = cfg.bottleneck_channels as u64;
    let n = cfg.states as u64;
    let e = EXPAND as u64 * w;
    let r = dt_rank(cfg.bottleneck_channels) as u64;
    let window = cfg.window as u64;
    let depth = cfg.depth as u64;

    let encoder = f * window + f;

    let block = |in_ch: u64| -> u64 {
        let bottleneck = w * in_ch + w;
        let norm = 2 * w;
        let down = depth * (w * DOWN_KERNEL as u64 + w + 2 * w);
        let up = match cfg.upsampling {
            Upsampling::TransposedConv => (0..depth)
                .map(|i| {
                    if i < 2 {
                        w * w * UP_KERNEL as u64 + w
                    } else {
                        w * UP_KERNEL as u64 + w
                    }
                })
                .sum(),
            Upsampling::NearestNeighbor | Upsampling::Linear => 0,
        };
        let slopes = 2;
        let mamba = 2 * e * w                      // in projection
            + e * CONV_KERNEL as u64 + e           // depthwise conv
            + (r + 2 * n) * e                      // selective projection
            + e * r + e                            // step-size expansion
            + n                                    // state diagonal
            + e                                    // skip gains
            + w * e; // out projection
        bottleneck + norm + down + up + slopes + mamba
    };

    let mut blocks = 0;
    for i in 0..cfg.blocks {
        blocks += block(if i == 0 { f } else { w });
    }

    let mask = cfg.sources as u64 * f * w + cfg.sources as u64 * f;
    let decoder = f * window + 1;
    encoder + blocks + mask + decoder
}

/// Exact multiply-accumulate count of one forward pass on `samples` input
/// samples. Elementwise work (activations, gates, residuals, normalization)
/// is not counted, matching the instrumented graph.
pub fn count_macs(cfg: &ModelConfig, samples: usize) -> u64 {
    let f = cfg.feature_channels as u64;
    let w = cfg.bottleneck_channels as u64;
    let n = cfg.states as u64;
    let e = EXPAND as u64 * w;
    let r = dt_rank(cfg.bottleneck_channels) as u64;
    let window = cfg.window as u64;

    if samples < cfg.window {
        return 0;
    }
    let t0 = ((samples - cfg.window) / cfg.hop + 1) as u64;

    // frame counts level by level: ceil halving, same as stride-2 conv
    let mut lens = vec![t0];
    for _ in 0..cfg.depth {
        let prev = *lens.last().expect("never empty");
        lens.push((prev - 1) / 2 + 1);
    }

    let encoder = f * window * t0;

    let block = |in_ch: u64| -> u64 {
        let bottleneck = in_ch * w * t0;
        let down: u64 = (1..=cfg.depth)
            .map(|l| w * DOWN_KERNEL as u64 * lens[l])
            .sum();
        let up: u64 = (0..cfg.depth)
            .map(|i| {
                let t_in = lens[cfg.depth - i];
                let t_out = lens[cfg.depth - 1 - i];
                match cfg.upsampling {
                    Upsampling::TransposedConv => {
                        if i < 2 {
                            w * w * UP_KERNEL as u64 * t_in
                        } else {
                            w * UP_KERNEL as u64 * t_in
                        }
                    }
                    Upsampling::NearestNeighbor => 0,
                    Upsampling::Linear => 2 * w * t_out,
                }
            })
            .sum();
        let mamba = (2 * e * w                     // in projection
            + e * CONV_KERNEL as u64               // depthwise conv
            + (r + 2 * n) * e                      // selective projection
            + e * r                                // step-size expansion
            + (3 * n + 1) * e                      // scan updates
            + w * e)                               // out projection
            * t0;
        bottleneck + down + up + mamba
    };

    let mut blocks = 0;
    for i in 0..cfg.blocks {
        blocks += block(if i == 0 { f } else { w });
    }

    let mask = w * (cfg.sources as u64 * f) * t0;
    let decoder = cfg.sources as u64 * f * window * t0;
    encoder + blocks + mask + decoder
}
