//! One U-shaped block: bottleneck, a downsampling ladder, the mirrored
//! upsampling ladder with residual skips, and the selective-scan mixer.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::{Error, Result};

use super::mamba::{self, MambaParams, MambaVars};
use super::{uniform_tensor, ModelConfig, Upsampling};

/// Kernel width of the stride-2 downsampling convolutions.
pub const DOWN_KERNEL: usize = 5;
/// Kernel width of the learnable stride-2 upsamplers.
pub const UP_KERNEL: usize = 4;
/// Normalization epsilon used by every LayerNorm in the network.
pub const NORM_EPS: f64 = 1e-5;

/// Stride-2 depthwise conv followed by per-frame channel normalization.
pub struct DownLevel<S: Scalar> {
    pub w: Tensor<S>,
    pub b: Tensor<S>,
    pub gain: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Learnable upsampler for one ladder step, or a parameter-free marker when
/// the configured mode interpolates instead.
pub enum UpLevel<S: Scalar> {
    /// Full-channel transposed conv; used at the coarsest levels where the
    /// sequence is short enough for channel mixing to be affordable.
    FullConv { w: Tensor<S>, b: Tensor<S> },
    /// Depthwise transposed conv for the longer, shallower levels.
    DepthwiseConv { w: Tensor<S>, b: Tensor<S> },
    Interpolate,
}

pub struct BlockParams<S: Scalar> {
    pub bottleneck_w: Tensor<S>,
    pub bottleneck_b: Tensor<S>,
    pub norm_gain: Tensor<S>,
    pub norm_bias: Tensor<S>,
    pub slope_in: Tensor<S>,
    pub down: Vec<DownLevel<S>>,
    /// Upsamplers in application order: index 0 lifts the deepest map.
    pub up: Vec<UpLevel<S>>,
    pub slope_out: Tensor<S>,
    pub mamba: MambaParams<S>,
}

pub struct DownVars {
    pub w: Var,
    pub b: Var,
    pub gain: Var,
    pub bias: Var,
}

pub enum UpVars {
    FullConv { w: Var, b: Var },
    DepthwiseConv { w: Var, b: Var },
    Interpolate,
}

pub struct BlockVars {
    pub bottleneck_w: Var,
    pub bottleneck_b: Var,
    pub norm_gain: Var,
    pub norm_bias: Var,
    pub slope_in: Var,
    pub down: Vec<DownVars>,
    pub up: Vec<UpVars>,
    pub slope_out: Var,
    pub mamba: MambaVars,
}

impl<S: Scalar> BlockParams<S> {
    pub fn init<R: Rng>(
        rng: &mut R,
        in_channels: usize,
        width: usize,
        states: usize,
        depth: usize,
        mode: Upsampling,
    ) -> Result<Self> {
        let down = (0..depth)
            .map(|_| DownLevel {
                w: uniform_tensor(rng, &[width, DOWN_KERNEL], DOWN_KERNEL),
                b: Tensor::zeros(&[width]),
                gain: Tensor::filled(&[width], S::one()),
                bias: Tensor::zeros(&[width]),
            })
            .collect();
        // Learnable mode mixes channels only where maps are shortest (the two
        // coarsest steps); everywhere else a depthwise kernel keeps the
        // parameter and MAC budget flat.
        let up = (0..depth)
            .map(|i| match mode {
                Upsampling::TransposedConv => {
                    if i < 2 {
                        UpLevel::FullConv {
                            w: uniform_tensor(rng, &[width, width, UP_KERNEL], width * UP_KERNEL),
                            b: Tensor::zeros(&[width]),
                        }
                    } else {
                        UpLevel::DepthwiseConv {
                            w: uniform_tensor(rng, &[width, UP_KERNEL], UP_KERNEL),
                            b: Tensor::zeros(&[width]),
                        }
                    }
                }
                Upsampling::NearestNeighbor | Upsampling::Linear => UpLevel::Interpolate,
            })
            .collect();
        Ok(BlockParams {
            bottleneck_w: uniform_tensor(rng, &[width, in_channels, 1], in_channels),
            bottleneck_b: Tensor::zeros(&[width]),
            norm_gain: Tensor::filled(&[width], S::one()),
            norm_bias: Tensor::zeros(&[width]),
            slope_in: Tensor::scalar(S::from_f64(0.25)),
            down,
            up,
            slope_out: Tensor::scalar(S::from_f64(0.25)),
            mamba: MambaParams::init(rng, width, states)?,
        })
    }

    pub fn push_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        out.push((format!("{prefix}.bottleneck.w"), &self.bottleneck_w));
        out.push((format!("{prefix}.bottleneck.b"), &self.bottleneck_b));
        out.push((format!("{prefix}.norm.gain"), &self.norm_gain));
        out.push((format!("{prefix}.norm.bias"), &self.norm_bias));
        out.push((format!("{prefix}.slope_in"), &self.slope_in));
        for (l, d) in self.down.iter().enumerate() {
            out.push((format!("{prefix}.down{l}.w"), &d.w));
            out.push((format!("{prefix}.down{l}.b"), &d.b));
            out.push((format!("{prefix}.down{l}.norm.gain"), &d.gain));
            out.push((format!("{prefix}.down{l}.norm.bias"), &d.bias));
        }
        for (l, u) in self.up.iter().enumerate() {
            match u {
                UpLevel::FullConv { w, b } | UpLevel::DepthwiseConv { w, b } => {
                    out.push((format!("{prefix}.up{l}.w"), w));
                    out.push((format!("{prefix}.up{l}.b"), b));
                }
                UpLevel::Interpolate => {}
            }
        }
        out.push((format!("{prefix}.slope_out"), &self.slope_out));
        self.mamba.push_params(&format!("{prefix}.mamba"), out);
    }

    pub fn push_params_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Tensor<S>)>,
    ) {
        out.push((format!("{prefix}.bottleneck.w"), &mut self.bottleneck_w));
        out.push((format!("{prefix}.bottleneck.b"), &mut self.bottleneck_b));
        out.push((format!("{prefix}.norm.gain"), &mut self.norm_gain));
        out.push((format!("{prefix}.norm.bias"), &mut self.norm_bias));
        out.push((format!("{prefix}.slope_in"), &mut self.slope_in));
        for (l, d) in self.down.iter_mut().enumerate() {
            out.push((format!("{prefix}.down{l}.w"), &mut d.w));
            out.push((format!("{prefix}.down{l}.b"), &mut d.b));
            out.push((format!("{prefix}.down{l}.norm.gain"), &mut d.gain));
            out.push((format!("{prefix}.down{l}.norm.bias"), &mut d.bias));
        }
        for (l, u) in self.up.iter_mut().enumerate() {
            match u {
                UpLevel::FullConv { w, b } | UpLevel::DepthwiseConv { w, b } => {
                    out.push((format!("{prefix}.up{l}.w"), w));
                    out.push((format!("{prefix}.up{l}.b"), b));
                }
                UpLevel::Interpolate => {}
            }
        }
        out.push((format!("{prefix}.slope_out"), &mut self.slope_out));
        self.mamba.push_params_mut(&format!("{prefix}.mamba"), out);
    }

    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> BlockVars {
        let add = |g: &mut Graph<S>, t: &Tensor<S>| {
            if trainable {
                g.param(t)
            } else {
                g.constant(t.clone())
            }
        };
        let bottleneck_w = add(g, &self.bottleneck_w);
        let bottleneck_b = add(g, &self.bottleneck_b);
        let norm_gain = add(g, &self.norm_gain);
        let norm_bias = add(g, &self.norm_bias);
        let slope_in = add(g, &self.slope_in);
        let down = self
            .down
            .iter()
            .map(|d| DownVars {
                w: add(g, &d.w),
                b: add(g, &d.b),
                gain: add(g, &d.gain),
                bias: add(g, &d.bias),
            })
            .collect();
        let up = self
            .up
            .iter()
            .map(|u| match u {
                UpLevel::FullConv { w, b } => UpVars::FullConv {
                    w: add(g, w),
                    b: add(g, b),
                },
                UpLevel::DepthwiseConv { w, b } => UpVars::DepthwiseConv {
                    w: add(g, w),
                    b: add(g, b),
                },
                UpLevel::Interpolate => UpVars::Interpolate,
            })
            .collect();
        let slope_out = add(g, &self.slope_out);
        let mamba = self.mamba.bind(g, trainable);
        BlockVars {
            bottleneck_w,
            bottleneck_b,
            norm_gain,
            norm_bias,
            slope_in,
            down,
            up,
            slope_out,
            mamba,
        }
    }

    pub fn cast<T: Scalar>(&self) -> BlockParams<T> {
        BlockParams {
            bottleneck_w: self.bottleneck_w.cast(),
            bottleneck_b: self.bottleneck_b.cast(),
            norm_gain: self.norm_gain.cast(),
            norm_bias: self.norm_bias.cast(),
            slope_in: self.slope_in.cast(),
            down: self
                .down
                .iter()
                .map(|d| DownLevel {
                    w: d.w.cast(),
                    b: d.b.cast(),
                    gain: d.gain.cast(),
                    bias: d.bias.cast(),
                })
                .collect(),
            up: self
                .up
                .iter()
                .map(|u| match u {
                    UpLevel::FullConv { w, b } => UpLevel::FullConv {
                        w: w.cast(),
                        b: b.cast(),
                    },
                    UpLevel::DepthwiseConv { w, b } => UpLevel::DepthwiseConv {
                        w: w.cast(),
                        b: b.cast(),
                    },
                    UpLevel::Interpolate => UpLevel::Interpolate,
                })
                .collect(),
            slope_out: self.slope_out.cast(),
            mamba: self.mamba.cast(),
        }
    }
}

impl BlockVars {
    pub fn collect(&self, out: &mut Vec<Var>) {
        out.extend([
            self.bottleneck_w,
            self.bottleneck_b,
            self.norm_gain,
            self.norm_bias,
            self.slope_in,
        ]);
        for d in &self.down {
            out.extend([d.w, d.b, d.gain, d.bias]);
        }
        for u in &self.up {
            match u {
                UpVars::FullConv { w, b } | UpVars::DepthwiseConv { w, b } => {
                    out.extend([*w, *b]);
                }
                UpVars::Interpolate => {}
            }
        }
        out.push(self.slope_out);
        self.mamba.collect(out);
    }
}

/// Lift a (C, len) map to `target` frames, which must be 2*len or 2*len+-1.
pub fn upsample<S: Scalar>(
    g: &mut Graph<S>,
    level: &UpVars,
    mode: Upsampling,
    x: Var,
    target: usize,
) -> Result<Var> {
    let len = g.value(x).shape[1];
    if target + 1 < 2 * len || target > 2 * len + 1 {
        return Err(Error::shape(format!(
            "upsampling from {len} frames can only reach 2x give or take one frame, not {target}"
        )));
    }
    match (level, mode) {
        (UpVars::FullConv { w, b }, _) => {
            let y = g.conv_t1d(x, *w, Some(*b), 2)?;
            g.col_slice(y, 0, target)
        }
        (UpVars::DepthwiseConv { w, b }, _) => {
            let y = g.dw_conv_t1d(x, *w, Some(*b), 2)?;
            g.col_slice(y, 0, target)
        }
        (UpVars::Interpolate, Upsampling::NearestNeighbor) => g.upsample_nearest(x, target),
        (UpVars::Interpolate, Upsampling::Linear) => g.upsample_linear(x, target),
        (UpVars::Interpolate, Upsampling::TransposedConv) => Err(Error::invalid(
            "transposed-conv upsampling requires learnable level parameters",
        )),
    }
}

/// The U-shaped half of the block: bottleneck, ladder down, ladder up with
/// residual skips, output activation. Returns the mixer input.
pub fn u_branch<S: Scalar>(
    g: &mut Graph<S>,
    v: &BlockVars,
    config: &ModelConfig,
    x: Var,
) -> Result<Var> {
    let frames = g.value(x).shape[1];
    if frames < (1 << config.depth) {
        return Err(Error::shape(format!(
            "{frames} frames cannot be halved {} times; need at least {}",
            config.depth,
            1usize << config.depth
        )));
    }

    let h = g.conv1d(x, v.bottleneck_w, Some(v.bottleneck_b), 1, 0)?;
    let h = g.layer_norm(h, v.norm_gain, v.norm_bias, S::from_f64(NORM_EPS))?;
    let top = g.prelu(h, v.slope_in)?;

    // levels[l] has ceil(T / 2^l) frames
    let mut levels = vec![top];
    for d in &v.down {
        let prev = *levels.last().expect("levels never empty");
        let c = g.dw_conv1d(prev, d.w, Some(d.b), 2, 2, 2)?;
        let n = g.layer_norm(c, d.gain, d.bias, S::from_f64(NORM_EPS))?;
        levels.push(n);
    }

    let mut u = levels[config.depth];
    for (i, lv) in v.up.iter().enumerate() {
        let partner = levels[config.depth - 1 - i];
        let target = g.value(partner).shape[1];
        let lifted = upsample(g, lv, config.upsampling, u, target)?;
        u = g.add(lifted, partner)?;
    }

    g.prelu(u, v.slope_out)
}

/// Full block pass over an (in_channels, T) map; returns (width, T).
pub fn forward<S: Scalar>(
    g: &mut Graph<S>,
    v: &BlockVars,
    config: &ModelConfig,
    x: Var,
) -> Result<Var> {
    let mixed_in = u_branch(g, v, config, x)?;
    let y = mamba::forward(
        g,
        &v.mamba,
        config.states,
        mamba::dt_rank(config.bottleneck_channels),
        mixed_in,
    )?;
    g.add(y, mixed_in)
}
