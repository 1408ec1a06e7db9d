//! Selective state-space mixer: the sequence-modeling half of each block.
//!
//! Layout per block: an input projection doubles the channel count and splits
//! into a signal branch and a gate branch. The signal branch runs a short
//! causal depthwise convolution, SiLU, and a selective scan whose step size,
//! input matrix and output matrix are all linear functions of the sequence
//! itself. The gate branch is SiLU-squashed and multiplies the scan output
//! before the final projection back down.

use rand::Rng;

use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::ssm::hippo_init;
use crate::tensor::Tensor;
use crate::Result;

use super::uniform_tensor;

/// Channel expansion factor of the input projection.
pub const EXPAND: usize = 2;
/// Width of the causal depthwise convolution.
pub const CONV_KERNEL: usize = 4;

/// Rank of the low-rank step-size projection for a given block width.
pub fn dt_rank(channels: usize) -> usize {
    (channels / 32).max(1)
}

pub struct MambaParams<S: Scalar> {
    /// (2E, C): produces the signal and gate branches in one matmul.
    pub in_proj: Tensor<S>,
    /// (E, CONV_KERNEL) depthwise taps.
    pub conv_w: Tensor<S>,
    pub conv_b: Tensor<S>,
    /// (dt_rank + 2N, E): rows are step-size intermediate, then per-step
    /// input rows B_t, then output rows C_t.
    pub x_proj: Tensor<S>,
    /// (E, dt_rank) expansion of the step-size intermediate.
    pub dt_w: Tensor<S>,
    pub dt_b: Tensor<S>,
    /// (N,) log magnitudes of the shared diagonal state matrix. The scan
    /// sees a = -exp(log_a), so the diagonal stays strictly negative no
    /// matter where training moves this tensor.
    pub log_a: Tensor<S>,
    /// (E,) per-channel skip gains.
    pub skip: Tensor<S>,
    /// (C, E) projection back to the block width.
    pub out_proj: Tensor<S>,
}

pub struct MambaVars {
    pub in_proj: Var,
    pub conv_w: Var,
    pub conv_b: Var,
    pub x_proj: Var,
    pub dt_w: Var,
    pub dt_b: Var,
    pub log_a: Var,
    pub skip: Var,
    pub out_proj: Var,
}

impl<S: Scalar> MambaParams<S> {
    pub fn init<R: Rng>(rng: &mut R, channels: usize, states: usize) -> Result<Self> {
        let e = EXPAND * channels;
        let r = dt_rank(channels);
        Ok(MambaParams {
            in_proj: uniform_tensor(rng, &[2 * e, channels], channels),
            conv_w: uniform_tensor(rng, &[e, CONV_KERNEL], CONV_KERNEL),
            conv_b: Tensor::zeros(&[e]),
            x_proj: uniform_tensor(rng, &[r + 2 * states, e], e),
            dt_w: uniform_tensor(rng, &[e, r], r),
            dt_b: dt_bias(rng, e),
            log_a: Tensor::new(
                vec![states],
                hippo_init::<S>(states)?.into_iter().map(|v| (-v).ln()).collect(),
            )?,
            skip: Tensor::filled(&[e], S::one()),
            out_proj: uniform_tensor(rng, &[channels, e], e),
        })
    }

    pub fn expanded(&self) -> usize {
        self.conv_w.shape[0]
    }

    pub fn push_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        out.push((format!("{prefix}.in_proj"), &self.in_proj));
        out.push((format!("{prefix}.conv.w"), &self.conv_w));
        out.push((format!("{prefix}.conv.b"), &self.conv_b));
        out.push((format!("{prefix}.x_proj"), &self.x_proj));
        out.push((format!("{prefix}.dt.w"), &self.dt_w));
        out.push((format!("{prefix}.dt.b"), &self.dt_b));
        out.push((format!("{prefix}.log_a"), &self.log_a));
        out.push((format!("{prefix}.skip"), &self.skip));
        out.push((format!("{prefix}.out_proj"), &self.out_proj));
    }

    pub fn push_params_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, &'a mut Tensor<S>)>,
    ) {
        out.push((format!("{prefix}.in_proj"), &mut self.in_proj));
        out.push((format!("{prefix}.conv.w"), &mut self.conv_w));
        out.push((format!("{prefix}.conv.b"), &mut self.conv_b));
        out.push((format!("{prefix}.x_proj"), &mut self.x_proj));
        out.push((format!("{prefix}.dt.w"), &mut self.dt_w));
        out.push((format!("{prefix}.dt.b"), &mut self.dt_b));
        out.push((format!("{prefix}.log_a"), &mut self.log_a));
        out.push((format!("{prefix}.skip"), &mut self.skip));
        out.push((format!("{prefix}.out_proj"), &mut self.out_proj));
    }

    pub fn bind(&self, g: &mut Graph<S>, trainable: bool) -> MambaVars {
        let mut add = |t: &Tensor<S>| {
            if trainable {
                g.param(t)
            } else {
                g.constant(t.clone())
            }
        };
        MambaVars {
            in_proj: add(&self.in_proj),
            conv_w: add(&self.conv_w),
            conv_b: add(&self.conv_b),
            x_proj: add(&self.x_proj),
            dt_w: add(&self.dt_w),
            dt_b: add(&self.dt_b),
            log_a: add(&self.log_a),
            skip: add(&self.skip),
            out_proj: add(&self.out_proj),
        }
    }

    pub fn cast<T: Scalar>(&self) -> MambaParams<T> {
        MambaParams {
            in_proj: self.in_proj.cast(),
            conv_w: self.conv_w.cast(),
            conv_b: self.conv_b.cast(),
            x_proj: self.x_proj.cast(),
            dt_w: self.dt_w.cast(),
            dt_b: self.dt_b.cast(),
            log_a: self.log_a.cast(),
            skip: self.skip.cast(),
            out_proj: self.out_proj.cast(),
        }
    }
}

impl MambaVars {
    pub fn collect(&self, out: &mut Vec<Var>) {
        out.extend([
            self.in_proj,
            self.conv_w,
            self.conv_b,
            self.x_proj,
            self.dt_w,
            self.dt_b,
            self.log_a,
            self.skip,
            self.out_proj,
        ]);
    }
}

/// Step-size bias chosen so that softplus(bias) lands log-uniformly in
/// [1e-3, 1e-1]: slow and fast state dynamics both start represented.
fn dt_bias<S: Scalar, R: Rng>(rng: &mut R, e: usize) -> Tensor<S> {
    let lo = (1e-3f64).ln();
    let hi = (1e-1f64).ln();
    let data = (0..e)
        .map(|_| {
            let target = rng.gen_range(lo..hi).exp();
            // inverse of softplus: ln(exp(y) - 1)
            S::from_f64(target.exp_m1().ln())
        })
        .collect();
    Tensor {
        shape: vec![e],
        data,
    }
}

/// One mixer pass over an (C, T) map. The residual is the caller's job.
pub fn forward<S: Scalar>(
    g: &mut Graph<S>,
    v: &MambaVars,
    states: usize,
    rank: usize,
    x: Var,
) -> Result<Var> {
    let e = g.value(v.conv_w).shape[0];
    let xz = g.matmul(v.in_proj, x)?;
    let signal = g.row_slice(xz, 0, e)?;
    let gate_in = g.row_slice(xz, e, e)?;

    let conv = g.dw_conv1d(signal, v.conv_w, Some(v.conv_b), 1, CONV_KERNEL - 1, 0)?;
    let act = g.silu(conv);

    let proj = g.matmul(v.x_proj, act)?;
    let dt_low = g.row_slice(proj, 0, rank)?;
    let b_rows = g.row_slice(proj, rank, states)?;
    let c_rows = g.row_slice(proj, rank + states, states)?;

    let dt = g.matmul(v.dt_w, dt_low)?;
    let dt = g.add_bias(dt, v.dt_b)?;
    let delta = g.softplus(dt);

    let magnitude = g.exp(v.log_a);
    let a = g.scale(magnitude, -S::one());
    let scanned = g.selective_scan(a, b_rows, c_rows, delta, act, v.skip)?;

    let gate = g.silu(gate_in);
    let gated = g.mul(scanned, gate)?;
    g.matmul(v.out_proj, gated)
}
