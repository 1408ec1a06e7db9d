//! State-space sequence machinery: time-invariant systems (dense and
//! diagonal), bilinear discretization, kernel/convolution forms, and the
//! input-dependent selective scan.

pub mod lti;
pub mod scan;

pub use lti::{
    convolve_dense, convolve_diag, DenseDiscrete, DenseKernel, DenseSsm, DiagDiscrete, DiagKernel,
    DiagSsm,
};
pub use scan::{selective_scan_backward, selective_scan_forward, ScanDims};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Real diagonal state-matrix initialization favoring long-range memory:
/// a_n = -(n + 1). Strictly negative, so any positive step size gives a
/// stable discrete system.
pub fn hippo_init<S: Scalar>(n: usize) -> Result<Vec<S>> {
    if n == 0 {
        return Err(Error::invalid("state size must be at least 1"));
    }
    Ok((0..n).map(|i| -S::from_usize(i + 1)).collect())
}
