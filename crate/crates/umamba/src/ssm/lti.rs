//! Time-invariant state-space systems in two parameterizations.
//!
//! Dense mode carries a full N x N state matrix and is the small-scale
//! verification path: discretization goes through a linear solve, and the
//! recurrence, kernel, and convolution forms can be cross-checked against
//! each other. Diagonal mode is channel-separable (channel f sees only
//! column f of B and row f of C) and is the shape the selective scan uses.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Continuous-time parameters, dense state matrix.
/// a: (N, N), b: (N, F), c: (F, N), d: (F, F) full skip for verification.
#[derive(Debug, Clone)]
pub struct DenseSsm<S> {
    pub a: Tensor<S>,
    pub b: Tensor<S>,
    pub c: Tensor<S>,
    pub d: Tensor<S>,
}

/// Continuous-time parameters, diagonal state matrix.
/// a: (N), b: (N, F), c: (F, N), d: (F) per-channel skip.
#[derive(Debug, Clone)]
pub struct DiagSsm<S> {
    pub a: Vec<S>,
    pub b: Tensor<S>,
    pub c: Tensor<S>,
    pub d: Vec<S>,
}

/// Discretized dense system. c and d pass through unchanged.
#[derive(Debug, Clone)]
pub struct DenseDiscrete<S> {
    pub a_bar: Tensor<S>,
    pub b_bar: Tensor<S>,
    pub c: Tensor<S>,
    pub d: Tensor<S>,
}

/// Discretized diagonal system.
#[derive(Debug, Clone)]
pub struct DiagDiscrete<S> {
    pub a_bar: Vec<S>,
    pub b_bar: Tensor<S>,
    pub c: Tensor<S>,
    pub d: Vec<S>,
}

/// Materialized convolution kernel, dense mode: k[t] is the F x F response
/// C A^t B at lag t.
#[derive(Debug, Clone)]
pub struct DenseKernel<S> {
    pub k: Vec<Tensor<S>>,
}

/// Diagonal-mode kernel, one response row per channel: (F, T).
#[derive(Debug, Clone)]
pub struct DiagKernel<S> {
    pub k: Tensor<S>,
}

impl<S: Scalar> DenseSsm<S> {
    /// Bilinear (trapezoidal) discretization:
    /// a_bar = (I - d/2 A)^-1 (I + d/2 A), b_bar = (I - d/2 A)^-1 d B.
    pub fn discretize(&self, delta: S) -> Result<DenseDiscrete<S>> {
        if delta <= S::zero() {
            return Err(Error::invalid("discretize requires delta > 0"));
        }
        let (n, n2) = self.a.dims2()?;
        if n != n2 {
            return Err(Error::shape("state matrix must be square"));
        }
        let half = S::from_f64(0.5);
        let mut minus = Tensor::zeros(&[n, n]);
        let mut plus = Tensor::zeros(&[n, n]);
        for i in 0..n {
            for j in 0..n {
                let v = half * delta * self.a.data[i * n + j];
                let id = if i == j { S::one() } else { S::zero() };
                minus.data[i * n + j] = id - v;
                plus.data[i * n + j] = id + v;
            }
        }
        let a_bar = solve_linear(&minus, &plus)?;
        let db = self.b.map(|v| delta * v);
        let b_bar = solve_linear(&minus, &db)?;
        Ok(DenseDiscrete {
            a_bar,
            b_bar,
            c: self.c.clone(),
            d: self.d.clone(),
        })
    }
}

impl<S: Scalar> DiagSsm<S> {
    /// Elementwise bilinear rule on the diagonal.
    pub fn discretize(&self, delta: S) -> Result<DiagDiscrete<S>> {
        if delta <= S::zero() {
            return Err(Error::invalid("discretize requires delta > 0"));
        }
        let n = self.a.len();
        let (nb, _f) = self.b.dims2()?;
        if nb != n {
            return Err(Error::shape("b rows must equal state count"));
        }
        let half = S::from_f64(0.5);
        let mut a_bar = Vec::with_capacity(n);
        let mut b_bar = self.b.clone();
        let (_, f) = self.b.dims2()?;
        for i in 0..n {
            let s = half * delta * self.a[i];
            let denom = S::one() - s;
            if denom == S::zero() {
                return Err(Error::numeric(
                    "discretization pivot vanished (delta/2 * a == 1)",
                ));
            }
            a_bar.push((S::one() + s) / denom);
            for j in 0..f {
                b_bar.data[i * f + j] = delta * self.b.data[i * f + j] / denom;
            }
        }
        Ok(DiagDiscrete {
            a_bar,
            b_bar,
            c: self.c.clone(),
            d: self.d.clone(),
        })
    }
}

impl<S: Scalar> DenseDiscrete<S> {
    /// h_t = A h_{t-1} + B x_t; y_t = C h_t + D x_t. One shared state vector.
    pub fn recurrence(&self, x: &Tensor<S>, h0: &[S]) -> Result<Tensor<S>> {
        let (f, t_len) = x.dims2()?;
        let (n, _) = self.a_bar.dims2()?;
        if h0.len() != n {
            return Err(Error::shape("initial state length must equal N"));
        }
        if self.b_bar.shape != [n, f] || self.c.shape != [f, n] {
            return Err(Error::shape("state maps disagree with input channels"));
        }
        let mut h = h0.to_vec();
        let mut hn = vec![S::zero(); n];
        let mut y = Tensor::zeros(&[f, t_len]);
        for t in 0..t_len {
            for i in 0..n {
                let mut acc = S::zero();
                for j in 0..n {
                    acc += self.a_bar.data[i * n + j] * h[j];
                }
                for j in 0..f {
                    acc += self.b_bar.data[i * f + j] * x.data[j * t_len + t];
                }
                hn[i] = acc;
            }
            std::mem::swap(&mut h, &mut hn);
            for i in 0..f {
                let mut acc = S::zero();
                for j in 0..n {
                    acc += self.c.data[i * n + j] * h[j];
                }
                for j in 0..f {
                    acc += self.d.data[i * f + j] * x.data[j * t_len + t];
                }
                y.data[i * t_len + t] = acc;
            }
        }
        Ok(y)
    }

    /// k[t] = C A^t B by iterated multiplication; k[0] = C B exactly.
    pub fn kernel(&self, t_len: usize) -> Result<DenseKernel<S>> {
        if t_len == 0 {
            return Err(Error::invalid("kernel length must be at least 1"));
        }
        let (n, _) = self.a_bar.dims2()?;
        let (_, f) = self.b_bar.dims2()?;
        let mut g = self.b_bar.clone();
        let mut k = Vec::with_capacity(t_len);
        for _ in 0..t_len {
            k.push(mat_mul(&self.c, &g)?);
            let mut next = Tensor::zeros(&[n, f]);
            for i in 0..n {
                for j in 0..f {
                    let mut acc = S::zero();
                    for p in 0..n {
                        acc += self.a_bar.data[i * n + p] * g.data[p * f + j];
                    }
                    next.data[i * f + j] = acc;
                }
            }
            g = next;
        }
        Ok(DenseKernel { k })
    }
}

impl<S: Scalar> DiagDiscrete<S> {
    /// Channel-separable recurrence: channel f keeps its own N-state, driven
    /// by column f of B and read out through row f of C.
    pub fn recurrence(&self, x: &Tensor<S>, h0: &[S]) -> Result<Tensor<S>> {
        let (f, t_len) = x.dims2()?;
        let n = self.a_bar.len();
        if h0.len() != n {
            return Err(Error::shape("initial state length must equal N"));
        }
        if self.b_bar.shape != [n, f] || self.c.shape != [f, n] || self.d.len() != f {
            return Err(Error::shape("state maps disagree with input channels"));
        }
        let mut y = Tensor::zeros(&[f, t_len]);
        let mut h = vec![S::zero(); n];
        for ch in 0..f {
            h.copy_from_slice(h0);
            for t in 0..t_len {
                let xt = x.data[ch * t_len + t];
                let mut acc = self.d[ch] * xt;
                for i in 0..n {
                    h[i] = self.a_bar[i] * h[i] + self.b_bar.data[i * f + ch] * xt;
                    acc += self.c.data[ch * n + i] * h[i];
                }
                y.data[ch * t_len + t] = acc;
            }
        }
        Ok(y)
    }

    pub fn kernel(&self, t_len: usize) -> Result<DiagKernel<S>> {
        if t_len == 0 {
            return Err(Error::invalid("kernel length must be at least 1"));
        }
        let n = self.a_bar.len();
        let (_, f) = self.b_bar.dims2()?;
        let mut k = Tensor::zeros(&[f, t_len]);
        let mut w = vec![S::zero(); n];
        for ch in 0..f {
            for i in 0..n {
                w[i] = self.b_bar.data[i * f + ch];
            }
            for t in 0..t_len {
                let mut acc = S::zero();
                for i in 0..n {
                    acc += self.c.data[ch * n + i] * w[i];
                }
                k.data[ch * t_len + t] = acc;
                for i in 0..n {
                    w[i] *= self.a_bar[i];
                }
            }
        }
        Ok(DiagKernel { k })
    }
}

/// Causal convolution with a dense kernel plus the skip path:
/// y_t = sum_{tau <= t} k[tau] x_{t-tau} + D x_t.
pub fn convolve_dense<S: Scalar>(
    kernel: &DenseKernel<S>,
    d: &Tensor<S>,
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (f, t_len) = x.dims2()?;
    if kernel.k.len() != t_len {
        return Err(Error::shape(format!(
            "kernel length {} does not match input frames {t_len}",
            kernel.k.len()
        )));
    }
    let mut y = Tensor::zeros(&[f, t_len]);
    for t in 0..t_len {
        for tau in 0..=t {
            let km = &kernel.k[tau];
            for i in 0..f {
                let mut acc = S::zero();
                for j in 0..f {
                    acc += km.data[i * f + j] * x.data[j * t_len + (t - tau)];
                }
                y.data[i * t_len + t] += acc;
            }
        }
        for i in 0..f {
            let mut acc = S::zero();
            for j in 0..f {
                acc += d.data[i * f + j] * x.data[j * t_len + t];
            }
            y.data[i * t_len + t] += acc;
        }
    }
    Ok(y)
}

/// Diagonal-mode causal convolution: per-channel scalar kernel plus skip.
pub fn convolve_diag<S: Scalar>(
    kernel: &DiagKernel<S>,
    d: &[S],
    x: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (f, t_len) = x.dims2()?;
    let (fk, tk) = kernel.k.dims2()?;
    if fk != f || tk != t_len {
        return Err(Error::shape("kernel grid must match input shape"));
    }
    if d.len() != f {
        return Err(Error::shape("skip vector must have one entry per channel"));
    }
    let mut y = Tensor::zeros(&[f, t_len]);
    for ch in 0..f {
        let krow = &kernel.k.data[ch * t_len..(ch + 1) * t_len];
        let xrow = &x.data[ch * t_len..(ch + 1) * t_len];
        let yrow = &mut y.data[ch * t_len..(ch + 1) * t_len];
        for t in 0..t_len {
            let mut acc = d[ch] * xrow[t];
            for tau in 0..=t {
                acc += krow[tau] * xrow[t - tau];
            }
            yrow[t] = acc;
        }
    }
    Ok(y)
}

/// Small dense matmul used by the verification path.
pub fn mat_mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!("matmul inner dims {k} vs {k2}")));
    }
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for p in 0..k {
            let aip = a.data[i * k + p];
            for j in 0..n {
                out.data[i * n + j] += aip * b.data[p * n + j];
            }
        }
    }
    Ok(out)
}

/// Gaussian elimination with partial pivoting: solves A X = RHS for X.
pub fn solve_linear<S: Scalar>(a: &Tensor<S>, rhs: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, n2) = a.dims2()?;
    let (nr, m) = rhs.dims2()?;
    if n != n2 || nr != n {
        return Err(Error::shape("solve wants square A and matching RHS rows"));
    }
    let mut lhs = a.data.clone();
    let mut out = rhs.data.clone();
    for col in 0..n {
        let mut pivot = col;
        let mut best = lhs[col * n + col].abs();
        for r in col + 1..n {
            let v = lhs[r * n + col].abs();
            if v > best {
                best = v;
                pivot = r;
            }
        }
        if best == S::zero() || !best.is_finite() {
            return Err(Error::numeric(
                "singular system in bilinear discretization (I - delta/2 A not invertible)",
            ));
        }
        if pivot != col {
            for j in 0..n {
                lhs.swap(col * n + j, pivot * n + j);
            }
            for j in 0..m {
                out.swap(col * m + j, pivot * m + j);
            }
        }
        let diag = lhs[col * n + col];
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = lhs[r * n + col] / diag;
            if factor == S::zero() {
                continue;
            }
            for j in col..n {
                let v = lhs[col * n + j];
                lhs[r * n + j] -= factor * v;
            }
            for j in 0..m {
                let v = out[col * m + j];
                out[r * m + j] -= factor * v;
            }
        }
    }
    for r in 0..n {
        let diag = lhs[r * n + r];
        for j in 0..m {
            out[r * m + j] /= diag;
        }
    }
    Ok(Tensor {
        shape: vec![n, m],
        data: out,
    })
}
