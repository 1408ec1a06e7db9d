//! Reverse-mode automatic differentiation on a flat tape.
//!
//! A `Graph` records every operation as a node holding its output value and
//! the indices of its inputs. `backward` sweeps the tape once in reverse
//! recording order, accumulating gradients additively, so any DAG fan-out is
//! handled without revisiting nodes. Graphs are cheap and rebuilt per forward
//! pass; a graph and its `Var` handles are confined to one thread.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::ssm::scan::{self, ScanDims};
use crate::tensor::Tensor;

/// Handle to a node in one specific `Graph`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, S),
    AddConst(usize, S),
    /// x + s with s a single element broadcast over x.
    BroadcastAdd(usize, usize),
    /// s * x with s a single element broadcast over x.
    ScalarMul(usize, usize),
    /// x (rows, cols) + bias (rows) broadcast across columns.
    AddBias(usize, usize),
    Sum(usize),
    Reshape(usize),
    Exp(usize),
    Ln(usize),
    Sigmoid(usize),
    Silu(usize),
    Softplus(usize),
    Relu(usize),
    /// Negative-side slope is a learnable single element.
    Prelu(usize, usize),
    Clamp(usize, S, S),
    Matmul(usize, usize),
    Conv1d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        stride: usize,
        pad: usize,
    },
    DwConv1d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
    },
    ConvT1d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        stride: usize,
    },
    DwConvT1d {
        x: usize,
        w: usize,
        bias: Option<usize>,
        stride: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        eps: S,
    },
    RowSlice {
        x: usize,
        start: usize,
    },
    ColSlice {
        x: usize,
        start: usize,
        len: usize,
    },
    PadCols {
        x: usize,
        left: usize,
    },
    UpNearest(usize),
    UpLinear(usize),
    SelectiveScan {
        a: usize,
        b: usize,
        c: usize,
        delta: usize,
        x: usize,
        skip: usize,
    },
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
    /// Extra forward state kept for the backward pass (scan states).
    saved: Option<Vec<S>>,
}

pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    profiling: bool,
    macs: u64,
    /// Chunk length for the associative scan; exposed for partitioning tests.
    pub scan_chunk: usize,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            profiling: false,
            macs: 0,
            scan_chunk: 64,
        }
    }

    pub fn enable_profiling(&mut self) {
        self.profiling = true;
    }

    /// Multiply-accumulate count of everything recorded while profiling.
    /// Counts kernel math only: conv/matmul inner products and the scan
    /// recurrence, not elementwise staging.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target w.r.t. `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> Var {
        #[cfg(debug_assertions)]
        debug_assert!(value.all_finite(), "non-finite value out of {:?}", op_name(&op));
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            saved: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    // ── Leaves ──────────────────────────────────────────────────────────

    pub fn leaf(&mut self, t: Tensor<S>, trainable: bool) -> Var {
        self.push(t, Op::Leaf, trainable)
    }

    pub fn constant(&mut self, t: Tensor<S>) -> Var {
        self.leaf(t, false)
    }

    pub fn param(&mut self, t: &Tensor<S>) -> Var {
        self.leaf(t.clone(), true)
    }

    // ── Elementwise ─────────────────────────────────────────────────────

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(S, S) -> S, op: Op<S>) -> Result<Var> {
        if self.nodes[a.0].value.shape != self.nodes[b.0].value.shape {
            return Err(Error::shape(format!(
                "elementwise shape mismatch: {:?} vs {:?}",
                self.nodes[a.0].value.shape, self.nodes[b.0].value.shape
            )));
        }
        let shape = self.nodes[a.0].value.shape.clone();
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let ng = self.needs(&[a.0, b.0]);
        Ok(self.push(Tensor { shape, data }, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x / y, Op::Div(a.0, b.0))
    }

    fn unary(&mut self, x: Var, f: impl Fn(S) -> S, op: Op<S>) -> Var {
        let t = self.nodes[x.0].value.map(f);
        let ng = self.nodes[x.0].needs_grad;
        self.push(t, op, ng)
    }

    pub fn scale(&mut self, x: Var, c: S) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x.0, c))
    }

    pub fn add_const(&mut self, x: Var, c: S) -> Var {
        self.unary(x, |v| v + c, Op::AddConst(x.0, c))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x.0))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Ln(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x.0))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * sigmoid(v), Op::Silu(x.0))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x.0))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > S::zero() { v } else { S::zero() }, Op::Relu(x.0))
    }

    pub fn clamp(&mut self, x: Var, lo: S, hi: S) -> Var {
        self.unary(
            x,
            |v| if v < lo { lo } else if v > hi { hi } else { v },
            Op::Clamp(x.0, lo, hi),
        )
    }

    /// PReLU with a single shared negative-side slope.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        if self.nodes[slope.0].value.numel() != 1 {
            return Err(Error::shape("prelu slope must be a single element"));
        }
        let s = self.nodes[slope.0].value.data[0];
        let t = self.nodes[x.0]
            .value
            .map(|v| if v >= S::zero() { v } else { s * v });
        let ng = self.needs(&[x.0, slope.0]);
        Ok(self.push(t, Op::Prelu(x.0, slope.0), ng))
    }

    pub fn broadcast_add(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.nodes[s.0].value.numel() != 1 {
            return Err(Error::shape("broadcast_add wants a single-element addend"));
        }
        let sv = self.nodes[s.0].value.data[0];
        let t = self.nodes[x.0].value.map(|v| v + sv);
        let ng = self.needs(&[x.0, s.0]);
        Ok(self.push(t, Op::BroadcastAdd(x.0, s.0), ng))
    }

    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.nodes[s.0].value.numel() != 1 {
            return Err(Error::shape("scalar_mul wants a single-element factor"));
        }
        let sv = self.nodes[s.0].value.data[0];
        let t = self.nodes[x.0].value.map(|v| sv * v);
        let ng = self.needs(&[x.0, s.0]);
        Ok(self.push(t, Op::ScalarMul(s.0, x.0), ng))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (rows, cols) = self.nodes[x.0].value.dims2()?;
        if self.nodes[bias.0].value.numel() != rows {
            return Err(Error::shape(format!(
                "bias length {} does not match {} rows",
                self.nodes[bias.0].value.numel(),
                rows
            )));
        }
        let mut t = self.nodes[x.0].value.clone();
        for r in 0..rows {
            let b = self.nodes[bias.0].value.data[r];
            for v in &mut t.data[r * cols..(r + 1) * cols] {
                *v += b;
            }
        }
        let ng = self.needs(&[x.0, bias.0]);
        Ok(self.push(t, Op::AddBias(x.0, bias.0), ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let mut acc = S::zero();
        for &v in &self.nodes[x.0].value.data {
            acc += v;
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(Tensor::scalar(acc), Op::Sum(x.0), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.nodes[x.0].value.numel() {
            return Err(Error::shape(format!(
                "reshape {:?} -> {:?} changes element count",
                self.nodes[x.0].value.shape, shape
            )));
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data: self.nodes[x.0].value.data.clone(),
        };
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(t, Op::Reshape(x.0), ng))
    }

    // ── Linear algebra ──────────────────────────────────────────────────

    /// (M, K) x (K, T) -> (M, T).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.nodes[a.0].value.dims2()?;
        let (k2, t) = self.nodes[b.0].value.dims2()?;
        if k != k2 {
            return Err(Error::shape(format!("matmul inner dims {k} vs {k2}")));
        }
        let mut out = vec![S::zero(); m * t];
        {
            let av = &self.nodes[a.0].value.data;
            let bv = &self.nodes[b.0].value.data;
            for i in 0..m {
                for p in 0..k {
                    let aip = av[i * k + p];
                    if aip == S::zero() {
                        continue;
                    }
                    let brow = &bv[p * t..(p + 1) * t];
                    let orow = &mut out[i * t..(i + 1) * t];
                    for (o, &bb) in orow.iter_mut().zip(brow) {
                        *o += aip * bb;
                    }
                }
            }
        }
        if self.profiling {
            self.macs += (m * k * t) as u64;
        }
        let ng = self.needs(&[a.0, b.0]);
        Ok(self.push(
            Tensor {
                shape: vec![m, t],
                data: out,
            },
            Op::Matmul(a.0, b.0),
            ng,
        ))
    }

    // ── Convolutions ────────────────────────────────────────────────────

    /// x: (C_in, T), w: (C_out, C_in, k). Symmetric zero padding.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (c_in, t_in) = self.nodes[x.0].value.dims2()?;
        let (c_out, c_in2, k) = self.nodes[w.0].value.dims3()?;
        if c_in != c_in2 {
            return Err(Error::shape(format!(
                "conv1d channels: input {c_in}, kernel wants {c_in2}"
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv1d stride must be positive"));
        }
        if t_in + 2 * pad < k {
            return Err(Error::shape(format!(
                "conv1d input length {t_in} (+2*{pad}) shorter than kernel {k}"
            )));
        }
        if let Some(bv) = bias {
            if self.nodes[bv.0].value.numel() != c_out {
                return Err(Error::shape("conv1d bias length must equal C_out"));
            }
        }
        let t_out = (t_in + 2 * pad - k) / stride + 1;
        let mut out = vec![S::zero(); c_out * t_out];
        {
            let xv = &self.nodes[x.0].value.data;
            let wv = &self.nodes[w.0].value.data;
            for o in 0..c_out {
                for c in 0..c_in {
                    let wrow = &wv[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    let xrow = &xv[c * t_in..(c + 1) * t_in];
                    for t in 0..t_out {
                        let base = t * stride;
                        let mut acc = S::zero();
                        for (i, &wi) in wrow.iter().enumerate() {
                            let j = base + i;
                            if j >= pad && j - pad < t_in {
                                acc += xrow[j - pad] * wi;
                            }
                        }
                        out[o * t_out + t] += acc;
                    }
                }
                if let Some(bv) = bias {
                    let b = self.nodes[bv.0].value.data[o];
                    for v in &mut out[o * t_out..(o + 1) * t_out] {
                        *v += b;
                    }
                }
            }
        }
        if self.profiling {
            self.macs += (c_in * c_out * k * t_out) as u64;
        }
        let mut ids = vec![x.0, w.0];
        if let Some(bv) = bias {
            ids.push(bv.0);
        }
        let ng = self.needs(&ids);
        Ok(self.push(
            Tensor {
                shape: vec![c_out, t_out],
                data: out,
            },
            Op::Conv1d {
                x: x.0,
                w: w.0,
                bias: bias.map(|b| b.0),
                stride,
                pad,
            },
            ng,
        ))
    }

    /// Depthwise conv. x: (C, T), w: (C, k). Asymmetric padding supports the
    /// causal case (pad_left = k-1, pad_right = 0).
    pub fn dw_conv1d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
    ) -> Result<Var> {
        let (ch, t_in) = self.nodes[x.0].value.dims2()?;
        let (ch2, k) = self.nodes[w.0].value.dims2()?;
        if ch != ch2 {
            return Err(Error::shape(format!("dw_conv1d channels {ch} vs kernel {ch2}")));
        }
        if t_in + pad_left + pad_right < k {
            return Err(Error::shape("dw_conv1d input shorter than kernel"));
        }
        let t_out = (t_in + pad_left + pad_right - k) / stride + 1;
        let mut out = vec![S::zero(); ch * t_out];
        {
            let xv = &self.nodes[x.0].value.data;
            let wv = &self.nodes[w.0].value.data;
            for c in 0..ch {
                let xrow = &xv[c * t_in..(c + 1) * t_in];
                let wrow = &wv[c * k..(c + 1) * k];
                let b = bias.map(|bv| self.nodes[bv.0].value.data[c]);
                for t in 0..t_out {
                    let base = t * stride;
                    let mut acc = S::zero();
                    for (i, &wi) in wrow.iter().enumerate() {
                        let j = base + i;
                        if j >= pad_left && j - pad_left < t_in {
                            acc += xrow[j - pad_left] * wi;
                        }
                    }
                    if let Some(b) = b {
                        acc += b;
                    }
                    out[c * t_out + t] = acc;
                }
            }
        }
        if self.profiling {
            self.macs += (ch * k * t_out) as u64;
        }
        let mut ids = vec![x.0, w.0];
        if let Some(bv) = bias {
            ids.push(bv.0);
        }
        let ng = self.needs(&ids);
        Ok(self.push(
            Tensor {
                shape: vec![ch, t_out],
                data: out,
            },
            Op::DwConv1d {
                x: x.0,
                w: w.0,
                bias: bias.map(|b| b.0),
                stride,
                pad_left,
                pad_right,
            },
            ng,
        ))
    }

    /// Transposed conv (scatter form). x: (C_in, T), w: (C_in, C_out, k),
    /// output length (T-1)*stride + k.
    pub fn conv_t1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let (c_in, t_in) = self.nodes[x.0].value.dims2()?;
        let (c_in2, c_out, k) = self.nodes[w.0].value.dims3()?;
        if c_in != c_in2 {
            return Err(Error::shape(format!(
                "conv_t1d channels: input {c_in}, kernel wants {c_in2}"
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv_t1d stride must be positive"));
        }
        let t_out = (t_in - 1) * stride + k;
        let mut out = vec![S::zero(); c_out * t_out];
        {
            let xv = &self.nodes[x.0].value.data;
            let wv = &self.nodes[w.0].value.data;
            for c in 0..c_in {
                let xrow = &xv[c * t_in..(c + 1) * t_in];
                for o in 0..c_out {
                    let wrow = &wv[(c * c_out + o) * k..(c * c_out + o + 1) * k];
                    let orow = &mut out[o * t_out..(o + 1) * t_out];
                    for (t, &xt) in xrow.iter().enumerate() {
                        if xt == S::zero() {
                            continue;
                        }
                        let base = t * stride;
                        for (i, &wi) in wrow.iter().enumerate() {
                            orow[base + i] += xt * wi;
                        }
                    }
                }
            }
        }
        if let Some(bv) = bias {
            if self.nodes[bv.0].value.numel() != c_out {
                return Err(Error::shape("conv_t1d bias length must equal C_out"));
            }
            for o in 0..c_out {
                let b = self.nodes[bv.0].value.data[o];
                for v in &mut out[o * t_out..(o + 1) * t_out] {
                    *v += b;
                }
            }
        }
        if self.profiling {
            self.macs += (c_in * c_out * k * t_in) as u64;
        }
        let mut ids = vec![x.0, w.0];
        if let Some(bv) = bias {
            ids.push(bv.0);
        }
        let ng = self.needs(&ids);
        Ok(self.push(
            Tensor {
                shape: vec![c_out, t_out],
                data: out,
            },
            Op::ConvT1d {
                x: x.0,
                w: w.0,
                bias: bias.map(|b| b.0),
                stride,
            },
            ng,
        ))
    }

    /// Depthwise transposed conv. x: (C, T), w: (C, k).
    pub fn dw_conv_t1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize) -> Result<Var> {
        let (ch, t_in) = self.nodes[x.0].value.dims2()?;
        let (ch2, k) = self.nodes[w.0].value.dims2()?;
        if ch != ch2 {
            return Err(Error::shape(format!("dw_conv_t1d channels {ch} vs kernel {ch2}")));
        }
        let t_out = (t_in - 1) * stride + k;
        let mut out = vec![S::zero(); ch * t_out];
        {
            let xv = &self.nodes[x.0].value.data;
            let wv = &self.nodes[w.0].value.data;
            for c in 0..ch {
                let xrow = &xv[c * t_in..(c + 1) * t_in];
                let wrow = &wv[c * k..(c + 1) * k];
                let orow = &mut out[c * t_out..(c + 1) * t_out];
                for (t, &xt) in xrow.iter().enumerate() {
                    let base = t * stride;
                    for (i, &wi) in wrow.iter().enumerate() {
                        orow[base + i] += xt * wi;
                    }
                }
                if let Some(bv) = bias {
                    let b = self.nodes[bv.0].value.data[c];
                    for v in orow.iter_mut() {
                        *v += b;
                    }
                }
            }
        }
        if self.profiling {
            self.macs += (ch * k * t_in) as u64;
        }
        let mut ids = vec![x.0, w.0];
        if let Some(bv) = bias {
            ids.push(bv.0);
        }
        let ng = self.needs(&ids);
        Ok(self.push(
            Tensor {
                shape: vec![ch, t_out],
                data: out,
            },
            Op::DwConvT1d {
                x: x.0,
                w: w.0,
                bias: bias.map(|b| b.0),
                stride,
            },
            ng,
        ))
    }

    // ── Normalization ───────────────────────────────────────────────────

    /// Layer norm across the channel axis independently per time step.
    /// x: (C, T), gain/bias: (C). Population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let (ch, t_len) = self.nodes[x.0].value.dims2()?;
        if self.nodes[gain.0].value.numel() != ch || self.nodes[bias.0].value.numel() != ch {
            return Err(Error::shape("layer_norm gain/bias must have C elements"));
        }
        let mut out = vec![S::zero(); ch * t_len];
        {
            let xv = &self.nodes[x.0].value.data;
            let gv = &self.nodes[gain.0].value.data;
            let bv = &self.nodes[bias.0].value.data;
            let cn = S::from_usize(ch);
            for t in 0..t_len {
                let mut mean = S::zero();
                for c in 0..ch {
                    mean += xv[c * t_len + t];
                }
                mean /= cn;
                let mut var = S::zero();
                for c in 0..ch {
                    let d = xv[c * t_len + t] - mean;
                    var += d * d;
                }
                var /= cn;
                let rstd = S::one() / (var + eps).sqrt();
                for c in 0..ch {
                    let xh = (xv[c * t_len + t] - mean) * rstd;
                    out[c * t_len + t] = gv[c] * xh + bv[c];
                }
            }
        }
        let ng = self.needs(&[x.0, gain.0, bias.0]);
        Ok(self.push(
            Tensor {
                shape: vec![ch, t_len],
                data: out,
            },
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                eps,
            },
            ng,
        ))
    }

    // ── Slicing / padding ───────────────────────────────────────────────

    pub fn row_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.nodes[x.0].value.dims2()?;
        if start + len > rows {
            return Err(Error::shape(format!(
                "row_slice {start}..{} out of {rows} rows",
                start + len
            )));
        }
        let data = self.nodes[x.0].value.data[start * cols..(start + len) * cols].to_vec();
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(
            Tensor {
                shape: vec![len, cols],
                data,
            },
            Op::RowSlice { x: x.0, start },
            ng,
        ))
    }

    pub fn col_slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.nodes[x.0].value.dims2()?;
        if start + len > cols {
            return Err(Error::shape(format!(
                "col_slice {start}..{} out of {cols} cols",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&self.nodes[x.0].value.data[r * cols + start..r * cols + start + len]);
        }
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(
            Tensor {
                shape: vec![rows, len],
                data,
            },
            Op::ColSlice {
                x: x.0,
                start,
                len,
            },
            ng,
        ))
    }

    pub fn pad_cols(&mut self, x: Var, left: usize, right: usize) -> Result<Var> {
        let (rows, cols) = self.nodes[x.0].value.dims2()?;
        let out_cols = cols + left + right;
        let mut data = vec![S::zero(); rows * out_cols];
        for r in 0..rows {
            data[r * out_cols + left..r * out_cols + left + cols]
                .copy_from_slice(&self.nodes[x.0].value.data[r * cols..(r + 1) * cols]);
        }
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(
            Tensor {
                shape: vec![rows, out_cols],
                data,
            },
            Op::PadCols { x: x.0, left },
            ng,
        ))
    }

    // ── Interpolation ───────────────────────────────────────────────────

    /// Nearest-neighbor along time: out[i] = x[floor(i*T_in/T_out)].
    pub fn upsample_nearest(&mut self, x: Var, target: usize) -> Result<Var> {
        let (rows, cols) = self.nodes[x.0].value.dims2()?;
        if target == 0 {
            return Err(Error::invalid("upsample target must be positive"));
        }
        let mut data = vec![S::zero(); rows * target];
        for r in 0..rows {
            let xrow = &self.nodes[x.0].value.data[r * cols..(r + 1) * cols];
            for i in 0..target {
                data[r * target + i] = xrow[i * cols / target];
            }
        }
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(
            Tensor {
                shape: vec![rows, target],
                data,
            },
            Op::UpNearest(x.0),
            ng,
        ))
    }

    /// Linear interpolation with endpoint alignment.
    pub fn upsample_linear(&mut self, x: Var, target: usize) -> Result<Var> {
        let (rows, cols) = self.nodes[x.0].value.dims2()?;
        if target == 0 {
            return Err(Error::invalid("upsample target must be positive"));
        }
        let mut data = vec![S::zero(); rows * target];
        for r in 0..rows {
            let xrow = &self.nodes[x.0].value.data[r * cols..(r + 1) * cols];
            for i in 0..target {
                let (lo, hi, w) = lerp_index(cols, target, i);
                let wq = S::from_f64(w);
                data[r * target + i] = xrow[lo] * (S::one() - wq) + xrow[hi] * wq;
            }
        }
        if self.profiling {
            self.macs += (rows * target * 2) as u64;
        }
        let ng = self.nodes[x.0].needs_grad;
        Ok(self.push(
            Tensor {
                shape: vec![rows, target],
                data,
            },
            Op::UpLinear(x.0),
            ng,
        ))
    }

    // ── Selective scan ──────────────────────────────────────────────────

    /// Diagonal selective state-space scan.
    /// a: (N) diagonal state matrix shared by all channels, b/c: (N, T)
    /// per-step input/output maps, delta: (C, T) positive step sizes,
    /// x: (C, T), skip: (C) diagonal passthrough. Returns (C, T).
    pub fn selective_scan(
        &mut self,
        a: Var,
        b: Var,
        c: Var,
        delta: Var,
        x: Var,
        skip: Var,
    ) -> Result<Var> {
        let n = self.nodes[a.0].value.numel();
        let (nb, t_b) = self.nodes[b.0].value.dims2()?;
        let (nc, t_c) = self.nodes[c.0].value.dims2()?;
        let (ch, t_len) = self.nodes[x.0].value.dims2()?;
        let (ch_d, t_d) = self.nodes[delta.0].value.dims2()?;
        if nb != n || nc != n {
            return Err(Error::shape(format!(
                "selective_scan state dims: a has {n}, b has {nb}, c has {nc}"
            )));
        }
        if t_b != t_len || t_c != t_len || t_d != t_len {
            return Err(Error::shape("selective_scan time dims disagree"));
        }
        if ch_d != ch || self.nodes[skip.0].value.numel() != ch {
            return Err(Error::shape("selective_scan channel dims disagree"));
        }
        if self.nodes[delta.0].value.data.iter().any(|&v| v <= S::zero()) {
            return Err(Error::invalid("selective_scan requires positive delta"));
        }

        let ids = [a.0, b.0, c.0, delta.0, x.0, skip.0];
        let ng = self.needs(&ids);

        let dims = ScanDims {
            channels: ch,
            states: n,
            steps: t_len,
        };
        let (y, h) = scan::selective_scan_forward(
            &self.nodes[a.0].value.data,
            &self.nodes[b.0].value.data,
            &self.nodes[c.0].value.data,
            &self.nodes[delta.0].value.data,
            &self.nodes[x.0].value.data,
            &self.nodes[skip.0].value.data,
            dims,
            self.scan_chunk,
            ng,
        );
        if self.profiling {
            self.macs += ((3 * n + 1) * ch * t_len) as u64;
        }
        let var = self.push(
            Tensor {
                shape: vec![ch, t_len],
                data: y,
            },
            Op::SelectiveScan {
                a: a.0,
                b: b.0,
                c: c.0,
                delta: delta.0,
                x: x.0,
                skip: skip.0,
            },
            ng,
        );
        self.nodes[var.0].saved = h;
        Ok(var)
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar target. Gradients accumulate additively;
    /// nodes outside the target's ancestry keep `grad == None`.
    pub fn backward(&mut self, target: Var) -> Result<()> {
        if self.nodes[target.0].value.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward target must be scalar, got shape {:?}",
                self.nodes[target.0].value.shape
            )));
        }
        if !self.nodes[target.0].needs_grad {
            return Err(Error::invalid(
                "backward target does not depend on any trainable leaf",
            ));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[target.0] = Some(vec![S::one()]);

        for i in (0..=target.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let gout = match self.grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[i].op.clone();
            self.backprop_node(i, &op, &gout);
            self.grads[i] = Some(gout);
        }
        Ok(())
    }

    fn grad_buf(&mut self, id: usize) -> &mut Vec<S> {
        if self.grads[id].is_none() {
            let n = self.nodes[id].value.numel();
            self.grads[id] = Some(vec![S::zero(); n]);
        }
        self.grads[id].as_mut().unwrap()
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    fn backprop_node(&mut self, node_id: usize, op: &Op<S>, g: &[S]) {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for id in [a, b] {
                    if self.wants(id) {
                        let buf = self.grad_buf(id);
                        for (o, &gi) in buf.iter_mut().zip(g) {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(a) {
                    let buf = self.grad_buf(a);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                if self.wants(b) {
                    let buf = self.grad_buf(b);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o -= gi;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.wants(a) {
                    let bd = self.nodes[b].value.data.clone();
                    let buf = self.grad_buf(a);
                    for ((o, &gi), &bv) in buf.iter_mut().zip(g).zip(&bd) {
                        *o += gi * bv;
                    }
                }
                if self.wants(b) {
                    let ad = self.nodes[a].value.data.clone();
                    let buf = self.grad_buf(b);
                    for ((o, &gi), &av) in buf.iter_mut().zip(g).zip(&ad) {
                        *o += gi * av;
                    }
                }
            }
            Op::Div(a, b) => {
                if self.wants(a) {
                    let bd = self.nodes[b].value.data.clone();
                    let buf = self.grad_buf(a);
                    for ((o, &gi), &bv) in buf.iter_mut().zip(g).zip(&bd) {
                        *o += gi / bv;
                    }
                }
                if self.wants(b) {
                    let ad = self.nodes[a].value.data.clone();
                    let bd = self.nodes[b].value.data.clone();
                    let buf = self.grad_buf(b);
                    for (i, (o, &gi)) in buf.iter_mut().zip(g).enumerate() {
                        *o -= gi * ad[i] / (bd[i] * bd[i]);
                    }
                }
            }
            Op::Scale(x, c) => {
                if self.wants(x) {
                    let buf = self.grad_buf(x);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi * c;
                    }
                }
            }
            Op::AddConst(x, _) => {
                if self.wants(x) {
                    let buf = self.grad_buf(x);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }
            Op::BroadcastAdd(x, s) => {
                if self.wants(x) {
                    let buf = self.grad_buf(x);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                if self.wants(s) {
                    let mut acc = S::zero();
                    for &gi in g {
                        acc += gi;
                    }
                    self.grad_buf(s)[0] += acc;
                }
            }
            Op::ScalarMul(s, x) => {
                if self.wants(x) {
                    let sv = self.nodes[s].value.data[0];
                    let buf = self.grad_buf(x);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi * sv;
                    }
                }
                if self.wants(s) {
                    let xd = self.nodes[x].value.data.clone();
                    let mut acc = S::zero();
                    for (&gi, &xv) in g.iter().zip(&xd) {
                        acc += gi * xv;
                    }
                    self.grad_buf(s)[0] += acc;
                }
            }
            Op::AddBias(x, bias) => {
                let (rows, cols) = self.nodes[x].value.dims2().unwrap();
                if self.wants(x) {
                    let buf = self.grad_buf(x);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
                if self.wants(bias) {
                    let buf = self.grad_buf(bias);
                    for r in 0..rows {
                        let mut acc = S::zero();
                        for t in 0..cols {
                            acc += g[r * cols + t];
                        }
                        buf[r] += acc;
                    }
                }
            }
            Op::Sum(x) => {
                if self.wants(x) {
                    let g0 = g[0];
                    let buf = self.grad_buf(x);
                    for o in buf.iter_mut() {
                        *o += g0;
                    }
                }
            }
            Op::Reshape(x) => {
                if self.wants(x) {
                    let buf = self.grad_buf(x);
                    for (o, &gi) in buf.iter_mut().zip(g) {
                        *o += gi;
                    }
                }
            }
            Op::Exp(x) => {
                if self.wants(x) {
                    let yd = self.nodes[node_id].value.data.clone();
                    let buf = self.grad_buf(x);
                    for ((o, &gi), &yv) in buf.iter_mut().zip(g).zip(&yd) {
                        *o += gi * yv;
                    }
                }
            }
            Op::Ln(x) => {
                if self.wants(x) {
                    let xd = self.nodes[x].value.data.clone();
                    let buf = self.grad_buf(x);
                    for ((o, &gi), &xv) in buf.iter_mut().zip(g).zip(&xd) {
                        *o += gi / xv;
                    }
                }
            }
            Op::Sigmoid(x) => {
                if self.wants(x) {
                    let yd = self.nodes[node_id].value.data.clone();
                    let buf = self.grad_buf(x);
                    for ((o, &gi), &yv) in buf.iter_mut().zip(g).zip(&yd) {
                        *o += gi * yv * (S::one() - yv);
                    }
                }
            }
            Op::Silu(x) => {
                if self.wants(x) {
                    let xd = self.nodes[x].value.data.clone();
                    let buf = self.grad_buf(x);
                    for ((o, &gi), &xv) in buf.iter_mut().zip(g).zip(&xd) {
                        let s = sigmoid(xv);
                        *o += gi * s * (S::one() + xv * (S::one() - s));
                    }
                }
            }
            Op::Softplus(x) => {
                if self.wants(x) {
                    let xd = self.nodes[x].value.data.clone();
                    let buf = self.grad_buf(x);
                    for ((o, &gi), &xv) in buf.iter_mut().zip(g).zip(&xd) {
                        *o += gi * sigmoid(xv);
                    }
                }
            }
            Op::Relu(x) => {
                if self.wants(x) {
                    let xd = self.nodes[x].value.data.clone();
                    let buf = self.grad_buf(x);
                    for ((o, &gi), &xv) in buf.iter_mut().zip(g).zip(&xd) {
                        if xv > S::zero() {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Prelu(x, slope) => {
                let s = self.nodes[slope].value.data[0];
                if self.wants(x) {
                    let xd = self.nodes[x].value.data.clone();
                    let buf = self.grad_buf(x);
                    for ((o, &gi), &xv) in buf.iter_mut().zip(g).zip(&xd) {
                        *o += if xv >= S::zero() { gi } else { gi * s };
                    }
                }
                if self.wants(slope) {
                    let xd = self.nodes[x].value.data.clone();
                    let mut acc = S::zero();
                    for (&gi, &xv) in g.iter().zip(&xd) {
                        if xv < S::zero() {
                            acc += gi * xv;
                        }
                    }
                    self.grad_buf(slope)[0] += acc;
                }
            }
            Op::Clamp(x, lo, hi) => {
                if self.wants(x) {
                    let xd = self.nodes[x].value.data.clone();
                    let buf = self.grad_buf(x);
                    for ((o, &gi), &xv) in buf.iter_mut().zip(g).zip(&xd) {
                        if xv >= lo && xv <= hi {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Matmul(a, b) => self.backprop_matmul(a, b, g),
            Op::Conv1d {
                x,
                w,
                bias,
                stride,
                pad,
            } => self.backprop_conv1d(x, w, bias, stride, pad, g),
            Op::DwConv1d {
                x,
                w,
                bias,
                stride,
                pad_left,
                pad_right,
            } => self.backprop_dw_conv1d(x, w, bias, stride, pad_left, pad_right, g),
            Op::ConvT1d { x, w, bias, stride } => self.backprop_conv_t1d(x, w, bias, stride, g),
            Op::DwConvT1d { x, w, bias, stride } => {
                self.backprop_dw_conv_t1d(x, w, bias, stride, g)
            }
            Op::LayerNorm { x, gain, bias, eps } => self.backprop_layer_norm(x, gain, bias, eps, g),
            Op::RowSlice { x, start } => {
                if self.wants(x) {
                    let (_, cols) = self.nodes[x].value.dims2().unwrap();
                    let buf = self.grad_buf(x);
                    for (j, &gi) in g.iter().enumerate() {
                        buf[start * cols + j] += gi;
                    }
                }
            }
            Op::ColSlice { x, start, len } => {
                if self.wants(x) {
                    let (rows, cols) = self.nodes[x].value.dims2().unwrap();
                    let buf = self.grad_buf(x);
                    for r in 0..rows {
                        for j in 0..len {
                            buf[r * cols + start + j] += g[r * len + j];
                        }
                    }
                }
            }
            Op::PadCols { x, left } => {
                if self.wants(x) {
                    let (rows, cols) = self.nodes[x].value.dims2().unwrap();
                    let out_cols = self.nodes[node_id].value.shape[1];
                    let buf = self.grad_buf(x);
                    for r in 0..rows {
                        for j in 0..cols {
                            buf[r * cols + j] += g[r * out_cols + left + j];
                        }
                    }
                }
            }
            Op::UpNearest(x) => {
                if self.wants(x) {
                    let (rows, cols) = self.nodes[x].value.dims2().unwrap();
                    let target = self.nodes[node_id].value.shape[1];
                    let buf = self.grad_buf(x);
                    for r in 0..rows {
                        for i in 0..target {
                            buf[r * cols + i * cols / target] += g[r * target + i];
                        }
                    }
                }
            }
            Op::UpLinear(x) => {
                if self.wants(x) {
                    let (rows, cols) = self.nodes[x].value.dims2().unwrap();
                    let target = self.nodes[node_id].value.shape[1];
                    let buf = self.grad_buf(x);
                    for r in 0..rows {
                        for i in 0..target {
                            let (lo, hi, w) = lerp_index(cols, target, i);
                            let wq = S::from_f64(w);
                            let gi = g[r * target + i];
                            buf[r * cols + lo] += gi * (S::one() - wq);
                            buf[r * cols + hi] += gi * wq;
                        }
                    }
                }
            }
            Op::SelectiveScan {
                a,
                b,
                c,
                delta,
                x,
                skip,
            } => self.backprop_selective_scan(node_id, a, b, c, delta, x, skip, g),
        }
    }

    fn backprop_matmul(&mut self, a: usize, b: usize, g: &[S]) {
        let (m, k) = self.nodes[a].value.dims2().unwrap();
        let (_, t) = self.nodes[b].value.dims2().unwrap();
        if self.wants(a) {
            let bd = self.nodes[b].value.data.clone();
            let buf = self.grad_buf(a);
            // dA = dY * B^T
            for i in 0..m {
                for p in 0..k {
                    let mut acc = S::zero();
                    let grow = &g[i * t..(i + 1) * t];
                    let brow = &bd[p * t..(p + 1) * t];
                    for (&gi, &bv) in grow.iter().zip(brow) {
                        acc += gi * bv;
                    }
                    buf[i * k + p] += acc;
                }
            }
        }
        if self.wants(b) {
            let ad = self.nodes[a].value.data.clone();
            let buf = self.grad_buf(b);
            // dB = A^T * dY
            for i in 0..m {
                let grow = &g[i * t..(i + 1) * t];
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == S::zero() {
                        continue;
                    }
                    let brow = &mut buf[p * t..(p + 1) * t];
                    for (o, &gi) in brow.iter_mut().zip(grow) {
                        *o += aip * gi;
                    }
                }
            }
        }
    }

    fn backprop_conv1d(
        &mut self,
        x: usize,
        w: usize,
        bias: Option<usize>,
        stride: usize,
        pad: usize,
        g: &[S],
    ) {
        let (c_in, t_in) = self.nodes[x].value.dims2().unwrap();
        let (c_out, _, k) = self.nodes[w].value.dims3().unwrap();
        let t_out = (t_in + 2 * pad - k) / stride + 1;
        if self.wants(x) {
            let wd = self.nodes[w].value.data.clone();
            let buf = self.grad_buf(x);
            for o in 0..c_out {
                let grow = &g[o * t_out..(o + 1) * t_out];
                for c in 0..c_in {
                    let wrow = &wd[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    let xbuf = &mut buf[c * t_in..(c + 1) * t_in];
                    for (t, &gt) in grow.iter().enumerate() {
                        if gt == S::zero() {
                            continue;
                        }
                        let base = t * stride;
                        for (i, &wi) in wrow.iter().enumerate() {
                            let j = base + i;
                            if j >= pad && j - pad < t_in {
                                xbuf[j - pad] += gt * wi;
                            }
                        }
                    }
                }
            }
        }
        if self.wants(w) {
            let xd = self.nodes[x].value.data.clone();
            let buf = self.grad_buf(w);
            for o in 0..c_out {
                let grow = &g[o * t_out..(o + 1) * t_out];
                for c in 0..c_in {
                    let xrow = &xd[c * t_in..(c + 1) * t_in];
                    let wbuf = &mut buf[(o * c_in + c) * k..(o * c_in + c + 1) * k];
                    for (t, &gt) in grow.iter().enumerate() {
                        if gt == S::zero() {
                            continue;
                        }
                        let base = t * stride;
                        for (i, ow) in wbuf.iter_mut().enumerate() {
                            let j = base + i;
                            if j >= pad && j - pad < t_in {
                                *ow += gt * xrow[j - pad];
                            }
                        }
                    }
                }
            }
        }
        if let Some(bv) = bias {
            if self.wants(bv) {
                let buf = self.grad_buf(bv);
                for o in 0..c_out {
                    let mut acc = S::zero();
                    for t in 0..t_out {
                        acc += g[o * t_out + t];
                    }
                    buf[o] += acc;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_dw_conv1d(
        &mut self,
        x: usize,
        w: usize,
        bias: Option<usize>,
        stride: usize,
        pad_left: usize,
        pad_right: usize,
        g: &[S],
    ) {
        let (ch, t_in) = self.nodes[x].value.dims2().unwrap();
        let (_, k) = self.nodes[w].value.dims2().unwrap();
        let t_out = (t_in + pad_left + pad_right - k) / stride + 1;
        if self.wants(x) {
            let wd = self.nodes[w].value.data.clone();
            let buf = self.grad_buf(x);
            for c in 0..ch {
                let grow = &g[c * t_out..(c + 1) * t_out];
                let wrow = &wd[c * k..(c + 1) * k];
                let xbuf = &mut buf[c * t_in..(c + 1) * t_in];
                for (t, &gt) in grow.iter().enumerate() {
                    if gt == S::zero() {
                        continue;
                    }
                    let base = t * stride;
                    for (i, &wi) in wrow.iter().enumerate() {
                        let j = base + i;
                        if j >= pad_left && j - pad_left < t_in {
                            xbuf[j - pad_left] += gt * wi;
                        }
                    }
                }
            }
        }
        if self.wants(w) {
            let xd = self.nodes[x].value.data.clone();
            let buf = self.grad_buf(w);
            for c in 0..ch {
                let grow = &g[c * t_out..(c + 1) * t_out];
                let xrow = &xd[c * t_in..(c + 1) * t_in];
                let wbuf = &mut buf[c * k..(c + 1) * k];
                for (t, &gt) in grow.iter().enumerate() {
                    if gt == S::zero() {
                        continue;
                    }
                    let base = t * stride;
                    for (i, ow) in wbuf.iter_mut().enumerate() {
                        let j = base + i;
                        if j >= pad_left && j - pad_left < t_in {
                            *ow += gt * xrow[j - pad_left];
                        }
                    }
                }
            }
        }
        if let Some(bv) = bias {
            if self.wants(bv) {
                let buf = self.grad_buf(bv);
                for c in 0..ch {
                    let mut acc = S::zero();
                    for t in 0..t_out {
                        acc += g[c * t_out + t];
                    }
                    buf[c] += acc;
                }
            }
        }
    }

    fn backprop_conv_t1d(&mut self, x: usize, w: usize, bias: Option<usize>, stride: usize, g: &[S]) {
        let (c_in, t_in) = self.nodes[x].value.dims2().unwrap();
        let (_, c_out, k) = self.nodes[w].value.dims3().unwrap();
        let t_out = (t_in - 1) * stride + k;
        if self.wants(x) {
            let wd = self.nodes[w].value.data.clone();
            let buf = self.grad_buf(x);
            for c in 0..c_in {
                let xbuf = &mut buf[c * t_in..(c + 1) * t_in];
                for o in 0..c_out {
                    let wrow = &wd[(c * c_out + o) * k..(c * c_out + o + 1) * k];
                    let grow = &g[o * t_out..(o + 1) * t_out];
                    for (t, ox) in xbuf.iter_mut().enumerate() {
                        let base = t * stride;
                        let mut acc = S::zero();
                        for (i, &wi) in wrow.iter().enumerate() {
                            acc += grow[base + i] * wi;
                        }
                        *ox += acc;
                    }
                }
            }
        }
        if self.wants(w) {
            let xd = self.nodes[x].value.data.clone();
            let buf = self.grad_buf(w);
            for c in 0..c_in {
                let xrow = &xd[c * t_in..(c + 1) * t_in];
                for o in 0..c_out {
                    let grow = &g[o * t_out..(o + 1) * t_out];
                    let wbuf = &mut buf[(c * c_out + o) * k..(c * c_out + o + 1) * k];
                    for (t, &xt) in xrow.iter().enumerate() {
                        if xt == S::zero() {
                            continue;
                        }
                        let base = t * stride;
                        for (i, ow) in wbuf.iter_mut().enumerate() {
                            *ow += xt * grow[base + i];
                        }
                    }
                }
            }
        }
        if let Some(bv) = bias {
            if self.wants(bv) {
                let buf = self.grad_buf(bv);
                for o in 0..c_out {
                    let mut acc = S::zero();
                    for t in 0..t_out {
                        acc += g[o * t_out + t];
                    }
                    buf[o] += acc;
                }
            }
        }
    }

    fn backprop_dw_conv_t1d(&mut self, x: usize, w: usize, bias: Option<usize>, stride: usize, g: &[S]) {
        let (ch, t_in) = self.nodes[x].value.dims2().unwrap();
        let (_, k) = self.nodes[w].value.dims2().unwrap();
        let t_out = (t_in - 1) * stride + k;
        if self.wants(x) {
            let wd = self.nodes[w].value.data.clone();
            let buf = self.grad_buf(x);
            for c in 0..ch {
                let wrow = &wd[c * k..(c + 1) * k];
                let grow = &g[c * t_out..(c + 1) * t_out];
                let xbuf = &mut buf[c * t_in..(c + 1) * t_in];
                for (t, ox) in xbuf.iter_mut().enumerate() {
                    let base = t * stride;
                    let mut acc = S::zero();
                    for (i, &wi) in wrow.iter().enumerate() {
                        acc += grow[base + i] * wi;
                    }
                    *ox += acc;
                }
            }
        }
        if self.wants(w) {
            let xd = self.nodes[x].value.data.clone();
            let buf = self.grad_buf(w);
            for c in 0..ch {
                let xrow = &xd[c * t_in..(c + 1) * t_in];
                let grow = &g[c * t_out..(c + 1) * t_out];
                let wbuf = &mut buf[c * k..(c + 1) * k];
                for (t, &xt) in xrow.iter().enumerate() {
                    if xt == S::zero() {
                        continue;
                    }
                    let base = t * stride;
                    for (i, ow) in wbuf.iter_mut().enumerate() {
                        *ow += xt * grow[base + i];
                    }
                }
            }
        }
        if let Some(bv) = bias {
            if self.wants(bv) {
                let buf = self.grad_buf(bv);
                for c in 0..ch {
                    let mut acc = S::zero();
                    for t in 0..t_out {
                        acc += g[c * t_out + t];
                    }
                    buf[c] += acc;
                }
            }
        }
    }

    fn backprop_layer_norm(&mut self, x: usize, gain: usize, bias: usize, eps: S, g: &[S]) {
        let (ch, t_len) = self.nodes[x].value.dims2().unwrap();
        let xd = self.nodes[x].value.data.clone();
        let gd = self.nodes[gain].value.data.clone();
        let cn = S::from_usize(ch);
        // recompute per-column stats; cheaper than caching for these widths
        let mut xhat = vec![S::zero(); ch];
        for t in 0..t_len {
            let mut mean = S::zero();
            for c in 0..ch {
                mean += xd[c * t_len + t];
            }
            mean /= cn;
            let mut var = S::zero();
            for c in 0..ch {
                let d = xd[c * t_len + t] - mean;
                var += d * d;
            }
            var /= cn;
            let rstd = S::one() / (var + eps).sqrt();
            for c in 0..ch {
                xhat[c] = (xd[c * t_len + t] - mean) * rstd;
            }
            let mut sum_gy = S::zero();
            let mut sum_gyx = S::zero();
            for c in 0..ch {
                let gy = g[c * t_len + t] * gd[c];
                sum_gy += gy;
                sum_gyx += gy * xhat[c];
            }
            if self.wants(x) {
                let buf = self.grad_buf(x);
                for c in 0..ch {
                    let gy = g[c * t_len + t] * gd[c];
                    buf[c * t_len + t] += rstd * (gy - sum_gy / cn - xhat[c] * sum_gyx / cn);
                }
            }
            if self.wants(gain) {
                let buf = self.grad_buf(gain);
                for c in 0..ch {
                    buf[c] += g[c * t_len + t] * xhat[c];
                }
            }
            if self.wants(bias) {
                let buf = self.grad_buf(bias);
                for c in 0..ch {
                    buf[c] += g[c * t_len + t];
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_selective_scan(
        &mut self,
        node_id: usize,
        a: usize,
        b: usize,
        c: usize,
        delta: usize,
        x: usize,
        skip: usize,
        g: &[S],
    ) {
        let n = self.nodes[a].value.numel();
        let (ch, t_len) = self.nodes[x].value.dims2().unwrap();
        let h = self.nodes[node_id]
            .saved
            .as_ref()
            .expect("selective_scan states were not saved for backward")
            .clone();
        let dims = ScanDims {
            channels: ch,
            states: n,
            steps: t_len,
        };
        let grads = scan::selective_scan_backward(
            &self.nodes[a].value.data.clone(),
            &self.nodes[b].value.data.clone(),
            &self.nodes[c].value.data.clone(),
            &self.nodes[delta].value.data.clone(),
            &self.nodes[x].value.data.clone(),
            &self.nodes[skip].value.data.clone(),
            &h,
            g,
            dims,
        );
        if self.wants(a) {
            let buf = self.grad_buf(a);
            for (o, v) in buf.iter_mut().zip(&grads.da) {
                *o += *v;
            }
        }
        if self.wants(b) {
            let buf = self.grad_buf(b);
            for (o, v) in buf.iter_mut().zip(&grads.db) {
                *o += *v;
            }
        }
        if self.wants(c) {
            let buf = self.grad_buf(c);
            for (o, v) in buf.iter_mut().zip(&grads.dc) {
                *o += *v;
            }
        }
        if self.wants(delta) {
            let buf = self.grad_buf(delta);
            for (o, v) in buf.iter_mut().zip(&grads.ddelta) {
                *o += *v;
            }
        }
        if self.wants(x) {
            let buf = self.grad_buf(x);
            for (o, v) in buf.iter_mut().zip(&grads.dx) {
                *o += *v;
            }
        }
        if self.wants(skip) {
            let buf = self.grad_buf(skip);
            for (o, v) in buf.iter_mut().zip(&grads.dskip) {
                *o += *v;
            }
        }
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

/// Numerically stable log(1 + e^x).
fn softplus<S: Scalar>(v: S) -> S {
    let m = if v > S::zero() { v } else { S::zero() };
    m + ((-v.abs()).exp() + S::one()).ln()
}

/// Endpoint-aligned linear interpolation index/weight for output slot `i`.
fn lerp_index(len_in: usize, len_out: usize, i: usize) -> (usize, usize, f64) {
    if len_out == 1 || len_in == 1 {
        return (0, 0, 0.0);
    }
    let pos = i as f64 * (len_in - 1) as f64 / (len_out - 1) as f64;
    let lo = pos.floor() as usize;
    let lo = lo.min(len_in - 1);
    let hi = (lo + 1).min(len_in - 1);
    (lo, hi, pos - lo as f64)
}

fn op_name<S>(op: &Op<S>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Scale(..) => "scale",
        Op::AddConst(..) => "add_const",
        Op::BroadcastAdd(..) => "broadcast_add",
        Op::ScalarMul(..) => "scalar_mul",
        Op::AddBias(..) => "add_bias",
        Op::Sum(..) => "sum",
        Op::Reshape(..) => "reshape",
        Op::Exp(..) => "exp",
        Op::Ln(..) => "ln",
        Op::Sigmoid(..) => "sigmoid",
        Op::Silu(..) => "silu",
        Op::Softplus(..) => "softplus",
        Op::Relu(..) => "relu",
        Op::Prelu(..) => "prelu",
        Op::Clamp(..) => "clamp",
        Op::Matmul(..) => "matmul",
        Op::Conv1d { .. } => "conv1d",
        Op::DwConv1d { .. } => "dw_conv1d",
        Op::ConvT1d { .. } => "conv_t1d",
        Op::DwConvT1d { .. } => "dw_conv_t1d",
        Op::LayerNorm { .. } => "layer_norm",
        Op::RowSlice { .. } => "row_slice",
        Op::ColSlice { .. } => "col_slice",
        Op::PadCols { .. } => "pad_cols",
        Op::UpNearest(..) => "upsample_nearest",
        Op::UpLinear(..) => "upsample_linear",
        Op::SelectiveScan { .. } => "selective_scan",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;
    use rand::Rng;

    type T64 = Tensor<f64>;

    fn rt(shape: &[usize], rng: &mut impl Rng) -> T64 {
        let n: usize = shape.iter().product();
        T64 {
            shape: shape.to_vec(),
            data: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    /// Central finite differences against the recorded backward pass.
    /// `build` must re-record the same computation for any parameter values.
    fn fd_check(inputs: &[T64], tol: f64, build: impl Fn(&mut Graph<f64>, &[Var]) -> Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
        let out = build(&mut g, &vars);
        let loss = g.sum(out);
        g.backward(loss).unwrap();
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .map(|v| g.grad(*v).expect("missing grad").to_vec())
            .collect();
        let h = 1e-5;
        let eval = |probe: &[T64]| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = probe.iter().map(|t| g.param(t)).collect();
            let out = build(&mut g, &vars);
            let loss = g.sum(out);
            g.value(loss).data[0]
        };
        for (pi, t) in inputs.iter().enumerate() {
            for ei in 0..t.numel() {
                let mut plus = inputs.to_vec();
                plus[pi].data[ei] += h;
                let mut minus = inputs.to_vec();
                minus[pi].data[ei] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[pi][ei];
                let denom = a.abs().max(numeric.abs()).max(1.0);
                assert!(
                    (a - numeric).abs() / denom < tol,
                    "param {pi} elem {ei}: analytic {a} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn sum_and_quadratic_gradients() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.param(&T64::from_slice(&[3], &[1.0, 2.0, 3.0]).unwrap());
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

        let mut g: Graph<f64> = Graph::new();
        let x = g.param(&T64::from_slice(&[2], &[1.0, 2.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_constant_targets() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.param(&T64::from_slice(&[2], &[1.0, 2.0]).unwrap());
        assert!(g.backward(x).is_err());
        let c = g.constant(T64::scalar(3.0));
        assert!(g.backward(c).is_err());
    }

    #[test]
    fn conv_identity_and_shape() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(T64::from_slice(&[1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let k = g.constant(T64::from_slice(&[1, 1, 1], &[1.0]).unwrap());
        let y = g.conv1d(x, k, None, 1, 0).unwrap();
        assert_eq!(g.value(y).data, vec![1.0, 2.0, 3.0, 4.0, 5.0]);

        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(T64::zeros(&[1, 24000]));
        let k = g.constant(T64::zeros(&[128, 1, 41]));
        let y = g.conv1d(x, k, None, 20, 0).unwrap();
        assert_eq!(g.value(y).shape, vec![128, 1198]);
    }

    #[test]
    fn conv_matches_triple_loop_oracle() {
        let mut rng = seeded_rng(31, &[0]);
        let x = rt(&[3, 16], &mut rng);
        let w = rt(&[2, 3, 3], &mut rng);
        let mut g: Graph<f64> = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.constant(w.clone());
        let y = g.conv1d(xv, wv, None, 1, 0).unwrap();
        let t_out = 16 - 3 + 1;
        for o in 0..2 {
            for t in 0..t_out {
                let mut want = 0.0;
                for c in 0..3 {
                    for i in 0..3 {
                        want += x.data[c * 16 + t + i] * w.data[(o * 3 + c) * 3 + i];
                    }
                }
                assert!((g.value(y).data[o * t_out + t] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tconv_single_frame_and_scatter_oracle() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(T64::from_slice(&[1, 1], &[1.0]).unwrap());
        let k = g.constant(T64::from_slice(&[1, 1, 3], &[1.0, 1.0, 1.0]).unwrap());
        let y = g.conv_t1d(x, k, None, 1).unwrap();
        assert_eq!(g.value(y).data, vec![1.0, 1.0, 1.0]);

        let mut rng = seeded_rng(32, &[0]);
        let x = rt(&[2, 7], &mut rng);
        let w = rt(&[2, 3, 5], &mut rng);
        let mut g: Graph<f64> = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.constant(w.clone());
        let y = g.conv_t1d(xv, wv, None, 3).unwrap();
        let t_out = 6 * 3 + 5;
        let mut want = vec![0.0; 3 * t_out];
        for c in 0..2 {
            for t in 0..7 {
                for o in 0..3 {
                    for i in 0..5 {
                        want[o * t_out + t * 3 + i] +=
                            x.data[c * 7 + t] * w.data[(c * 3 + o) * 5 + i];
                    }
                }
            }
        }
        for (a, b) in g.value(y).data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_transposed_conv_adjoint() {
        // <conv(x), y> == <x, crop(tconv(y))> for every geometry the model
        // uses, including padded ones
        let mut rng = seeded_rng(33, &[0]);
        for &(c_in, c_out, k, stride, pad, t) in &[
            (1usize, 8usize, 41usize, 20usize, 0usize, 200usize),
            (4, 4, 1, 1, 0, 33),
            (3, 5, 5, 2, 2, 40),
            (2, 3, 4, 2, 1, 21),
        ] {
            let x = rt(&[c_in, t], &mut rng);
            let w = rt(&[c_out, c_in, k], &mut rng);
            let t_out = (t + 2 * pad - k) / stride + 1;
            let y = rt(&[c_out, t_out], &mut rng);

            let mut g: Graph<f64> = Graph::new();
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let cx = g.conv1d(xv, wv, None, stride, pad).unwrap();
            let lhs: f64 = g
                .value(cx)
                .data
                .iter()
                .zip(&y.data)
                .map(|(a, b)| a * b)
                .sum();

            // adjoint: transposed conv of y with the same kernel buffer read
            // as (c_out, c_in reversed roles), then crop the padding margin
            let mut g2: Graph<f64> = Graph::new();
            let yv = g2.constant(y.clone());
            let wv2 = g2.constant(T64 {
                shape: vec![c_out, c_in, k],
                data: w.data.clone(),
            });
            let tx = g2.conv_t1d(yv, wv2, None, stride).unwrap();
            let full = g2.value(tx);
            let mut rhs = 0.0;
            let full_t = full.shape[1];
            for c in 0..c_in {
                for j in 0..t {
                    let src = j + pad;
                    if src < full_t {
                        rhs += x.data[c * t + j] * full.data[c * full_t + src];
                    }
                }
            }
            assert!((lhs - rhs).abs() < 1e-10, "geometry k={k} s={stride} p={pad}");
        }
    }

    #[test]
    fn layer_norm_examples_and_stats() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(T64::filled(&[3, 2], 7.5));
        let gain = g.constant(T64::filled(&[3], 1.0));
        let bias = g.constant(T64::filled(&[3], 0.0));
        let y = g.layer_norm(x, gain, bias, 1e-5).unwrap();
        for v in &g.value(y).data {
            assert!(v.abs() < 1e-9);
        }

        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(T64::from_slice(&[2, 1], &[1.0, 3.0]).unwrap());
        let gain = g.constant(T64::filled(&[2], 1.0));
        let bias = g.constant(T64::filled(&[2], 0.0));
        let y = g.layer_norm(x, gain, bias, 1e-12).unwrap();
        assert!((g.value(y).data[0] + 1.0).abs() < 1e-5);
        assert!((g.value(y).data[1] - 1.0).abs() < 1e-5);

        let mut rng = seeded_rng(34, &[0]);
        let x = rt(&[4, 9], &mut rng);
        let mut g: Graph<f64> = Graph::new();
        let xv = g.constant(x);
        let gain = g.constant(T64::filled(&[4], 1.0));
        let bias = g.constant(T64::filled(&[4], 0.0));
        let y = g.layer_norm(xv, gain, bias, 1e-12).unwrap();
        let yd = g.value(y);
        for t in 0..9 {
            let mut mean = 0.0;
            let mut var = 0.0;
            for c in 0..4 {
                mean += yd.data[c * 9 + t];
            }
            mean /= 4.0;
            for c in 0..4 {
                var += (yd.data[c * 9 + t] - mean).powi(2);
            }
            var /= 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn prelu_and_activation_values() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(T64::from_slice(&[3], &[-2.0, 0.0, 3.0]).unwrap());
        let s = g.constant(T64::scalar(0.25));
        let y = g.prelu(x, s).unwrap();
        assert_eq!(g.value(y).data, vec![-0.5, 0.0, 3.0]);

        let one = g.constant(T64::scalar(1.0));
        let y1 = g.prelu(x, one).unwrap();
        assert_eq!(g.value(y1).data, vec![-2.0, 0.0, 3.0]);

        let zero = g.constant(T64::scalar(0.0));
        let y0 = g.prelu(x, zero).unwrap();
        let r = g.relu(x);
        assert_eq!(g.value(y0).data, g.value(r).data);

        let z = g.constant(T64::scalar(0.0));
        let sp = g.softplus(z);
        assert!((g.value(sp).data[0] - std::f64::consts::LN_2).abs() < 1e-12);
        let si = g.silu(z);
        assert_eq!(g.value(si).data[0], 0.0);
    }

    #[test]
    fn matmul_identity_and_macs() {
        let mut rng = seeded_rng(35, &[0]);
        let a = rt(&[3, 3], &mut rng);
        let mut g: Graph<f64> = Graph::new();
        g.enable_profiling();
        let mut eye = T64::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data[i * 3 + i] = 1.0;
        }
        let iv = g.constant(eye);
        let av = g.constant(a.clone());
        let y = g.matmul(iv, av).unwrap();
        assert_eq!(g.value(y).data, a.data);
        assert_eq!(g.macs(), 27);
    }

    #[test]
    fn upsample_examples() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.constant(T64::from_slice(&[1, 2], &[5.0, 9.0]).unwrap());
        let y = g.upsample_nearest(x, 4).unwrap();
        assert_eq!(g.value(y).data, vec![5.0, 5.0, 9.0, 9.0]);

        let x2 = g.constant(T64::from_slice(&[1, 2], &[0.0, 2.0]).unwrap());
        let y2 = g.upsample_linear(x2, 4).unwrap();
        let want = [0.0, 2.0 / 3.0, 4.0 / 3.0, 2.0];
        for (a, b) in g.value(y2).data.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let mut rng = seeded_rng(36, &[0]);
        let x = rt(&[2, 5], &mut rng);
        let y = rt(&[2, 5], &mut rng);
        let shifted = T64 {
            shape: vec![2, 5],
            data: x.data.iter().map(|v| v + 3.0).collect(),
        };
        fd_check(&[x.clone(), y.clone()], 1e-6, |g, v| {
            let a = g.add(v[0], v[1]).unwrap();
            let m = g.mul(a, v[1]).unwrap();
            let s = g.sub(m, v[0]).unwrap();
            g.scale(s, 1.7)
        });
        fd_check(&[x.clone(), shifted.clone()], 1e-6, |g, v| {
            g.div(v[0], v[1]).unwrap()
        });
        fd_check(&[x.clone()], 1e-6, |g, v| {
            let e = g.sigmoid(v[0]);
            let s = g.silu(e);
            g.softplus(s)
        });
        fd_check(&[shifted], 1e-6, |g, v| {
            let l = g.ln(v[0]);
            g.exp(l)
        });
    }

    #[test]
    fn structural_op_gradients_match_finite_differences() {
        let mut rng = seeded_rng(37, &[0]);
        let x = rt(&[3, 6], &mut rng);
        let s = rt(&[1], &mut rng);
        let b = rt(&[3], &mut rng);
        fd_check(&[x.clone(), s.clone()], 1e-6, |g, v| {
            let p = g.prelu(v[0], v[1]).unwrap();
            let q = g.broadcast_add(p, v[1]).unwrap();
            g.scalar_mul(v[1], q).unwrap()
        });
        fd_check(&[x.clone(), b], 1e-6, |g, v| g.add_bias(v[0], v[1]).unwrap());
        fd_check(&[x.clone()], 1e-6, |g, v| {
            let r = g.row_slice(v[0], 1, 2).unwrap();
            let c = g.col_slice(r, 2, 3).unwrap();
            let p = g.pad_cols(c, 1, 2).unwrap();
            g.reshape(p, &[3, 4]).unwrap()
        });
        fd_check(&[x.clone()], 1e-6, |g, v| g.upsample_nearest(v[0], 13).unwrap());
        fd_check(&[x], 1e-6, |g, v| g.upsample_linear(v[0], 13).unwrap());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = seeded_rng(38, &[0]);
        let x = rt(&[2, 12], &mut rng);
        let w = rt(&[3, 2, 4], &mut rng);
        let b = rt(&[3], &mut rng);
        fd_check(&[x.clone(), w, b], 1e-5, |g, v| {
            g.conv1d(v[0], v[1], Some(v[2]), 2, 1).unwrap()
        });
        let wt = rt(&[2, 3, 4], &mut rng);
        let bt = rt(&[3], &mut rng);
        fd_check(&[x.clone(), wt, bt], 1e-5, |g, v| {
            g.conv_t1d(v[0], v[1], Some(v[2]), 2).unwrap()
        });
        let wd = rt(&[2, 4], &mut rng);
        let bd = rt(&[2], &mut rng);
        fd_check(&[x.clone(), wd.clone(), bd.clone()], 1e-5, |g, v| {
            g.dw_conv1d(v[0], v[1], Some(v[2]), 1, 3, 0).unwrap()
        });
        fd_check(&[x.clone(), wd.clone(), bd.clone()], 1e-5, |g, v| {
            g.dw_conv1d(v[0], v[1], Some(v[2]), 2, 2, 2).unwrap()
        });
        fd_check(&[x, wd, bd], 1e-5, |g, v| {
            g.dw_conv_t1d(v[0], v[1], Some(v[2]), 2).unwrap()
        });
    }

    #[test]
    fn matmul_and_norm_gradients_match_finite_differences() {
        let mut rng = seeded_rng(39, &[0]);
        let a = rt(&[3, 4], &mut rng);
        let b = rt(&[4, 5], &mut rng);
        fd_check(&[a, b], 1e-5, |g, v| g.matmul(v[0], v[1]).unwrap());
        let x = rt(&[4, 6], &mut rng);
        let gain = rt(&[4], &mut rng);
        let bias = rt(&[4], &mut rng);
        fd_check(&[x, gain, bias], 2e-5, |g, v| {
            g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()
        });
    }

    #[test]
    fn selective_scan_gradients_match_finite_differences() {
        let mut rng = seeded_rng(40, &[0]);
        let n = 3;
        let ch = 2;
        let t = 7;
        let a = T64 {
            shape: vec![n],
            data: (0..n).map(|_| -rng.gen_range(0.3..2.0)).collect(),
        };
        let b = rt(&[n, t], &mut rng);
        let c = rt(&[n, t], &mut rng);
        let delta = T64 {
            shape: vec![ch, t],
            data: (0..ch * t).map(|_| rng.gen_range(0.05..0.5)).collect(),
        };
        let x = rt(&[ch, t], &mut rng);
        let skip = rt(&[ch], &mut rng);
        fd_check(&[a, b, c, delta, x, skip], 1e-5, |g, v| {
            g.selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap()
        });
    }

    #[test]
    fn fan_out_accumulates_gradients() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.param(&T64::from_slice(&[2], &[3.0, -1.0]).unwrap());
        let y = g.add(x, x).unwrap();
        let z = g.mul(y, x).unwrap(); // z = 2x^2, dz/dx = 4x
        let s = g.sum(z);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[12.0, -4.0]);
    }
}
