//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive application in topological order;
//! [`Graph::backward`] walks the tape once in reverse, accumulating gradients
//! into every `requires_grad` leaf. Values are plain [`Tensor`]s; handles are
//! copyable [`Var`] indices into the tape.

use rayon::prelude::*;

use super::array::Tensor;
use super::kernels;
use super::scalar::{s, Scalar};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct Node<S: Scalar> {
    value: Tensor<S>,
    requires_grad: bool,
    op: Op<S>,
}

enum Op<S: Scalar> {
    Leaf,
    Add(Var, Var),
    Mul(Var, Var),
    /// `x * scale + shift` elementwise.
    Affine { x: Var, scale: S },
    /// `x[.., d] + b[d]` broadcast over leading axes.
    AddBias { x: Var, b: Var },
    /// Each leading-axis slice of `x` scaled by the matching entry of `m[B]`.
    MulRows { x: Var, m: Var },
    /// `a[.., m, k] * b[.., k, n]`; `b` may be rank-2 (shared across batch).
    Matmul { a: Var, b: Var },
    /// `a[.., m, k] * b[.., n, k]^T` (both batched identically).
    MatmulNt { a: Var, b: Var },
    Permute { x: Var, axes: Vec<usize> },
    Reshape { x: Var },
    Conv2d { x: Var, w: Var, b: Var },
    MaxPool2d { x: Var, argmax: Vec<u32> },
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    /// `ln(max(x, min))`.
    LnClamped { x: Var, min: S },
    /// `max(x, 0)^e` for a constant exponent.
    PowfConst { x: Var, e: S },
    /// Softmax over the last axis.
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, eps: S },
    Sum(Var),
    Mean(Var),
    /// Per-row pick over the last axis: `out[r] = x[r, idx[r]]`.
    GatherLast { x: Var, idx: Vec<usize> },
    /// Fused softmax(q k^T / sqrt(dh)) v over [B, h, n, dh] inputs. Saves
    /// per-row max and exp-sum so backward can recompute the attention
    /// weights block-by-block instead of materializing [B, h, n, n]; for
    /// small batches the weights are kept instead (`saved_attn`).
    ScaledAttention {
        q: Var,
        k: Var,
        v: Var,
        row_max: Vec<S>,
        row_sum: Vec<S>,
        saved_attn: Option<Vec<S>>,
    },
}

/// Reverse-mode autodiff tape.
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new() }
    }

    /// Insert a constant (no gradient tracked).
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push(value, false, Op::Leaf)
    }

    /// Insert a trainable leaf; [`Graph::backward`] fills its gradient.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push(value, true, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Gradient of a leaf after [`Graph::backward`]; `None` if untracked.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Move a leaf gradient out of the tape.
    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Tensor<S>, requires_grad: bool, op: Op<S>) -> Var {
        self.nodes.push(Node { value, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ------------------------------------------------------------------
    // elementwise / broadcast ops
    // ------------------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let req = self.req(a) || self.req(b);
        Ok(self.push(out, req, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "mul: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let req = self.req(a) || self.req(b);
        Ok(self.push(out, req, Op::Mul(a, b)))
    }

    /// `x * scale + shift` elementwise with constant scalars.
    pub fn affine(&mut self, x: Var, scale: S, shift: S) -> Var {
        let out = self.value(x).map(|v| v * scale + shift);
        let req = self.req(x);
        self.push(out, req, Op::Affine { x, scale })
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let d = *self.value(x).shape().last().ok_or_else(|| {
            Error::Shape("add_bias: rank-0 input".into())
        })?;
        if self.value(b).shape() != [d] {
            return Err(Error::Shape(format!(
                "add_bias: bias {:?} does not match last axis {}",
                self.value(b).shape(),
                d
            )));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &bv) in row.iter_mut().zip(bias.iter()) {
                *o = *o + bv;
            }
        }
        let req = self.req(x) || self.req(b);
        Ok(self.push(out, req, Op::AddBias { x, b }))
    }

    /// Scale each `x[i, ..]` slice by `m[i]`.
    pub fn mul_rows(&mut self, x: Var, m: Var) -> Result<Var> {
        let b = *self.value(x).shape().first().ok_or_else(|| {
            Error::Shape("mul_rows: rank-0 input".into())
        })?;
        if self.value(m).shape() != [b] {
            return Err(Error::Shape(format!(
                "mul_rows: mask {:?} does not match leading axis {}",
                self.value(m).shape(),
                b
            )));
        }
        let mask = self.value(m).data().to_vec();
        let chunk = self.value(x).len() / b.max(1);
        let mut out = self.value(x).clone();
        for (i, row) in out.data_mut().chunks_mut(chunk).enumerate() {
            let mv = mask[i];
            for o in row.iter_mut() {
                *o = *o * mv;
            }
        }
        let req = self.req(x) || self.req(m);
        Ok(self.push(out, req, Op::MulRows { x, m }))
    }

    // ------------------------------------------------------------------
    // matrix multiplication
    // ------------------------------------------------------------------

    fn matmul_dims(&self, a: Var, b: Var, transpose_b: bool) -> Result<(usize, usize, usize, usize)> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa.len() < 2 {
            return Err(Error::Shape(format!("matmul: left operand rank {} < 2", sa.len())));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let batch: usize = sa[..sa.len() - 2].iter().product();
        if sb.len() == 2 && !transpose_b {
            if sb[0] != k {
                return Err(Error::Shape(format!("matmul: inner dims {} vs {}", k, sb[0])));
            }
            return Ok((batch, m, k, sb[1]));
        }
        if sb.len() != sa.len() || sb[..sb.len() - 2] != sa[..sa.len() - 2] {
            return Err(Error::Shape(format!("matmul: batch dims {:?} vs {:?}", sa, sb)));
        }
        let (bk, n) = if transpose_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if bk != k {
            return Err(Error::Shape(format!("matmul: inner dims {} vs {}", k, bk)));
        }
        Ok((batch, m, k, n))
    }

    /// `a[.., m, k] * b[.., k, n]`. A rank-2 `b` is shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (batch, m, k, n) = self.matmul_dims(a, b, false)?;
        let shared_b = self.value(b).rank() == 2;
        let mut out_shape: Vec<usize> =
            self.value(a).shape()[..self.value(a).rank() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![S::zero(); batch * m * n];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        if shared_b {
            // One flat GEMM over all leading rows.
            kernels::gemm_nn(av, bv, &mut out, batch * m, k, n);
        } else {
            for i in 0..batch {
                kernels::gemm_nn(
                    &av[i * m * k..(i + 1) * m * k],
                    &bv[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }
        let req = self.req(a) || self.req(b);
        Ok(self.push(Tensor::new(out_shape, out)?, req, Op::Matmul { a, b }))
    }

    /// `a[.., m, k] * b[.., n, k]^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).rank() == 2 && self.value(a).rank() != 2 {
            return Err(Error::Shape("matmul_nt: rank-2 b requires rank-2 a".into()));
        }
        let (batch, m, k, n) = self.matmul_dims(a, b, true)?;
        let mut out_shape: Vec<usize> =
            self.value(a).shape()[..self.value(a).rank() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![S::zero(); batch * m * n];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        for i in 0..batch {
            kernels::gemm_nt(
                &av[i * m * k..(i + 1) * m * k],
                &bv[i * n * k..(i + 1) * n * k],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let req = self.req(a) || self.req(b);
        Ok(self.push(Tensor::new(out_shape, out)?, req, Op::MatmulNt { a, b }))
    }

    // ------------------------------------------------------------------
    // data movement
    // ------------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        let req = self.req(x);
        Ok(self.push(out, req, Op::Reshape { x }))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let rank = self.value(x).rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Shape(format!(
                "permute: axes {:?} is not a permutation of 0..{}",
                axes, rank
            )));
        }
        let out = permute_tensor(self.value(x), axes)?;
        let req = self.req(x);
        Ok(self.push(out, req, Op::Permute { x, axes: axes.to_vec() }))
    }

    // ------------------------------------------------------------------
    // convolution / pooling
    // ------------------------------------------------------------------

    /// 3x3 cross-correlation, stride 1, zero padding 1 (same-size output).
    /// `x` is `[B, C_in, H, W]` or `[C_in, H, W]`; `w` is `[C_out, C_in, 3, 3]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        let sw = self.value(w).shape().to_vec();
        let batched = match sx.len() {
            3 => false,
            4 => true,
            r => return Err(Error::Shape(format!("conv2d: input rank {} (want 3 or 4)", r))),
        };
        let (bsz, c_in, h, w_dim) = if batched {
            (sx[0], sx[1], sx[2], sx[3])
        } else {
            (1, sx[0], sx[1], sx[2])
        };
        if sw.len() != 4 || sw[1] != c_in || sw[2] != 3 || sw[3] != 3 {
            return Err(Error::Shape(format!(
                "conv2d: kernel {:?} (want [c_out, {}, 3, 3])",
                sw, c_in
            )));
        }
        let c_out = sw[0];
        if self.value(b).shape() != [c_out] {
            return Err(Error::Shape(format!(
                "conv2d: bias {:?} (want [{}])",
                self.value(b).shape(),
                c_out
            )));
        }
        let hw = h * w_dim;
        let xin = self.value(x).data();
        let wv = self.value(w).data();
        let bias = self.value(b).data().to_vec();
        let mut out = vec![S::zero(); bsz * c_out * hw];
        out.par_chunks_mut(c_out * hw).enumerate().for_each(|(i, y)| {
            let mut cols = vec![S::zero(); c_in * 9 * hw];
            kernels::im2col_3x3(&xin[i * c_in * hw..(i + 1) * c_in * hw], c_in, h, w_dim, &mut cols);
            kernels::gemm_nn_st(wv, &cols, y, c_out, c_in * 9, hw);
            for (o, row) in y.chunks_mut(hw).enumerate() {
                let bv = bias[o];
                for v in row.iter_mut() {
                    *v = *v + bv;
                }
            }
        });
        let shape: Vec<usize> =
            if batched { vec![bsz, c_out, h, w_dim] } else { vec![c_out, h, w_dim] };
        let req = self.req(x) || self.req(w) || self.req(b);
        Ok(self.push(Tensor::new(shape, out)?, req, Op::Conv2d { x, w, b }))
    }

    /// 2x2 max pooling with stride 2. Ties go to the first element in
    /// row-major order of the window.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let sx = self.value(x).shape().to_vec();
        let batched = match sx.len() {
            3 => false,
            4 => true,
            r => return Err(Error::Shape(format!("maxpool2d: input rank {} (want 3 or 4)", r))),
        };
        let (bsz, c, h, w) = if batched { (sx[0], sx[1], sx[2], sx[3]) } else { (1, sx[0], sx[1], sx[2]) };
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("maxpool2d: odd spatial dims {}x{}", h, w)));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x).data();
        let mut out = vec![S::zero(); bsz * c * oh * ow];
        let mut argmax = vec![0u32; out.len()];
        for bc in 0..bsz * c {
            let plane = &xv[bc * h * w..(bc + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (2 * oy) * w + 2 * ox;
                    let idxs = [base, base + 1, base + w, base + w + 1];
                    let mut best = idxs[0];
                    let mut bv = plane[idxs[0]];
                    for &i in &idxs[1..] {
                        if plane[i] > bv {
                            bv = plane[i];
                            best = i;
                        }
                    }
                    let o = bc * oh * ow + oy * ow + ox;
                    out[o] = bv;
                    argmax[o] = (bc * h * w + best) as u32;
                }
            }
        }
        let shape: Vec<usize> = if batched { vec![bsz, c, oh, ow] } else { vec![c, oh, ow] };
        let req = self.req(x);
        Ok(self.push(Tensor::new(shape, out)?, req, Op::MaxPool2d { x, argmax }))
    }

    // ------------------------------------------------------------------
    // activations
    // ------------------------------------------------------------------

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(S::zero()));
        let req = self.req(x);
        self.push(out, req, Op::Relu(x))
    }

    /// Exact GeLU: `x * Phi(x)` with the erf-based normal CDF.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v * normal_cdf(v));
        let req = self.req(x);
        self.push(out, req, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let one = S::one();
        let out = self.value(x).map(|v| one / (one + (-v).exp()));
        let req = self.req(x);
        self.push(out, req, Op::Sigmoid(x))
    }

    /// `ln(max(x, min))`.
    pub fn ln_clamped(&mut self, x: Var, min: S) -> Var {
        let out = self.value(x).map(|v| v.max(min).ln());
        let req = self.req(x);
        self.push(out, req, Op::LnClamped { x, min })
    }

    /// `max(x, 0)^e` for constant `e >= 0`.
    pub fn powf_const(&mut self, x: Var, e: S) -> Var {
        let out = self.value(x).map(|v| v.max(S::zero()).powf(e));
        let req = self.req(x);
        self.push(out, req, Op::PowfConst { x, e })
    }

    // ------------------------------------------------------------------
    // normalization / reductions
    // ------------------------------------------------------------------

    /// Softmax over the last axis; rows are processed independently.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let d = *self
            .value(x)
            .shape()
            .last()
            .ok_or_else(|| Error::Shape("softmax: rank-0 input".into()))?;
        if d == 0 {
            return Err(Error::Shape("softmax: empty last axis".into()));
        }
        let mut out = self.value(x).clone();
        out.data_mut().par_chunks_mut(d).with_min_len(64).for_each(|row| {
            kernels::softmax_row(row);
        });
        let req = self.req(x);
        Ok(self.push(out, req, Op::Softmax(x)))
    }

    /// Layer normalization over the last axis with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let d = *self
            .value(x)
            .shape()
            .last()
            .ok_or_else(|| Error::Shape("layer_norm: rank-0 input".into()))?;
        if self.value(gain).shape() != [d] || self.value(bias).shape() != [d] {
            return Err(Error::Shape(format!(
                "layer_norm: gain {:?} / bias {:?} do not match last axis {}",
                self.value(gain).shape(),
                self.value(bias).shape(),
                d
            )));
        }
        let g = self.value(gain).data().to_vec();
        let bvec = self.value(bias).data().to_vec();
        let mut out = self.value(x).clone();
        let denom = s::<S>(d as f64);
        out.data_mut().par_chunks_mut(d).with_min_len(64).for_each(|row| {
            let mean = row.iter().copied().sum::<S>() / denom;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / denom;
            let inv = S::one() / (var + eps).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * g[j] + bvec[j];
            }
        });
        let req = self.req(x) || self.req(gain) || self.req(bias);
        Ok(self.push(out, req, Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Sum of all elements (rank-0 output).
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().copied().sum::<S>();
        let req = self.req(x);
        self.push(Tensor::scalar(total), req, Op::Sum(x))
    }

    /// Arithmetic mean of all elements (rank-0 output).
    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1);
        let total = self.value(x).data().iter().copied().sum::<S>();
        let req = self.req(x);
        self.push(Tensor::scalar(total / s(n as f64)), req, Op::Mean(x))
    }

    /// `out[r] = x[r, idx[r]]` over the last axis.
    pub fn gather_last(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let d = *self
            .value(x)
            .shape()
            .last()
            .ok_or_else(|| Error::Shape("gather_last: rank-0 input".into()))?;
        let rows = self.value(x).len() / d.max(1);
        if idx.len() != rows {
            return Err(Error::Shape(format!(
                "gather_last: {} indices for {} rows",
                idx.len(),
                rows
            )));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= d) {
            return Err(Error::InvalidArgument(format!(
                "gather_last: index {} out of range for axis of size {}",
                bad, d
            )));
        }
        let xv = self.value(x).data();
        let data: Vec<S> = idx.iter().enumerate().map(|(r, &i)| xv[r * d + i]).collect();
        let shape = self.value(x).shape()[..self.value(x).rank() - 1].to_vec();
        let req = self.req(x);
        Ok(self.push(Tensor::new(shape, data)?, req, Op::GatherLast { x, idx: idx.to_vec() }))
    }

    // ------------------------------------------------------------------
    // fused attention core
    // ------------------------------------------------------------------

    /// `softmax(q k^T / sqrt(dh)) v` with `q,k,v: [B, h, n, dh]`.
    ///
    /// Streams over row blocks so the `[B, h, n, n]` score matrix is never
    /// materialized; backward recomputes attention weights from saved
    /// per-row softmax statistics.
    pub fn scaled_attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let sq = self.value(q).shape().to_vec();
        if sq.len() != 4 {
            return Err(Error::Shape(format!("scaled_attention: rank {} (want 4)", sq.len())));
        }
        if self.value(k).shape() != sq.as_slice() || self.value(v).shape() != sq.as_slice() {
            return Err(Error::Shape(format!(
                "scaled_attention: q {:?}, k {:?}, v {:?} must match",
                sq,
                self.value(k).shape(),
                self.value(v).shape()
            )));
        }
        let (b, h, n, dh) = (sq[0], sq[1], sq[2], sq[3]);
        let scale = s::<S>(1.0 / (dh as f64).sqrt());
        let qv = self.value(q).data();
        let kv = self.value(k).data();
        let vv = self.value(v).data();
        let mut out = vec![S::zero(); b * h * n * dh];
        let mut row_max = vec![S::zero(); b * h * n];
        let mut row_sum = vec![S::zero(); b * h * n];

        let req = self.req(q) || self.req(k) || self.req(v);
        // Keep the attention weights for backward when they fit comfortably;
        // beyond the cap, backward recomputes them from the softmax stats.
        let keep_attn = req && b * h * n * n <= ATT_SAVE_CAP;
        let mut attn_store = if keep_attn { vec![S::zero(); b * h * n * n] } else { Vec::new() };

        let pair = n * dh;
        let process = |i: usize,
                       o_pair: &mut [S],
                       max_pair: &mut [S],
                       sum_pair: &mut [S],
                       attn_pair: Option<&mut [S]>| {
            let qp = &qv[i * pair..(i + 1) * pair];
            let kp = &kv[i * pair..(i + 1) * pair];
            let vp = &vv[i * pair..(i + 1) * pair];
            let mut scratch = vec![S::zero(); ATT_BLOCK * n];
            let mut attn_pair = attn_pair;
            let mut r0 = 0;
            while r0 < n {
                let bs = ATT_BLOCK.min(n - r0);
                let sblk: &mut [S] = match attn_pair {
                    Some(ref mut a) => &mut a[r0 * n..(r0 + bs) * n],
                    None => &mut scratch[..bs * n],
                };
                kernels::gemm_nt_st(&qp[r0 * dh..(r0 + bs) * dh], kp, sblk, bs, dh, n);
                for (r, row) in sblk.chunks_mut(n).enumerate() {
                    for v in row.iter_mut() {
                        *v = *v * scale;
                    }
                    let (mx, total) = kernels::softmax_row(row);
                    max_pair[r0 + r] = mx;
                    sum_pair[r0 + r] = total;
                }
                kernels::gemm_nn_st(sblk, vp, &mut o_pair[r0 * dh..(r0 + bs) * dh], bs, n, dh);
                r0 += bs;
            }
        };

        if keep_attn {
            out.par_chunks_mut(pair)
                .zip(row_max.par_chunks_mut(n))
                .zip(row_sum.par_chunks_mut(n))
                .zip(attn_store.par_chunks_mut(n * n))
                .enumerate()
                .for_each(|(i, (((o_pair, max_pair), sum_pair), attn_pair))| {
                    process(i, o_pair, max_pair, sum_pair, Some(attn_pair));
                });
        } else {
            out.par_chunks_mut(pair)
                .zip(row_max.par_chunks_mut(n))
                .zip(row_sum.par_chunks_mut(n))
                .enumerate()
                .for_each(|(i, ((o_pair, max_pair), sum_pair))| {
                    process(i, o_pair, max_pair, sum_pair, None);
                });
        }

        Ok(self.push(
            Tensor::new(sq, out)?,
            req,
            Op::ScaledAttention {
                q,
                k,
                v,
                row_max,
                row_sum,
                saved_attn: keep_attn.then_some(attn_store),
            },
        ))
    }

    // ------------------------------------------------------------------
    // backward
    // ------------------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Gradients of all
    /// `requires_grad` leaves become available through [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(self.value(loss).shape().to_vec(), S::one()));

        for i in (0..=loss.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = self.grads[i].take() else { continue };
            self.backprop_node(i, dy)?;
        }
        Ok(())
    }

    fn accum(&mut self, v: Var, delta: Tensor<S>) {
        if !self.req(v) {
            return;
        }
        match &mut self.grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&mut self, i: usize, dy: Tensor<S>) -> Result<()> {
        // Ops are cheap to match; heavy lifting happens in the kernels.
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                if self.req(b) {
                    self.accum(b, dy.clone());
                }
                self.accum(a, dy);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.req(a) {
                    let da_data: Vec<S> = dy
                        .data()
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(&g, &bv)| g * bv)
                        .collect();
                    let da = Tensor::new(dy.shape().to_vec(), da_data)?;
                    self.accum(a, da);
                }
                if self.req(b) {
                    let db_data: Vec<S> = dy
                        .data()
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(&g, &av)| g * av)
                        .collect();
                    let db = Tensor::new(dy.shape().to_vec(), db_data)?;
                    self.accum(b, db);
                }
            }
            Op::Affine { x, scale } => {
                let (x, scale) = (*x, *scale);
                self.accum(x, dy.map(|g| g * scale));
            }
            Op::AddBias { x, b } => {
                let (x, b) = (*x, *b);
                if self.req(b) {
                    let d = self.value(b).len();
                    let mut db = Tensor::zeros(vec![d]);
                    for row in dy.data().chunks(d) {
                        for (acc, &g) in db.data_mut().iter_mut().zip(row) {
                            *acc = *acc + g;
                        }
                    }
                    self.accum(b, db);
                }
                self.accum(x, dy);
            }
            Op::MulRows { x, m } => {
                let (x, m) = (*x, *m);
                let bsz = self.value(m).len();
                let chunk = dy.len() / bsz.max(1);
                if self.req(x) {
                    let mask = self.value(m).data().to_vec();
                    let mut dx = dy.clone();
                    for (r, row) in dx.data_mut().chunks_mut(chunk).enumerate() {
                        for v in row.iter_mut() {
                            *v = *v * mask[r];
                        }
                    }
                    self.accum(x, dx);
                }
                if self.req(m) {
                    let xv = self.value(x).data();
                    let mut dm = Tensor::zeros(vec![bsz]);
                    for (r, slot) in dm.data_mut().iter_mut().enumerate() {
                        *slot = kernels::dot(
                            &dy.data()[r * chunk..(r + 1) * chunk],
                            &xv[r * chunk..(r + 1) * chunk],
                        );
                    }
                    self.accum(m, dm);
                }
            }
            Op::Matmul { a, b } => {
                let (a, b) = (*a, *b);
                let (batch, m, k, n) = self.matmul_dims(a, b, false)?;
                let shared_b = self.value(b).rank() == 2;
                if self.req(a) {
                    let mut da = Tensor::zeros(self.value(a).shape().to_vec());
                    let bv = self.value(b).data();
                    if shared_b {
                        kernels::gemm_nt(dy.data(), bv, da.data_mut(), batch * m, n, k);
                    } else {
                        for i in 0..batch {
                            kernels::gemm_nt(
                                &dy.data()[i * m * n..(i + 1) * m * n],
                                &bv[i * k * n..(i + 1) * k * n],
                                &mut da.data_mut()[i * m * k..(i + 1) * m * k],
                                m,
                                n,
                                k,
                            );
                        }
                    }
                    self.accum(a, da);
                }
                if self.req(b) {
                    let av = self.value(a).data();
                    if shared_b {
                        let mut db = Tensor::zeros(vec![k, n]);
                        kernels::gemm_tn(av, dy.data(), db.data_mut(), batch * m, k, n);
                        self.accum(b, db);
                    } else {
                        let mut db = Tensor::zeros(self.value(b).shape().to_vec());
                        for i in 0..batch {
                            kernels::gemm_tn(
                                &av[i * m * k..(i + 1) * m * k],
                                &dy.data()[i * m * n..(i + 1) * m * n],
                                &mut db.data_mut()[i * k * n..(i + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                        self.accum(b, db);
                    }
                }
            }
            Op::MatmulNt { a, b } => {
                let (a, b) = (*a, *b);
                let (batch, m, k, n) = self.matmul_dims(a, b, true)?;
                if self.req(a) {
                    // dA = dC * B
                    let mut da = Tensor::zeros(self.value(a).shape().to_vec());
                    let bv = self.value(b).data();
                    for i in 0..batch {
                        kernels::gemm_nn(
                            &dy.data()[i * m * n..(i + 1) * m * n],
                            &bv[i * n * k..(i + 1) * n * k],
                            &mut da.data_mut()[i * m * k..(i + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.accum(a, da);
                }
                if self.req(b) {
                    // dB = dC^T * A
                    let av = self.value(a).data();
                    let mut db = Tensor::zeros(self.value(b).shape().to_vec());
                    for i in 0..batch {
                        kernels::gemm_tn(
                            &dy.data()[i * m * n..(i + 1) * m * n],
                            &av[i * m * k..(i + 1) * m * k],
                            &mut db.data_mut()[i * n * k..(i + 1) * n * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.accum(b, db);
                }
            }
            Op::Permute { x, axes } => {
                let x = *x;
                let inverse = invert_axes(axes);
                let dx = permute_tensor(&dy, &inverse)?;
                self.accum(x, dx);
            }
            Op::Reshape { x } => {
                let x = *x;
                let shape = self.value(x).shape().to_vec();
                self.accum(x, dy.reshaped(shape)?);
            }
            Op::Conv2d { x, w, b } => {
                let (x, w, b) = (*x, *w, *b);
                self.backprop_conv2d(x, w, b, &dy)?;
            }
            Op::MaxPool2d { x, argmax } => {
                let x = *x;
                let mut dx = Tensor::zeros(self.value(x).shape().to_vec());
                let dxd = dx.data_mut();
                for (o, &src) in argmax.iter().enumerate() {
                    dxd[src as usize] = dxd[src as usize] + dy.data()[o];
                }
                self.accum(x, dx);
            }
            Op::Relu(x) => {
                let x = *x;
                let data: Vec<S> = dy
                    .data()
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(&g, &v)| if v > S::zero() { g } else { S::zero() })
                    .collect();
                self.accum(x, Tensor::new(dy.shape().to_vec(), data)?);
            }
            Op::Gelu(x) => {
                let x = *x;
                let data: Vec<S> = dy
                    .data()
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(&g, &v)| g * (normal_cdf(v) + v * normal_pdf(v)))
                    .collect();
                self.accum(x, Tensor::new(dy.shape().to_vec(), data)?);
            }
            Op::Sigmoid(x) => {
                let x = *x;
                let data: Vec<S> = dy
                    .data()
                    .iter()
                    .zip(self.nodes[i].value.data())
                    .map(|(&g, &y)| g * y * (S::one() - y))
                    .collect();
                self.accum(x, Tensor::new(dy.shape().to_vec(), data)?);
            }
            Op::LnClamped { x, min } => {
                let (x, min) = (*x, *min);
                let data: Vec<S> = dy
                    .data()
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(&g, &v)| if v > min { g / v } else { S::zero() })
                    .collect();
                self.accum(x, Tensor::new(dy.shape().to_vec(), data)?);
            }
            Op::PowfConst { x, e } => {
                let (x, e) = (*x, *e);
                let data: Vec<S> = dy
                    .data()
                    .iter()
                    .zip(self.value(x).data())
                    .map(|(&g, &v)| g * powf_grad(v, e))
                    .collect();
                self.accum(x, Tensor::new(dy.shape().to_vec(), data)?);
            }
            Op::Softmax(x) => {
                let x = *x;
                let d = *self.nodes[i].value.shape().last().unwrap_or(&1);
                let y = self.nodes[i].value.data();
                let mut dx = dy.clone();
                dx.data_mut()
                    .par_chunks_mut(d)
                    .zip(y.par_chunks(d))
                    .with_min_len(64)
                    .for_each(|(g_row, y_row)| {
                        let dot = g_row
                            .iter()
                            .zip(y_row.iter())
                            .map(|(&g, &yv)| g * yv)
                            .sum::<S>();
                        for (g, &yv) in g_row.iter_mut().zip(y_row.iter()) {
                            *g = (*g - dot) * yv;
                        }
                    });
                self.accum(x, dx);
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (x, gain, bias, eps) = (*x, *gain, *bias, *eps);
                self.backprop_layer_norm(x, gain, bias, eps, &dy)?;
            }
            Op::Sum(x) => {
                let x = *x;
                let g = dy.item()?;
                self.accum(x, Tensor::full(self.value(x).shape().to_vec(), g));
            }
            Op::Mean(x) => {
                let x = *x;
                let g = dy.item()? / s(self.value(x).len().max(1) as f64);
                self.accum(x, Tensor::full(self.value(x).shape().to_vec(), g));
            }
            Op::GatherLast { x, idx } => {
                let x = *x;
                let d = *self.value(x).shape().last().unwrap_or(&1);
                let mut dx = Tensor::zeros(self.value(x).shape().to_vec());
                for (r, &col) in idx.clone().iter().enumerate() {
                    dx.data_mut()[r * d + col] = dy.data()[r];
                }
                self.accum(x, dx);
            }
            Op::ScaledAttention { q, k, v, .. } => {
                let (q, k, v) = (*q, *k, *v);
                self.backprop_scaled_attention(i, q, k, v, &dy)?;
            }
        }
        Ok(())
    }

    fn backprop_conv2d(&mut self, x: Var, w: Var, b: Var, dy: &Tensor<S>) -> Result<()> {
        let (want_x, want_w, want_b) = (self.req(x), self.req(w), self.req(b));
        let (db, dw, dx) = {
            let sx = self.value(x).shape();
            let batched = sx.len() == 4;
            let (bsz, c_in, h, wd) =
                if batched { (sx[0], sx[1], sx[2], sx[3]) } else { (1, sx[0], sx[1], sx[2]) };
            let c_out = self.value(w).shape()[0];
            let hw = h * wd;
            let xin = self.value(x).data();
            let wv = self.value(w).data();

            let db = want_b.then(|| {
                let mut db = Tensor::zeros(vec![c_out]);
                for sample in dy.data().chunks(c_out * hw) {
                    for (o, slot) in db.data_mut().iter_mut().enumerate() {
                        let plane = &sample[o * hw..(o + 1) * hw];
                        *slot = *slot + plane.iter().copied().sum::<S>();
                    }
                }
                db
            });

            let dw = want_w.then(|| {
                // Per-sample contributions computed in parallel, reduced in
                // sample order so the sum is deterministic.
                let partials: Vec<Vec<S>> = (0..bsz)
                    .into_par_iter()
                    .map(|i| {
                        let mut cols = vec![S::zero(); c_in * 9 * hw];
                        kernels::im2col_3x3(
                            &xin[i * c_in * hw..(i + 1) * c_in * hw],
                            c_in,
                            h,
                            wd,
                            &mut cols,
                        );
                        let mut dwp = vec![S::zero(); c_out * c_in * 9];
                        kernels::gemm_nt_st(
                            &dy.data()[i * c_out * hw..(i + 1) * c_out * hw],
                            &cols,
                            &mut dwp,
                            c_out,
                            hw,
                            c_in * 9,
                        );
                        dwp
                    })
                    .collect();
                let mut dw = Tensor::zeros(self.value(w).shape().to_vec());
                for part in &partials {
                    for (acc, &p) in dw.data_mut().iter_mut().zip(part) {
                        *acc = *acc + p;
                    }
                }
                dw
            });

            let dx = want_x.then(|| {
                let mut dx = Tensor::zeros(self.value(x).shape().to_vec());
                dx.data_mut()
                    .par_chunks_mut(c_in * hw)
                    .enumerate()
                    .for_each(|(i, dx_s)| {
                        let mut dcols = vec![S::zero(); c_in * 9 * hw];
                        kernels::gemm_tn_st(
                            wv,
                            &dy.data()[i * c_out * hw..(i + 1) * c_out * hw],
                            &mut dcols,
                            c_out,
                            c_in * 9,
                            hw,
                        );
                        kernels::col2im_3x3(&dcols, c_in, h, wd, dx_s);
                    });
                dx
            });
            (db, dw, dx)
        };
        if let Some(db) = db {
            self.accum(b, db);
        }
        if let Some(dw) = dw {
            self.accum(w, dw);
        }
        if let Some(dx) = dx {
            self.accum(x, dx);
        }
        Ok(())
    }

    fn backprop_layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        eps: S,
        dy: &Tensor<S>,
    ) -> Result<()> {
        let (want_x, want_gain, want_bias) = (self.req(x), self.req(gain), self.req(bias));
        let (dgain, dbias, dx) = {
            let d = *self.value(x).shape().last().unwrap_or(&1);
            let xv = self.value(x).data();
            let g = self.value(gain).data();
            let denom = s::<S>(d as f64);

            let (dgain, dbias) = if want_gain || want_bias {
                let mut dgain = Tensor::zeros(vec![d]);
                let mut dbias = Tensor::zeros(vec![d]);
                for (row, dy_row) in xv.chunks(d).zip(dy.data().chunks(d)) {
                    let mean = row.iter().copied().sum::<S>() / denom;
                    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / denom;
                    let inv = S::one() / (var + eps).sqrt();
                    for j in 0..d {
                        let xh = (row[j] - mean) * inv;
                        dgain.data_mut()[j] = dgain.data_mut()[j] + dy_row[j] * xh;
                        dbias.data_mut()[j] = dbias.data_mut()[j] + dy_row[j];
                    }
                }
                (want_gain.then_some(dgain), want_bias.then_some(dbias))
            } else {
                (None, None)
            };

            let dx = want_x.then(|| {
                let mut dx = dy.clone();
                dx.data_mut()
                    .par_chunks_mut(d)
                    .zip(xv.par_chunks(d))
                    .with_min_len(64)
                    .for_each(|(dy_row, row)| {
                        let mean = row.iter().copied().sum::<S>() / denom;
                        let var =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / denom;
                        let inv = S::one() / (var + eps).sqrt();
                        let mut m1 = S::zero();
                        let mut m2 = S::zero();
                        for j in 0..d {
                            let gd = g[j] * dy_row[j];
                            let xh = (row[j] - mean) * inv;
                            m1 = m1 + gd;
                            m2 = m2 + gd * xh;
                        }
                        m1 = m1 / denom;
                        m2 = m2 / denom;
                        for j in 0..d {
                            let gd = g[j] * dy_row[j];
                            let xh = (row[j] - mean) * inv;
                            dy_row[j] = (gd - m1 - xh * m2) * inv;
                        }
                    });
                dx
            });
            (dgain, dbias, dx)
        };
        if let Some(dgain) = dgain {
            self.accum(gain, dgain);
        }
        if let Some(dbias) = dbias {
            self.accum(bias, dbias);
        }
        if let Some(dx) = dx {
            self.accum(x, dx);
        }
        Ok(())
    }

    fn backprop_scaled_attention(
        &mut self,
        node: usize,
        q: Var,
        k: Var,
        v: Var,
        dy: &Tensor<S>,
    ) -> Result<()> {
        let sq = self.value(q).shape().to_vec();
        let (b, h, n, dh) = (sq[0], sq[1], sq[2], sq[3]);
        let scale = s::<S>(1.0 / (dh as f64).sqrt());
        let (row_max, row_sum, saved_attn) = match &self.nodes[node].op {
            Op::ScaledAttention { row_max, row_sum, saved_attn, .. } => {
                (row_max.clone(), row_sum.clone(), saved_attn.clone())
            }
            _ => unreachable!(),
        };
        let qv = self.value(q).data();
        let kv = self.value(k).data();
        let vv = self.value(v).data();
        let pair = n * dh;

        let mut dq = vec![S::zero(); b * h * pair];
        let mut dk = vec![S::zero(); b * h * pair];
        let mut dv = vec![S::zero(); b * h * pair];

        dq.par_chunks_mut(pair)
            .zip(dk.par_chunks_mut(pair))
            .zip(dv.par_chunks_mut(pair))
            .enumerate()
            .for_each(|(i, ((dq_p, dk_p), dv_p))| {
                let qp = &qv[i * pair..(i + 1) * pair];
                let kp = &kv[i * pair..(i + 1) * pair];
                let vp = &vv[i * pair..(i + 1) * pair];
                let do_p = &dy.data()[i * pair..(i + 1) * pair];
                let maxes = &row_max[i * n..(i + 1) * n];
                let sums = &row_sum[i * n..(i + 1) * n];
                let attn_pair = saved_attn.as_ref().map(|a| &a[i * n * n..(i + 1) * n * n]);

                let mut a_blk = vec![S::zero(); ATT_BLOCK * n];
                let mut da_blk = vec![S::zero(); ATT_BLOCK * n];
                let mut tmp = vec![S::zero(); pair];
                let mut r0 = 0;
                while r0 < n {
                    let bs = ATT_BLOCK.min(n - r0);
                    let a: &[S] = match attn_pair {
                        Some(stored) => &stored[r0 * n..(r0 + bs) * n],
                        None => {
                            // Recompute the attention weights for this block
                            // from the saved softmax statistics; the values
                            // are bit-identical to the forward pass.
                            let a = &mut a_blk[..bs * n];
                            kernels::gemm_nt_st(&qp[r0 * dh..(r0 + bs) * dh], kp, a, bs, dh, n);
                            for (r, row) in a.chunks_mut(n).enumerate() {
                                let mx = maxes[r0 + r];
                                let inv = S::one() / sums[r0 + r];
                                for val in row.iter_mut() {
                                    *val = (*val * scale - mx).exp_fast() * inv;
                                }
                            }
                            a
                        }
                    };
                    let da = &mut da_blk[..bs * n];
                    kernels::gemm_nt_st(&do_p[r0 * dh..(r0 + bs) * dh], vp, da, bs, dh, n);
                    // dV += A^T dO for this block.
                    kernels::gemm_tn_st(a, &do_p[r0 * dh..(r0 + bs) * dh], &mut tmp, bs, n, dh);
                    for (acc, &t) in dv_p.iter_mut().zip(tmp.iter()) {
                        *acc = *acc + t;
                    }
                    // dS = (dA - rowdot(dA, A)) * A * scale, reusing da.
                    for (da_row, a_row) in da.chunks_mut(n).zip(a.chunks(n)) {
                        let dot = kernels::dot(da_row, a_row);
                        for (dv_, &av) in da_row.iter_mut().zip(a_row.iter()) {
                            *dv_ = (*dv_ - dot) * av * scale;
                        }
                    }
                    // dQ for this block; dK += dS^T Q_block.
                    kernels::gemm_nn_st(da, kp, &mut dq_p[r0 * dh..(r0 + bs) * dh], bs, n, dh);
                    kernels::gemm_tn_st(da, &qp[r0 * dh..(r0 + bs) * dh], &mut tmp, bs, n, dh);
                    for (acc, &t) in dk_p.iter_mut().zip(tmp.iter()) {
                        *acc = *acc + t;
                    }
                    r0 += bs;
                }
            });

        if self.req(q) {
            self.accum(q, Tensor::new(sq.clone(), dq)?);
        }
        if self.req(k) {
            self.accum(k, Tensor::new(sq.clone(), dk)?);
        }
        if self.req(v) {
            self.accum(v, Tensor::new(sq, dv)?);
        }
        Ok(())
    }
}

/// Row block size for the streamed attention kernels.
const ATT_BLOCK: usize = 64;

/// Largest attention-weight tensor (elements) kept for backward; roughly
/// 256 MB of f32. Larger graphs recompute weights block-by-block instead.
const ATT_SAVE_CAP: usize = 64 * 1024 * 1024;

#[inline]
fn normal_cdf<S: Scalar>(x: S) -> S {
    let half = s::<S>(0.5);
    let inv_sqrt2 = s::<S>(std::f64::consts::FRAC_1_SQRT_2);
    half * (S::one() + (x * inv_sqrt2).erf())
}

#[inline]
fn normal_pdf<S: Scalar>(x: S) -> S {
    let inv_sqrt_2pi = s::<S>(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    (-(x * x) * s::<S>(0.5)).exp() * inv_sqrt_2pi
}

#[inline]
fn powf_grad<S: Scalar>(x: S, e: S) -> S {
    if x > S::zero() {
        e * x.powf(e - S::one())
    } else if e == S::one() {
        S::one()
    } else {
        S::zero()
    }
}

fn invert_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Materialize a permuted copy. When the innermost output axis is contiguous
/// in the input the copy proceeds in chunks.
fn permute_tensor<S: Scalar>(x: &Tensor<S>, axes: &[usize]) -> Result<Tensor<S>> {
    let rank = x.rank();
    let in_shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    if rank == 0 {
        return Tensor::new(out_shape, x.data().to_vec());
    }
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank - 1).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let strides_for_out: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();

    let mut out = vec![S::zero(); x.len()];
    let inner = out_shape[rank - 1];
    let inner_stride = strides_for_out[rank - 1];
    let outer_dims = &out_shape[..rank - 1];
    let outer_count: usize = outer_dims.iter().product();
    let xd = x.data();

    let mut idx = vec![0usize; rank.saturating_sub(1)];
    for outer in 0..outer_count {
        let mut base = 0usize;
        for (d, &i) in idx.iter().enumerate() {
            base += i * strides_for_out[d];
        }
        let dst = &mut out[outer * inner..(outer + 1) * inner];
        if inner_stride == 1 {
            dst.copy_from_slice(&xd[base..base + inner]);
        } else {
            for (j, slot) in dst.iter_mut().enumerate() {
                *slot = xd[base + j * inner_stride];
            }
        }
        // Odometer increment over the outer dims.
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < outer_dims[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out)
}
