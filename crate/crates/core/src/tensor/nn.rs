//! Neural-network building blocks composed from graph primitives.

use rand::Rng;

use super::array::Tensor;
use super::graph::{Graph, Var};
use super::scalar::{s, Scalar};
use crate::error::{Error, Result};

/// `x W + b` over the last axis.
pub fn dense<S: Scalar>(g: &mut Graph<S>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// Parameter handles for one multi-head attention block.
#[derive(Clone, Copy)]
pub struct AttentionParams {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Multi-head self-attention over `x: [B, n, d]` (or `[n, d]`).
///
/// Per head: `softmax(Q K^T / sqrt(d/heads)) V`; heads are concatenated and
/// output-projected. Contains no positional term, so it is equivariant under
/// token permutation.
pub fn multi_head_attention<S: Scalar>(
    g: &mut Graph<S>,
    x: Var,
    p: &AttentionParams,
    heads: usize,
) -> Result<Var> {
    let rank = g.value(x).rank();
    let x3 = match rank {
        2 => {
            let shape = g.value(x).shape().to_vec();
            g.reshape(x, vec![1, shape[0], shape[1]])?
        }
        3 => x,
        r => return Err(Error::Shape(format!("attention: input rank {} (want 2 or 3)", r))),
    };
    let shape = g.value(x3).shape().to_vec();
    let (b, n, d) = (shape[0], shape[1], shape[2]);
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!(
            "attention: embed dim {} not divisible by {} heads",
            d, heads
        )));
    }
    let dh = d / heads;

    let split = |g: &mut Graph<S>, t: Var| -> Result<Var> {
        let r = g.reshape(t, vec![b, n, heads, dh])?;
        g.permute(r, &[0, 2, 1, 3])
    };

    let q = dense(g, x3, p.wq, p.bq)?;
    let k = dense(g, x3, p.wk, p.bk)?;
    let v = dense(g, x3, p.wv, p.bv)?;
    let qh = split(g, q)?;
    let kh = split(g, k)?;
    let vh = split(g, v)?;

    let att = g.scaled_attention(qh, kh, vh)?;
    let merged = g.permute(att, &[0, 2, 1, 3])?;
    let merged = g.reshape(merged, vec![b, n, d])?;
    let out = dense(g, merged, p.wo, p.bo)?;
    if rank == 2 {
        g.reshape(out, vec![n, d])
    } else {
        Ok(out)
    }
}

/// Attention-weighted token average: `a = softmax(X u)`, `out = a^T X`.
/// `x: [B, n, d]` (or `[n, d]`), `u: [d, 1]`; output `[B, d]` (or `[d]`).
pub fn sequence_pool<S: Scalar>(g: &mut Graph<S>, x: Var, u: Var) -> Result<Var> {
    let rank = g.value(x).rank();
    let x3 = match rank {
        2 => {
            let shape = g.value(x).shape().to_vec();
            g.reshape(x, vec![1, shape[0], shape[1]])?
        }
        3 => x,
        r => return Err(Error::Shape(format!("sequence_pool: input rank {} (want 2 or 3)", r))),
    };
    let shape = g.value(x3).shape().to_vec();
    let (b, n, d) = (shape[0], shape[1], shape[2]);
    if g.value(u).shape() != [d, 1] {
        return Err(Error::Shape(format!(
            "sequence_pool: u {:?} (want [{}, 1])",
            g.value(u).shape(),
            d
        )));
    }
    let scores = g.matmul(x3, u)?;
    let scores = g.reshape(scores, vec![b, n])?;
    let attn = g.softmax(scores)?;
    let attn = g.reshape(attn, vec![b, 1, n])?;
    let pooled = g.matmul(attn, x3)?;
    if rank == 2 {
        g.reshape(pooled, vec![d])
    } else {
        g.reshape(pooled, vec![b, d])
    }
}

/// Stochastic depth on a residual branch.
///
/// Inference (or `rate == 0`) is the identity. In training each sample's
/// branch is zeroed with probability `rate`, surviving branches scaled by
/// `1/(1-rate)` so the expectation is unchanged.
pub fn drop_path<S: Scalar>(
    g: &mut Graph<S>,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("drop_path rate {} outside [0, 1)", rate)));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let b = *g
        .value(x)
        .shape()
        .first()
        .ok_or_else(|| Error::Shape("drop_path: rank-0 input".into()))?;
    let keep = s::<S>(1.0 / (1.0 - rate));
    let mask: Vec<S> = (0..b)
        .map(|_| if rng.random::<f64>() < rate { S::zero() } else { keep })
        .collect();
    let m = g.input(Tensor::vector(&mask));
    g.mul_rows(x, m)
}

/// Elementwise dropout with inverse scaling; identity at inference.
pub fn dropout<S: Scalar>(
    g: &mut Graph<S>,
    x: Var,
    rate: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {} outside [0, 1)", rate)));
    }
    if !training || rate == 0.0 {
        return Ok(x);
    }
    let keep = s::<S>(1.0 / (1.0 - rate));
    let shape = g.value(x).shape().to_vec();
    let n = g.value(x).len();
    let mask: Vec<S> = (0..n)
        .map(|_| if rng.random::<f64>() < rate { S::zero() } else { keep })
        .collect();
    let m = g.input(Tensor::new(shape, mask)?);
    g.mul(x, m)
}
