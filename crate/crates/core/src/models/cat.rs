//! Compact attribution transformer.
//!
//! A two-stage convolutional tokenizer (conv3x3 -> ReLU -> maxpool2x2, twice)
//! turns the spectrogram into a grid of embedded tokens; a learnable
//! positional embedding is added; pre-norm transformer blocks with two-head
//! attention, GeLU MLPs, and stochastic depth refine the tokens; sequence
//! pooling produces the latent vector fed to the classification head.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{var_of, ForwardVars, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::nn::{self, AttentionParams};
use crate::tensor::{s, Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CatConfig {
    /// Channels of the two tokenizer convolutions; the second equals the
    /// token embedding width.
    pub conv_channels: (usize, usize),
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    /// Hidden width of each block MLP as a multiple of `embed_dim`.
    pub mlp_ratio: f64,
    pub drop_path_rate: f64,
    pub dropout: f64,
    pub num_classes: usize,
    /// Side length of the square input; two 2x2 pools give
    /// `(input_size/4)^2` tokens.
    pub input_size: usize,
}

impl Default for CatConfig {
    fn default() -> Self {
        CatConfig {
            conv_channels: (64, 128),
            embed_dim: 128,
            num_layers: 2,
            num_heads: 2,
            mlp_ratio: 2.0,
            drop_path_rate: 0.1,
            dropout: 0.1,
            num_classes: 8,
            input_size: 128,
        }
    }
}

impl CatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if self.num_layers < 1 {
            return Err(Error::Config("num_layers must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.conv_channels.1 != self.embed_dim {
            return Err(Error::Config(format!(
                "second conv channel count {} must equal embed_dim {}",
                self.conv_channels.1, self.embed_dim
            )));
        }
        if self.input_size < 8 || self.input_size % 4 != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be a multiple of 4 and >= 8",
                self.input_size
            )));
        }
        if !(0.0..1.0).contains(&self.drop_path_rate) || !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("drop rates must lie in [0, 1)".into()));
        }
        if self.mlp_ratio <= 0.0 {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn tokens(&self) -> usize {
        let side = self.input_size / 4;
        side * side
    }

    pub fn mlp_hidden(&self) -> usize {
        ((self.embed_dim as f64 * self.mlp_ratio).round() as usize).max(1)
    }
}

pub(super) fn init_params<S: Scalar>(cfg: &CatConfig, rng: &mut ChaCha8Rng) -> ParamSet<S> {
    let (c1, c2) = cfg.conv_channels;
    let d = cfg.embed_dim;
    let hidden = cfg.mlp_hidden();
    let mut ps = ParamSet::new();

    // He-normal for the ReLU convolutions, Xavier for dense layers, small
    // normal for the positional embedding and pool vector.
    let he1 = (2.0 / 9.0f64).sqrt();
    let he2 = (2.0 / (c1 * 9) as f64).sqrt();
    let xavier = |fan_in: usize, fan_out: usize| (2.0 / (fan_in + fan_out) as f64).sqrt();
    ps.push("conv1.w", Tensor::randn(vec![c1, 1, 3, 3], he1, rng));
    ps.push("conv1.b", Tensor::zeros(vec![c1]));
    ps.push("conv2.w", Tensor::randn(vec![c2, c1, 3, 3], he2, rng));
    ps.push("conv2.b", Tensor::zeros(vec![c2]));
    ps.push("pos", Tensor::randn(vec![cfg.tokens(), d], 0.3, rng));

    for l in 0..cfg.num_layers {
        let p = |name: &str| format!("layer{l}.{name}");
        ps.push(p("ln1.g"), Tensor::full(vec![d], S::one()));
        ps.push(p("ln1.b"), Tensor::zeros(vec![d]));
        for w in ["wq", "wk", "wv", "wo"] {
            ps.push(p(&format!("attn.{w}")), Tensor::randn(vec![d, d], xavier(d, d), rng));
        }
        for b in ["bq", "bk", "bv", "bo"] {
            ps.push(p(&format!("attn.{b}")), Tensor::zeros(vec![d]));
        }
        ps.push(p("ln2.g"), Tensor::full(vec![d], S::one()));
        ps.push(p("ln2.b"), Tensor::zeros(vec![d]));
        ps.push(p("mlp.w1"), Tensor::randn(vec![d, hidden], xavier(d, hidden), rng));
        ps.push(p("mlp.b1"), Tensor::zeros(vec![hidden]));
        ps.push(p("mlp.w2"), Tensor::randn(vec![hidden, d], xavier(hidden, d), rng));
        ps.push(p("mlp.b2"), Tensor::zeros(vec![d]));
    }

    ps.push("final_ln.g", Tensor::full(vec![d], S::one()));
    ps.push("final_ln.b", Tensor::zeros(vec![d]));
    ps.push("pool.u", Tensor::randn(vec![d, 1], 0.02, rng));
    ps.push("head.w", Tensor::randn(vec![d, cfg.num_classes], xavier(d, cfg.num_classes), rng));
    ps.push("head.b", Tensor::zeros(vec![cfg.num_classes]));
    ps
}

pub(super) fn forward<S: Scalar>(
    g: &mut Graph<S>,
    cfg: &CatConfig,
    ps: &ParamSet<S>,
    vars: &[Var],
    x: Var,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ForwardVars> {
    cfg.validate()?;
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 4 || shape[1] != 1 || shape[2] != cfg.input_size || shape[3] != cfg.input_size
    {
        return Err(Error::Shape(format!(
            "cat: input {:?} (want [B, 1, {}, {}])",
            shape, cfg.input_size, cfg.input_size
        )));
    }
    let b = shape[0];
    let d = cfg.embed_dim;
    let n = cfg.tokens();
    let v = |name: &str| var_of(ps, vars, name);

    // tokenizer
    let c1w = v("conv1.w")?;
    let c1b = v("conv1.b")?;
    let h = g.conv2d(x, c1w, c1b)?;
    let h = g.relu(h);
    let h = g.maxpool2d(h)?;
    let c2w = v("conv2.w")?;
    let c2b = v("conv2.b")?;
    let h = g.conv2d(h, c2w, c2b)?;
    let h = g.relu(h);
    let h = g.maxpool2d(h)?;

    // [B, d, s, s] -> [B, n, d] token sequence
    let h = g.reshape(h, vec![b, d, n])?;
    let mut tokens = g.permute(h, &[0, 2, 1])?;

    // learnable positional embedding, broadcast over the batch
    let pos = v("pos")?;
    let pos_flat = g.reshape(pos, vec![n * d])?;
    let flat = g.reshape(tokens, vec![b, n * d])?;
    let flat = g.add_bias(flat, pos_flat)?;
    tokens = g.reshape(flat, vec![b, n, d])?;

    for l in 0..cfg.num_layers {
        let p = |name: &str| format!("layer{l}.{name}");
        let ln1g = v(&p("ln1.g"))?;
        let ln1b = v(&p("ln1.b"))?;
        let normed = g.layer_norm(tokens, ln1g, ln1b, s(1e-5))?;
        let attn = AttentionParams {
            wq: v(&p("attn.wq"))?,
            bq: v(&p("attn.bq"))?,
            wk: v(&p("attn.wk"))?,
            bk: v(&p("attn.bk"))?,
            wv: v(&p("attn.wv"))?,
            bv: v(&p("attn.bv"))?,
            wo: v(&p("attn.wo"))?,
            bo: v(&p("attn.bo"))?,
        };
        let a = nn::multi_head_attention(g, normed, &attn, cfg.num_heads)?;
        let a = nn::dropout(g, a, cfg.dropout, training, rng)?;
        let a = nn::drop_path(g, a, cfg.drop_path_rate, training, rng)?;
        tokens = g.add(tokens, a)?;

        let ln2g = v(&p("ln2.g"))?;
        let ln2b = v(&p("ln2.b"))?;
        let normed = g.layer_norm(tokens, ln2g, ln2b, s(1e-5))?;
        let w1 = v(&p("mlp.w1"))?;
        let b1 = v(&p("mlp.b1"))?;
        let m = nn::dense(g, normed, w1, b1)?;
        let m = g.gelu(m);
        let w2 = v(&p("mlp.w2"))?;
        let b2 = v(&p("mlp.b2"))?;
        let m = nn::dense(g, m, w2, b2)?;
        let m = nn::dropout(g, m, cfg.dropout, training, rng)?;
        let m = nn::drop_path(g, m, cfg.drop_path_rate, training, rng)?;
        tokens = g.add(tokens, m)?;
    }

    let fg = v("final_ln.g")?;
    let fb = v("final_ln.b")?;
    let tokens = g.layer_norm(tokens, fg, fb, s(1e-5))?;
    let u = v("pool.u")?;
    let latent = nn::sequence_pool(g, tokens, u)?;
    let hw = v("head.w")?;
    let hb = v("head.b")?;
    let logits = nn::dense(g, latent, hw, hb)?;
    Ok(ForwardVars { logits, latent })
}
