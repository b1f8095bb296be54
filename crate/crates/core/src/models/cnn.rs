//! Convolutional baseline: two conv layers, max pooling, dropout, and two
//! dense layers.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{var_of, ForwardVars, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::nn;
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CnnConfig {
    pub conv_channels: (usize, usize),
    /// Width of the first dense layer.
    pub dense_dim: usize,
    pub dropout_conv: f64,
    pub dropout_dense: f64,
    pub num_classes: usize,
    pub input_size: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        CnnConfig {
            conv_channels: (16, 32),
            dense_dim: 128,
            dropout_conv: 0.25,
            dropout_dense: 0.5,
            num_classes: 8,
            input_size: 128,
        }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.input_size < 8 || self.input_size % 4 != 0 {
            return Err(Error::Config(format!(
                "input_size {} must be a multiple of 4 and >= 8",
                self.input_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_conv) || !(0.0..1.0).contains(&self.dropout_dense) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn flat_dim(&self) -> usize {
        let side = self.input_size / 4;
        self.conv_channels.1 * side * side
    }
}

pub(super) fn init_params<S: Scalar>(cfg: &CnnConfig, rng: &mut ChaCha8Rng) -> ParamSet<S> {
    let (c1, c2) = cfg.conv_channels;
    let mut ps = ParamSet::new();
    let he1 = (2.0 / 9.0f64).sqrt();
    let he2 = (2.0 / (c1 * 9) as f64).sqrt();
    ps.push("conv1.w", Tensor::randn(vec![c1, 1, 3, 3], he1, rng));
    ps.push("conv1.b", Tensor::zeros(vec![c1]));
    ps.push("conv2.w", Tensor::randn(vec![c2, c1, 3, 3], he2, rng));
    ps.push("conv2.b", Tensor::zeros(vec![c2]));
    let flat = cfg.flat_dim();
    let he_fc = (2.0 / flat as f64).sqrt();
    ps.push("fc1.w", Tensor::randn(vec![flat, cfg.dense_dim], he_fc, rng));
    ps.push("fc1.b", Tensor::zeros(vec![cfg.dense_dim]));
    let xavier = (1.0 / cfg.dense_dim as f64).sqrt();
    ps.push("head.w", Tensor::randn(vec![cfg.dense_dim, cfg.num_classes], xavier, rng));
    ps.push("head.b", Tensor::zeros(vec![cfg.num_classes]));
    ps
}

pub(super) fn forward<S: Scalar>(
    g: &mut Graph<S>,
    cfg: &CnnConfig,
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
            "cnn: input {:?} (want [B, 1, {}, {}])",
            shape, cfg.input_size, cfg.input_size
        )));
    }
    let b = shape[0];
    let v = |name: &str| var_of(ps, vars, name);

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
    let h = nn::dropout(g, h, cfg.dropout_conv, training, rng)?;
    let h = g.reshape(h, vec![b, cfg.flat_dim()])?;
    let w1 = v("fc1.w")?;
    let b1 = v("fc1.b")?;
    let h = nn::dense(g, h, w1, b1)?;
    let latent = g.relu(h);
    let h = nn::dropout(g, latent, cfg.dropout_dense, training, rng)?;
    let hw = v("head.w")?;
    let hb = v("head.b")?;
    let logits = nn::dense(g, h, hw, hb)?;
    Ok(ForwardVars { logits, latent })
}
