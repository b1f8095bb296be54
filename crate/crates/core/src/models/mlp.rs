//! Multi-layer perceptron baseline over flattened spectrograms: two hidden
//! layers with logistic-sigmoid activations.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{var_of, ForwardVars, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::nn;
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub input_size: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { hidden_dim: 1500, num_classes: 8, input_size: 128 }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.hidden_dim == 0 || self.input_size == 0 {
            return Err(Error::Config("hidden_dim and input_size must be positive".into()));
        }
        Ok(())
    }

    fn input_dim(&self) -> usize {
        self.input_size * self.input_size
    }
}

pub(super) fn init_params<S: Scalar>(cfg: &MlpConfig, rng: &mut ChaCha8Rng) -> ParamSet<S> {
    let mut ps = ParamSet::new();
    let d_in = cfg.input_dim();
    let h = cfg.hidden_dim;
    let x1 = (1.0 / d_in as f64).sqrt();
    let x2 = (1.0 / h as f64).sqrt();
    ps.push("fc1.w", Tensor::randn(vec![d_in, h], x1, rng));
    ps.push("fc1.b", Tensor::zeros(vec![h]));
    ps.push("fc2.w", Tensor::randn(vec![h, h], x2, rng));
    ps.push("fc2.b", Tensor::zeros(vec![h]));
    ps.push("head.w", Tensor::randn(vec![h, cfg.num_classes], x2, rng));
    ps.push("head.b", Tensor::zeros(vec![cfg.num_classes]));
    ps
}

pub(super) fn forward<S: Scalar>(
    g: &mut Graph<S>,
    cfg: &MlpConfig,
    ps: &ParamSet<S>,
    vars: &[Var],
    x: Var,
) -> Result<ForwardVars> {
    cfg.validate()?;
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 2 || shape[1] != cfg.input_dim() {
        return Err(Error::Shape(format!(
            "mlp: input {:?} (want [B, {}])",
            shape,
            cfg.input_dim()
        )));
    }
    let v = |name: &str| var_of(ps, vars, name);
    let w1 = v("fc1.w")?;
    let b1 = v("fc1.b")?;
    let h = nn::dense(g, x, w1, b1)?;
    let h = g.sigmoid(h);
    let w2 = v("fc2.w")?;
    let b2 = v("fc2.b")?;
    let h = nn::dense(g, h, w2, b2)?;
    let latent = g.sigmoid(h);
    let hw = v("head.w")?;
    let hb = v("head.b")?;
    let logits = nn::dense(g, latent, hw, hb)?;
    Ok(ForwardVars { logits, latent })
}
