//! Classifier architectures: the compact attribution transformer (CAT) and
//! the two deep baselines (CNN, MLP).
//!
//! Every model maps a normalized 128x128 spectrogram to logits, softmax
//! probabilities, and a pre-head latent vector (the input of the final dense
//! layer), which is what the tSNE analysis embeds.

mod cat;
mod checkpoint;
mod cnn;
mod mlp;

pub use cat::CatConfig;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use cnn::CnnConfig;
pub use mlp::MlpConfig;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::eval::ProbabilitySet;
use crate::tensor::{Graph, Scalar, Tensor, Var};

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<S>) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensor(&self, i: usize) -> &Tensor<S> {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<S> {
        &mut self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<S>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
        }
    }

    /// Register every tensor as a trainable graph leaf (training).
    pub fn bind(&self, g: &mut Graph<S>) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Register every tensor as a constant (inference).
    pub fn bind_frozen(&self, g: &mut Graph<S>) -> Vec<Var> {
        self.tensors.iter().map(|t| g.input(t.clone())).collect()
    }
}

impl<S: Scalar> Default for ParamSet<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Look up a bound parameter by name.
pub(crate) fn var_of<S: Scalar>(ps: &ParamSet<S>, vars: &[Var], name: &str) -> Result<Var> {
    ps.index_of(name)
        .map(|i| vars[i])
        .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
}

/// Logit and latent handles of a forward pass still on the tape.
pub struct ForwardVars {
    pub logits: Var,
    pub latent: Var,
}

/// Classifier output for one signal.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub logits: Vec<f32>,
    pub probabilities: ProbabilitySet,
    /// Sequence-pool output (CAT) or last hidden activation (CNN/MLP),
    /// taken directly before the final dense layer.
    pub latent: Vec<f32>,
}

/// Architecture selector with its configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "name", content = "config", rename_all = "lowercase")]
pub enum Arch {
    Cat(CatConfig),
    Cnn(CnnConfig),
    Mlp(MlpConfig),
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        match self {
            Arch::Cat(c) => c.validate(),
            Arch::Cnn(c) => c.validate(),
            Arch::Mlp(c) => c.validate(),
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Arch::Cat(c) => c.num_classes,
            Arch::Cnn(c) => c.num_classes,
            Arch::Mlp(c) => c.num_classes,
        }
    }

    pub fn arch_name(&self) -> &'static str {
        match self {
            Arch::Cat(_) => "cat",
            Arch::Cnn(_) => "cnn",
            Arch::Mlp(_) => "mlp",
        }
    }

    /// Side length of the expected square spectrogram input.
    pub fn input_size(&self) -> usize {
        match self {
            Arch::Cat(c) => c.input_size,
            Arch::Cnn(c) => c.input_size,
            Arch::Mlp(c) => c.input_size,
        }
    }

    pub fn init_params<S: Scalar>(&self, rng: &mut ChaCha8Rng) -> Result<ParamSet<S>> {
        self.validate()?;
        Ok(match self {
            Arch::Cat(c) => cat::init_params(c, rng),
            Arch::Cnn(c) => cnn::init_params(c, rng),
            Arch::Mlp(c) => mlp::init_params(c, rng),
        })
    }

    /// Exact count of trainable scalars for this configuration.
    pub fn param_count(&self) -> Result<usize> {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.init_params::<f32>(&mut rng)?.num_scalars())
    }

    /// Build the forward computation on the tape. `x` is `[B, 1, S, S]` for
    /// CAT/CNN and `[B, S*S]` for MLP.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        ps: &ParamSet<S>,
        vars: &[Var],
        x: Var,
        training: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardVars> {
        match self {
            Arch::Cat(c) => cat::forward(g, c, ps, vars, x, training, rng),
            Arch::Cnn(c) => cnn::forward(g, c, ps, vars, x, training, rng),
            Arch::Mlp(c) => mlp::forward(g, c, ps, vars, x),
        }
    }

    /// Pack spectrograms into the model's input tensor layout.
    pub fn make_input<S: Scalar>(&self, specs: &[&Spectrogram]) -> Result<Tensor<S>> {
        let side = self.input_size();
        let expected = side * side;
        let b = specs.len();
        let mut data = Vec::with_capacity(b * expected);
        for spec in specs {
            if spec.pixels().len() != expected {
                return Err(Error::Shape(format!(
                    "input has {} pixels, model expects {}x{}",
                    spec.pixels().len(),
                    side,
                    side
                )));
            }
            data.extend(spec.pixels().iter().map(|&v| S::from_f64(v as f64)));
        }
        match self {
            Arch::Mlp(_) => Tensor::new(vec![b, expected], data),
            _ => Tensor::new(vec![b, 1, side, side], data),
        }
    }
}

/// Inference over a batch of spectrograms.
pub fn forward_batch(
    arch: &Arch,
    params: &ParamSet<f32>,
    specs: &[&Spectrogram],
) -> Result<Vec<ModelOutput>> {
    use rand::SeedableRng;
    if specs.is_empty() {
        return Ok(Vec::new());
    }
    let mut g = Graph::<f32>::new();
    let x = g.input(arch.make_input(specs)?);
    let vars = params.bind_frozen(&mut g);
    let mut rng = ChaCha8Rng::seed_from_u64(0); // unused at inference
    let fwd = arch.forward(&mut g, params, &vars, x, false, &mut rng)?;
    let probs = g.softmax(fwd.logits)?;

    let n = arch.num_classes();
    let latent_len = g.value(fwd.latent).len() / specs.len();
    let mut out = Vec::with_capacity(specs.len());
    for i in 0..specs.len() {
        let logits = g.value(fwd.logits).data()[i * n..(i + 1) * n].to_vec();
        let p = g.value(probs).data()[i * n..(i + 1) * n].to_vec();
        let latent = g.value(fwd.latent).data()[i * latent_len..(i + 1) * latent_len].to_vec();
        out.push(ModelOutput { logits, probabilities: ProbabilitySet::new(p)?, latent });
    }
    Ok(out)
}
