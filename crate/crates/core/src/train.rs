//! Optimizers and the supervised training loop with early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::stratified_split;
use crate::dsp::Spectrogram;
use crate::error::{Error, Result};
use crate::eval::attribute_closed;
use crate::losses::{loss_on_graph, LossConfig};
use crate::models::{forward_batch, Arch, ModelOutput, ParamSet};
use crate::tensor::{s, Graph, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Adam,
    AdamW,
}

impl std::str::FromStr for OptimKind {
    type Err = Error;

    fn from_str(v: &str) -> Result<Self> {
        match v {
            "adam" => Ok(OptimKind::Adam),
            "adamw" => Ok(OptimKind::AdamW),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Optimizer hyperparameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OptimHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimHyper {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        OptimHyper { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay }
    }
}

/// Per-tensor moment estimates and step counter.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub m: Tensor<S>,
    pub v: Tensor<S>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn for_param(param: &Tensor<S>) -> Self {
        AdamState {
            m: Tensor::zeros(param.shape().to_vec()),
            v: Tensor::zeros(param.shape().to_vec()),
            t: 0,
        }
    }
}

/// One AdamW update with decoupled weight decay:
/// `param <- param - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * param`.
pub fn adamw_step<S: Scalar>(
    param: &mut Tensor<S>,
    grad: &Tensor<S>,
    state: &mut AdamState<S>,
    hyper: &OptimHyper,
) -> Result<()> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::Shape(format!(
            "adamw_step: param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    state.t += 1;
    let b1 = s::<S>(hyper.beta1);
    let b2 = s::<S>(hyper.beta2);
    let one = S::one();
    let bias1 = one - b1.powi(state.t as i32);
    let bias2 = one - b2.powi(state.t as i32);
    let lr = s::<S>(hyper.lr);
    let eps = s::<S>(hyper.eps);
    let decay = lr * s::<S>(hyper.weight_decay);

    for i in 0..param.len() {
        let g = grad.data()[i];
        let m = b1 * state.m.data()[i] + (one - b1) * g;
        let v = b2 * state.v.data()[i] + (one - b2) * g * g;
        state.m.data_mut()[i] = m;
        state.v.data_mut()[i] = v;
        let m_hat = m / bias1;
        let v_hat = v / bias2;
        let old = param.data()[i];
        param.data_mut()[i] = old - lr * m_hat / (v_hat.sqrt() + eps) - decay * old;
    }
    Ok(())
}

/// Adam: identical moment updates with no decoupled decay term.
pub fn adam_step<S: Scalar>(
    param: &mut Tensor<S>,
    grad: &Tensor<S>,
    state: &mut AdamState<S>,
    hyper: &OptimHyper,
) -> Result<()> {
    let no_decay = OptimHyper { weight_decay: 0.0, ..*hyper };
    adamw_step(param, grad, state, &no_decay)
}

/// Optimizer over a whole parameter set.
pub struct Optimizer {
    kind: OptimKind,
    hyper: OptimHyper,
    states: Vec<AdamState<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimKind, hyper: OptimHyper, params: &ParamSet<f32>) -> Self {
        let states = (0..params.len()).map(|i| AdamState::for_param(params.tensor(i))).collect();
        Optimizer { kind, hyper, states }
    }

    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &[Option<Tensor<f32>>]) -> Result<()> {
        for i in 0..params.len() {
            let Some(grad) = &grads[i] else { continue };
            match self.kind {
                OptimKind::AdamW => {
                    adamw_step(params.tensor_mut(i), grad, &mut self.states[i], &self.hyper)?
                }
                OptimKind::Adam => {
                    adam_step(params.tensor_mut(i), grad, &mut self.states[i], &self.hyper)?
                }
            }
        }
        Ok(())
    }
}

/// Full training configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub loss: LossConfig,
    pub optimizer: OptimKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl TrainConfig {
    /// CAT protocol: 100 epochs, patience 10, batch 128, AdamW, lr = wd = 1e-4.
    pub fn cat_protocol(arch: Arch, loss: LossConfig) -> Self {
        TrainConfig {
            arch,
            loss,
            optimizer: OptimKind::AdamW,
            lr: 1e-4,
            weight_decay: 1e-4,
            epochs: 100,
            patience: 10,
            batch_size: 128,
            seed: 0,
            validation_fraction: 0.1,
        }
    }

    /// CNN protocol: 100 epochs, patience 10, batch 128, Adam, lr 1e-3.
    pub fn cnn_protocol(arch: Arch, loss: LossConfig) -> Self {
        TrainConfig {
            optimizer: OptimKind::Adam,
            lr: 1e-3,
            weight_decay: 0.0,
            ..Self::cat_protocol(arch, loss)
        }
    }

    /// MLP protocol: 200 epochs, patience 10, batch 200, Adam, lr 1e-4.
    pub fn mlp_protocol(arch: Arch, loss: LossConfig) -> Self {
        TrainConfig {
            optimizer: OptimKind::Adam,
            lr: 1e-4,
            weight_decay: 0.0,
            epochs: 200,
            batch_size: 200,
            ..Self::cat_protocol(arch, loss)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.loss.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.patience == 0 || self.patience > self.epochs {
            return Err(Error::Config(format!(
                "patience {} must lie in 1..=epochs ({})",
                self.patience, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..0.5).contains(&self.validation_fraction) || self.validation_fraction <= 0.0 {
            return Err(Error::Config(format!(
                "validation_fraction {} outside (0, 0.5)",
                self.validation_fraction
            )));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Spectrograms plus known-class labels.
pub struct LabeledDataset {
    pub specs: Vec<Spectrogram>,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(specs: Vec<Spectrogram>, labels: Vec<usize>) -> Result<Self> {
        if specs.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} spectrograms vs {} labels",
                specs.len(),
                labels.len()
            )));
        }
        if specs.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        Ok(LabeledDataset { specs, labels })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }
}

/// One row of the training history CSV.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

pub struct FitResult {
    /// Weights of the best-validation epoch (not the last one).
    pub params: ParamSet<f32>,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Train a model: seeded stratified validation split, seeded mini-batch
/// shuffling, per-epoch validation, early stopping on validation loss with
/// best-weight restore.
pub fn fit(dataset: &LabeledDataset, cfg: &TrainConfig) -> Result<FitResult> {
    cfg.validate()?;
    let n_classes = cfg.arch.num_classes();
    if let Some(&bad) = dataset.labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Label(format!("label {bad} out of range for {n_classes} classes")));
    }
    let distinct = {
        let mut seen = vec![false; n_classes];
        for &l in &dataset.labels {
            seen[l] = true;
        }
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::Data("need at least 2 classes present".into()));
    }

    let (train_idx, val_idx) =
        stratified_split(&dataset.labels, cfg.validation_fraction, cfg.seed)?;
    if val_idx.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    {
        let mut train_seen = vec![false; n_classes];
        for &i in &train_idx {
            train_seen[dataset.labels[i]] = true;
        }
        for c in 0..n_classes {
            let present_anywhere = dataset.labels.iter().any(|&l| l == c);
            if present_anywhere && !train_seen[c] {
                return Err(Error::Data(format!("class {c} has no training samples after split")));
            }
        }
    }

    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    init_rng.set_stream(0);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut model_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    model_rng.set_stream(2);

    let mut params = cfg.arch.init_params::<f32>(&mut init_rng)?;
    let mut optimizer =
        Optimizer::new(cfg.optimizer, OptimHyper::new(cfg.lr, cfg.weight_decay), &params);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamSet<f32>)> = None;
    let mut epochs_since_improvement = 0usize;
    let mut order = train_idx.clone();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            let specs: Vec<&Spectrogram> = batch.iter().map(|&i| &dataset.specs[i]).collect();
            let targets: Vec<usize> = batch.iter().map(|&i| dataset.labels[i]).collect();

            let mut g = Graph::<f32>::new();
            let x = g.input(cfg.arch.make_input(&specs)?);
            let vars = params.bind(&mut g);
            let fwd = cfg.arch.forward(&mut g, &params, &vars, x, true, &mut model_rng)?;
            let probs = g.softmax(fwd.logits)?;
            let loss = loss_on_graph(&mut g, probs, &targets, &cfg.loss)?;
            let loss_value = g.value(loss).item()? as f64;
            g.backward(loss)?;
            let grads: Vec<Option<Tensor<f32>>> =
                vars.iter().map(|&v| g.take_grad(v)).collect();
            drop(g);
            optimizer.step(&mut params, &grads)?;
            loss_sum += loss_value * batch.len() as f64;
        }
        let train_loss = loss_sum / order.len() as f64;

        let (val_loss, val_accuracy) = evaluate(
            &cfg.arch,
            &params,
            &val_idx.iter().map(|&i| &dataset.specs[i]).collect::<Vec<_>>(),
            &val_idx.iter().map(|&i| dataset.labels[i]).collect::<Vec<_>>(),
            &cfg.loss,
            cfg.batch_size,
        )?;
        history.push(EpochStats { epoch, train_loss, val_loss, val_accuracy });

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, epoch, params.clone()));
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= cfg.patience {
                break;
            }
        }
    }

    let (best_val_loss, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(FitResult { params: best_params, history, best_epoch, best_val_loss })
}

/// Mean loss and closed-set accuracy over a labeled set (inference mode,
/// chunked to bound memory).
pub fn evaluate(
    arch: &Arch,
    params: &ParamSet<f32>,
    specs: &[&Spectrogram],
    labels: &[usize],
    loss: &LossConfig,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if specs.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let outputs = predict_in_batches(arch, params, specs, batch_size)?;
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for (out, &label) in outputs.iter().zip(labels) {
        let p = out.probabilities.probs()[label] as f64;
        loss_sum += loss.per_sample(p);
        if attribute_closed(&out.probabilities).label == crate::eval::Label::Known(label) {
            correct += 1;
        }
    }
    Ok((loss_sum / specs.len() as f64, correct as f64 / specs.len() as f64))
}

/// Inference over an arbitrarily large set, `batch_size` samples at a time.
pub fn predict_in_batches(
    arch: &Arch,
    params: &ParamSet<f32>,
    specs: &[&Spectrogram],
    batch_size: usize,
) -> Result<Vec<ModelOutput>> {
    let mut out = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(batch_size.max(1)) {
        out.extend(forward_batch(arch, params, chunk)?);
    }
    Ok(out)
}

/// One row of the epsilon-gridsearch comparison table.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    pub best_epoch: usize,
}

/// Default epsilon grid for the poly-1 gridsearch.
pub const DEFAULT_EPSILON_GRID: [f64; 7] = [0.0, 0.5, 1.0, 2.0, 3.0, 3.3, 4.0];

/// Train one model per epsilon with a fixed seed and report validation
/// accuracy of the best epoch.
pub fn sweep_epsilon(
    dataset: &LabeledDataset,
    base: &TrainConfig,
    epsilons: &[f64],
) -> Result<Vec<SweepRow>> {
    if epsilons.is_empty() {
        return Err(Error::Config("empty epsilon list".into()));
    }
    let mut rows = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let mut cfg = base.clone();
        cfg.loss.epsilon = epsilon;
        let fitted = fit(dataset, &cfg)?;
        let stats = fitted.history[fitted.best_epoch - 1];
        rows.push(SweepRow {
            epsilon,
            val_accuracy: stats.val_accuracy,
            val_loss: stats.val_loss,
            best_epoch: fitted.best_epoch,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use crate::models::CnnConfig;

    fn t(shape: &[usize], v: f64) -> Tensor<f64> {
        Tensor::full(shape.to_vec(), v)
    }

    #[test]
    fn adamw_single_step_examples() {
        let hyper = OptimHyper::new(0.1, 0.0);
        let mut p = t(&[1], 1.0);
        let g = t(&[1], 1.0);
        let mut st = AdamState::for_param(&p);
        adamw_step(&mut p, &g, &mut st, &hyper).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-7, "{}", p.data()[0]);
        assert_eq!(st.t, 1);

        // decoupled decay: theta = 1 - 0.1 - 0.01
        let hyper_wd = OptimHyper::new(0.1, 0.1);
        let mut p = t(&[1], 1.0);
        let mut st = AdamState::for_param(&p);
        adamw_step(&mut p, &g, &mut st, &hyper_wd).unwrap();
        assert!((p.data()[0] - 0.89).abs() < 1e-7, "{}", p.data()[0]);

        // zero gradient at t=0: only the decay term moves the weight
        let mut p = t(&[1], 1.0);
        let mut st = AdamState::for_param(&p);
        adamw_step(&mut p, &t(&[1], 0.0), &mut st, &hyper_wd).unwrap();
        assert!((p.data()[0] - 0.99).abs() < 1e-9);

        // adam ignores weight decay
        let mut p = t(&[1], 1.0);
        let mut st = AdamState::for_param(&p);
        adam_step(&mut p, &g, &mut st, &hyper_wd).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-7);
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let hyper = OptimHyper::new(0.0, 0.3);
        let mut p = Tensor::<f64>::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let orig = p.clone();
        let g = Tensor::new(vec![3], vec![1.0, -2.0, 0.1]).unwrap();
        let mut st = AdamState::for_param(&p);
        adamw_step(&mut p, &g, &mut st, &hyper).unwrap();
        assert_eq!(p, orig);
    }

    fn synthetic_separable_dataset(n_per_class: usize) -> LabeledDataset {
        // class 0: energy in the top rows; class 1: bottom rows. Deterministic
        // per-sample texture keeps samples distinct.
        use crate::dsp::{Spectrogram, SPEC_SIZE};
        let mut specs = Vec::new();
        let mut labels = Vec::new();
        for cls in 0..2usize {
            for k in 0..n_per_class {
                let mut px = vec![0.0f32; SPEC_SIZE * SPEC_SIZE];
                for r in 0..SPEC_SIZE {
                    let hot = if cls == 0 { r < SPEC_SIZE / 2 } else { r >= SPEC_SIZE / 2 };
                    for c in 0..SPEC_SIZE {
                        let texture = (((r * 31 + c * 7 + k * 13) % 17) as f32) / 17.0;
                        px[r * SPEC_SIZE + c] = if hot { 0.6 + 0.4 * texture } else { 0.2 * texture };
                    }
                }
                specs.push(Spectrogram::from_pixels(px).unwrap());
                labels.push(cls);
            }
        }
        LabeledDataset::new(specs, labels).unwrap()
    }

    fn tiny_cnn_cfg() -> TrainConfig {
        let arch = Arch::Cnn(CnnConfig {
            conv_channels: (2, 4),
            dense_dim: 8,
            dropout_conv: 0.0,
            dropout_dense: 0.0,
            num_classes: 2,
            input_size: 128,
        });
        TrainConfig {
            epochs: 12,
            patience: 12,
            batch_size: 8,
            lr: 2e-3,
            seed: 3,
            validation_fraction: 0.2,
            ..TrainConfig::cnn_protocol(arch, LossConfig::new(LossKind::Ce))
        }
    }

    #[test]
    fn fit_reaches_perfect_train_accuracy_on_separable_data() {
        let data = synthetic_separable_dataset(20);

        // separability oracle: top-half mean vs bottom-half mean splits the
        // classes with a fixed threshold
        for (spec, &label) in data.specs.iter().zip(&data.labels) {
            let top: f32 = (0..64).map(|r| spec.get(r, 5)).sum();
            let bottom: f32 = (64..128).map(|r| spec.get(r, 5)).sum();
            assert_eq!(top > bottom, label == 0);
        }

        let cfg = tiny_cnn_cfg();
        let fitted = fit(&data, &cfg).unwrap();
        assert!(fitted.history.len() <= cfg.epochs);
        let all: Vec<&Spectrogram> = data.specs.iter().collect();
        let (_, train_acc) =
            evaluate(&cfg.arch, &fitted.params, &all, &data.labels, &cfg.loss, 8).unwrap();
        assert_eq!(train_acc, 1.0, "history: {:?}", fitted.history);
    }

    #[test]
    fn fit_is_deterministic_per_seed() {
        let data = synthetic_separable_dataset(8);
        let mut cfg = tiny_cnn_cfg();
        cfg.epochs = 3;
        cfg.patience = 3;
        let a = fit(&data, &cfg).unwrap();
        let b = fit(&data, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn early_stopping_returns_best_checkpoint() {
        let data = synthetic_separable_dataset(8);
        let mut cfg = tiny_cnn_cfg();
        cfg.epochs = 6;
        cfg.patience = 2;
        let fitted = fit(&data, &cfg).unwrap();
        let min_val =
            fitted.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(fitted.best_val_loss, min_val);
        assert_eq!(
            fitted.history[fitted.best_epoch - 1].val_loss,
            fitted.best_val_loss
        );
    }

    #[test]
    fn fit_rejects_bad_configs_and_data() {
        let data = synthetic_separable_dataset(8);

        let mut cfg = tiny_cnn_cfg();
        cfg.patience = 0;
        assert!(matches!(fit(&data, &cfg), Err(Error::Config(_))));

        let mut cfg = tiny_cnn_cfg();
        cfg.validation_fraction = 0.5;
        assert!(matches!(fit(&data, &cfg), Err(Error::Config(_))));

        // single-class data
        let single = LabeledDataset::new(
            data.specs[..8].to_vec(),
            vec![0; 8],
        )
        .unwrap();
        assert!(matches!(fit(&single, &tiny_cnn_cfg()), Err(Error::Data(_))));

        // out-of-range label
        let bad = LabeledDataset::new(data.specs[..4].to_vec(), vec![0, 1, 2, 1]).unwrap();
        assert!(matches!(fit(&bad, &tiny_cnn_cfg()), Err(Error::Label(_))));
    }

    #[test]
    fn sweep_epsilon_contract() {
        let data = synthetic_separable_dataset(8);
        let mut base = tiny_cnn_cfg();
        base.epochs = 2;
        base.patience = 2;
        base.loss = LossConfig::new(LossKind::Poly1Ce);

        // singleton list: one row
        let rows = sweep_epsilon(&data, &base, &[1.5]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].epsilon, 1.5);

        // epsilon 0 with poly1ce equals a plain CE run with the same seed
        let rows = sweep_epsilon(&data, &base, &[0.0]).unwrap();
        let mut ce_cfg = base.clone();
        ce_cfg.loss = LossConfig::new(LossKind::Ce);
        let ce = fit(&data, &ce_cfg).unwrap();
        let ce_best = ce.history[ce.best_epoch - 1];
        assert_eq!(rows[0].val_accuracy, ce_best.val_accuracy);
        assert_eq!(rows[0].val_loss, ce_best.val_loss);

        assert!(sweep_epsilon(&data, &base, &[]).is_err());
    }
}
