//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them).
//!
//! The heavyweight criteria share a single deterministic toy corpus and a
//! memoized set of training runs; training-based tests serialize on a lock
//! so wall-clock budgets are honest on small machines.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use catkit_core::data::{self, gen_toy, stratified_split, Manifest, Sample, Split, ToySpec};
use catkit_core::dsp::{self, SpecConfig, Spectrogram, SPEC_SIZE};
use catkit_core::embed::{
    cluster_report, conditional_affinities, row_perplexities, subsample_stratified, tsne,
    LatentMatrix, TsneConfig,
};
use catkit_core::eval::{
    attribute_open, baseline_constant, confusion, percentile, weighted_metrics, BaselineKind,
    ConfusionMatrix, Decision, Label,
};
use catkit_core::losses::{self, loss_on_graph, LossConfig, LossKind};
use catkit_core::models::{Arch, CatConfig};
use catkit_core::tensor::{grad_check_with_step, nn, Graph, Tensor, Var};
use catkit_core::train::{fit, predict_in_batches, LabeledDataset, TrainConfig};

// ---------------------------------------------------------------------
// toy-experiment recipe shared by criteria 7, 8, and 9
// ---------------------------------------------------------------------

const TOY_CORPUS_SEED: u64 = 42;
const TOY_KNOWN: usize = 6;
const TOY_UNKNOWN: usize = 2;
const TOY_TRAIN_PER_CLASS: usize = 200;
const TOY_TEST_PER_CLASS: usize = 100;
/// Desk-scale CAT: the full architecture at reduced width so the experiment
/// fits the CPU budget.
const TOY_EMBED: usize = 16;
const TOY_EPOCHS: usize = 4;
const TOY_BATCH: usize = 8;
const TOY_LR: f64 = 1e-2;
/// Validation-confidence quantile used to tune the open-set threshold.
const TOY_T_QUANTILE: f64 = 0.05;

fn toy_cat_config() -> CatConfig {
    CatConfig {
        conv_channels: (TOY_EMBED / 2, TOY_EMBED),
        embed_dim: TOY_EMBED,
        num_layers: 2,
        num_heads: 2,
        mlp_ratio: 2.0,
        drop_path_rate: 0.0,
        dropout: 0.0,
        num_classes: TOY_KNOWN,
        input_size: 128,
    }
}

fn toy_train_config(kind: LossKind, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: TOY_EPOCHS,
        patience: TOY_EPOCHS,
        batch_size: TOY_BATCH,
        lr: TOY_LR,
        weight_decay: 1e-4,
        seed,
        validation_fraction: 0.1,
        ..TrainConfig::cat_protocol(Arch::Cat(toy_cat_config()), LossConfig::new(kind))
    }
}

struct ToyFixture {
    _dir: tempfile::TempDir,
    manifest: Manifest,
    dataset: LabeledDataset,
    test_samples: Vec<Sample>,
    /// Memoized training runs keyed by (loss kind, seed).
    runs: Mutex<HashMap<(LossKind, u64), TrainedRun>>,
    /// Serializes the heavy phases so parallel test threads do not skew
    /// wall-clock measurements.
    heavy: Mutex<()>,
}

#[derive(Clone)]
struct TrainedRun {
    closed_accuracy: f64,
    open_f1: f64,
    unknown_recall: f64,
    threshold: f64,
    /// Latent vector per test sample (manifest test order).
    test_latents: Vec<Vec<f32>>,
    train_seconds: f64,
}

fn fixture() -> &'static ToyFixture {
    static FIXTURE: OnceLock<ToyFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().expect("tempdir");
        let spec = ToySpec::default_corpus(TOY_KNOWN, TOY_UNKNOWN, TOY_CORPUS_SEED);
        let manifest = gen_toy(
            &spec,
            TOY_KNOWN,
            TOY_UNKNOWN,
            TOY_TRAIN_PER_CLASS,
            TOY_TEST_PER_CLASS,
            dir.path(),
        )
        .expect("toy corpus");
        let spec_cfg = SpecConfig::default();
        let train = data::load_split(&manifest, Split::Train, None, &spec_cfg).expect("train split");
        let test_samples =
            data::load_split(&manifest, Split::Test, None, &spec_cfg).expect("test split");
        let dataset = LabeledDataset::new(
            train.iter().map(|s| s.spec.clone()).collect(),
            train.iter().map(|s| s.label.expect("train labels")).collect(),
        )
        .expect("dataset");
        ToyFixture {
            _dir: dir,
            manifest,
            dataset,
            test_samples,
            runs: Mutex::new(HashMap::new()),
            heavy: Mutex::new(()),
        }
    })
}

/// Train (or fetch the memoized) toy run and evaluate it on the test split.
fn toy_run(kind: LossKind, seed: u64) -> TrainedRun {
    let fx = fixture();
    if let Some(run) = fx.runs.lock().unwrap().get(&(kind, seed)) {
        return run.clone();
    }

    let started = Instant::now();
    let cfg = toy_train_config(kind, seed);
    let fitted = fit(&fx.dataset, &cfg).expect("fit");

    // tune T on the validation split's confidences
    let (_, val_idx) =
        stratified_split(&fx.dataset.labels, cfg.validation_fraction, seed).expect("split");
    let val_specs: Vec<&Spectrogram> = val_idx.iter().map(|&i| &fx.dataset.specs[i]).collect();
    let val_out = predict_in_batches(&cfg.arch, &fitted.params, &val_specs, 32).expect("val fwd");
    let val_pm: Vec<f32> = val_out.iter().map(|o| o.probabilities.p_max()).collect();
    let threshold = percentile(&val_pm, TOY_T_QUANTILE)
        .expect("threshold")
        .clamp(1e-6, 1.0 - 1e-6);

    let all_specs: Vec<&Spectrogram> = fx.test_samples.iter().map(|s| &s.spec).collect();
    let outputs =
        predict_in_batches(&cfg.arch, &fitted.params, &all_specs, 32).expect("test fwd");

    let known: Vec<(usize, usize)> = fx
        .test_samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.label.map(|l| (i, l)))
        .collect();
    let closed_correct = known
        .iter()
        .filter(|&&(i, label)| outputs[i].probabilities.argmax() == label)
        .count();
    let closed_accuracy = closed_correct as f64 / known.len() as f64;

    let truths: Vec<Label> = fx
        .test_samples
        .iter()
        .map(|s| s.label.map_or(Label::Unknown, Label::Known))
        .collect();
    let decisions: Vec<Decision> = outputs
        .iter()
        .map(|o| attribute_open(&o.probabilities, threshold).expect("open decision"))
        .collect();
    let cm = confusion(&decisions, &truths, TOY_KNOWN, true).expect("confusion");
    let metrics = weighted_metrics(&cm).expect("metrics");
    let unknown_recall = cm.count(TOY_KNOWN, TOY_KNOWN) as f64 / cm.support()[TOY_KNOWN] as f64;

    let run = TrainedRun {
        closed_accuracy,
        open_f1: metrics.f1,
        unknown_recall,
        threshold,
        test_latents: outputs.iter().map(|o| o.latent.clone()).collect(),
        train_seconds: started.elapsed().as_secs_f64(),
    };
    fx.runs.lock().unwrap().insert((kind, seed), run.clone());
    run
}

// ---------------------------------------------------------------------
// criterion 1: loss identities
// ---------------------------------------------------------------------

#[test]
fn criterion_1_loss_identities() {
    let mut p = 1e-6f64;
    let mut worst = 0.0f64;
    while p <= 1.0 {
        for eps in [0.0, 0.7, 3.3] {
            worst = worst.max((losses::poly1_ce(p, 0.0) - losses::cross_entropy(p)).abs());
            worst = worst.max((losses::focal(p, 0.0) - losses::cross_entropy(p)).abs());
            worst = worst.max((losses::poly1_fl(p, 0.0, eps) - losses::poly1_ce(p, eps)).abs());
        }
        p *= 1.7;
    }
    for eps in [0.0, 0.7, 3.3] {
        worst = worst.max((losses::poly1_fl(1.0, 0.0, eps) - losses::poly1_ce(1.0, eps)).abs());
    }
    assert!(worst <= 1e-12, "identity deviation {worst}");
    println!("ACCEPTANCE 1 PASS: loss identities exact to 1e-12 (worst {worst:.2e})");
}

// ---------------------------------------------------------------------
// criterion 2: loss plug-in values
// ---------------------------------------------------------------------

#[test]
fn criterion_2_loss_values() {
    let a = losses::poly1_ce(0.5, 3.3);
    let b = losses::poly1_fl(0.5, 2.0, 3.0);
    assert!((a - 2.343147).abs() <= 1e-6, "poly1_ce(0.5, 3.3) = {a}");
    assert!((b - 0.548287).abs() <= 1e-6, "poly1_fl(0.5, 2, 3) = {b}");
    println!("ACCEPTANCE 2 PASS: poly1_ce(0.5,3.3) = {a:.6}, poly1_fl(0.5,2,3) = {b:.6}");
}

// ---------------------------------------------------------------------
// criterion 3: gradient suite
// ---------------------------------------------------------------------

#[test]
fn criterion_3_gradient_suite() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(97);

    // 1e-4 keeps the h^2 truncation term below the 1e-6 bar in f64.
    const PRIMITIVE_STEP: f64 = 1e-4;
    let mut worst_primitive: (String, f64) = (String::new(), 0.0);
    let mut record = |name: &str, err: f64, worst: &mut (String, f64)| {
        if err > worst.1 {
            *worst = (name.to_string(), err);
        }
    };

    // fixed random weighted-sum head: non-uniform upstream gradient with no
    // added curvature
    fn head(g: &mut Graph<f64>, y: Var, seed: u64) -> catkit_core::Result<Var> {
        let shape = g.value(y).shape().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = g.input(Tensor::<f64>::randn(shape, 1.0, &mut rng));
        let prod = g.mul(y, w)?;
        Ok(g.sum(prod))
    }

    // elementwise primitives
    let mut x = Tensor::<f64>::randn(vec![4, 9], 1.0, &mut rng);
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    let err = grad_check_with_step(
        |g, v| {
            let y = g.relu(v);
            head(g, y, 1)
        },
        &x,
        PRIMITIVE_STEP,
    )
    .unwrap();
    record("relu", err, &mut worst_primitive);

    let x = Tensor::<f64>::randn(vec![4, 9], 1.0, &mut rng);
    let err = grad_check_with_step(
        |g, v| {
            let y = g.gelu(v);
            head(g, y, 2)
        },
        &x,
        PRIMITIVE_STEP,
    )
    .unwrap();
    record("gelu", err, &mut worst_primitive);

    let x = Tensor::<f64>::randn(vec![4, 9], 1.0, &mut rng);
    let err = grad_check_with_step(
        |g, v| {
            let y = g.sigmoid(v);
            head(g, y, 3)
        },
        &x,
        PRIMITIVE_STEP,
    )
    .unwrap();
    record("sigmoid", err, &mut worst_primitive);

    let x = Tensor::<f64>::randn(vec![3, 11], 1.5, &mut rng);
    let err = grad_check_with_step(
        |g, v| {
            let y = g.softmax(v)?;
            head(g, y, 4)
        },
        &x,
        PRIMITIVE_STEP,
    )
    .unwrap();
    record("softmax", err, &mut worst_primitive);

    // layer_norm wrt input, gain, bias
    let xt = Tensor::<f64>::randn(vec![5, 7], 1.0, &mut rng);
    let gain = Tensor::<f64>::randn(vec![7], 0.4, &mut rng);
    let bias = Tensor::<f64>::randn(vec![7], 0.4, &mut rng);
    for (name, which) in [("layer_norm.x", 0usize), ("layer_norm.gain", 1), ("layer_norm.bias", 2)] {
        let target = [&xt, &gain, &bias][which].clone();
        let err = grad_check_with_step(
            |g, var| {
                let mut vars =
                    [g.input(xt.clone()), g.input(gain.clone()), g.input(bias.clone())];
                vars[which] = var;
                let y = g.layer_norm(vars[0], vars[1], vars[2], 1e-5)?;
                head(g, y, 5)
            },
            &target,
            PRIMITIVE_STEP,
        )
        .unwrap();
        record(name, err, &mut worst_primitive);
    }

    // dense / matmul wrt every operand
    let xt = Tensor::<f64>::randn(vec![4, 5], 1.0, &mut rng);
    let wt = Tensor::<f64>::randn(vec![5, 3], 1.0, &mut rng);
    let bt = Tensor::<f64>::randn(vec![3], 1.0, &mut rng);
    for (name, which) in [("dense.x", 0usize), ("dense.w", 1), ("dense.b", 2)] {
        let target = [&xt, &wt, &bt][which].clone();
        let err = grad_check_with_step(
            |g, var| {
                let mut vars = [g.input(xt.clone()), g.input(wt.clone()), g.input(bt.clone())];
                vars[which] = var;
                let y = nn::dense(g, vars[0], vars[1], vars[2])?;
                head(g, y, 6)
            },
            &target,
            PRIMITIVE_STEP,
        )
        .unwrap();
        record(name, err, &mut worst_primitive);
    }

    // conv2d wrt input, kernel, bias
    let xt = Tensor::<f64>::randn(vec![2, 2, 6, 6], 1.0, &mut rng);
    let wt = Tensor::<f64>::randn(vec![3, 2, 3, 3], 0.5, &mut rng);
    let bt = Tensor::<f64>::randn(vec![3], 0.5, &mut rng);
    for (name, which) in [("conv2d.x", 0usize), ("conv2d.w", 1), ("conv2d.b", 2)] {
        let target = [&xt, &wt, &bt][which].clone();
        let err = grad_check_with_step(
            |g, var| {
                let mut vars = [g.input(xt.clone()), g.input(wt.clone()), g.input(bt.clone())];
                vars[which] = var;
                let y = g.conv2d(vars[0], vars[1], vars[2])?;
                head(g, y, 7)
            },
            &target,
            PRIMITIVE_STEP,
        )
        .unwrap();
        record(name, err, &mut worst_primitive);
    }

    // maxpool with distinct window values
    let data: Vec<f64> = (0..2 * 36).map(|i| i as f64 * 0.83 + ((i * 11) % 7) as f64).collect();
    let x = Tensor::new(vec![2, 6, 6], data).unwrap();
    let err = grad_check_with_step(
        |g, v| {
            let y = g.maxpool2d(v)?;
            head(g, y, 8)
        },
        &x,
        PRIMITIVE_STEP,
    )
    .unwrap();
    record("maxpool2d", err, &mut worst_primitive);

    // fused attention wrt q, k, v
    let qt = Tensor::<f64>::randn(vec![2, 2, 5, 4], 0.8, &mut rng);
    let kt = Tensor::<f64>::randn(vec![2, 2, 5, 4], 0.8, &mut rng);
    let vt = Tensor::<f64>::randn(vec![2, 2, 5, 4], 0.8, &mut rng);
    for (name, which) in [("attention.q", 0usize), ("attention.k", 1), ("attention.v", 2)] {
        let target = [&qt, &kt, &vt][which].clone();
        let err = grad_check_with_step(
            |g, var| {
                let mut vars = [g.input(qt.clone()), g.input(kt.clone()), g.input(vt.clone())];
                vars[which] = var;
                let y = g.scaled_attention(vars[0], vars[1], vars[2])?;
                head(g, y, 9)
            },
            &target,
            PRIMITIVE_STEP,
        )
        .unwrap();
        record(name, err, &mut worst_primitive);
    }

    // sequence pool wrt u and x
    let xt = Tensor::<f64>::randn(vec![2, 6, 4], 0.7, &mut rng);
    let ut = Tensor::<f64>::randn(vec![4, 1], 0.5, &mut rng);
    let err = grad_check_with_step(
        |g, var| {
            let x = g.input(xt.clone());
            let y = nn::sequence_pool(g, x, var)?;
            head(g, y, 10)
        },
        &ut,
        PRIMITIVE_STEP,
    )
    .unwrap();
    record("sequence_pool.u", err, &mut worst_primitive);
    let err = grad_check_with_step(
        |g, var| {
            let u = g.input(ut.clone());
            let y = nn::sequence_pool(g, var, u)?;
            head(g, y, 11)
        },
        &xt,
        PRIMITIVE_STEP,
    )
    .unwrap();
    record("sequence_pool.x", err, &mut worst_primitive);

    // each loss through softmax
    let logits = Tensor::<f64>::randn(vec![4, 6], 1.3, &mut rng);
    let targets = [2usize, 0, 5, 3];
    for kind in [LossKind::Ce, LossKind::Fl, LossKind::Poly1Ce, LossKind::Poly1Fl] {
        let cfg = LossConfig::new(kind);
        let err = grad_check_with_step(
            |g, v| {
                let p = g.softmax(v)?;
                loss_on_graph(g, p, &targets, &cfg)
            },
            &logits,
            PRIMITIVE_STEP,
        )
        .unwrap();
        record(&format!("loss.{kind}"), err, &mut worst_primitive);
    }

    assert!(
        worst_primitive.1 < 1e-6,
        "worst primitive gradient: {} at {:.3e}",
        worst_primitive.0,
        worst_primitive.1
    );

    // full reduced-configuration CAT (32x32 input, embed 16), end to end,
    // against every parameter. The small step keeps perturbations away from
    // relu/maxpool kinks. The key bias is excluded from the numeric
    // comparison: softmax is invariant under per-row score shifts, so the
    // output is mathematically independent of it and its true gradient is
    // identically zero — asserted directly on the analytic value below.
    const CAT_STEP: f64 = 1e-4;
    let cfg = CatConfig {
        conv_channels: (8, 16),
        embed_dim: 16,
        num_layers: 1,
        num_heads: 2,
        mlp_ratio: 2.0,
        drop_path_rate: 0.0,
        dropout: 0.0,
        num_classes: 2,
        input_size: 32,
    };
    let arch = Arch::Cat(cfg);
    let mut prng = ChaCha8Rng::seed_from_u64(11);
    let params = arch.init_params::<f64>(&mut prng).unwrap();
    let x = Tensor::<f64>::randn(vec![2, 1, 32, 32], 0.3, &mut prng).map(|v| v.abs().min(1.0));
    let targets = [0usize, 1];
    let loss_cfg = LossConfig::new(LossKind::Poly1Ce);

    let forward_loss = |g: &mut Graph<f64>,
                        vars: &[Var],
                        x_var: Var|
     -> catkit_core::Result<Var> {
        let mut mrng = ChaCha8Rng::seed_from_u64(0);
        let fwd = arch.forward(g, &params, vars, x_var, false, &mut mrng)?;
        let probs = g.softmax(fwd.logits)?;
        loss_on_graph(g, probs, &targets, &loss_cfg)
    };

    // Per-coordinate check with a kink filter: relu/maxpool make the loss
    // piecewise-smooth, and central differences straddling a kink measure an
    // average of two one-sided slopes rather than the (sub)gradient. A kink
    // betrays itself by numeric estimates at h and h/2 disagreeing with each
    // other; a genuine gradient bug keeps them consistent. Only unstable
    // coordinates are skipped.
    let mut worst_cat: (String, f64) = (String::new(), 0.0);
    let mut kinks_skipped = 0usize;
    for pi in 0..params.len() {
        if params.names()[pi].ends_with("attn.bk") {
            continue;
        }
        let eval = |probe: &Tensor<f64>| -> f64 {
            let mut g = Graph::<f64>::new();
            let x_var = g.input(x.clone());
            let mut vars = params.bind_frozen(&mut g);
            vars[pi] = g.input(probe.clone());
            let loss = forward_loss(&mut g, &vars, x_var).unwrap();
            g.value(loss).item().unwrap()
        };
        let analytic = {
            let mut g = Graph::<f64>::new();
            let x_var = g.input(x.clone());
            let mut vars = params.bind_frozen(&mut g);
            vars[pi] = g.param(params.tensor(pi).clone());
            let loss = forward_loss(&mut g, &vars, x_var).unwrap();
            g.backward(loss).unwrap();
            g.grad(vars[pi]).unwrap().clone()
        };
        let rel = |a: f64, n: f64| (a - n).abs() / (1e-8f64).max(a.abs() + n.abs());
        let central = |probe: &mut Tensor<f64>, i: usize, h: f64| -> f64 {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + h;
            let up = eval(probe);
            probe.data_mut()[i] = orig - h;
            let down = eval(probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * h)
        };
        let mut probe = params.tensor(pi).clone();
        for i in 0..probe.len() {
            let a = analytic.data()[i];
            let n1 = central(&mut probe, i, CAT_STEP);
            let mut err = rel(a, n1);
            if err >= 1e-4 {
                let n2 = central(&mut probe, i, CAT_STEP / 2.0);
                if rel(n1, n2) > 0.1 {
                    kinks_skipped += 1;
                    continue;
                }
                err = rel(a, n2);
            }
            if err > worst_cat.1 {
                worst_cat = (format!("{}[{}]", params.names()[pi], i), err);
            }
        }
    }

    // the key bias: analytic gradient must vanish
    {
        let mut g = Graph::<f64>::new();
        let x_var = g.input(x.clone());
        let vars = params.bind(&mut g);
        let loss = forward_loss(&mut g, &vars, x_var).unwrap();
        g.backward(loss).unwrap();
        let bk_idx = params.index_of("layer0.attn.bk").unwrap();
        let bk_grad = g.grad(vars[bk_idx]).unwrap().max_abs();
        assert!(bk_grad < 1e-10, "key-bias gradient should vanish, got {bk_grad:.3e}");
    }

    assert!(
        worst_cat.1 < 1e-4,
        "worst full-CAT gradient: {} at {:.3e}",
        worst_cat.0,
        worst_cat.1
    );
    println!(
        "ACCEPTANCE 3 PASS: primitives+losses worst {} = {:.2e} (< 1e-6); full CAT worst {} = {:.2e} (< 1e-4, {} kink coordinates skipped); {:.1?}",
        worst_primitive.0,
        worst_primitive.1,
        worst_cat.0,
        worst_cat.1,
        kinks_skipped,
        started.elapsed()
    );
    assert!(started.elapsed() < Duration::from_secs(120), "gradient suite over 2 min");
}

// ---------------------------------------------------------------------
// criterion 4: parameter count
// ---------------------------------------------------------------------

#[test]
fn criterion_4_parameter_count() {
    let count = Arch::Cat(CatConfig::default()).param_count().unwrap();
    let (lo, hi) = (303_750usize, 506_250usize);
    assert!(
        (lo..=hi).contains(&count),
        "default CAT has {count} parameters, outside [{lo}, {hi}]"
    );
    println!("ACCEPTANCE 4 PASS: default CAT parameter count {count} within +/-25% of 405k");
}

// ---------------------------------------------------------------------
// criterion 5: constant-classifier baselines on the published counts
// ---------------------------------------------------------------------

#[test]
fn criterion_5_baseline_arithmetic() {
    let train = [1000u64, 500, 1000, 1000, 1000, 500, 1000, 1000];
    let test_known = [1500u64, 300, 1500, 1500, 1500, 300, 1500, 1000];
    let mut closed: Vec<Label> = Vec::new();
    for (i, &n) in test_known.iter().enumerate() {
        closed.extend(std::iter::repeat_n(Label::Known(i), n as usize));
    }
    assert_eq!(closed.len(), 9_100);
    let mut open = closed.clone();
    open.extend(std::iter::repeat_n(Label::Unknown, 900));
    assert_eq!(open.len(), 10_000);

    let checks = [
        ("closed majority", BaselineKind::Majority, &closed, 0.1648),
        ("closed minority", BaselineKind::Minority, &closed, 0.0330),
        ("open majority", BaselineKind::Majority, &open, 0.1500),
        ("open minority", BaselineKind::Minority, &open, 0.0300),
    ];
    for (name, kind, truths, want) in checks {
        let got = baseline_constant(kind, &train, truths).unwrap().accuracy;
        assert!(
            (got - want).abs() <= 1e-4,
            "{name}: accuracy {got:.6} vs published {want:.4}"
        );
    }
    println!("ACCEPTANCE 5 PASS: constant-classifier accuracies 16.48%/3.30% closed, 15.00%/3.00% open");
}

// ---------------------------------------------------------------------
// criterion 6: weighted recall == accuracy
// ---------------------------------------------------------------------

#[test]
fn criterion_6_weighted_recall_is_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let k = rng.random_range(2..=9usize);
        let truths: Vec<Label> = (0..rng.random_range(1..400usize))
            .map(|_| Label::Known(rng.random_range(0..k)))
            .collect();
        let decisions: Vec<Decision> = truths
            .iter()
            .map(|_| Decision { label: Label::Known(rng.random_range(0..k)), confidence: 1.0 })
            .collect();
        let cm: ConfusionMatrix = confusion(&decisions, &truths, k, false).unwrap();
        let m = weighted_metrics(&cm).unwrap();
        let diff = (m.recall - m.accuracy).abs();
        assert!(
            diff <= 1e-12,
            "case {case}: weighted recall {} vs accuracy {}",
            m.recall,
            m.accuracy
        );
        worst = worst.max(diff);
    }
    println!("ACCEPTANCE 6 PASS: weighted recall == accuracy on 1000 random matrices (worst diff {worst:.2e})");
}

// ---------------------------------------------------------------------
// criterion 7: toy end-to-end attribution
// ---------------------------------------------------------------------

#[test]
fn criterion_7_toy_end_to_end() {
    let fx = fixture();
    let _guard = fx.heavy.lock().unwrap();
    let started = Instant::now();
    let mut total_train = 0.0;
    for seed in 0..3u64 {
        let run = toy_run(LossKind::Poly1Ce, seed);
        total_train += run.train_seconds;
        println!(
            "  seed {seed}: closed acc {:.4}, unknown recall {:.4}, open F1 {:.4} (T = {:.3}, train+eval {:.0} s)",
            run.closed_accuracy, run.unknown_recall, run.open_f1, run.threshold, run.train_seconds
        );
        assert!(
            run.closed_accuracy >= 0.95,
            "seed {seed}: closed-set accuracy {:.4} < 0.95",
            run.closed_accuracy
        );
        assert!(
            run.unknown_recall >= 0.80,
            "seed {seed}: unknown-class recall {:.4} < 0.80",
            run.unknown_recall
        );
        assert!(
            run.open_f1 >= 0.85,
            "seed {seed}: open-set weighted F1 {:.4} < 0.85",
            run.open_f1
        );
    }
    let wall = started.elapsed();
    assert!(
        wall <= Duration::from_secs(900),
        "toy experiment took {wall:.0?} (> 15 min)"
    );
    println!(
        "ACCEPTANCE 7 PASS: seeds 0-2 all reach closed >= 0.95, unknown recall >= 0.80, open F1 >= 0.85 in {wall:.0?} (training {total_train:.0} s)"
    );
}

// ---------------------------------------------------------------------
// criterion 8: poly-1 CE does not trail plain CE
// ---------------------------------------------------------------------

#[test]
fn criterion_8_loss_ordering() {
    let fx = fixture();
    let _guard = fx.heavy.lock().unwrap();
    let seeds: Vec<u64> = (0..5).collect();
    let mean = |kind: LossKind| -> f64 {
        seeds.iter().map(|&s| toy_run(kind, s).closed_accuracy).sum::<f64>() / seeds.len() as f64
    };
    let poly = mean(LossKind::Poly1Ce);
    let ce = mean(LossKind::Ce);
    assert!(
        poly >= ce - 0.005,
        "mean closed accuracy: poly-1-CE {poly:.4} vs CE {ce:.4} (gap over 0.5 pp)"
    );
    println!(
        "ACCEPTANCE 8 PASS: mean closed accuracy over 5 seeds: poly-1-CE {poly:.4} >= CE {ce:.4} - 0.005"
    );
}

// ---------------------------------------------------------------------
// criterion 9: tSNE separates the latent space
// ---------------------------------------------------------------------

#[test]
fn criterion_9_tsne_latents() {
    // realized perplexity on random inputs
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::<f64>::randn(vec![60 * 8, 1], 1.0, &mut rng);
    let matrix = LatentMatrix::new(x.data().to_vec(), 60, 8).unwrap();
    let p = conditional_affinities(&matrix, 20.0).unwrap();
    for (i, perp) in row_perplexities(&p, 60).iter().enumerate() {
        assert!((perp - 20.0).abs() < 1e-3, "row {i} perplexity {perp}");
    }

    let fx = fixture();
    let _guard = fx.heavy.lock().unwrap();
    let started = Instant::now();
    let run = toy_run(LossKind::Poly1Ce, 0);

    // stratified subsample of the open-set test latents
    let labels: Vec<String> =
        fx.test_samples.iter().map(|s| s.synthesizer.clone()).collect();
    let picked = subsample_stratified(&labels, 800, 0);
    let d = run.test_latents[0].len();
    let flat: Vec<f64> = picked
        .iter()
        .flat_map(|&i| run.test_latents[i].iter().map(|&v| v as f64))
        .collect();
    let latents = LatentMatrix::new(flat, picked.len(), d).unwrap();
    let picked_labels: Vec<String> = picked.iter().map(|&i| labels[i].clone()).collect();

    let cfg = TsneConfig { seed: 0, ..TsneConfig::default() };
    let result = tsne(&latents, &cfg).unwrap();
    assert!(
        result.final_kl < result.initial_kl,
        "KL did not decrease: {} -> {}",
        result.initial_kl,
        result.final_kl
    );

    let report = cluster_report(&result.embedding, &picked_labels, 0).unwrap();
    assert!(
        report.overall_purity >= 0.90,
        "cluster purity {:.4} < 0.90",
        report.overall_purity
    );
    for lp in &report.per_label {
        let known = fx.manifest.class_index(&lp.label).is_some();
        if !known {
            assert!(
                lp.majority_in_some_cluster,
                "unknown synthesizer {} forms no majority cluster",
                lp.label
            );
        }
    }
    let wall = started.elapsed();
    assert!(wall <= Duration::from_secs(300), "tSNE criterion took {wall:.0?}");
    println!(
        "ACCEPTANCE 9 PASS: perplexity within 1e-3; KL {:.3} -> {:.3}; purity {:.4} over {} points; every unknown synthesizer majority-owns a cluster ({wall:.0?})",
        result.initial_kl,
        result.final_kl,
        report.overall_purity,
        picked.len()
    );
}

// ---------------------------------------------------------------------
// criterion 10: spectrogram contract
// ---------------------------------------------------------------------

#[test]
fn criterion_10_spectrogram_contract() {
    // 1000 randomized toy WAVs through the full pipeline
    let spec = ToySpec {
        duration_s: 0.6,
        ..ToySpec::default_corpus(8, 0, 1234)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..1000u64 {
        let fp = &spec.fingerprints[(i % 8) as usize];
        let mut srng = ChaCha8Rng::seed_from_u64(9000 + i);
        let samples = data::synthesize(&spec, fp, &mut srng);
        let wav = dsp::Waveform::new(samples, dsp::SAMPLE_RATE_HZ).unwrap();
        let s = dsp::spectrogram(&wav).unwrap();
        assert_eq!(s.pixels().len(), SPEC_SIZE * SPEC_SIZE);
        assert!(s.pixels().iter().all(|v| (0.0..=1.0).contains(v)), "wav {i} out of range");
        // spot-check determinism on a subsample
        if rng.random::<f64>() < 0.02 {
            let again = dsp::spectrogram(&wav).unwrap();
            assert_eq!(&again, &s, "wav {i} not deterministic");
        }
    }

    // bin placement: a 1 kHz sine peaks at row 32 (1000 / 31.25)
    let n = dsp::SAMPLE_RATE_HZ as usize;
    let sine: Vec<f32> = (0..n)
        .map(|t| {
            (2.0 * std::f64::consts::PI * 1000.0 * t as f64 / dsp::SAMPLE_RATE_HZ as f64).sin()
                as f32
                * 0.8
        })
        .collect();
    let wav = dsp::Waveform::new(sine, dsp::SAMPLE_RATE_HZ).unwrap();
    let s = dsp::spectrogram(&wav).unwrap();
    for col in [0usize, 60, 121] {
        let best = (0..SPEC_SIZE)
            .max_by(|&a, &b| s.get(a, col).partial_cmp(&s.get(b, col)).unwrap())
            .unwrap();
        assert_eq!(best, 32, "column {col}");
    }
    println!("ACCEPTANCE 10 PASS: 1000 random WAVs in contract; 1 kHz sine lands on row 32; pipeline deterministic");
}
