//! Subcommand implementations.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use catkit_core::data::{self, Manifest, Sample, Split, ToySpec};
use catkit_core::dsp::{self, FreqCrop, SpecConfig};
use catkit_core::eval::{
    attribute_closed, attribute_open, confusion, weighted_metrics, Decision, Label,
};
use catkit_core::losses::{LossConfig, LossKind};
use catkit_core::models::{
    load_checkpoint, save_checkpoint, Arch, CatConfig, Checkpoint, CnnConfig, MlpConfig,
};
use catkit_core::train::{
    fit, predict_in_batches, sweep_epsilon, LabeledDataset, OptimKind, TrainConfig,
    DEFAULT_EPSILON_GRID,
};

use crate::opts::*;

pub fn dispatch(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_ref())?;
    match cli.command {
        Command::GenToy(a) => cmd_gen_toy(a, &cfg),
        Command::Prep(a) => cmd_prep(a, &cfg),
        Command::Train(a) => cmd_train(a, &cfg).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(a, &cfg),
        Command::Eval(a) => cmd_eval(a, &cfg),
        Command::Embed(a) => cmd_embed(a, &cfg),
        Command::Attribute(a) => cmd_attribute(a, &cfg),
    }
}

fn spec_config(hop: Option<usize>, freq_crop: Option<String>, cfg: &FileConfig) -> Result<SpecConfig> {
    let hop = cfg.resolve(hop, "hop", 128)?;
    let crop_name: String = cfg.resolve(freq_crop, "freq-crop", "low".to_string())?;
    let freq_crop: FreqCrop = crop_name.parse()?;
    Ok(SpecConfig { hop, freq_crop, ..SpecConfig::default() })
}

fn cmd_gen_toy(a: GenToyArgs, cfg: &FileConfig) -> Result<()> {
    let known = cfg.resolve(a.known, "known", 6)?;
    let unknown = cfg.resolve(a.unknown, "unknown", 2)?;
    let train_per_class = cfg.resolve(a.train_per_class, "train-per-class", 200)?;
    let test_per_class = cfg.resolve(a.test_per_class, "test-per-class", 100)?;
    let duration = cfg.resolve(a.duration, "duration", 1.2)?;
    let seed = cfg.resolve(a.seed, "seed", 0)?;

    let spec = ToySpec { duration_s: duration, ..ToySpec::default_corpus(known, unknown, seed) };
    let manifest = data::gen_toy(&spec, known, unknown, train_per_class, test_per_class, &a.out)?;
    println!(
        "wrote {} WAV files ({} train / {} test) and {}",
        manifest.entries().len(),
        manifest.train_entries().count(),
        manifest.test_entries().count(),
        a.out.join("manifest.csv").display()
    );
    Ok(())
}

fn cmd_prep(a: PrepArgs, cfg: &FileConfig) -> Result<()> {
    let spec_cfg = spec_config(a.hop, a.freq_crop.clone(), cfg)?;
    let manifest = Manifest::load(&a.manifest)?;
    let written = data::prep_cache(&manifest, &a.cache, &spec_cfg, a.force)?;

    let summary = json!({
        "command": "prep",
        "manifest": a.manifest,
        "cache": a.cache,
        "config": serde_json::to_value(spec_cfg)?,
        "entries": manifest.entries().len(),
        "written": written,
    });
    let summary_path = a.cache.join("prep.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", summary_path.display()))?;
    println!(
        "cached {written} spectrograms ({} already present)",
        manifest.entries().len() - written
    );
    Ok(())
}

/// Everything `train` resolved, for reuse by `sweep`.
struct ResolvedTrain {
    train_cfg: TrainConfig,
    spec_cfg: SpecConfig,
    dataset: LabeledDataset,
    class_names: Vec<String>,
    resolved: serde_json::Value,
}

fn resolve_train(a: &TrainArgs, cfg: &FileConfig) -> Result<ResolvedTrain> {
    let spec_cfg = spec_config(a.hop, a.freq_crop.clone(), cfg)?;
    let manifest = Manifest::load(&a.manifest)?;
    let num_classes = manifest.num_classes();
    if num_classes < 2 {
        bail!("manifest has {num_classes} known classes; need at least 2");
    }

    let arch_name: String = cfg.resolve(a.arch.clone(), "arch", "cat".to_string())?;
    let embed_dim = cfg.resolve(a.embed_dim, "embed-dim", 128)?;
    let conv_channels: String = cfg.resolve(
        a.conv_channels.clone(),
        "conv-channels",
        format!("{},{}", embed_dim / 2, embed_dim),
    )?;
    let channels = parse_channel_pair(&conv_channels)?;
    let arch = match arch_name.as_str() {
        "cat" => Arch::Cat(CatConfig {
            conv_channels: channels,
            embed_dim,
            num_layers: cfg.resolve(a.layers, "layers", 2)?,
            num_heads: cfg.resolve(a.heads, "heads", 2)?,
            mlp_ratio: cfg.resolve(a.mlp_ratio, "mlp-ratio", 2.0)?,
            drop_path_rate: cfg.resolve(a.drop_path, "drop-path", 0.1)?,
            dropout: cfg.resolve(a.dropout, "dropout", 0.1)?,
            num_classes,
            input_size: 128,
        }),
        "cnn" => Arch::Cnn(CnnConfig { num_classes, ..CnnConfig::default() }),
        "mlp" => Arch::Mlp(MlpConfig { num_classes, ..MlpConfig::default() }),
        other => bail!("unknown arch `{other}` (want cat, cnn, or mlp)"),
    };

    let loss_name: String = cfg.resolve(a.loss.clone(), "loss", "poly1ce".to_string())?;
    let kind: LossKind = loss_name.parse()?;
    let mut loss = LossConfig::new(kind);
    if let Some(eps) = cfg.resolve_opt(a.epsilon, "epsilon")? {
        loss.epsilon = eps;
    }
    if let Some(gamma) = cfg.resolve_opt(a.gamma, "gamma")? {
        loss.gamma = gamma;
    }

    // per-architecture training protocol defaults
    let proto = match &arch {
        Arch::Cat(_) => TrainConfig::cat_protocol(arch.clone(), loss),
        Arch::Cnn(_) => TrainConfig::cnn_protocol(arch.clone(), loss),
        Arch::Mlp(_) => TrainConfig::mlp_protocol(arch.clone(), loss),
    };
    let optimizer_name: String = cfg.resolve(
        a.optimizer.clone(),
        "optimizer",
        match proto.optimizer {
            OptimKind::Adam => "adam".to_string(),
            OptimKind::AdamW => "adamw".to_string(),
        },
    )?;
    let train_cfg = TrainConfig {
        optimizer: optimizer_name.parse()?,
        lr: cfg.resolve(a.lr, "lr", proto.lr)?,
        weight_decay: cfg.resolve(a.wd, "wd", proto.weight_decay)?,
        epochs: cfg.resolve(a.epochs, "epochs", proto.epochs)?,
        patience: cfg.resolve(a.patience, "patience", proto.patience)?,
        batch_size: cfg.resolve(a.batch_size, "batch-size", proto.batch_size)?,
        seed: cfg.resolve(a.seed, "seed", 0)?,
        validation_fraction: cfg.resolve(a.val_fraction, "val-fraction", 0.1)?,
        ..proto
    };

    let samples = data::load_split(&manifest, Split::Train, a.cache.as_deref(), &spec_cfg)?;
    let dataset = LabeledDataset::new(
        samples.iter().map(|s| s.spec.clone()).collect(),
        samples
            .iter()
            .map(|s| s.label.ok_or_else(|| anyhow::anyhow!("unlabeled training sample")))
            .collect::<Result<_>>()?,
    )?;

    let resolved = json!({
        "command": "train",
        "manifest": a.manifest,
        "spec": { "hop": spec_cfg.hop, "freq_crop": format!("{:?}", spec_cfg.freq_crop).to_lowercase() },
        "train": serde_json::to_value(&train_cfg)?,
    });
    Ok(ResolvedTrain {
        train_cfg,
        spec_cfg,
        dataset,
        class_names: manifest.class_names().to_vec(),
        resolved,
    })
}

fn parse_channel_pair(text: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 2 {
        bail!("conv-channels must be `c1,c2`, got `{text}`");
    }
    Ok((parts[0].trim().parse()?, parts[1].trim().parse()?))
}

fn cmd_train(a: TrainArgs, cfg: &FileConfig) -> Result<Checkpoint> {
    let r = resolve_train(&a, cfg)?;
    let fitted = fit(&r.dataset, &r.train_cfg)?;

    if let Some(history_path) = &a.history {
        let mut text = format!("# catkit train config={}\n", r.resolved);
        text.push_str("epoch,train_loss,val_loss,val_acc\n");
        for h in &fitted.history {
            text.push_str(&format!(
                "{},{},{},{}\n",
                h.epoch, h.train_loss, h.val_loss, h.val_accuracy
            ));
        }
        std::fs::write(history_path, text)
            .with_context(|| format!("writing {}", history_path.display()))?;
    }

    let ckpt = Checkpoint {
        arch: r.train_cfg.arch.clone(),
        class_names: r.class_names.clone(),
        spec: r.spec_cfg,
        seed: r.train_cfg.seed,
        run_config: r.resolved.clone(),
        params: fitted.params,
    };
    save_checkpoint(&a.out, &ckpt)?;
    let best = fitted.history[fitted.best_epoch - 1];
    println!(
        "trained {} for {} epochs (best epoch {}: val_loss {:.4}, val_acc {:.4}); checkpoint: {}",
        r.train_cfg.arch.arch_name(),
        fitted.history.len(),
        fitted.best_epoch,
        best.val_loss,
        best.val_accuracy,
        a.out.display()
    );
    Ok(ckpt)
}

fn cmd_sweep(a: SweepArgs, cfg: &FileConfig) -> Result<()> {
    let r = resolve_train(&a.train, cfg)?;
    if !matches!(r.train_cfg.loss.kind, LossKind::Poly1Ce | LossKind::Poly1Fl) {
        bail!("sweep requires a poly-1 loss (poly1ce or poly1fl)");
    }
    let epsilons: Vec<f64> = match cfg.resolve_opt(a.epsilons.clone(), "epsilons")? {
        Some(text) => text
            .split(',')
            .map(|v| v.trim().parse::<f64>().context("parsing epsilon"))
            .collect::<Result<_>>()?,
        None => DEFAULT_EPSILON_GRID.to_vec(),
    };

    let rows = sweep_epsilon(&r.dataset, &r.train_cfg, &epsilons)?;
    let mut text = format!("# catkit sweep config={} epsilons={epsilons:?}\n", r.resolved);
    text.push_str("epsilon,val_accuracy,val_loss,best_epoch\n");
    println!("epsilon  val_accuracy  val_loss  best_epoch");
    let mut best = &rows[0];
    for row in &rows {
        text.push_str(&format!(
            "{},{},{},{}\n",
            row.epsilon, row.val_accuracy, row.val_loss, row.best_epoch
        ));
        println!(
            "{:<8} {:<13.4} {:<9.4} {}",
            row.epsilon, row.val_accuracy, row.val_loss, row.best_epoch
        );
        if row.val_accuracy > best.val_accuracy {
            best = row;
        }
    }
    std::fs::write(&a.sweep_out, text)
        .with_context(|| format!("writing {}", a.sweep_out.display()))?;
    println!("best epsilon: {} (val_acc {:.4})", best.epsilon, best.val_accuracy);
    Ok(())
}

fn load_test_samples(
    manifest_path: &Path,
    cache: Option<&Path>,
    spec_cfg: &SpecConfig,
    ckpt: &Checkpoint,
) -> Result<Vec<Sample>> {
    let manifest = Manifest::load(manifest_path)?;
    if manifest.class_names() != ckpt.class_names {
        bail!(
            "manifest classes {:?} do not match checkpoint classes {:?}",
            manifest.class_names(),
            ckpt.class_names
        );
    }
    Ok(data::load_split(&manifest, Split::Test, cache, spec_cfg)?)
}

fn cmd_eval(a: EvalArgs, cfg: &FileConfig) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let mode: String = cfg.resolve(a.mode.clone(), "mode", "closed".to_string())?;
    let threshold = cfg.resolve(a.threshold, "threshold", 0.5)?;
    let open = match mode.as_str() {
        "closed" => false,
        "open" => true,
        other => bail!("unknown mode `{other}` (want closed or open)"),
    };
    let samples = load_test_samples(&a.manifest, a.cache.as_deref(), &ckpt.spec, &ckpt)?;
    let samples: Vec<&Sample> = if open {
        samples.iter().collect()
    } else {
        samples.iter().filter(|s| s.label.is_some()).collect()
    };
    if samples.is_empty() {
        bail!("no test samples for mode `{mode}`");
    }

    let specs: Vec<_> = samples.iter().map(|s| &s.spec).collect();
    let outputs = predict_in_batches(&ckpt.arch, &ckpt.params, &specs, 32)?;
    let truths: Vec<Label> =
        samples.iter().map(|s| s.label.map_or(Label::Unknown, Label::Known)).collect();
    let decisions: Vec<Decision> = outputs
        .iter()
        .map(|o| {
            if open {
                attribute_open(&o.probabilities, threshold)
            } else {
                Ok(attribute_closed(&o.probabilities))
            }
        })
        .collect::<catkit_core::Result<_>>()?;

    let n_known = ckpt.class_names.len();
    let cm = confusion(&decisions, &truths, n_known, open)?;
    let metrics = weighted_metrics(&cm)?;

    let report = json!({
        "command": "eval",
        "mode": mode,
        "threshold": if open { Some(threshold) } else { None },
        "manifest": a.manifest,
        "checkpoint": a.ckpt,
        "seed": ckpt.seed,
        "class_names": ckpt.class_names,
        "num_samples": samples.len(),
        "support": cm.support(),
        "confusion": cm.rows(),
        "metrics": metrics,
        "train_config": ckpt.run_config,
    });
    std::fs::write(&a.report, serde_json::to_string_pretty(&report)?)
        .with_context(|| format!("writing {}", a.report.display()))?;

    if let Some(per_sample) = &a.per_sample {
        let mut text = format!(
            "# catkit eval mode={mode} threshold={threshold} ckpt={}\n",
            a.ckpt.display()
        );
        text.push_str("path,truth,prediction,p_m\n");
        let label_name = |l: Label| match l {
            Label::Known(i) => ckpt.class_names[i].clone(),
            Label::Unknown => "unknown".to_string(),
        };
        for ((s, d), o) in samples.iter().zip(&decisions).zip(&outputs) {
            text.push_str(&format!(
                "{},{},{},{}\n",
                s.filepath.display(),
                label_name(s.label.map_or(Label::Unknown, Label::Known)),
                label_name(d.label),
                o.probabilities.p_max()
            ));
        }
        std::fs::write(per_sample, text)
            .with_context(|| format!("writing {}", per_sample.display()))?;
    }

    println!(
        "{mode} set: {} samples, accuracy {:.4}, precision {:.4}, recall {:.4}, F1 {:.4}",
        samples.len(),
        metrics.accuracy,
        metrics.precision,
        metrics.recall,
        metrics.f1
    );
    Ok(())
}

fn cmd_embed(a: EmbedArgs, cfg: &FileConfig) -> Result<()> {
    use catkit_core::embed::{cluster_report, subsample_stratified, tsne, LatentMatrix, TsneConfig};

    let ckpt = load_checkpoint(&a.ckpt)?;
    let max_points = cfg.resolve(a.max_points, "max-points", 2000)?;
    let tsne_cfg = TsneConfig {
        perplexity: cfg.resolve(a.perplexity, "perplexity", 50.0)?,
        iterations: cfg.resolve(a.iterations, "iterations", 1500)?,
        seed: cfg.resolve(a.seed, "seed", 0)?,
        ..TsneConfig::default()
    };
    let samples = load_test_samples(&a.manifest, a.cache.as_deref(), &ckpt.spec, &ckpt)?;

    let labels: Vec<String> = samples.iter().map(|s| s.synthesizer.clone()).collect();
    let picked = subsample_stratified(&labels, max_points, tsne_cfg.seed);
    let picked_samples: Vec<&Sample> = picked.iter().map(|&i| &samples[i]).collect();

    let specs: Vec<_> = picked_samples.iter().map(|s| &s.spec).collect();
    let outputs = predict_in_batches(&ckpt.arch, &ckpt.params, &specs, 32)?;
    let d = outputs[0].latent.len();
    let flat: Vec<f64> = outputs.iter().flat_map(|o| o.latent.iter().map(|&v| v as f64)).collect();
    let matrix = LatentMatrix::new(flat, outputs.len(), d)?;
    let result = tsne(&matrix, &tsne_cfg)?;

    let picked_labels: Vec<String> =
        picked_samples.iter().map(|s| s.synthesizer.clone()).collect();
    let clusters = cluster_report(&result.embedding, &picked_labels, tsne_cfg.seed)?;

    let resolved = json!({
        "command": "embed",
        "manifest": a.manifest,
        "checkpoint": a.ckpt,
        "max_points": max_points,
        "tsne": serde_json::to_value(tsne_cfg)?,
    });
    let mut text = format!("# catkit embed config={resolved}\n");
    text.push_str("sample_path,synthesizer,known_flag,y1,y2\n");
    for (s, y) in picked_samples.iter().zip(&result.embedding) {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            s.filepath.display(),
            s.synthesizer,
            s.label.is_some(),
            y[0],
            y[1]
        ));
    }
    std::fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;

    if let Some(report_path) = &a.report {
        let report = json!({
            "config": resolved,
            "points": result.embedding.len(),
            "initial_kl": result.initial_kl,
            "final_kl": result.final_kl,
            "clusters": clusters,
        });
        std::fs::write(report_path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", report_path.display()))?;
    }
    println!(
        "embedded {} points: KL {:.4} -> {:.4}, cluster purity {:.4}",
        result.embedding.len(),
        result.initial_kl,
        result.final_kl,
        clusters.overall_purity
    );
    Ok(())
}

fn cmd_attribute(a: AttributeArgs, cfg: &FileConfig) -> Result<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let threshold = cfg.resolve(a.threshold, "threshold", 0.5)?;
    let wav = dsp::read_wav(&a.wav)?;
    let spec = dsp::spectrogram_with(&wav, &ckpt.spec)?;
    let outputs = predict_in_batches(&ckpt.arch, &ckpt.params, &[&spec], 1)?;
    let out = &outputs[0];

    println!("probabilities for {}:", a.wav.display());
    for (name, p) in ckpt.class_names.iter().zip(out.probabilities.probs()) {
        println!("  {name}: {p:.4}");
    }
    let closed = attribute_closed(&out.probabilities);
    let Label::Known(idx) = closed.label else { unreachable!() };
    println!("closed-set: {} (p_m = {:.4})", ckpt.class_names[idx], closed.confidence);
    let open = attribute_open(&out.probabilities, threshold)?;
    match open.label {
        Label::Known(i) => println!("open-set (T = {threshold}): {}", ckpt.class_names[i]),
        Label::Unknown => println!("open-set (T = {threshold}): unknown (U)"),
    }
    Ok(())
}
