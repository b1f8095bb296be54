//! End-to-end pipeline benchmarks: spectrogram extraction, model forward
//! passes, and a tSNE iteration block.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use catkit_core::dsp::{self, Waveform, SAMPLE_RATE_HZ};
use catkit_core::embed::{tsne, LatentMatrix, TsneConfig};
use catkit_core::models::{forward_batch, Arch, CatConfig, CnnConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn test_waveform(secs: f64) -> Waveform {
    let n = (secs * SAMPLE_RATE_HZ as f64) as usize;
    let samples: Vec<f32> = (0..n)
        .map(|t| {
            let ph = t as f64 / SAMPLE_RATE_HZ as f64;
            ((2.0 * std::f64::consts::PI * 220.0 * ph).sin() * 0.5
                + (2.0 * std::f64::consts::PI * 1760.0 * ph).sin() * 0.3) as f32
        })
        .collect();
    Waveform::new(samples, SAMPLE_RATE_HZ).unwrap()
}

fn bench_spectrogram(c: &mut Criterion) {
    let wav = test_waveform(1.2);
    c.bench_function("spectrogram_1.2s", |b| {
        b.iter(|| black_box(dsp::spectrogram(black_box(&wav)).unwrap()))
    });
}

fn bench_model_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    let wav = test_waveform(1.2);
    let spec = dsp::spectrogram(&wav).unwrap();
    let specs: Vec<_> = (0..8).map(|_| &spec).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let cat = Arch::Cat(CatConfig {
        conv_channels: (8, 16),
        embed_dim: 16,
        drop_path_rate: 0.0,
        dropout: 0.0,
        num_classes: 6,
        ..CatConfig::default()
    });
    let cat_params = cat.init_params::<f32>(&mut rng).unwrap();
    group.bench_function("cat_embed16_batch8", |b| {
        b.iter(|| black_box(forward_batch(&cat, &cat_params, &specs).unwrap()))
    });

    let cnn = Arch::Cnn(CnnConfig { num_classes: 6, ..CnnConfig::default() });
    let cnn_params = cnn.init_params::<f32>(&mut rng).unwrap();
    group.bench_function("cnn_batch8", |b| {
        b.iter(|| black_box(forward_batch(&cnn, &cnn_params, &specs).unwrap()))
    });
    group.finish();
}

fn bench_tsne(c: &mut Criterion) {
    let mut group = c.benchmark_group("tsne");
    group.sample_size(10);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, d) = (400usize, 16usize);
    let x = catkit_core::tensor::Tensor::<f64>::randn(vec![n, d], 1.0, &mut rng);
    let matrix = LatentMatrix::new(x.data().to_vec(), n, d).unwrap();
    let cfg = TsneConfig { perplexity: 30.0, iterations: 100, seed: 0, ..TsneConfig::default() };
    group.bench_function("n400_iters100", |b| {
        b.iter(|| black_box(tsne(&matrix, &cfg).unwrap().final_kl))
    });
    group.finish();
}

criterion_group!(benches, bench_spectrogram, bench_model_forward, bench_tsne);
criterion_main!(benches);
