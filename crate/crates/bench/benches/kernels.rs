//! Microbenchmarks for the hot tensor kernels.

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use std::hint::black_box;

use catkit_core::tensor::{kernels, Graph, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_gemm(c: &mut Criterion) {
    let mut group = c.benchmark_group("gemm");
    // dense-projection shape: [B*n, d] x [d, d]
    let (m, k, n) = (4096usize, 32usize, 32usize);
    let a = vec![0.37f32; m * k];
    let b = vec![0.11f32; k * n];
    let mut out = vec![0.0f32; m * n];
    group.throughput(Throughput::Elements((m * k * n) as u64));
    group.bench_function("nn_4096x32x32", |bench| {
        bench.iter(|| {
            kernels::gemm_nn(black_box(&a), black_box(&b), &mut out, m, k, n);
            black_box(out[0]);
        })
    });

    // attention-score shape: [64, 8] x [1024, 8]^T
    let q = vec![0.2f32; 64 * 8];
    let kk = vec![0.3f32; 1024 * 8];
    let mut scores = vec![0.0f32; 64 * 1024];
    group.throughput(Throughput::Elements((64 * 8 * 1024) as u64));
    group.bench_function("nt_64x8x1024", |bench| {
        bench.iter(|| {
            kernels::gemm_nt_st(black_box(&q), black_box(&kk), &mut scores, 64, 8, 1024);
            black_box(scores[0]);
        })
    });
    group.finish();
}

fn bench_softmax(c: &mut Criterion) {
    let mut group = c.benchmark_group("softmax");
    let mut row = vec![0.0f32; 1024];
    group.throughput(Throughput::Elements(1024));
    group.bench_function("row_1024", |bench| {
        bench.iter(|| {
            for (i, v) in row.iter_mut().enumerate() {
                *v = ((i * 37) % 101) as f32 * 0.03;
            }
            black_box(kernels::softmax_row(&mut row));
        })
    });
    group.finish();
}

fn bench_attention(c: &mut Criterion) {
    let mut group = c.benchmark_group("scaled_attention");
    group.sample_size(10);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = vec![4usize, 2, 1024, 8];
    let q = Tensor::<f32>::randn(shape.clone(), 0.5, &mut rng);
    let k = Tensor::<f32>::randn(shape.clone(), 0.5, &mut rng);
    let v = Tensor::<f32>::randn(shape, 0.5, &mut rng);
    group.bench_function("forward_b4_n1024_d16", |bench| {
        bench.iter(|| {
            let mut g = Graph::<f32>::new();
            let qv = g.input(q.clone());
            let kv = g.input(k.clone());
            let vv = g.input(v.clone());
            let out = g.scaled_attention(qv, kv, vv).unwrap();
            black_box(g.value(out).data()[0]);
        })
    });
    group.bench_function("forward_backward_b4_n1024_d16", |bench| {
        bench.iter(|| {
            let mut g = Graph::<f32>::new();
            let qv = g.param(q.clone());
            let kv = g.param(k.clone());
            let vv = g.param(v.clone());
            let out = g.scaled_attention(qv, kv, vv).unwrap();
            let loss = g.sum(out);
            g.backward(loss).unwrap();
            black_box(g.grad(qv).unwrap().data()[0]);
        })
    });
    group.finish();
}

criterion_group!(benches, bench_gemm, bench_softmax, bench_attention);
criterion_main!(benches);
