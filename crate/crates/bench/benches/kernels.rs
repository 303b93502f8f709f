//! Throughput of the hot paths: convolution, matrix products, fused
//! attention, the non-local block and one optimizer step.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use lgnet::blocks::{ForwardCtx, Model, ModelSpec, NonLocalBlock, Variant};
use lgnet::data::{synth_generate, SynthConfig};
use lgnet::training::{train, TrainConfig};
use lgnet::{Rng, Tape, Tensor};

const BATCH: usize = 32;
const CHANNELS: usize = 32;
const SIDE: usize = 32;

/// Deterministic values in [-0.5, 0.5).
fn filled(shape: &[usize], salt: usize) -> Tensor<f32> {
    Tensor::from_fn(shape.to_vec(), |i| {
        ((i * 7919 + salt * 104_729) % 1000) as f32 / 1000.0 - 0.5
    })
}

fn conv(c: &mut Criterion) {
    let x = filled(&[BATCH, CHANNELS, SIDE, SIDE], 1);
    let w = filled(&[CHANNELS, CHANNELS, 3, 3], 2).map(|v| v * 0.1);
    let b = Tensor::zeros([CHANNELS]);
    let mut group = c.benchmark_group("conv3x3_32ch_batch32");
    group.sample_size(10);
    group.bench_function("forward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv, bv) = (
                tape.constant(x.clone()),
                tape.param(w.clone()),
                tape.param(b.clone()),
            );
            tape.conv2d(xv, wv, bv, 1).unwrap()
        })
    });
    group.bench_function("forward_backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (xv, wv, bv) = (
                tape.param(x.clone()),
                tape.param(w.clone()),
                tape.param(b.clone()),
            );
            let y = tape.conv2d(xv, wv, bv, 1).unwrap();
            let loss = tape.sum(y);
            tape.backward(loss).unwrap()
        })
    });
    group.finish();
}

fn matmul(c: &mut Criterion) {
    let n = SIDE * SIDE;
    let a = filled(&[n, CHANNELS], 3);
    let b = filled(&[CHANNELS, n], 4);
    c.bench_function("matmul_1024x32x1024", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
            tape.matmul(av, bv).unwrap()
        })
    });
}

fn attention(c: &mut Criterion) {
    let n = SIDE * SIDE;
    let inner = CHANNELS / 8;
    let q = filled(&[BATCH, inner, n], 5);
    let k = filled(&[BATCH, inner, n], 6);
    let v = filled(&[BATCH, CHANNELS, n], 7);
    let mut group = c.benchmark_group("attention_1024pos_batch32");
    group.sample_size(10);
    group.bench_function("forward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (qv, kv, vv) = (
                tape.constant(q.clone()),
                tape.constant(k.clone()),
                tape.constant(v.clone()),
            );
            tape.attention(qv, kv, vv).unwrap()
        })
    });
    group.bench_function("forward_backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let (qv, kv, vv) = (
                tape.param(q.clone()),
                tape.param(k.clone()),
                tape.param(v.clone()),
            );
            let y = tape.attention(qv, kv, vv).unwrap();
            let loss = tape.sum(y);
            tape.backward(loss).unwrap()
        })
    });
    group.finish();
}

fn non_local_block(c: &mut Criterion) {
    let mut block = NonLocalBlock::<f32>::new(CHANNELS, 8, &mut Rng::seed(1)).unwrap();
    block.set_gamma(0.5);
    let x = filled(&[BATCH, CHANNELS, SIDE, SIDE], 8);
    let mut group = c.benchmark_group("non_local_block_batch32");
    group.sample_size(10);
    group.bench_function("forward_backward", |bench| {
        bench.iter(|| {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let mut ctx = ForwardCtx::eval_with_grads();
            let y = block.forward(&mut tape, xv, &mut ctx).unwrap();
            let loss = tape.sum(y);
            tape.backward(loss).unwrap()
        })
    });
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let ds = synth_generate(&SynthConfig {
        n_samples: BATCH,
        ..SynthConfig::default()
    })
    .unwrap();
    let indices: Vec<usize> = (0..BATCH).collect();
    let config = TrainConfig {
        epochs: 1,
        batch_size: BATCH,
        ..TrainConfig::desk()
    };
    let mut group = c.benchmark_group("train_step_batch32");
    group.sample_size(10);
    for variant in [Variant::BasicResnet, Variant::LocalGlobal, Variant::AllAtn] {
        let model = Model::<f32>::build(ModelSpec::new(variant), &mut Rng::seed(2)).unwrap();
        group.bench_function(variant.name(), |bench| {
            bench.iter_batched(
                || model.clone(),
                |mut m| train(&mut m, &ds, &indices, &config, &mut |_, _| {}).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    conv,
    matmul,
    attention,
    non_local_block,
    training_step
);
criterion_main!(benches);
