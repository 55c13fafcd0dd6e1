use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fcnet_core::data::synth_generate;
use fcnet_core::model::{fcnet_forward, init_params};
use fcnet_core::spectral::dft2d;
use fcnet_core::trainer::loss_and_grads;
use fcnet_core::{ConvSpec, FcnetConfig, Tape, Tensor, WindowPair};

fn ramp(shape: &[usize]) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| ((i * 7919) % 97) as f32 / 97.0 - 0.5)
}

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d");
    let cases = [
        ("dense3x3", [4, 32, 32, 32], [32, 32, 3, 3], ConvSpec::same(3)),
        ("depthwise3x3", [4, 32, 32, 32], [32, 1, 3, 3], ConvSpec::same(3).with_groups(32)),
        ("pointwise", [4, 32, 32, 32], [64, 32, 1, 1], ConvSpec::same(1)),
    ];
    for (name, xs, ks, spec) in cases {
        let (x, k) = (ramp(&xs), ramp(&ks));
        g.bench_function(BenchmarkId::new("forward", name), |b| {
            b.iter(|| {
                let mut tape = Tape::<f32>::new();
                let (xv, kv) = (tape.constant(x.clone()), tape.constant(k.clone()));
                black_box(tape.conv2d(xv, kv, spec).unwrap());
            })
        });
        g.bench_function(BenchmarkId::new("backward", name), |b| {
            b.iter(|| {
                let mut tape = Tape::<f32>::new();
                let (xv, kv) = (tape.leaf(x.clone()), tape.leaf(k.clone()));
                let y = tape.conv2d(xv, kv, spec).unwrap();
                let s = tape.sum(y).unwrap();
                tape.backward(s).unwrap();
                black_box(tape.grad(kv).unwrap());
            })
        });
    }
    g.finish();
}

fn fft(c: &mut Criterion) {
    let mut g = c.benchmark_group("dft2d");
    for n in [16usize, 32, 64, 48] {
        let x = ramp(&[14, n, n]);
        g.bench_function(BenchmarkId::from_parameter(n), |b| b.iter(|| black_box(dft2d(&x).unwrap())));
    }
    g.finish();
}

fn model(c: &mut Criterion) {
    let cfg = FcnetConfig { t: 14, t_prime: 14, h: 32, w: 32, embed_dim: 32, affb_blocks: 4, hfeb_blocks: 2, hidden: 32, ..FcnetConfig::default() };
    let params = init_params(&cfg, 0).unwrap();
    let seq = synth_generate(28, 32, 32, 1).unwrap();
    let pair = WindowPair { x: seq.slice_days(0, 14).unwrap(), y: seq.slice_days(14, 14).unwrap() };
    let x = Tensor::new(&[1, 14, 1, 32, 32], pair.x.data().data().to_vec()).unwrap();
    let mut g = c.benchmark_group("fcnet32");
    g.sample_size(10);
    g.bench_function("forward", |b| b.iter(|| black_box(fcnet_forward(&params, &cfg, &x).unwrap())));
    g.bench_function("loss_and_grads", |b| {
        b.iter(|| black_box(loss_and_grads(&params, &cfg, &[&pair], pair.y.mask()).unwrap()))
    });
    g.finish();
}

criterion_group!(benches, conv, fft, model);
criterion_main!(benches);
