use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qforge::nn::ForwardCtx;
use qforge::tensor::no_grad;
use qforge::Variant;
use qforge_bench::fixture;

const BATCH: usize = 8;

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for variant in Variant::ALL {
        let f = fixture(variant, BATCH, 4).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(variant), &f, |b, f| {
            b.iter(|| no_grad(|| f.net.forward(&f.input, &mut ForwardCtx::eval())).unwrap())
        });
    }
    group.finish();
}

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    group.sample_size(10);
    for variant in Variant::ALL {
        let f = fixture(variant, BATCH, 4).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(variant), &f, |b, f| {
            b.iter(|| {
                f.net.zero_grad();
                f.net.forward(&f.input, &mut ForwardCtx::train(0)).unwrap().sum().backward().unwrap();
            })
        });
    }
    group.finish();
}

criterion_group!(benches, forward, forward_backward);
criterion_main!(benches);
