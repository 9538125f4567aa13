use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tabimpute::nn::ForwardCtx;
use tabimpute::{train, Architecture, Graph, Rng, TrainingConfig};
use tabimpute_bench::{model, table};

const K: usize = 8;
const BATCH: usize = 64;

fn forward_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_backward");
    group.sample_size(20);
    let x = table(BATCH, K, 1);
    let target = table(BATCH, K, 2);
    let t: Vec<f64> = (0..BATCH).map(|i| (i * 13 % 1000 + 1) as f64).collect();
    for arch in Architecture::ALL {
        let d = model(arch, K);
        group.bench_function(BenchmarkId::new("eval", arch.name()), |b| b.iter(|| d.predict(&x, &t).unwrap()));
        group.bench_function(BenchmarkId::new("train", arch.name()), |b| {
            b.iter(|| {
                let g = Graph::new();
                let mut ctx = ForwardCtx::train(Rng::new(3));
                let y = d.forward(&g, g.constant(x.clone()), &t, &mut ctx).unwrap();
                g.backward(y.smooth_l1(&target, 1.0)).unwrap()
            })
        });
    }
    group.finish();
}

fn epoch(c: &mut Criterion) {
    let mut group = c.benchmark_group("epoch");
    group.sample_size(10);
    let data = table(1024, K, 4);
    let cfg = TrainingConfig {
        epochs: 1,
        ..TrainingConfig::default()
    };
    for arch in [Architecture::Mlp, Architecture::ResNet] {
        group.bench_function(arch.name(), |b| {
            b.iter_batched(|| model(arch, K), |mut d| train(&mut d, &data, &cfg).unwrap(), criterion::BatchSize::LargeInput)
        });
    }
    group.finish();
}

criterion_group!(benches, forward_backward, epoch);
criterion_main!(benches);
