use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use envfield_core::oracle::envelope;
use envfield_core::sampler::sample_uniform;
use envfield_core::{
    build_tree, infer, kmeans, random_site_set, rasterize, train_tree, Aabb, Encoding, GenSpec,
    Mlp, OraclePredictor, RasterMode, TrainConfig, TreeParams,
};

fn segments(n: usize) -> envfield_core::SiteSet {
    random_site_set(
        &GenSpec {
            n,
            ..GenSpec::default()
        },
        1,
    )
    .unwrap()
}

fn oracle(c: &mut Criterion) {
    let ss = segments(200);
    let queries = sample_uniform(ss.domain(), 1000, 2);
    c.bench_function("envelope/200 segments x 1000 queries", |b| {
        b.iter(|| {
            for x in &queries {
                black_box(envelope(&ss, x));
            }
        })
    });
}

fn hierarchy(c: &mut Criterion) {
    let ss = segments(1000);
    let reps: Vec<Vec<f64>> = ss
        .sites()
        .iter()
        .map(|s| s.representative_point())
        .collect();
    c.bench_function("kmeans/1000 points k=16", |b| {
        b.iter(|| kmeans(black_box(&reps), 16, 3).unwrap())
    });
    c.bench_function("build_tree/1000 segments", |b| {
        b.iter(|| build_tree(black_box(&ss), TreeParams::default(), 3).unwrap())
    });
}

fn neural(c: &mut Criterion) {
    let region = Aabb::unit(2);
    let model = Mlp::init(
        &[2, 64, 64, 16],
        Encoding::Fourier { frequencies: 6 },
        region.clone(),
        1,
    )
    .unwrap();
    let xs = sample_uniform(&region, 128, 4);
    let labels: Vec<usize> = (0..128).map(|i| i % 16).collect();
    c.bench_function("mlp/forward single", |b| {
        b.iter(|| model.forward(black_box(&xs[0])))
    });
    c.bench_function("mlp/loss_and_grad batch 128", |b| {
        b.iter(|| model.loss_and_grad(black_box(&xs), &labels).unwrap())
    });
}

fn runtime(c: &mut Criterion) {
    let ss = segments(60);
    let mut tree = build_tree(
        &ss,
        TreeParams {
            k: 4,
            leaf_capacity: 16,
            dilation: 0.1,
        },
        1,
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        n_uniform: 500,
        n_boundary: 500,
        ..TrainConfig::default()
    };
    train_tree(&mut tree, &ss, &cfg).unwrap();
    let queries = sample_uniform(ss.domain(), 1000, 5);
    c.bench_function("infer/greedy 1000 queries", |b| {
        b.iter(|| {
            for x in &queries {
                black_box(infer(&tree, x, 1));
            }
        })
    });
    c.bench_function("train_tree/60 segments, 2 epochs", |b| {
        b.iter_batched(
            || tree.clone(),
            |mut t| train_tree(&mut t, &ss, &cfg).unwrap(),
            BatchSize::LargeInput,
        )
    });
    c.bench_function("rasterize/oracle labels 128^2", |b| {
        b.iter(|| {
            rasterize(
                &OraclePredictor { ss: &ss },
                None,
                &ss,
                128,
                RasterMode::Labels,
                None,
            )
            .unwrap()
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = oracle, hierarchy, neural, runtime
}
criterion_main!(benches);
