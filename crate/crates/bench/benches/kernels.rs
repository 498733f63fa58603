use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use omnifield::autodiff::Tape;
use omnifield::config::{DataConfig, ModelConfig, RunConfig};
use omnifield::data::FieldDataset;
use omnifield::encodings::GaussianFourierFeatures;
use omnifield::model::{masked_loss, OmniFieldModel, QuerySet, Targets};
use omnifield::tensor::Tensor;

fn filled(rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|i| ((i * 37 % 101) as f64 / 50.0) - 1.0).collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn matmul(c: &mut Criterion) {
    let a = filled(128, 80);
    let b = filled(80, 32);
    c.bench_function("matmul 128x80x32", |bench| bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap()));
}

fn fourier_features(c: &mut Criterion) {
    let enc = GaussianFourierFeatures::new(1, 16, 2.0, 0).unwrap();
    let coords = filled(200, 1);
    c.bench_function("gff 200 points x 16 bands", |bench| bench.iter(|| enc.encode(black_box(&coords)).unwrap()));
}

fn model_step(c: &mut Criterion) {
    let cfg = RunConfig::preset("desk-synthetic").unwrap();
    let ds = FieldDataset::generate(&DataConfig { timesteps: 60, ..cfg.data.clone() }).unwrap();
    let model = OmniFieldModel::new(cfg.model.clone(), ds.modalities().to_vec(), ds.spatial_dim()).unwrap();
    let ctx = ds.context(0, &[true, true]).unwrap();
    let locs: Vec<f64> = (0..32).map(|i| i as f64 * 0.3).collect();
    let queries = QuerySet::new(1, 0.1, vec![Some(locs.clone()), Some(locs)]);
    let targets = Targets {
        values: vec![Some(vec![0.5; 32]), Some(vec![-0.5; 32])],
    };
    c.bench_function("forward desk model", |bench| bench.iter(|| model.predict(&ctx, &queries).unwrap()));
    c.bench_function("forward and backward desk model", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            let p = model.params().bind(&tape);
            let preds = model.forward(&p, &tape, &ctx, &queries).unwrap();
            let loss = masked_loss(&tape, &preds, &targets, &queries.supervised).unwrap();
            black_box(tape.backward(loss).unwrap());
        })
    });
}

fn data_generation(c: &mut Criterion) {
    let cfg = DataConfig {
        timesteps: 100,
        ..DataConfig::default()
    };
    let mut group = c.benchmark_group("data");
    group.sample_size(10);
    group.bench_function("generate 100 sites x 100 steps", |bench| {
        bench.iter(|| FieldDataset::generate(black_box(&cfg)).unwrap())
    });
    group.finish();
}

fn micro_forward(c: &mut Criterion) {
    let model = OmniFieldModel::new(ModelConfig::micro(), vec!["a".into(), "b".into()], 1).unwrap();
    let ds = FieldDataset::generate(&DataConfig {
        timesteps: 40,
        ..DataConfig::default()
    })
    .unwrap();
    let ctx = ds.context(0, &[true, true]).unwrap();
    let queries = QuerySet::new(1, 0.1, vec![Some(vec![1.0, 2.0]), Some(vec![3.0, 4.0])]);
    c.bench_function("forward micro model", |bench| bench.iter(|| model.predict(&ctx, &queries).unwrap()));
}

criterion_group!(benches, matmul, fourier_features, model_step, micro_forward, data_generation);
criterion_main!(benches);
