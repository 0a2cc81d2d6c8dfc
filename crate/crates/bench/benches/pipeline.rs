use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gazefuse_core::eval::eer;
use gazefuse_core::offset::{idt_fixations, IdtParams};
use gazefuse_core::preprocess::sg_differentiate;
use gazefuse_core::trees::{
    fit_boosting, fit_forest, BoostingParams, EnsembleKind, ForestParams, TrainingSet,
};
use gazefuse_core::GazeSample;

fn scores(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> Vec<f64> {
    (0..n).map(|_| shift + rng.random::<f64>()).collect()
}

fn bench_eer(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let genuine = scores(&mut rng, 60, 0.3);
    let impostor = scores(&mut rng, 3540, 0.0);
    c.bench_function("eer_60x3540", |b| {
        b.iter(|| eer(black_box(&genuine), black_box(&impostor)))
    });
}

fn bench_preprocess(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // 100 s at 1000 Hz.
    let x: Vec<f64> = (0..100_000)
        .map(|i| (i as f64 * 1e-3).sin() * 10.0 + rng.random::<f64>() * 0.05)
        .collect();
    c.bench_function("sg_differentiate_100k", |b| {
        b.iter(|| sg_differentiate(black_box(&x), 1000.0))
    });

    let samples: Vec<GazeSample> = (0..10_000)
        .map(|i| {
            let target = (i / 250) as f64;
            GazeSample::gaze_only(
                i as f64 * 4.0,
                target + rng.random::<f64>() * 0.3,
                rng.random::<f64>() * 0.3,
            )
        })
        .collect();
    let params = IdtParams::default();
    c.bench_function("idt_fixations_10k", |b| {
        b.iter(|| idt_fixations(black_box(&samples), &params))
    });
}

fn training_set(rng: &mut ChaCha8Rng) -> TrainingSet {
    let (x, y): (Vec<Vec<f64>>, Vec<bool>) = (0..900)
        .map(|i| {
            let label = i % 15 == 0;
            let shift = if label { 0.4 } else { 0.0 };
            ((0..8).map(|_| shift + rng.random::<f64>()).collect(), label)
        })
        .unzip();
    TrainingSet::unweighted(x, y).unwrap().with_class_weights()
}

fn bench_trees(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data = training_set(&mut rng);
    let mut group = c.benchmark_group("fit_900x8");
    group.sample_size(10);
    let forest = ForestParams {
        n_trees: 100,
        ..ForestParams::for_kind(EnsembleKind::RandomForest, 8)
    };
    group.bench_function("random_forest_100", |b| {
        b.iter(|| fit_forest(black_box(&data), EnsembleKind::RandomForest, &forest, 1))
    });
    group.bench_function("extra_trees_100", |b| {
        b.iter(|| fit_forest(black_box(&data), EnsembleKind::ExtraTrees, &forest, 1))
    });
    let boosting = BoostingParams::default();
    group.bench_function("boosting_100", |b| {
        b.iter(|| fit_boosting(black_box(&data), &boosting, 1))
    });
    group.finish();
}

criterion_group!(benches, bench_eer, bench_preprocess, bench_trees);
criterion_main!(benches);
