//! Parallel vs sequential throughput on the data-parallel pipeline
//! stages: batched model inference, per-category metric evaluation, and
//! dataset preparation (decode + crop + resample). Each stage is timed
//! twice — with the worker pool enabled and fully sequential — via the
//! runtime toggle, so one run quantifies what parallelism buys on the
//! current machine.
//!
//! Run with `cargo bench -p emoctx`. Building with
//! `--no-default-features` removes the pool entirely; the "parallel"
//! variants then measure the sequential fallback.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emoctx::dataset::preprocess::NormStats;
use emoctx::dataset::parse_manifest;
use emoctx::exec;
use emoctx::harness::synth::{generate, SynthSpec};
use emoctx::harness::{evaluate_prepared, prepare_dataset, EvalOptions};
use emoctx::metrics::evaluate_discrete;
use emoctx::model::{build_model, ModelConfig};

fn each_mode(c: &mut Criterion, group: &str, mut run: impl FnMut()) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    for (name, parallel) in [("parallel", true), ("sequential", false)] {
        g.bench_function(name, |b| {
            exec::set_parallel(parallel);
            b.iter(&mut run);
        });
    }
    g.finish();
    exec::set_parallel(true);
}

fn bench_batch_inference(c: &mut Criterion) {
    let config = ModelConfig {
        body_crop_side: 16,
        context_side: 24,
        ..ModelConfig::default()
    };
    let model = build_model(&config, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let body = Array4::from_shape_simple_fn((16, 3, 16, 16), || rng.gen_range(-1.0f32..1.0));
    let ctx = Array4::from_shape_simple_fn((16, 3, 24, 24), || rng.gen_range(-1.0f32..1.0));
    each_mode(c, "infer_batch16", || {
        black_box(model.infer(black_box(&body), black_box(&ctx)));
    });
}

fn bench_discrete_metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 2000usize;
    let categories = emoctx::dataset::canonical_categories();
    let k = categories.len();
    let scores: Vec<f64> = (0..n * k).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels: Vec<bool> = (0..n * k).map(|_| rng.gen_bool(0.15)).collect();
    each_mode(c, "evaluate_discrete_2000x26", || {
        black_box(evaluate_discrete(black_box(&scores), black_box(&labels), &categories).unwrap());
    });
}

fn bench_dataset_pipeline(c: &mut Criterion) {
    // One small dataset on disk, reused across iterations.
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        images: 12,
        side: 48,
        ..SynthSpec::default()
    };
    generate(&spec, dir.path()).unwrap();
    let manifest = parse_manifest(&dir.path().join("manifest.jsonl")).unwrap();
    let norm = NormStats::imagenet();
    each_mode(c, "prepare_dataset_12imgs", || {
        black_box(prepare_dataset(black_box(&manifest), 16, 24, &norm).unwrap());
    });

    // Preparation plus scoring: decode, resample, infer, rank.
    let config = ModelConfig {
        body_crop_side: 16,
        context_side: 24,
        ..ModelConfig::default()
    };
    let model = build_model(&config, 4).unwrap();
    let prep = prepare_dataset(&manifest, 16, 24, &norm).unwrap();
    each_mode(c, "evaluate_prepared_12imgs", || {
        black_box(evaluate_prepared(&model, black_box(&prep), EvalOptions::default(), "").unwrap());
    });
}

criterion_group!(
    benches,
    bench_batch_inference,
    bench_discrete_metrics,
    bench_dataset_pipeline
);
criterion_main!(benches);
