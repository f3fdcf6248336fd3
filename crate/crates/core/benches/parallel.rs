//! Parallel vs sequential execution of the data-parallel hot paths.
//!
//! With the `parallel` feature off both arms run sequentially, so the
//! comparison is only meaningful on a multi-core machine with the default
//! features.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use slotaug::augment::AugConfig;
use slotaug::image::Image;
use slotaug::model::{Model, ModelConfig};
use slotaug::par;
use slotaug::sprites::{generate_scene, scene_rng, SpriteConfig};
use slotaug::training::{batch_gradients, LossWeights, Sample, TrainConfig};

fn small_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig {
            image_size: 32,
            enc_hidden: 16,
            dec_hidden: 16,
            prop_hidden: 16,
            ..ModelConfig::default()
        },
        aug: AugConfig { image_size: 32, ..AugConfig::default() },
        batch_size: 8,
        ..TrainConfig::default()
    }
}

fn gradients(c: &mut Criterion) {
    let cfg = small_config();
    let sprites = SpriteConfig::default();
    let canvases: Vec<Image> =
        (0..cfg.batch_size as u64).map(|i| generate_scene(&mut scene_rng(0, i), &sprites).unwrap().image).collect();
    let batch: Vec<Sample> =
        canvases.iter().enumerate().map(|(i, c)| Sample::generate(c, 0, i as u64, &cfg).unwrap()).collect();
    let model = Model::new(cfg.model.clone(), 0).unwrap();
    let w = LossWeights::from(&cfg);

    let mut group = c.benchmark_group("batch_gradients");
    group.sample_size(10);
    for (name, sequential) in [("parallel", false), ("sequential", true)] {
        group.bench_with_input(BenchmarkId::new(name, par::threads()), &sequential, |b, &seq| {
            b.iter(|| black_box(batch_gradients(&model, &batch, w, seq).unwrap()))
        });
    }
    group.finish();
}

fn scenes(c: &mut Criterion) {
    let sprites = SpriteConfig::default();
    let mut group = c.benchmark_group("generate_scenes");
    for (name, parallel) in [("parallel", true), ("sequential", false)] {
        group.bench_with_input(BenchmarkId::new(name, 64), &parallel, |b, &p| {
            b.iter(|| black_box(par::map_range_if(p, 64, |i| generate_scene(&mut scene_rng(1, i as u64), &sprites))))
        });
    }
    group.finish();
}

criterion_group!(benches, gradients, scenes);
criterion_main!(benches);
