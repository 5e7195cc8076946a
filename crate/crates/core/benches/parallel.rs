use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use touchguard_core::capsim::{synth_corpus, synthetic_profiles, GestureKind, SensorConfig};
use touchguard_core::evaluation::{grid_search, log_axis, recording_dataset, GridAxes, GridOptions};
use touchguard_core::featurization::{normalize_fit, FeatureConfig};
use touchguard_core::par;

fn paths(c: &mut Criterion) {
    let counts = BTreeMap::from([(GestureKind::Tap, 40)]);
    let rec = synth_corpus(&synthetic_profiles(4, 1.0), &counts, &SensorConfig::default(), 1).unwrap();
    let config = FeatureConfig::taps();
    let (ds, _) = normalize_fit(&recording_dataset(&rec, &config).unwrap()).unwrap();
    let axes = GridAxes { c: log_axis(-1, 3), gamma: log_axis(-4, 0) };
    let opts = GridOptions::default();

    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    for (name, parallel) in [("parallel", true), ("sequential", false)] {
        let run = |f: &mut dyn FnMut()| if parallel { f() } else { par::sequential(f) };
        group.bench_with_input(BenchmarkId::new("synth_corpus", name), &(), |b, _| {
            b.iter(|| run(&mut || {
                synth_corpus(&synthetic_profiles(4, 1.0), &counts, &SensorConfig::default(), 2).unwrap();
            }))
        });
        group.bench_with_input(BenchmarkId::new("featurize", name), &(), |b, _| {
            b.iter(|| run(&mut || {
                recording_dataset(&rec, &config).unwrap();
            }))
        });
        group.bench_with_input(BenchmarkId::new("grid_search", name), &(), |b, _| {
            b.iter(|| run(&mut || {
                grid_search(&ds, &axes, &opts).unwrap();
            }))
        });
    }
    group.finish();
}

criterion_group!(benches, paths);
criterion_main!(benches);
