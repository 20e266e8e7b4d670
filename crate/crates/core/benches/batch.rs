use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use mambalite::harness::run_batch;
use mambalite::model::{synth_features, synth_params};
use mambalite::{Classifier, ClassifierConfig, Execution, FeatureSet, ScanPath};

fn batch_classification(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_classify");
    group.sample_size(10);
    for (name, cfg) in [
        ("kws", ClassifierConfig::kws(10)),
        ("har", ClassifierConfig::har()),
    ] {
        let clf = Classifier::new(cfg, synth_params(&cfg, 2).unwrap()).unwrap();
        let features = FeatureSet::new(synth_features(&cfg, 2, 64).unwrap());
        group.throughput(Throughput::Elements(features.len() as u64));
        for (label, exec) in [
            ("sequential", Execution::Sequential),
            ("parallel", Execution::select(true)),
        ] {
            group.bench_function(BenchmarkId::new(label, name), |b| {
                b.iter(|| run_batch(&clf, black_box(&features), ScanPath::Fused, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, batch_classification);
criterion_main!(benches);
