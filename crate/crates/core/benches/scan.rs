use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use mambalite::mamba::pre_scan;
use mambalite::model::{synth_features, synth_params};
use mambalite::ssm::{selective_scan_fused, selective_scan_unfused};
use mambalite::{Classifier, ClassifierConfig};

fn scan_paths(c: &mut Criterion) {
    let mut group = c.benchmark_group("selective_scan");
    for len in [10, 100, 400] {
        let mut cfg = ClassifierConfig::kws(10);
        cfg.seq_len = len;
        let clf = Classifier::new(cfg, synth_params(&cfg, 1).unwrap()).unwrap();
        let x = synth_features(&cfg, 1, 1).unwrap().remove(0);
        let block = &clf.params().block;
        let pre = pre_scan(block, &clf.project(&x).unwrap()).unwrap();
        let inputs = pre.scan_inputs(block).unwrap();
        group.throughput(Throughput::Elements(len as u64));
        group.bench_with_input(BenchmarkId::new("fused", len), &inputs, |b, i| {
            b.iter(|| selective_scan_fused(black_box(i)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("reference", len), &inputs, |b, i| {
            b.iter(|| selective_scan_unfused(black_box(i)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scan_paths);
criterion_main!(benches);
