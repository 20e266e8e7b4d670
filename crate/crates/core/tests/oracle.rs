//! Full classifier against the straight-line fp64 re-implementation.

mod common;

use common::{abs_err, classifier_f64, randn, rng, M};
use mambalite::harness::{compare_engine_vs_dump, Measure};
use mambalite::mamba::mamba_forward;
use mambalite::model::{synth_features, synth_params};
use mambalite::{Classifier, ClassifierConfig, Execution, FeatureSet, Pooling, Tensor};

const LOGIT_TOL: f64 = 1e-4;
const BLOCK_MEAN_TOL: f64 = 5e-5;

#[test]
fn kws_logits_track_fp64() {
    let cfg = ClassifierConfig::kws(10);
    let clf = Classifier::new(cfg, synth_params(&cfg, 77).unwrap()).unwrap();
    for x in synth_features(&cfg, 77, 8).unwrap() {
        let logits = clf.forward(&x).unwrap();
        let oracle = classifier_f64(&cfg, clf.params(), &x);
        let (max, _) = abs_err(logits.data(), &oracle.logits);
        assert!(max <= LOGIT_TOL, "logit error {max:e}");
    }
}

#[test]
fn har_max_pooling_tracks_fp64() {
    let mut cfg = ClassifierConfig::har();
    cfg.pooling = Pooling::Max;
    let clf = Classifier::new(cfg, synth_params(&cfg, 5).unwrap()).unwrap();
    for x in synth_features(&cfg, 5, 8).unwrap() {
        let (max, _) = abs_err(
            clf.forward(&x).unwrap().data(),
            &classifier_f64(&cfg, clf.params(), &x).logits,
        );
        assert!(max <= LOGIT_TOL, "logit error {max:e}");
    }
}

#[test]
fn mamba_layer_mean_error_is_small() {
    let cfg = ClassifierConfig::kws(3);
    let params = synth_params(&cfg, 9).unwrap();
    let mut r = rng(9);
    for _ in 0..4 {
        let x = randn(&mut r, &[cfg.seq_len, cfg.d_model()], 1.0);
        let got = mamba_forward(&params.block, &x).unwrap();
        let want = common::mamba_f64(&params.block, &M::of(&x));
        let (_, mean) = abs_err(got.data(), &want.v);
        assert!(mean <= BLOCK_MEAN_TOL, "mean error {mean:e}");
    }
}

#[test]
fn engine_against_fp64_dump_stays_in_band() {
    let cfg = ClassifierConfig::kws(10);
    let clf = Classifier::new(cfg, synth_params(&cfg, 31).unwrap()).unwrap();
    let samples = synth_features(&cfg, 31, 12).unwrap();
    let mut outputs = Vec::new();
    let mut labels = Vec::new();
    for x in &samples {
        let t = classifier_f64(&cfg, clf.params(), x);
        let block: Vec<f32> = t.block_out.v.iter().map(|&v| v as f32).collect();
        outputs.push(Tensor::new(&[t.block_out.rows, t.block_out.cols], block).unwrap());
        let best = (0..t.logits.len())
            .max_by(|&a, &b| t.logits[a].total_cmp(&t.logits[b]).then(b.cmp(&a)))
            .unwrap();
        labels.push(best as u32);
    }
    let dump = FeatureSet::with_labels(outputs, labels).unwrap();
    let dump = FeatureSet::decode(&dump.encode().unwrap()).unwrap();
    let features = FeatureSet::new(samples);
    let r = compare_engine_vs_dump(
        &clf,
        &features,
        &dump,
        Measure::MambaOutput,
        Execution::select(true),
    )
    .unwrap();
    assert!(r.avg_mean_err <= 5e-5, "{r}");
    assert!(r.worst_linf <= 1.5e-3, "{r}");
    assert!(r.worst_linf >= r.avg_linf && r.avg_linf >= r.avg_mean_err);
    assert_eq!(r.agreement, 1.0);
}
