//! Batch inference, fidelity comparison, timing and fixture generation.
//!
//! These are the library halves of the command-line verbs; the CLI crate
//! only parses flags and handles files.

use std::fmt;
use std::time::Instant;

use crate::alloc_probe;
use crate::bundle::FeatureSet;
use crate::error::{Error, Result};
use crate::mamba::{pre_scan, ScanPath};
use crate::model::{synth_features, synth_params, Classifier, ClassifierConfig, ClassifierParams};
use crate::par::{self, Execution};
use crate::planned::PlannedClassifier;
use crate::planner::{peak_ram_report, PeakRamReport, ScheduleOptions, Strategy};
use crate::ssm::{fused_state_bytes, selective_scan_fused_into, ScanScratch};
use crate::tensor::{argmax_slice, Tensor};

/// Where fidelity is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Measure {
    /// Mamba layer output, before pooling.
    #[default]
    MambaOutput,
    Logits,
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Measure::MambaOutput => "mamba_output",
            Measure::Logits => "logits",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mamba_output" | "mamba" => Some(Measure::MambaOutput),
            "logits" => Some(Measure::Logits),
            _ => None,
        }
    }
}

/// Max and mean absolute difference of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleDiff {
    pub linf: f64,
    pub mean_abs: f64,
}

pub fn sample_diff(a: &[f32], b: &[f32]) -> Result<SampleDiff> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dim("fidelity", &[a.len()], &[b.len()]));
    }
    let mut linf = 0.0f64;
    let mut sum = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = (x as f64 - y as f64).abs();
        linf = linf.max(d);
        sum += d;
    }
    // rounding guard: a mean can never exceed the maximum it averages
    let mean_abs = (sum / a.len() as f64).min(linf);
    Ok(SampleDiff { linf, mean_abs })
}

/// Aggregate agreement metrics over a sample set.
///
/// The mean error is the mean *absolute* difference per sample, averaged
/// over samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidelityReport {
    pub measure: Measure,
    pub n_samples: usize,
    /// Mean over samples of the per-sample max abs difference.
    pub avg_linf: f64,
    /// Mean over samples of the per-sample mean abs difference.
    pub avg_mean_err: f64,
    /// Max over samples of the per-sample max abs difference.
    pub worst_linf: f64,
    /// Fraction of samples whose predicted class matches.
    pub agreement: f64,
}

impl FidelityReport {
    pub fn from_samples(measure: Measure, diffs: &[SampleDiff], agreeing: usize) -> Result<Self> {
        if diffs.is_empty() {
            return Err(Error::Consistency("no samples to compare".into()));
        }
        let n = diffs.len() as f64;
        let worst_linf = diffs.iter().map(|d| d.linf).fold(0.0, f64::max);
        let avg_linf = (diffs.iter().map(|d| d.linf).sum::<f64>() / n).min(worst_linf);
        let avg_mean_err = (diffs.iter().map(|d| d.mean_abs).sum::<f64>() / n).min(avg_linf);
        Ok(Self {
            measure,
            n_samples: diffs.len(),
            avg_linf,
            avg_mean_err,
            worst_linf,
            agreement: agreeing as f64 / n,
        })
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "#fidelity\t{}\n#mean_err\tabsolute\nn_samples\t{}\navg_linf\t{:e}\navg_mean_err\t{:e}\nworst_linf\t{:e}\nagreement\t{}\n",
            self.measure.name(),
            self.n_samples,
            self.avg_linf,
            self.avg_mean_err,
            self.worst_linf,
            self.agreement
        )
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut measure = None;
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let mut parts = line.splitn(2, '\t');
            let (key, value) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
            match key {
                "#fidelity" => measure = Measure::parse(value),
                "#mean_err" => {}
                _ => {
                    fields.insert(key.to_string(), value.to_string());
                }
            }
        }
        let get = |k: &str| -> Result<f64> {
            fields
                .get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("fidelity report lacks `{k}`")))
        };
        Ok(Self {
            measure: measure.ok_or_else(|| Error::Format("missing #fidelity line".into()))?,
            n_samples: get("n_samples")? as usize,
            avg_linf: get("avg_linf")?,
            avg_mean_err: get("avg_mean_err")?,
            worst_linf: get("worst_linf")?,
            agreement: get("agreement")?,
        })
    }
}

impl fmt::Display for FidelityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "fidelity over {} ({} samples)",
            self.measure.name(),
            self.n_samples
        )?;
        writeln!(f, "  avg L-inf       {:.3e}", self.avg_linf)?;
        writeln!(f, "  avg mean |err|  {:.3e}", self.avg_mean_err)?;
        writeln!(f, "  worst L-inf     {:.3e}", self.worst_linf)?;
        write!(f, "  agreement       {:.2}%", 100.0 * self.agreement)
    }
}

fn measured(trace: &crate::model::Trace, measure: Measure) -> Tensor {
    match measure {
        Measure::MambaOutput => trace.block_out.clone(),
        Measure::Logits => trace
            .logits
            .clone()
            .reshape(&[1, trace.logits.numel()])
            .expect("logits are non-empty"),
    }
}

fn require_samples(features: &FeatureSet) -> Result<()> {
    if features.is_empty() {
        return Err(Error::Consistency(
            "feature file contains no samples".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Tensor,
    pub class: usize,
}

pub fn run_batch(
    clf: &Classifier,
    features: &FeatureSet,
    path: ScanPath,
    exec: Execution,
) -> Result<Vec<Prediction>> {
    require_samples(features)?;
    par::try_map(exec, &features.samples, |_, x| {
        let logits = clf.forward_with(x, path)?;
        let class = argmax_slice(logits.data());
        Ok(Prediction { logits, class })
    })
}

/// One line per sample: `index<TAB>class<TAB>logit_0<TAB>...`.
pub fn format_predictions(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for (i, p) in preds.iter().enumerate() {
        out.push_str(&format!("{i}\t{}", p.class));
        for v in p.logits.data() {
            out.push_str(&format!("\t{v:e}"));
        }
        out.push('\n');
    }
    out
}

/// Engine activations at `measure`, labelled with the predicted class, in
/// the activation-dump layout.
pub fn engine_dump(
    clf: &Classifier,
    features: &FeatureSet,
    measure: Measure,
    exec: Execution,
) -> Result<FeatureSet> {
    require_samples(features)?;
    let rows = par::try_map(exec, &features.samples, |_, x| {
        let trace = clf.trace(x, ScanPath::Fused)?;
        let class = argmax_slice(trace.logits.data()) as u32;
        Ok((measured(&trace, measure), class))
    })?;
    let (samples, labels) = rows.into_iter().unzip();
    FeatureSet::with_labels(samples, labels)
}

/// Fused against materialized scan, over the same classifier and inputs.
pub fn compare_fused_vs_reference(
    clf: &Classifier,
    features: &FeatureSet,
    measure: Measure,
    exec: Execution,
) -> Result<FidelityReport> {
    require_samples(features)?;
    let rows = par::try_map(exec, &features.samples, |_, x| {
        let fused = clf.trace(x, ScanPath::Fused)?;
        let reference = clf.trace(x, ScanPath::Reference)?;
        let diff = sample_diff(
            measured(&fused, measure).data(),
            measured(&reference, measure).data(),
        )?;
        let agree = argmax_slice(fused.logits.data()) == argmax_slice(reference.logits.data());
        Ok((diff, agree))
    })?;
    let diffs: Vec<SampleDiff> = rows.iter().map(|r| r.0).collect();
    FidelityReport::from_samples(measure, &diffs, rows.iter().filter(|r| r.1).count())
}

/// Engine output against an externally produced activation dump.
///
/// Dump sample `i` must have the shape of the engine's measured tensor for
/// feature sample `i` (`L x d_model` or `1 x num_classes`). Reference classes
/// come from the dump labels, or from the dumped logits when unlabelled.
pub fn compare_engine_vs_dump(
    clf: &Classifier,
    features: &FeatureSet,
    dump: &FeatureSet,
    measure: Measure,
    exec: Execution,
) -> Result<FidelityReport> {
    require_samples(features)?;
    if dump.len() != features.len() {
        return Err(Error::Consistency(format!(
            "{} feature samples but {} dump samples",
            features.len(),
            dump.len()
        )));
    }
    if dump.labels.is_none() && measure != Measure::Logits {
        return Err(Error::Consistency(
            "dump carries no reference classes; label it or measure logits".into(),
        ));
    }
    let rows = par::try_map(exec, &features.samples, |i, x| {
        let trace = clf.trace(x, ScanPath::Fused)?;
        let ours = measured(&trace, measure);
        let theirs = &dump.samples[i];
        if ours.shape() != theirs.shape() {
            return Err(Error::Consistency(format!(
                "sample {i}: engine {} is {:?} but the dump holds {:?}",
                measure.name(),
                ours.shape(),
                theirs.shape()
            )));
        }
        let diff = sample_diff(ours.data(), theirs.data())?;
        let reference_class = match &dump.labels {
            Some(labels) => labels[i] as usize,
            None => argmax_slice(theirs.data()),
        };
        Ok((diff, argmax_slice(trace.logits.data()) == reference_class))
    })?;
    let diffs: Vec<SampleDiff> = rows.iter().map(|r| r.0).collect();
    FidelityReport::from_samples(measure, &diffs, rows.iter().filter(|r| r.1).count())
}

/// Memory ablation for `cfg`, checked for overlap violations.
pub fn plan_report(
    label: &str,
    cfg: &ClassifierConfig,
    options: ScheduleOptions,
) -> Result<PeakRamReport> {
    let report = peak_ram_report(label, cfg, options)?;
    for q in &report.quadrants {
        if let Some((a, b)) = q.plan.conflicts().first() {
            return Err(Error::Consistency(format!(
                "{} / {} plan places live buffers `{a}` and `{b}` on shared bytes",
                q.variant.name(),
                q.plan.strategy.name()
            )));
        }
    }
    Ok(report)
}

/// Per-sample wall time over repeated passes, in microseconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub min_us: f64,
    pub median_us: f64,
}

impl Timing {
    fn from_passes(mut per_sample_us: Vec<f64>) -> Self {
        per_sample_us.sort_by(f64::total_cmp);
        let n = per_sample_us.len();
        let median = if n % 2 == 1 {
            per_sample_us[n / 2]
        } else {
            0.5 * (per_sample_us[n / 2 - 1] + per_sample_us[n / 2])
        };
        Self {
            min_us: per_sample_us[0],
            median_us: median,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub repeats: usize,
    pub samples: usize,
    pub fused: Timing,
    pub reference: Timing,
    /// Fused path executing inside a lifetime-reuse arena.
    pub planned: Timing,
    /// Heap bytes the fused scan stage requested beyond its output, when the
    /// counting allocator is installed.
    pub scan_scratch_bytes: Option<usize>,
}

impl BenchReport {
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "#bench\trepeats\t{}\tsamples\t{}\npath\tmin_us\tmedian_us\n",
            self.repeats, self.samples
        );
        for (name, t) in [
            ("fused", self.fused),
            ("reference", self.reference),
            ("planned", self.planned),
        ] {
            out.push_str(&format!("{name}\t{:.3}\t{:.3}\n", t.min_us, t.median_us));
        }
        match self.scan_scratch_bytes {
            Some(b) => out.push_str(&format!("#scan_scratch_bytes\t{b}\n")),
            None => out.push_str("#scan_scratch_bytes\tunmeasured\n"),
        }
        out
    }
}

/// Heap bytes the fused scan stage of `x` requests, beyond its output.
///
/// Returns `None` when the counting allocator is not installed. Errors if
/// the scratch differs from `fused_state_bytes` or if the caller-owned
/// variant allocates at all.
pub fn probe_scan_scratch(clf: &Classifier, x: &Tensor) -> Result<Option<usize>> {
    if !alloc_probe::installed() {
        return Ok(None);
    }
    let params = &clf.params().block;
    let hidden = clf.project(x)?;
    let pre = pre_scan(params, &hidden)?;
    let inputs = pre.scan_inputs(params)?;
    let dims = inputs.dims()?;
    let expected = fused_state_bytes(dims.channels, dims.state);

    let mut out = Tensor::zeros(&[dims.len, dims.channels])?;
    let mut scratch = ScanScratch::new(dims.channels, dims.state);
    let (res, stats) = alloc_probe::measure(|| {
        let (state, row) = scratch.parts();
        selective_scan_fused_into(
            &inputs,
            inputs.a,
            inputs.d_skip,
            state,
            row,
            &mut out.mat_mut(),
        )
    });
    res?;
    if stats.bytes != 0 {
        return Err(Error::Consistency(format!(
            "fused scan into caller buffers allocated {} bytes",
            stats.bytes
        )));
    }

    let (res, stats) = alloc_probe::measure(|| crate::ssm::selective_scan_fused(&inputs));
    res?;
    let scratch_bytes = stats.bytes.saturating_sub(4 * dims.len * dims.channels);
    if scratch_bytes != expected {
        return Err(Error::Consistency(format!(
            "fused scan stage requested {scratch_bytes} scratch bytes, expected {expected}"
        )));
    }
    Ok(Some(scratch_bytes))
}

/// Times the fused, reference and arena-planned paths. Passes alternate
/// between paths so drift affects all of them alike.
pub fn bench(clf: &Classifier, features: &FeatureSet, repeats: usize) -> Result<BenchReport> {
    require_samples(features)?;
    if repeats == 0 {
        return Err(Error::Consistency("repeats must be at least 1".into()));
    }
    let scan_scratch_bytes = probe_scan_scratch(clf, &features.samples[0])?;
    let planned = PlannedClassifier::new(clf, Strategy::LifetimeReuse, ScheduleOptions::default())?;
    let mut arena = planned.new_arena();
    let n = features.len() as f64;
    let mut times: [Vec<f64>; 3] = Default::default();
    for _ in 0..repeats {
        for (slot, path) in [ScanPath::Fused, ScanPath::Reference]
            .into_iter()
            .enumerate()
        {
            let start = Instant::now();
            for x in &features.samples {
                std::hint::black_box(clf.forward_with(x, path)?);
            }
            times[slot].push(start.elapsed().as_secs_f64() * 1e6 / n);
        }
        let start = Instant::now();
        for x in &features.samples {
            std::hint::black_box(planned.forward(&mut arena, x)?);
        }
        times[2].push(start.elapsed().as_secs_f64() * 1e6 / n);
    }
    let [fused, reference, planned] = times.map(Timing::from_passes);
    Ok(BenchReport {
        repeats,
        samples: features.len(),
        fused,
        reference,
        planned,
        scan_scratch_bytes,
    })
}

/// Synthetic parameters plus `n_samples` unlabelled feature matrices.
pub fn generate(
    cfg: &ClassifierConfig,
    seed: u64,
    n_samples: usize,
) -> Result<(ClassifierParams, FeatureSet)> {
    let params = synth_params(cfg, seed)?;
    let features = synth_features(cfg, seed, n_samples)?;
    Ok((params, FeatureSet::new(features)))
}
