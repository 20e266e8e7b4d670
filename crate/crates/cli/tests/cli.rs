use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mambalite"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(preset: &str, seed: u64, samples: usize) -> Self {
        let dir = TempDir::new().unwrap();
        let fx = Self { dir };
        ok(&[
            "gen",
            "--preset",
            preset,
            "--seed",
            &seed.to_string(),
            "--samples",
            &samples.to_string(),
            "--out",
            p(&fx.bundle()),
            "--features",
            p(&fx.features()),
        ]);
        fx
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn bundle(&self) -> PathBuf {
        self.path("model.mlmw")
    }

    fn features(&self) -> PathBuf {
        self.path("features.mlmf")
    }
}

/// Reads `#key<TAB>value` style report lines into (key, value) pairs.
fn field(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix('\t'))
        .unwrap_or_else(|| panic!("no `{key}` in report:\n{report}"))
        .parse()
        .unwrap()
}

#[test]
fn gen_is_deterministic() {
    let a = Fixture::new("kws10", 42, 4);
    let b = Fixture::new("kws10", 42, 4);
    assert_eq!(fs::read(a.bundle()).unwrap(), fs::read(b.bundle()).unwrap());
    assert_eq!(
        fs::read(a.features()).unwrap(),
        fs::read(b.features()).unwrap()
    );
    let c = Fixture::new("kws10", 43, 4);
    assert_ne!(fs::read(a.bundle()).unwrap(), fs::read(c.bundle()).unwrap());
}

#[test]
fn run_prints_one_line_per_sample_deterministically() {
    let fx = Fixture::new("kws10", 1, 10);
    let (bundle, features) = (fx.bundle(), fx.features());
    let args = ["run", "--bundle", p(&bundle), "--features", p(&features)];
    let first = ok(&args);
    assert_eq!(first.lines().count(), 10);
    assert!(first.lines().all(|l| l.split('\t').count() == 12));
    assert_eq!(ok(&args), first);
    let mut par = args.to_vec();
    par.push("--parallel");
    assert_eq!(ok(&par), first);
}

#[test]
fn missing_file_exits_2_and_names_it() {
    let fx = Fixture::new("har", 1, 2);
    let missing = fx.path("absent.mlmw");
    let out = run(&[
        "run",
        "--bundle",
        p(&missing),
        "--features",
        p(&fx.features()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(p(&missing)));
}

#[test]
fn corrupt_bundle_exits_2() {
    let fx = Fixture::new("har", 1, 2);
    let mut bytes = fs::read(fx.bundle()).unwrap();
    bytes[9] ^= 0x10;
    fs::write(fx.bundle(), bytes).unwrap();
    let out = run(&[
        "run",
        "--bundle",
        p(&fx.bundle()),
        "--features",
        p(&fx.features()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mismatched_features_exit_1() {
    let kws = Fixture::new("kws10", 1, 2);
    let har = Fixture::new("har", 1, 2);
    let out = run(&[
        "run",
        "--bundle",
        p(&kws.bundle()),
        "--features",
        p(&har.features()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn fused_vs_reference_is_exact() {
    let fx = Fixture::new("har", 5, 8);
    let report = ok(&[
        "compare",
        "--bundle",
        p(&fx.bundle()),
        "--features",
        p(&fx.features()),
        "--mode",
        "fused_vs_reference",
    ]);
    assert!(report.starts_with("#fidelity\tmamba_output\n#mean_err\tabsolute\n"));
    assert_eq!(field(&report, "avg_linf"), 0.0);
    assert_eq!(field(&report, "worst_linf"), 0.0);
    assert_eq!(field(&report, "agreement"), 1.0);
    assert_eq!(field(&report, "n_samples"), 8.0);
}

#[test]
fn engine_vs_self_dump_is_zero_and_report_file_matches_stdout() {
    let fx = Fixture::new("kws3", 8, 5);
    let dump = fx.path("dump.mlmf");
    ok(&[
        "run",
        "--bundle",
        p(&fx.bundle()),
        "--features",
        p(&fx.features()),
        "--out",
        p(&fx.path("preds.tsv")),
        "--dump",
        p(&dump),
    ]);
    let report_path = fx.path("report.tsv");
    let stdout = ok(&[
        "compare",
        "--bundle",
        p(&fx.bundle()),
        "--features",
        p(&fx.features()),
        "--mode",
        "engine_vs_dump",
        "--dump",
        p(&dump),
        "--out",
        p(&report_path),
        "--max-worst-linf",
        "0",
        "--min-agreement",
        "1",
    ]);
    assert!(stdout.is_empty());
    let report = fs::read_to_string(report_path).unwrap();
    assert_eq!(field(&report, "worst_linf"), 0.0);
    assert_eq!(field(&report, "avg_mean_err"), 0.0);
    assert_eq!(field(&report, "agreement"), 1.0);
}

#[test]
fn dump_sample_count_mismatch_exits_1() {
    let fx = Fixture::new("har", 2, 4);
    let other = Fixture::new("har", 2, 3);
    let dump = fx.path("dump.mlmf");
    ok(&[
        "run",
        "--bundle",
        p(&fx.bundle()),
        "--features",
        p(&other.features()),
        "--out",
        p(&fx.path("p.tsv")),
        "--dump",
        p(&dump),
    ]);
    let out = run(&[
        "compare",
        "--bundle",
        p(&fx.bundle()),
        "--features",
        p(&fx.features()),
        "--mode",
        "engine_vs_dump",
        "--dump",
        p(&dump),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
}

#[test]
fn engine_vs_dump_without_dump_is_usage_error() {
    let fx = Fixture::new("har", 2, 1);
    let out = run(&[
        "compare",
        "--bundle",
        p(&fx.bundle()),
        "--features",
        p(&fx.features()),
        "--mode",
        "engine_vs_dump",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn empty_feature_file_gives_no_report() {
    let fx = Fixture::new("har", 3, 0);
    let out = run(&[
        "compare",
        "--bundle",
        p(&fx.bundle()),
        "--features",
        p(&fx.features()),
    ]);
    assert_ne!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
}

#[test]
fn threshold_violation_exits_1() {
    let fx = Fixture::new("har", 4, 3);
    let dump = fx.path("dump.mlmf");
    ok(&[
        "run",
        "--bundle",
        p(&fx.bundle()),
        "--features",
        p(&fx.features()),
        "--out",
        p(&fx.path("p.tsv")),
        "--dump",
        p(&dump),
    ]);
    // a different model's activations cannot agree
    let other = Fixture::new("har", 5, 3);
    let out = run(&[
        "compare",
        "--bundle",
        p(&other.bundle()),
        "--features",
        p(&fx.features()),
        "--mode",
        "engine_vs_dump",
        "--dump",
        p(&dump),
        "--max-worst-linf",
        "1e-3",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn kws_plan_meets_reduction_and_is_byte_stable() {
    let first = ok(&["plan", "--preset", "kws10"]);
    assert_eq!(ok(&["plan", "--preset", "kws10"]), first);
    assert!(first.starts_with("#report\tkws10\n"));
    assert!(field(&first, "#reduction") >= 0.75);
}

#[test]
fn har_plan_quadrants_positive_and_fused_smaller() {
    let report = ok(&["plan", "--preset", "har"]);
    let arenas: Vec<f64> = report
        .lines()
        .filter_map(|l| l.strip_prefix("#arena\t"))
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(arenas.len(), 4);
    assert!(arenas.iter().all(|&a| a > 0.0));
    // quadrant order: unfused/no_reuse, unfused/reuse, fused/no_reuse, fused/reuse
    assert!(arenas[2] <= arenas[0] && arenas[3] <= arenas[1]);
}

#[test]
fn plan_from_bundle_matches_flags() {
    let fx = Fixture::new("har", 6, 1);
    let from_bundle = ok(&["plan", "--bundle", p(&fx.bundle())]);
    let from_flags = ok(&["plan", "--preset", "har"]);
    let body = |s: &str| s.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&from_bundle), body(&from_flags));
}

#[test]
fn plan_single_variant_lists_schedule() {
    let out = ok(&[
        "plan",
        "--preset",
        "har",
        "--variant",
        "fused",
        "--align",
        "16",
        "--inplace",
    ]);
    assert!(out.contains("selective_scan"));
    assert!(!out.contains("discretize"));
    assert!(out.contains("#align\t16"));
    let bad = run(&["plan", "--align", "3"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn bench_schema_is_stable() {
    let fx = Fixture::new("har", 7, 3);
    let out = ok(&[
        "bench",
        "--bundle",
        p(&fx.bundle()),
        "--features",
        p(&fx.features()),
        "--repeats",
        "3",
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "#bench\trepeats\t3\tsamples\t3");
    assert_eq!(lines[1], "path\tmin_us\tmedian_us");
    let paths: Vec<&str> = lines[2..5]
        .iter()
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(paths, ["fused", "reference", "planned"]);
    // the counting allocator is live in the binary, so the scan stage is measured
    assert_eq!(lines[5], "#scan_scratch_bytes\t8704");
    let zero = run(&[
        "bench",
        "--bundle",
        p(&fx.bundle()),
        "--features",
        p(&fx.features()),
        "--repeats",
        "0",
    ]);
    assert_eq!(zero.status.code(), Some(2));
}
