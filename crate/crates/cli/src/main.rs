use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mambalite::alloc_probe::CountingAlloc;
use mambalite::harness::{self, FidelityReport, Measure};
use mambalite::planner::{build_schedule, PeakRamReport};
use mambalite::{
    read_bundle, write_bundle, Classifier, ClassifierConfig, Execution, FeatureSet, MambaConfig,
    Pooling, ScanPath, ScheduleOptions, Strategy, Variant,
};

#[global_allocator]
static ALLOC: CountingAlloc = CountingAlloc;

#[derive(Parser)]
#[command(
    name = "mambalite",
    version,
    about = "Mamba classifier inference harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify every sample of a feature file.
    Run(RunArgs),
    /// Measure numerical agreement between two inference paths.
    Compare(CompareArgs),
    /// Print the peak-RAM ablation of a model's static memory plan.
    Plan(PlanArgs),
    /// Time the fused, reference and arena-planned paths.
    Bench(BenchArgs),
    /// Write a synthetic bundle and a random feature file.
    Gen(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Prediction lines go here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write engine activations in the dump layout.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MeasureArg::MambaOutput)]
    measure: MeasureArg,
    #[arg(long, value_enum, default_value_t = PathArg::Fused)]
    path: PathArg,
    /// Spread samples over worker threads.
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::FusedVsReference)]
    mode: Mode,
    /// Reference activations, required for `engine_vs_dump`.
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MeasureArg::MambaOutput)]
    measure: MeasureArg,
    /// Machine-readable report destination.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 1 when the worst L-inf error exceeds this.
    #[arg(long)]
    max_worst_linf: Option<f64>,
    /// Exit with status 1 when the average mean error exceeds this.
    #[arg(long)]
    max_mean_err: Option<f64>,
    /// Exit with status 1 when prediction agreement falls below this.
    #[arg(long)]
    min_agreement: Option<f64>,
    #[arg(long)]
    parallel: bool,
}

#[derive(Args)]
struct PlanArgs {
    /// Take the model configuration from a bundle instead of flags.
    #[arg(long, conflicts_with = "preset")]
    bundle: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    /// Emit only this variant's schedule instead of the full report.
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    /// Merge the in-place activations into their inputs.
    #[arg(long)]
    inplace: bool,
    #[arg(long, default_value_t = 4, value_parser = parse_align)]
    align: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    repeats: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Bundle destination.
    #[arg(long)]
    out: PathBuf,
    /// Feature file destination.
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    samples: usize,
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long, value_enum, default_value_t = Preset::Kws10)]
    preset: Preset,
    #[arg(long)]
    input_dim: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    num_classes: Option<usize>,
    #[arg(long, value_enum)]
    pooling: Option<PoolingArg>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_state: Option<usize>,
    #[arg(long)]
    d_conv: Option<usize>,
    #[arg(long)]
    expand: Option<usize>,
    #[arg(long)]
    dt_rank: Option<usize>,
}

fn parse_align(s: &str) -> Result<usize, String> {
    match s.parse() {
        Ok(a @ (4 | 8 | 16)) => Ok(a),
        _ => Err(format!("`{s}` is not one of 4, 8, 16")),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> mambalite::Result<ClassifierConfig> {
        let mut cfg = match self.preset {
            Preset::Kws3 => ClassifierConfig::kws(3),
            Preset::Kws10 => ClassifierConfig::kws(10),
            Preset::Har => ClassifierConfig::har(),
        };
        if let Some(d) = self.d_model {
            cfg.mamba = MambaConfig::new(d);
        }
        let m = &mut cfg.mamba;
        m.d_state = self.d_state.unwrap_or(m.d_state);
        m.d_conv = self.d_conv.unwrap_or(m.d_conv);
        m.expand = self.expand.unwrap_or(m.expand);
        m.dt_rank = self.dt_rank.unwrap_or(m.dt_rank);
        cfg.input_dim = self.input_dim.unwrap_or(cfg.input_dim);
        cfg.seq_len = self.seq_len.unwrap_or(cfg.seq_len);
        cfg.num_classes = self.num_classes.unwrap_or(cfg.num_classes);
        if let Some(p) = self.pooling {
            cfg.pooling = match p {
                PoolingArg::Mean => Pooling::Mean,
                PoolingArg::Max => Pooling::Max,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Kws3,
    Kws10,
    Har,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Mean,
    Max,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Mode {
    FusedVsReference,
    EngineVsDump,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum MeasureArg {
    MambaOutput,
    Logits,
}

impl From<MeasureArg> for Measure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::MambaOutput => Measure::MambaOutput,
            MeasureArg::Logits => Measure::Logits,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PathArg {
    Fused,
    Reference,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Unfused,
    Fused,
}

/// Why a command failed, and which exit status that maps to.
#[derive(Debug)]
enum Failure {
    Engine(mambalite::Error),
    Usage(String),
    Threshold(String),
}

impl From<mambalite::Error> for Failure {
    fn from(e: mambalite::Error) -> Self {
        Failure::Engine(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        use mambalite::Error::*;
        match self {
            Failure::Usage(_) | Failure::Engine(Io { .. } | Format(_)) => 2,
            Failure::Threshold(_) | Failure::Engine(_) => 1,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Engine(e) => e.to_string(),
            Failure::Usage(m) | Failure::Threshold(m) => m.clone(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn load(bundle: &Path) -> mambalite::Result<Classifier> {
    let (params, cfg) = read_bundle(bundle)?;
    Classifier::new(cfg, params)
}

/// Writes `text` to `out`, or to stdout when no path is given.
fn emit(text: &str, out: Option<&Path>) -> mambalite::Result<()> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| mambalite::Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_run(a: RunArgs) -> CmdResult {
    let clf = load(&a.bundle)?;
    let features = FeatureSet::read(&a.features)?;
    let exec = Execution::select(a.parallel);
    let path = match a.path {
        PathArg::Fused => ScanPath::Fused,
        PathArg::Reference => ScanPath::Reference,
    };
    let preds = harness::run_batch(&clf, &features, path, exec)?;
    emit(&harness::format_predictions(&preds), a.out.as_deref())?;
    if let Some(dump) = &a.dump {
        harness::engine_dump(&clf, &features, a.measure.into(), exec)?.write(dump)?;
    }
    Ok(())
}

fn check_thresholds(r: &FidelityReport, a: &CompareArgs) -> CmdResult {
    let mut violated = Vec::new();
    if a.max_worst_linf.is_some_and(|t| r.worst_linf > t) {
        violated.push(format!(
            "worst_linf {:e} > {:e}",
            r.worst_linf,
            a.max_worst_linf.unwrap()
        ));
    }
    if a.max_mean_err.is_some_and(|t| r.avg_mean_err > t) {
        violated.push(format!(
            "avg_mean_err {:e} > {:e}",
            r.avg_mean_err,
            a.max_mean_err.unwrap()
        ));
    }
    if a.min_agreement.is_some_and(|t| r.agreement < t) {
        violated.push(format!(
            "agreement {} < {}",
            r.agreement,
            a.min_agreement.unwrap()
        ));
    }
    if violated.is_empty() {
        Ok(())
    } else {
        Err(Failure::Threshold(violated.join("; ")))
    }
}

fn cmd_compare(a: CompareArgs) -> CmdResult {
    let clf = load(&a.bundle)?;
    let features = FeatureSet::read(&a.features)?;
    let exec = Execution::select(a.parallel);
    let measure = a.measure.into();
    let report = match a.mode {
        Mode::FusedVsReference => {
            harness::compare_fused_vs_reference(&clf, &features, measure, exec)?
        }
        Mode::EngineVsDump => {
            let dump_path = a
                .dump
                .as_ref()
                .ok_or_else(|| Failure::Usage("--mode engine_vs_dump requires --dump".into()))?;
            let dump = FeatureSet::read(dump_path)?;
            harness::compare_engine_vs_dump(&clf, &features, &dump, measure, exec)?
        }
    };
    eprintln!("{report}");
    emit(&report.to_tsv(), a.out.as_deref())?;
    check_thresholds(&report, &a)
}

fn cmd_plan(a: PlanArgs) -> CmdResult {
    let (cfg, label) = match &a.bundle {
        Some(path) => (read_bundle(path)?.1, path.display().to_string()),
        None => (
            a.config.resolve()?,
            a.config
                .preset
                .to_possible_value()
                .map_or_else(String::new, |v| v.get_name().to_string()),
        ),
    };
    let options = ScheduleOptions {
        inplace: a.inplace,
        align: a.align,
    };
    let text = match a.variant {
        None => {
            let report: PeakRamReport = harness::plan_report(&label, &cfg, options)?;
            eprintln!("{report}");
            report.to_tsv()
        }
        Some(v) => {
            let variant = match v {
                VariantArg::Unfused => Variant::Unfused,
                VariantArg::Fused => Variant::Fused,
            };
            let sched = build_schedule(&cfg, variant, options)?;
            let mut text = sched.schedule.to_tsv();
            for strategy in [Strategy::NoReuse, Strategy::LifetimeReuse] {
                text.push_str(&sched.plan(strategy)?.to_tsv());
            }
            text
        }
    };
    emit(&text, a.out.as_deref())?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CmdResult {
    let clf = load(&a.bundle)?;
    let features = FeatureSet::read(&a.features)?;
    let report = harness::bench(&clf, &features, a.repeats as usize)?;
    emit(&report.to_tsv(), a.out.as_deref())?;
    Ok(())
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    let cfg = a.config.resolve()?;
    let (params, features) = harness::generate(&cfg, a.seed, a.samples)?;
    write_bundle(&params, &cfg, &a.out)?;
    if let Some(path) = &a.features {
        features.write(path)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
