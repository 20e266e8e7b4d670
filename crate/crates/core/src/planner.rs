//! Lifetime-aware static buffer planning.
//!
//! A forward pass is written out as a straight-line [`OpSchedule`] over named
//! activation buffers. Live intervals are derived from the schedule, and
//! [`plan_offsets`] packs the buffers into one arena so that buffers with
//! overlapping lifetimes never share bytes. Weights are read-only and are
//! never part of the arena.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::error::{Error, Result};
use crate::model::ClassifierConfig;

/// One activation buffer with its live interval, in step indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BufferSpec {
    pub id: String,
    pub size: usize,
    pub align: usize,
    pub first_use: usize,
    pub last_use: usize,
}

impl BufferSpec {
    pub fn new(id: impl Into<String>, size: usize, first_use: usize, last_use: usize) -> Self {
        Self {
            id: id.into(),
            size,
            align: 4,
            first_use,
            last_use,
        }
    }

    pub fn lifetime_overlaps(&self, other: &BufferSpec) -> bool {
        self.first_use <= other.last_use && other.first_use <= self.last_use
    }

    pub fn is_live_at(&self, step: usize) -> bool {
        self.first_use <= step && step <= self.last_use
    }

    fn validate(&self) -> Result<()> {
        if self.size == 0 || self.first_use > self.last_use || !matches!(self.align, 4 | 8 | 16) {
            return Err(Error::Schedule {
                step: self.first_use,
                msg: format!(
                    "invalid buffer {}: size {}, align {}, live [{}, {}]",
                    self.id, self.size, self.align, self.first_use, self.last_use
                ),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    pub op: String,
    pub reads: Vec<String>,
    pub writes: Vec<String>,
}

impl Step {
    pub fn new(op: &str, reads: &[&str], writes: &[&str]) -> Self {
        let own = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect();
        Self {
            op: op.to_string(),
            reads: own(reads),
            writes: own(writes),
        }
    }
}

/// Straight-line operator schedule at buffer granularity.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct OpSchedule {
    pub steps: Vec<Step>,
}

impl OpSchedule {
    /// `step<TAB>op<TAB>reads:a,b<TAB>writes:c`, one line per step.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{i}\t{}\treads:{}\twrites:{}\n",
                s.op,
                s.reads.join(","),
                s.writes.join(",")
            ));
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        for (line_no, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = |what: &str| Error::Format(format!("schedule line {}: {what}", line_no + 1));
            let fields: Vec<&str> = line.split('\t').collect();
            let [idx, op, reads, writes] = fields[..] else {
                return Err(bad("expected 4 tab-separated fields"));
            };
            if idx.parse::<usize>().ok() != Some(steps.len()) {
                return Err(bad("step indices must count up from 0"));
            }
            let list = |field: &str, prefix: &str| -> Result<Vec<String>> {
                let rest = field
                    .strip_prefix(prefix)
                    .ok_or_else(|| bad(&format!("missing `{prefix}` prefix")))?;
                Ok(rest
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect())
            };
            steps.push(Step {
                op: op.to_string(),
                reads: list(reads, "reads:")?,
                writes: list(writes, "writes:")?,
            });
        }
        Ok(Self { steps })
    }
}

/// Derives each buffer's live interval from the schedule.
///
/// `first_use` is the first step writing the buffer; `last_use` the last step
/// reading or writing it. Returned in order of first appearance.
pub fn derive_lifetimes(
    sched: &OpSchedule,
    sizes: &BTreeMap<String, usize>,
    align: usize,
) -> Result<Vec<BufferSpec>> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut specs: Vec<BufferSpec> = Vec::new();
    for (step, s) in sched.steps.iter().enumerate() {
        for id in &s.reads {
            match index.get(id.as_str()) {
                Some(&i) => specs[i].last_use = step,
                None => {
                    return Err(Error::Schedule {
                        step,
                        msg: format!("buffer `{id}` is read by `{}` before any write", s.op),
                    })
                }
            }
        }
        for id in &s.writes {
            match index.get(id.as_str()) {
                Some(&i) => specs[i].last_use = step,
                None => {
                    let size = *sizes.get(id).ok_or_else(|| Error::Schedule {
                        step,
                        msg: format!("no size given for buffer `{id}`"),
                    })?;
                    index.insert(id, specs.len());
                    specs.push(BufferSpec {
                        id: id.clone(),
                        size,
                        align,
                        first_use: step,
                        last_use: step,
                    });
                }
            }
        }
    }
    if let Some(unused) = sizes.keys().find(|k| !index.contains_key(k.as_str())) {
        return Err(Error::Schedule {
            step: sched.steps.len(),
            msg: format!("buffer `{unused}` has a size but never appears in the schedule"),
        });
    }
    for spec in &specs {
        spec.validate()?;
    }
    Ok(specs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Every buffer gets its own bytes, end to end.
    NoReuse,
    /// Buffers with disjoint lifetimes may share bytes. Placed largest
    /// first, each into the smallest free gap that holds it.
    LifetimeReuse,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::NoReuse => "no_reuse",
            Strategy::LifetimeReuse => "lifetime_reuse",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "no_reuse" => Some(Strategy::NoReuse),
            "lifetime_reuse" => Some(Strategy::LifetimeReuse),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    pub spec: BufferSpec,
    pub offset: usize,
}

impl Placement {
    pub fn end(&self) -> usize {
        self.offset + self.spec.size
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryPlan {
    pub strategy: Strategy,
    pub arena_bytes: usize,
    /// In the order the specs were given.
    pub placements: Vec<Placement>,
}

fn align_up(x: usize, align: usize) -> usize {
    x.div_ceil(align) * align
}

/// Assigns arena offsets.
///
/// `NoReuse` lays buffers end to end in the given order. `LifetimeReuse`
/// visits buffers by decreasing size (ties by first use, then id) and puts
/// each at the lowest aligned offset that does not collide with an already
/// placed buffer whose lifetime overlaps.
/// Start of the smallest free gap between `busy` ranges (sorted by start)
/// that holds `size` aligned bytes, or the first aligned offset past them.
/// Ties go to the lowest offset.
fn best_fit(busy: &[(usize, usize)], size: usize, align: usize) -> usize {
    let mut best: Option<(usize, usize)> = None;
    let mut cursor = 0;
    for &(start, end) in busy {
        let offset = align_up(cursor, align);
        if offset + size <= start {
            let gap = start - cursor;
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, offset));
            }
        }
        cursor = cursor.max(end);
    }
    best.map_or_else(|| align_up(cursor, align), |(_, offset)| offset)
}

pub fn plan_offsets(specs: &[BufferSpec], strategy: Strategy) -> MemoryPlan {
    let mut offsets = vec![0usize; specs.len()];
    match strategy {
        Strategy::NoReuse => {
            let mut cursor = 0;
            for (slot, spec) in offsets.iter_mut().zip(specs) {
                *slot = align_up(cursor, spec.align);
                cursor = *slot + spec.size;
            }
        }
        Strategy::LifetimeReuse => {
            let mut order: Vec<usize> = (0..specs.len()).collect();
            order.sort_by(|&a, &b| {
                let (x, y) = (&specs[a], &specs[b]);
                y.size
                    .cmp(&x.size)
                    .then(x.first_use.cmp(&y.first_use))
                    .then(x.id.cmp(&y.id))
            });
            let mut placed: Vec<usize> = Vec::with_capacity(specs.len());
            let mut busy: Vec<(usize, usize)> = Vec::new();
            for &i in &order {
                let spec = &specs[i];
                busy.clear();
                busy.extend(
                    placed
                        .iter()
                        .filter(|&&j| specs[j].lifetime_overlaps(spec))
                        .map(|&j| (offsets[j], offsets[j] + specs[j].size)),
                );
                busy.sort_unstable();
                offsets[i] = best_fit(&busy, spec.size, spec.align);
                placed.push(i);
            }
        }
    }
    let placements: Vec<Placement> = specs
        .iter()
        .zip(offsets)
        .map(|(spec, offset)| Placement {
            spec: spec.clone(),
            offset,
        })
        .collect();
    let arena_bytes = placements.iter().map(Placement::end).max().unwrap_or(0);
    MemoryPlan {
        strategy,
        arena_bytes,
        placements,
    }
}

/// Largest total size of simultaneously live buffers, ignoring alignment.
pub fn liveness_lower_bound(specs: &[BufferSpec]) -> usize {
    let horizon = specs.iter().map(|s| s.last_use + 1).max().unwrap_or(0);
    let mut live = vec![0i64; horizon + 1];
    for s in specs {
        live[s.first_use] += s.size as i64;
        live[s.last_use + 1] -= s.size as i64;
    }
    let mut running = 0i64;
    let mut peak = 0i64;
    for delta in &live[..horizon] {
        running += delta;
        peak = peak.max(running);
    }
    peak as usize
}

impl MemoryPlan {
    pub fn offset(&self, id: &str) -> Option<usize> {
        self.placements
            .iter()
            .find(|p| p.spec.id == id)
            .map(|p| p.offset)
    }

    pub fn placement(&self, id: &str) -> Option<&Placement> {
        self.placements.iter().find(|p| p.spec.id == id)
    }

    pub fn specs(&self) -> Vec<BufferSpec> {
        self.placements.iter().map(|p| p.spec.clone()).collect()
    }

    /// Pairs of buffers that are live together and share at least one byte.
    pub fn conflicts(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (i, a) in self.placements.iter().enumerate() {
            for b in &self.placements[i + 1..] {
                let bytes = a.offset < b.end() && b.offset < a.end();
                if bytes && a.spec.lifetime_overlaps(&b.spec) {
                    out.push((a.spec.id.clone(), b.spec.id.clone()));
                }
            }
        }
        out
    }

    /// Largest alignment among the placed buffers (4 when empty).
    pub fn align(&self) -> usize {
        self.placements
            .iter()
            .map(|p| p.spec.align)
            .max()
            .unwrap_or(4)
    }

    /// Machine-readable form:
    ///
    /// ```text
    /// #strategy<TAB>lifetime_reuse
    /// #align<TAB>4
    /// id<TAB>size<TAB>first<TAB>last<TAB>offset
    /// ...
    /// #arena<TAB>bytes
    /// ```
    ///
    /// The `#align` line carries the plan-wide maximum alignment.
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "#strategy\t{}\n#align\t{}\n",
            self.strategy.name(),
            self.align()
        );
        for p in &self.placements {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                p.spec.id, p.spec.size, p.spec.first_use, p.spec.last_use, p.offset
            ));
        }
        out.push_str(&format!("#arena\t{}\n", self.arena_bytes));
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.is_empty()).collect();
        parse_plan_lines(&lines)
    }
}

fn num(field: &str, what: &str) -> Result<usize> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("bad {what} `{field}`")))
}

fn parse_plan_lines(lines: &[&str]) -> Result<MemoryPlan> {
    let mut strategy = None;
    let mut align = 4;
    let mut arena = None;
    let mut placements = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[..] {
            ["#strategy", s] => {
                strategy = Some(
                    Strategy::parse(s)
                        .ok_or_else(|| Error::Format(format!("unknown strategy `{s}`")))?,
                )
            }
            ["#align", a] => align = num(a, "alignment")?,
            ["#arena", a] => arena = Some(num(a, "arena size")?),
            [id, size, first, last, offset] if !id.starts_with('#') => placements.push(Placement {
                spec: BufferSpec {
                    id: id.to_string(),
                    size: num(size, "size")?,
                    align,
                    first_use: num(first, "first use")?,
                    last_use: num(last, "last use")?,
                },
                offset: num(offset, "offset")?,
            }),
            _ => return Err(Error::Format(format!("unexpected plan line `{line}`"))),
        }
    }
    let plan = MemoryPlan {
        strategy: strategy.ok_or_else(|| Error::Format("plan lacks #strategy".into()))?,
        arena_bytes: arena.ok_or_else(|| Error::Format("plan lacks #arena".into()))?,
        placements,
    };
    let end = plan
        .placements
        .iter()
        .map(Placement::end)
        .max()
        .unwrap_or(0);
    if end != plan.arena_bytes {
        return Err(Error::Consistency(format!(
            "#arena {} disagrees with placements ending at {end}",
            plan.arena_bytes
        )));
    }
    Ok(plan)
}

/// Whether the scan stage is fused or materializes its `L x D x N` tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Unfused,
    Fused,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Fused => "fused",
            Variant::Unfused => "unfused",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fused" => Some(Variant::Fused),
            "unfused" => Some(Variant::Unfused),
            _ => None,
        }
    }
}

/// Buffer names used by [`build_schedule`].
pub mod buf {
    pub const FEATURES: &str = "features";
    pub const HIDDEN: &str = "hidden";
    pub const XZ: &str = "xz";
    pub const CONV: &str = "conv";
    pub const CONV_ACT: &str = "conv_act";
    pub const XPROJ: &str = "xproj";
    pub const DT: &str = "dt";
    pub const DELTA: &str = "delta";
    pub const A_BAR: &str = "a_bar";
    pub const B_BAR_U: &str = "b_bar_u";
    pub const SCAN_STATE: &str = "scan_state";
    pub const SCAN_ROW: &str = "scan_row";
    pub const Y_SSM: &str = "y_ssm";
    pub const GATED: &str = "gated";
    pub const BLOCK_OUT: &str = "block_out";
    pub const POOLED: &str = "pooled";
    pub const LOGITS: &str = "logits";
}

/// Ops that make up the scan stage in either variant.
pub const SCAN_OPS: [&str; 3] = ["selective_scan", "discretize", "scan"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleOptions {
    /// Run SiLU and softplus in place instead of into fresh buffers.
    pub inplace: bool,
    /// Alignment of every buffer: 4, 8 or 16.
    pub align: usize,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self {
            inplace: false,
            align: 4,
        }
    }
}

impl ScheduleOptions {
    /// Buffer that actually holds `name` once in-place merging is applied.
    pub fn resolve(&self, name: &'static str) -> &'static str {
        match (self.inplace, name) {
            (true, buf::CONV_ACT) => buf::CONV,
            (true, buf::DELTA) => buf::DT,
            _ => name,
        }
    }
}

/// A schedule together with the byte size of every buffer it mentions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSchedule {
    pub schedule: OpSchedule,
    pub sizes: BTreeMap<String, usize>,
    pub options: ScheduleOptions,
}

impl ModelSchedule {
    pub fn lifetimes(&self) -> Result<Vec<BufferSpec>> {
        derive_lifetimes(&self.schedule, &self.sizes, self.options.align)
    }

    pub fn plan(&self, strategy: Strategy) -> Result<MemoryPlan> {
        Ok(plan_offsets(&self.lifetimes()?, strategy))
    }

    /// Bytes of buffers whose whole lifetime falls inside the scan stage.
    pub fn scan_scratch_bytes(&self) -> Result<usize> {
        let scan_steps: Vec<usize> = self
            .schedule
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| SCAN_OPS.contains(&s.op.as_str()))
            .map(|(i, _)| i)
            .collect();
        let (Some(&lo), Some(&hi)) = (scan_steps.first(), scan_steps.last()) else {
            return Ok(0);
        };
        Ok(self
            .lifetimes()?
            .iter()
            .filter(|s| s.first_use >= lo && s.last_use <= hi)
            .map(|s| s.size)
            .sum())
    }
}

/// Emits the classifier's forward pass as a buffer-level schedule.
///
/// The two variants differ only in the scan stage: `Unfused` materializes
/// `a_bar` and `b_bar_u` (`4 * d_inner * N * L` bytes each), `Fused` keeps a
/// `4 * d_inner * N` state and a `4 * d_inner` row.
pub fn build_schedule(
    cfg: &ClassifierConfig,
    variant: Variant,
    options: ScheduleOptions,
) -> Result<ModelSchedule> {
    use buf::*;
    cfg.validate()?;
    if !matches!(options.align, 4 | 8 | 16) {
        return Err(Error::Consistency(format!(
            "alignment {} is not one of 4, 8, 16",
            options.align
        )));
    }
    let m = &cfg.mamba;
    let (len, dm, di, n) = (cfg.seq_len, m.d_model, m.d_inner(), m.d_state);
    let r = |name: &'static str| options.resolve(name);

    let mut sizes: BTreeMap<String, usize> = BTreeMap::new();
    let mut size = |id: &str, elems: usize| {
        sizes.insert(id.to_string(), 4 * elems);
    };
    size(FEATURES, len * cfg.input_dim);
    size(HIDDEN, len * dm);
    size(XZ, len * 2 * di);
    size(CONV, len * di);
    size(r(CONV_ACT), len * di);
    size(XPROJ, len * m.xproj_width());
    size(DT, len * di);
    size(r(DELTA), len * di);
    size(SCAN_STATE, di * n);
    size(Y_SSM, len * di);
    size(GATED, len * di);
    size(BLOCK_OUT, len * dm);
    size(POOLED, dm);
    size(LOGITS, cfg.num_classes);

    let mut steps = vec![
        Step::new("input", &[], &[FEATURES]),
        Step::new("proj", &[FEATURES], &[HIDDEN]),
        Step::new("in_proj", &[HIDDEN], &[XZ]),
        Step::new("conv1d", &[XZ], &[CONV]),
        Step::new("silu", &[CONV], &[r(CONV_ACT)]),
        Step::new("x_proj", &[r(CONV_ACT)], &[XPROJ]),
        Step::new("dt_proj", &[XPROJ], &[DT]),
        Step::new("softplus", &[DT], &[r(DELTA)]),
    ];
    let scan_reads = [r(CONV_ACT), r(DELTA), XPROJ];
    match variant {
        Variant::Fused => {
            size(SCAN_ROW, di);
            steps.push(Step::new(
                "selective_scan",
                &scan_reads,
                &[SCAN_STATE, SCAN_ROW, Y_SSM],
            ));
        }
        Variant::Unfused => {
            size(A_BAR, len * di * n);
            size(B_BAR_U, len * di * n);
            steps.push(Step::new("discretize", &scan_reads, &[A_BAR, B_BAR_U]));
            steps.push(Step::new(
                "scan",
                &[A_BAR, B_BAR_U, XPROJ, r(CONV_ACT)],
                &[SCAN_STATE, Y_SSM],
            ));
        }
    }
    steps.extend([
        Step::new("gate", &[Y_SSM, XZ], &[GATED]),
        Step::new("out_proj", &[GATED], &[BLOCK_OUT]),
        Step::new("pool", &[BLOCK_OUT], &[POOLED]),
        Step::new("head", &[POOLED], &[LOGITS]),
    ]);
    Ok(ModelSchedule {
        schedule: OpSchedule { steps },
        sizes,
        options,
    })
}

/// One cell of the fused/unfused x reuse/no-reuse ablation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Quadrant {
    pub variant: Variant,
    pub plan: MemoryPlan,
}

/// Peak-RAM ablation over both schedule variants and both strategies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeakRamReport {
    pub label: String,
    /// Ordered unfused/no_reuse, unfused/lifetime_reuse, fused/no_reuse,
    /// fused/lifetime_reuse.
    pub quadrants: Vec<Quadrant>,
}

pub fn peak_ram_report(
    label: &str,
    cfg: &ClassifierConfig,
    options: ScheduleOptions,
) -> Result<PeakRamReport> {
    let mut quadrants = Vec::with_capacity(4);
    for variant in [Variant::Unfused, Variant::Fused] {
        let sched = build_schedule(cfg, variant, options)?;
        let specs = sched.lifetimes()?;
        for strategy in [Strategy::NoReuse, Strategy::LifetimeReuse] {
            quadrants.push(Quadrant {
                variant,
                plan: plan_offsets(&specs, strategy),
            });
        }
    }
    Ok(PeakRamReport {
        label: label.to_string(),
        quadrants,
    })
}

impl PeakRamReport {
    pub fn arena(&self, variant: Variant, strategy: Strategy) -> Option<usize> {
        self.quadrants
            .iter()
            .find(|q| q.variant == variant && q.plan.strategy == strategy)
            .map(|q| q.plan.arena_bytes)
    }

    /// `1 - arena(fused, lifetime_reuse) / arena(unfused, no_reuse)`.
    pub fn reduction(&self) -> Option<f64> {
        let best = self.arena(Variant::Fused, Strategy::LifetimeReuse)?;
        let base = self.arena(Variant::Unfused, Strategy::NoReuse)?;
        Some(1.0 - best as f64 / base as f64)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("#report\t{}\n", self.label);
        for q in &self.quadrants {
            out.push_str(&format!("#variant\t{}\n", q.variant.name()));
            out.push_str(&q.plan.to_tsv());
        }
        if let Some(r) = self.reduction() {
            out.push_str(&format!("#reduction\t{r:.6}\n"));
        }
        out
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.is_empty()).peekable();
        let label = lines
            .next()
            .and_then(|l| l.strip_prefix("#report\t"))
            .ok_or_else(|| Error::Format("report must start with #report".into()))?
            .to_string();
        let mut quadrants = Vec::new();
        while let Some(line) = lines.next() {
            if line.starts_with("#reduction\t") {
                continue;
            }
            let name = line
                .strip_prefix("#variant\t")
                .ok_or_else(|| Error::Format(format!("expected #variant, got `{line}`")))?;
            let variant = Variant::parse(name)
                .ok_or_else(|| Error::Format(format!("unknown variant `{name}`")))?;
            let mut block = Vec::new();
            while let Some(&next) = lines.peek() {
                if next.starts_with("#variant\t") || next.starts_with("#reduction\t") {
                    break;
                }
                block.push(next);
                lines.next();
            }
            quadrants.push(Quadrant {
                variant,
                plan: parse_plan_lines(&block)?,
            });
        }
        Ok(Self { label, quadrants })
    }
}

impl fmt::Display for PeakRamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = self.arena(Variant::Unfused, Strategy::NoReuse);
        writeln!(f, "peak RAM ({})", self.label)?;
        writeln!(
            f,
            "{:<8} {:<15} {:>12} {:>10}",
            "variant", "strategy", "arena_bytes", "of_base"
        )?;
        for q in &self.quadrants {
            let share = base
                .map(|b| format!("{:.1}%", 100.0 * q.plan.arena_bytes as f64 / b as f64))
                .unwrap_or_default();
            writeln!(
                f,
                "{:<8} {:<15} {:>12} {:>10}",
                q.variant.name(),
                q.plan.strategy.name(),
                q.plan.arena_bytes,
                share
            )?;
        }
        if let Some(r) = self.reduction() {
            writeln!(
                f,
                "reduction (fused+lifetime_reuse vs unfused+no_reuse): {:.1}%",
                100.0 * r
            )?;
        }
        Ok(())
    }
}
