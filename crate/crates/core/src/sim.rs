//! A single simulation run: warm fill, warm-up, then a measured phase split
//! into fixed-width metrics windows.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::device::{DeviceCounters, FlashGeometry};
use crate::error::{Error, Result};
use crate::manager::{Ftl, ManagerConfig, ManagerKind, ManagerStats};
use crate::par;
use crate::workload::{write_trace, KModalSpec, SwapEvent, Workload, RNG_ALGORITHM};

pub const CSV_HEADER: &str =
    "window,logical_writes,migrations,erases,wa,group_count,group_sizes,group_freqs,group_op_targets";

/// Fraction of the measured windows averaged for the steady-state WA.
pub const STEADY_STATE_FRACTION: f64 = 0.2;

/// A write count, either absolute or a multiple of the logical space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WriteCount {
    Writes(u64),
    TimesLba(f64),
}

impl WriteCount {
    pub fn resolve(self, logical_pages: u64) -> u64 {
        match self {
            WriteCount::Writes(n) => n,
            WriteCount::TimesLba(x) => (x * logical_pages as f64).round() as u64,
        }
    }
}

impl std::str::FromStr for WriteCount {
    type Err = String;

    /// `12345` or `2.5x` (times LBA).
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if let Some(x) = s.strip_suffix('x') {
            let v: f64 = x.trim().parse().map_err(|_| format!("bad multiple `{s}`"))?;
            if v.is_finite() && v >= 0.0 {
                return Ok(WriteCount::TimesLba(v));
            }
            return Err(format!("bad multiple `{s}`"));
        }
        s.parse()
            .map(WriteCount::Writes)
            .map_err(|_| format!("expected a write count like 50000 or 3x, got `{s}`"))
    }
}

impl std::fmt::Display for WriteCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WriteCount::Writes(n) => write!(f, "{n}"),
            WriteCount::TimesLba(x) => write!(f, "{x}x"),
        }
    }
}

/// A probability swap between clusters `a` and `b`, timed from the first
/// write after the warm fill.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Swap {
    pub at: WriteCount,
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadConfig {
    Uniform,
    KModal {
        sizes: Vec<f64>,
        probs: Vec<f64>,
        swaps: Vec<Swap>,
    },
    /// Replays a trace. `sizes`/`probs`, when present, describe the generator
    /// the trace came from; they feed the oracle detector.
    Trace {
        path: PathBuf,
        sizes: Vec<f64>,
        probs: Vec<f64>,
    },
}

impl WorkloadConfig {
    pub fn swaps(&self) -> &[Swap] {
        match self {
            WorkloadConfig::KModal { swaps, .. } => swaps,
            _ => &[],
        }
    }

    pub fn without_swaps(&self) -> Self {
        let mut w = self.clone();
        if let WorkloadConfig::KModal { swaps, .. } = &mut w {
            swaps.clear();
        }
        w
    }

    fn spec(&self, logical_pages: u64) -> Result<Option<KModalSpec>> {
        let (sizes, probs, swaps) = match self {
            WorkloadConfig::Uniform => return Ok(None),
            WorkloadConfig::KModal { sizes, probs, swaps } => (sizes, probs, swaps.as_slice()),
            WorkloadConfig::Trace { sizes, probs, .. } if !sizes.is_empty() => (sizes, probs, &[][..]),
            WorkloadConfig::Trace { .. } => return Ok(None),
        };
        let n = sizes.len();
        let events = swaps
            .iter()
            .map(|s| {
                if s.a >= n || s.b >= n || s.a == s.b {
                    return Err(Error::config(
                        "workload.swaps",
                        format!("swap {}-{} does not name two of the {n} clusters", s.a, s.b),
                    ));
                }
                Ok(SwapEvent {
                    at: s.at.resolve(logical_pages),
                    a: s.a,
                    b: s.b,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        KModalSpec::from_fractions(logical_pages, sizes, probs, events).map(Some)
    }

    fn build(&self, logical_pages: u64, seed: u64) -> Result<Workload> {
        let spec = self.spec(logical_pages)?;
        match self {
            WorkloadConfig::Uniform => Workload::uniform(logical_pages, seed),
            WorkloadConfig::KModal { .. } => Ok(Workload::kmodal(spec.expect("k-modal spec"), seed)),
            WorkloadConfig::Trace { path, .. } => Workload::trace(path, logical_pages, spec),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: FlashGeometry,
    /// LBA/PBA.
    pub ratio: f64,
    pub manager: ManagerConfig,
    pub workload: WorkloadConfig,
    pub seed: u64,
    pub warmup_writes: WriteCount,
    pub measured_writes: WriteCount,
    pub window: WriteCount,
    /// Verify every manager invariant at each window boundary.
    pub check_invariants: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: FlashGeometry::desk(),
            ratio: 0.7,
            manager: ManagerConfig::new(ManagerKind::Wolf),
            workload: WorkloadConfig::Uniform,
            seed: 1,
            warmup_writes: WriteCount::TimesLba(5.0),
            measured_writes: WriteCount::TimesLba(10.0),
            window: WriteCount::TimesLba(0.1),
            check_invariants: false,
        }
    }
}

impl RunConfig {
    pub fn logical_pages(&self) -> u64 {
        (self.ratio * self.geometry.physical_pages() as f64).floor() as u64
    }

    /// Number and width of the measured windows. Multiples of LBA round
    /// independently, so a measured phase a few writes short of a whole
    /// number of windows still gets the last one.
    pub fn windows(&self) -> (u64, u64) {
        let l = self.logical_pages();
        let width = self.window.resolve(l);
        let measured = self.measured_writes.resolve(l);
        ((measured as f64 / width as f64 + 0.01).floor() as u64, width)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(Error::config("device.ratio", format!("must lie in (0, 1), got {}", self.ratio)));
        }
        let l = self.logical_pages();
        if l == 0 {
            return Err(Error::config("device.ratio", "leaves no logical pages"));
        }
        let two_blocks_per_lun = 2 * (self.geometry.luns() * self.geometry.pages_per_block()) as u64;
        if self.geometry.physical_pages() - l < two_blocks_per_lun {
            return Err(Error::config(
                "device.ratio",
                "spare space must cover at least two blocks per LUN",
            ));
        }
        if self.window.resolve(l) == 0 {
            return Err(Error::config("run.window", "must be positive"));
        }
        self.manager.validate()
    }
}

/// Metrics for one window of the measured phase.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsWindow {
    pub index: u64,
    pub logical_writes: u64,
    pub migrations: u64,
    pub erases: u64,
    pub wa: f64,
    pub group_sizes: Vec<u64>,
    pub group_freqs: Vec<f64>,
    pub group_op_targets: Vec<u64>,
}

impl MetricsWindow {
    pub fn group_count(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn to_csv(&self) -> String {
        fn join<T: std::fmt::Display>(v: &[T]) -> String {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
        }
        let freqs: Vec<String> = self.group_freqs.iter().map(|f| format!("{f:.6}")).collect();
        format!(
            "{},{},{},{},{:.6},{},{},{},{}",
            self.index,
            self.logical_writes,
            self.migrations,
            self.erases,
            self.wa,
            self.group_count(),
            join(&self.group_sizes),
            freqs.join(";"),
            join(&self.group_op_targets),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub manager: ManagerKind,
    pub seed: u64,
    pub logical_pages: u64,
    pub physical_pages: u64,
    /// Totals over the measured phase.
    pub totals: DeviceCounters,
    pub steady_state_wa: f64,
    pub final_group_count: usize,
    pub stats: ManagerStats,
    /// Migrations beyond those of the same run without swaps, over PBA.
    pub extra_migrations_per_pba: Option<f64>,
}

impl Summary {
    pub fn render(&self) -> String {
        let t = &self.totals;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("write to string");
        kv("manager", self.manager.to_string());
        kv("rng", RNG_ALGORITHM.to_string());
        kv("seed", self.seed.to_string());
        kv("logical_pages", self.logical_pages.to_string());
        kv("physical_pages", self.physical_pages.to_string());
        kv("logical_writes", t.logical_writes.to_string());
        kv("migrations", t.migrations.to_string());
        kv("physical_writes", t.physical_writes.to_string());
        kv("erases", t.erases.to_string());
        kv("steady_state_wa", format!("{:.6}", self.steady_state_wa));
        kv("groups", self.final_group_count.to_string());
        kv("group_creations", self.stats.creations.to_string());
        kv("group_merges", self.stats.merges.to_string());
        kv("movement_gcs", self.stats.movement_gcs.to_string());
        if let Some(x) = self.extra_migrations_per_pba {
            kv("extra_migrations_per_pba", format!("{x:.6}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub windows: Vec<MetricsWindow>,
    pub summary: Summary,
}

impl RunOutput {
    pub fn csv(&self) -> String {
        let mut buf = Vec::new();
        emit_csv(&self.windows, &mut buf).expect("write to memory");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

pub fn emit_csv<W: Write>(windows: &[MetricsWindow], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for w in windows {
        writeln!(out, "{}", w.to_csv())?;
    }
    Ok(())
}

/// Mean WA over the last fifth of the windows (at least one window).
pub fn steady_state_wa(windows: &[MetricsWindow]) -> f64 {
    if windows.is_empty() {
        return f64::NAN;
    }
    let k = ((windows.len() as f64 * STEADY_STATE_FRACTION).round() as usize).max(1);
    let tail = &windows[windows.len() - k..];
    let logical: u64 = tail.iter().map(|w| w.logical_writes).sum();
    let migrations: u64 = tail.iter().map(|w| w.migrations).sum();
    (logical + migrations) as f64 / logical as f64
}

fn snapshot(ftl: &Ftl, index: u64, d: DeviceCounters) -> MetricsWindow {
    let groups = ftl.groups();
    MetricsWindow {
        index,
        logical_writes: d.logical_writes,
        migrations: d.migrations,
        erases: d.erases,
        wa: d.write_amplification(),
        group_sizes: groups.iter().map(|g| g.size).collect(),
        group_freqs: groups.iter().map(|g| g.freq).collect(),
        group_op_targets: groups.iter().map(|g| g.target_op).collect(),
    }
}

struct Driver {
    ftl: Ftl,
    workload: Workload,
    version: u64,
}

impl Driver {
    /// Issues up to `n` workload writes; returns how many were issued.
    fn step(&mut self, n: u64) -> Result<u64> {
        for i in 0..n {
            let Some(lpa) = self.workload.next_write()? else {
                return Ok(i);
            };
            if self.workload.truth_version() != self.version {
                self.version = self.workload.truth_version();
                if let Some(t) = self.workload.truth() {
                    self.ftl.set_truth(t);
                }
            }
            self.ftl.write(lpa)?;
        }
        Ok(n)
    }
}

/// Runs one configuration to completion.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let l = cfg.logical_pages();
    let workload = cfg.workload.build(l, cfg.seed)?;
    let ftl = Ftl::new(cfg.geometry, l, cfg.manager.clone(), workload.truth().cloned())?;
    let mut d = Driver {
        version: workload.truth_version(),
        ftl,
        workload,
    };
    for lpa in 0..l {
        d.ftl.write(lpa)?;
    }
    d.step(cfg.warmup_writes.resolve(l))?;
    let (count, width) = cfg.windows();
    let start = d.ftl.counters();
    let mut windows = Vec::new();
    let mut last = start;
    for _ in 0..count {
        let issued = d.step(width)?;
        if issued < width {
            break;
        }
        let now = d.ftl.counters();
        windows.push(snapshot(&d.ftl, windows.len() as u64, now.since(&last)));
        last = now;
        if cfg.check_invariants {
            d.ftl.check_invariants()?;
        }
    }
    let summary = Summary {
        manager: cfg.manager.kind,
        seed: cfg.seed,
        logical_pages: l,
        physical_pages: cfg.geometry.physical_pages(),
        totals: d.ftl.counters().since(&start),
        steady_state_wa: steady_state_wa(&windows),
        final_group_count: d.ftl.group_count(),
        stats: d.ftl.stats(),
        extra_migrations_per_pba: None,
    };
    Ok(RunOutput { windows, summary })
}

/// Writes the trace a trace-replay run of `cfg` will consume: `cfg`'s
/// cluster sizes and probabilities drawn for the warm-up plus the measured
/// phase, seeded by `run.seed`.
pub fn synthesize_trace(cfg: &RunConfig, path: &Path) -> Result<u64> {
    let l = cfg.logical_pages();
    let WorkloadConfig::Trace { sizes, probs, .. } = &cfg.workload else {
        return Err(Error::config("workload.kind", "only trace workloads are synthesized"));
    };
    if sizes.is_empty() {
        return Err(Error::config("workload.sizes", "synthesizing a trace needs cluster sizes"));
    }
    let generator = WorkloadConfig::KModal {
        sizes: sizes.clone(),
        probs: probs.clone(),
        swaps: Vec::new(),
    };
    let mut w = generator.build(l, cfg.seed)?;
    let (count, width) = cfg.windows();
    let n = cfg.warmup_writes.resolve(l) + count * width;
    let addrs = (0..n).map(|_| w.next_write()).collect::<Result<Option<Vec<u64>>>>()?;
    let comment = format!(
        "synthetic trace: LBA={l} sizes={sizes:?} probs={probs:?} seed={}",
        cfg.seed
    );
    write_trace(path, &comment, addrs.unwrap_or_default())?;
    Ok(n)
}

/// Runs `cfg` and the same configuration without its swaps side by side, and
/// reports the swap's cost as extra migrations over PBA.
pub fn run_against_noswap(cfg: &RunConfig) -> Result<RunOutput> {
    let mut quiet = cfg.clone();
    quiet.workload = cfg.workload.without_swaps();
    let (with, without) = par::join(|| run(cfg), || run(&quiet));
    let (mut with, without) = (with?, without?);
    with.summary.extra_migrations_per_pba = Some(extra_migrations(&with.summary, &without.summary));
    Ok(with)
}

pub fn extra_migrations(swapped: &Summary, baseline: &Summary) -> f64 {
    (swapped.totals.migrations as f64 - baseline.totals.migrations as f64) / swapped.physical_pages as f64
}
