//! Plain-text run configuration.
//!
//! A configuration is a list of `key = value` lines. `[section]` headers
//! prefix the keys that follow, so these two files are equivalent:
//!
//! ```text
//! [wolf]
//! q = 2
//! ```
//!
//! ```text
//! wolf.q = 2
//! ```
//!
//! `#` starts a comment. Later assignments override earlier ones, which is
//! how command-line `--set` overrides are layered on top of a file or preset.

use std::path::PathBuf;
use std::str::FromStr;

use crate::device::FlashGeometry;
use crate::error::{Error, Result};
use crate::manager::{ManagerConfig, ManagerKind};
use crate::sim::{RunConfig, Swap, WorkloadConfig, WriteCount};

/// What to do with the run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// One run per listed manager.
    Single,
    /// Every pair of clusters swapped once, for each listed manager.
    SwapPairs,
    /// The configured workload under greedy and LRU cleaning, over several seeds.
    Cleaning,
    /// FDP with assumed doubling frequencies against measured ones.
    Frequencies,
    /// Closed-form against optimal allocation over enumerated configurations.
    GridStudy,
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "single" => ExperimentKind::Single,
            "swap_pairs" => ExperimentKind::SwapPairs,
            "cleaning" => ExperimentKind::Cleaning,
            "frequencies" => ExperimentKind::Frequencies,
            "grid_study" => ExperimentKind::GridStudy,
            _ => {
                return Err(format!(
                    "expected single, swap_pairs, cleaning, frequencies or grid_study, got `{s}`"
                ))
            }
        })
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExperimentKind::Single => "single",
            ExperimentKind::SwapPairs => "swap_pairs",
            ExperimentKind::Cleaning => "cleaning",
            ExperimentKind::Frequencies => "frequencies",
            ExperimentKind::GridStudy => "grid_study",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSettings {
    pub q: u32,
    pub groups: Vec<usize>,
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub kind: ExperimentKind,
    /// Managers to run; empty means just `manager.kind`.
    pub managers: Vec<ManagerKind>,
    /// Also run without the swaps and report the difference.
    pub compare_noswap: bool,
    /// When `swap_pairs` swaps each pair.
    pub swap_at: WriteCount,
    /// Seeds per policy in the `cleaning` experiment, counting up from `run.seed`.
    pub seeds: u64,
    /// Span after the last swap over which `cleaning` counts migrations.
    pub horizon: WriteCount,
    pub grid: GridSettings,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            kind: ExperimentKind::Single,
            managers: Vec::new(),
            compare_noswap: false,
            swap_at: WriteCount::TimesLba(0.0),
            seeds: 1,
            horizon: WriteCount::TimesLba(1.0),
            grid: GridSettings {
                q: 10,
                groups: vec![2, 3, 4, 5],
                ratios: vec![0.7],
            },
        }
    }
}

/// How the workload section is written down before it becomes a
/// [`WorkloadConfig`].
#[derive(Debug, Clone, PartialEq)]
struct WorkloadSection {
    kind: String,
    sizes: Vec<f64>,
    probs: Vec<f64>,
    groups: usize,
    swaps: Vec<Swap>,
    trace: Option<PathBuf>,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        WorkloadSection {
            kind: "uniform".into(),
            sizes: Vec::new(),
            probs: Vec::new(),
            groups: 0,
            swaps: Vec::new(),
            trace: None,
        }
    }
}

impl WorkloadSection {
    fn resolve(&self) -> Result<WorkloadConfig> {
        match self.kind.as_str() {
            "uniform" => Ok(WorkloadConfig::Uniform),
            "kmodal" => {
                if self.sizes.is_empty() {
                    return Err(Error::config("workload.sizes", "a k-modal workload needs cluster sizes"));
                }
                Ok(WorkloadConfig::KModal {
                    sizes: self.sizes.clone(),
                    probs: self.probs.clone(),
                    swaps: self.swaps.clone(),
                })
            }
            "exponential" => {
                let n = self.groups;
                if n == 0 {
                    return Err(Error::config("workload.groups", "an exponential workload needs a group count"));
                }
                let weights: Vec<f64> = (0..n).map(|i| 2f64.powi(i as i32)).collect();
                let sum: f64 = weights.iter().sum();
                Ok(WorkloadConfig::KModal {
                    sizes: vec![1.0 / n as f64; n],
                    probs: weights.iter().map(|w| w / sum).collect(),
                    swaps: self.swaps.clone(),
                })
            }
            "trace" => Ok(WorkloadConfig::Trace {
                path: self.trace.clone().unwrap_or_default(),
                sizes: self.sizes.clone(),
                probs: self.probs.clone(),
            }),
            other => Err(Error::config(
                "workload.kind",
                format!("expected uniform, kmodal, exponential or trace, got `{other}`"),
            )),
        }
    }
}

/// A parsed configuration: the run template plus what to do with it.
#[derive(Debug, Clone, PartialEq)]
#[derive(Default)]
pub struct Config {
    pub run: RunConfig,
    pub experiment: ExperimentSettings,
    workload: WorkloadSection,
    /// Whether `manager.cleaning` was set explicitly; otherwise it follows the
    /// manager kind.
    cleaning_set: bool,
}


/// Every key a configuration may set.
pub const KEYS: &[&str] = &[
    "device.ratio",
    "geometry.channels",
    "geometry.luns_per_channel",
    "geometry.blocks_per_lun",
    "geometry.pages_per_block",
    "geometry.page_size",
    "geometry.preset",
    "manager.kind",
    "manager.cleaning",
    "manager.detector",
    "manager.initial_groups",
    "manager.max_groups",
    "wolf.h_multiplier",
    "wolf.interval_min",
    "wolf.a",
    "wolf.q",
    "wolf.w",
    "wolf.cold_hit_rate_fraction",
    "wolf.cold_size_fraction",
    "detector.fp_rate",
    "fdp.frequencies",
    "workload.kind",
    "workload.sizes",
    "workload.probs",
    "workload.groups",
    "workload.swaps",
    "workload.trace",
    "run.seed",
    "run.warmup_writes",
    "run.measured_writes",
    "run.window",
    "run.check_invariants",
    "experiment.kind",
    "experiment.managers",
    "experiment.compare_noswap",
    "experiment.swap_at",
    "experiment.seeds",
    "experiment.horizon",
    "grid.q",
    "grid.groups",
    "grid.ratios",
];

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| Error::config(key, format!("`{raw}`: {e}")))
}

fn list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s))
        .collect()
}

fn flag(key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{raw}`"))),
    }
}

/// `5x:0-1; 5.5x:0-1`.
fn swaps(key: &str, raw: &str) -> Result<Vec<Swap>> {
    raw.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let bad = || Error::config(key, format!("expected `at:a-b`, got `{item}`"));
            let (at, pair) = item.split_once(':').ok_or_else(bad)?;
            let (a, b) = pair.split_once('-').ok_or_else(bad)?;
            Ok(Swap {
                at: value(key, at.trim())?,
                a: value(key, a.trim())?,
                b: value(key, b.trim())?,
            })
        })
        .collect()
}

/// Splits text into `(key, value)` assignments with section prefixes applied.
pub fn assignments(text: &str) -> Result<Vec<(String, String)>> {
    let mut section = String::new();
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::config(format!("line {}", n + 1), "unterminated section header"))?;
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", n + 1), format!("expected `key = value`, got `{line}`")))?;
        let k = k.trim();
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

/// Parses one `key=value` override as given on the command line.
pub fn parse_override(text: &str) -> Result<(String, String)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::config(text, "an override must look like key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        cfg.apply_all(assignments(text)?)?;
        Ok(cfg)
    }

    pub fn apply_all<I, K, V>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in pairs {
            self.set(k.as_ref(), v.as_ref())?;
        }
        Ok(())
    }

    /// Sets one dotted key.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let run = &mut self.run;
        let m = &mut run.manager;
        let g = &mut run.geometry;
        let w = &mut self.workload;
        let e = &mut self.experiment;
        match key {
            "device.ratio" => run.ratio = value(key, raw)?,
            "geometry.channels" => g.channels = value(key, raw)?,
            "geometry.luns_per_channel" => g.luns_per_channel = value(key, raw)?,
            "geometry.blocks_per_lun" => g.blocks_per_lun = value(key, raw)?,
            "geometry.pages_per_block" => g.pages_per_block = value(key, raw)?,
            "geometry.page_size" => g.page_size = value(key, raw)?,
            "geometry.preset" => {
                *g = match raw {
                    "desk" => FlashGeometry::desk(),
                    "full" => FlashGeometry::full_scale(),
                    _ => return Err(Error::config(key, format!("expected desk or full, got `{raw}`"))),
                }
            }
            "manager.kind" => {
                let kind: ManagerKind = value(key, raw)?;
                let fresh = ManagerConfig::new(kind);
                m.kind = kind;
                if !self.cleaning_set {
                    m.cleaning = fresh.cleaning;
                }
            }
            "manager.cleaning" => {
                m.cleaning = value(key, raw)?;
                self.cleaning_set = true;
            }
            "manager.detector" => m.detector = value(key, raw)?,
            "manager.initial_groups" => m.initial_groups = value(key, raw)?,
            "manager.max_groups" => m.max_groups = value(key, raw)?,
            "wolf.h_multiplier" => m.h_multiplier = value(key, raw)?,
            "wolf.interval_min" => m.interval_min = value(key, raw)?,
            "wolf.a" => m.ewma_weight = value(key, raw)?,
            "wolf.q" => m.q = value(key, raw)?,
            "wolf.w" => m.w = value(key, raw)?,
            "wolf.cold_hit_rate_fraction" => m.cold_rule.hit_rate_fraction = value(key, raw)?,
            "wolf.cold_size_fraction" => m.cold_rule.size_fraction = value(key, raw)?,
            "detector.fp_rate" => m.fp_rate = value(key, raw)?,
            "fdp.frequencies" => m.fdp_frequencies = value(key, raw)?,
            "workload.kind" => w.kind = raw.to_string(),
            "workload.sizes" => w.sizes = list(key, raw)?,
            "workload.probs" => w.probs = list(key, raw)?,
            "workload.groups" => w.groups = value(key, raw)?,
            "workload.swaps" => w.swaps = swaps(key, raw)?,
            "workload.trace" => w.trace = (!raw.is_empty()).then(|| PathBuf::from(raw)),
            "run.seed" => run.seed = value(key, raw)?,
            "run.warmup_writes" => run.warmup_writes = value(key, raw)?,
            "run.measured_writes" => run.measured_writes = value(key, raw)?,
            "run.window" => run.window = value(key, raw)?,
            "run.check_invariants" => run.check_invariants = flag(key, raw)?,
            "experiment.kind" => e.kind = value(key, raw)?,
            "experiment.managers" => e.managers = list(key, raw)?,
            "experiment.compare_noswap" => e.compare_noswap = flag(key, raw)?,
            "experiment.swap_at" => e.swap_at = value(key, raw)?,
            "experiment.seeds" => e.seeds = value(key, raw)?,
            "experiment.horizon" => e.horizon = value(key, raw)?,
            "grid.q" => e.grid.q = value(key, raw)?,
            "grid.groups" => e.grid.groups = list(key, raw)?,
            "grid.ratios" => e.grid.ratios = list(key, raw)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        self.run.workload = self.workload.resolve().unwrap_or(WorkloadConfig::Uniform);
        Ok(())
    }

    /// Checks the whole configuration; call after the last `set`.
    pub fn validate(&mut self) -> Result<()> {
        self.run.workload = self.workload.resolve()?;
        let e = &self.experiment;
        if e.seeds == 0 {
            return Err(Error::config("experiment.seeds", "must be positive"));
        }
        if e.kind == ExperimentKind::GridStudy {
            if e.grid.q < 2 {
                return Err(Error::config("grid.q", "must be at least 2"));
            }
            if e.grid.groups.iter().any(|&n| n < 1 || n as u32 > e.grid.q) {
                return Err(Error::config("grid.groups", "each count must lie in 1..=grid.q"));
            }
            if e.grid.ratios.iter().any(|&r| !(r > 0.0 && r < 1.0)) {
                return Err(Error::config("grid.ratios", "each ratio must lie in (0, 1)"));
            }
            return Ok(());
        }
        if e.kind == ExperimentKind::SwapPairs && self.cluster_count() < 2 {
            return Err(Error::config("workload.kind", "swap_pairs needs at least two clusters"));
        }
        self.run.validate()
    }

    pub fn cluster_count(&self) -> usize {
        match &self.run.workload {
            WorkloadConfig::KModal { sizes, .. } | WorkloadConfig::Trace { sizes, .. } => sizes.len(),
            WorkloadConfig::Uniform => 1,
        }
    }

    /// The managers the experiment runs.
    pub fn managers(&self) -> Vec<ManagerKind> {
        if self.experiment.managers.is_empty() {
            vec![self.run.manager.kind]
        } else {
            self.experiment.managers.clone()
        }
    }

    /// The run template with `kind` swapped in, keeping every tunable but
    /// letting the cleaning policy follow the manager unless it was pinned.
    pub fn run_for(&self, kind: ManagerKind) -> RunConfig {
        let mut run = self.run.clone();
        run.manager.kind = kind;
        if !self.cleaning_set {
            run.manager.cleaning = ManagerConfig::new(kind).cleaning;
        }
        run
    }

    pub fn set_trace(&mut self, path: PathBuf) {
        self.workload.trace = Some(path);
        self.run.workload = self.workload.resolve().unwrap_or(WorkloadConfig::Uniform);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftl::Cleaning;
    use crate::manager::DetectorKind;

    #[test]
    fn sections_and_dotted_keys_agree() {
        let a = Config::parse("[wolf]\nq = 3\n[device]\nratio=0.8\n").unwrap();
        let b = Config::parse("wolf.q=3\ndevice.ratio = 0.8 # spare\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.run.manager.q, 3.0);
        assert_eq!(a.run.ratio, 0.8);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::parse("[wolf]\nqq = 3\n").unwrap_err().to_string();
        assert!(err.contains("wolf.qq"), "{err}");
    }

    #[test]
    fn bad_value_is_named() {
        let err = Config::parse("run.seed = -4").unwrap_err().to_string();
        assert!(err.contains("run.seed"), "{err}");
        let err = Config::parse("manager.kind = lfs").unwrap_err().to_string();
        assert!(err.contains("manager.kind"), "{err}");
    }

    #[test]
    fn later_assignments_win() {
        let mut c = Config::parse("wolf.w = 10\n").unwrap();
        c.apply_all([parse_override("wolf.w=20").unwrap()]).unwrap();
        assert_eq!(c.run.manager.w, 20);
    }

    #[test]
    fn cleaning_follows_kind_unless_pinned() {
        let c = Config::parse("manager.kind = fdp").unwrap();
        assert_eq!(c.run.manager.cleaning, Cleaning::Lru);
        let c = Config::parse("manager.cleaning = greedy\nmanager.kind = fdp").unwrap();
        assert_eq!(c.run.manager.cleaning, Cleaning::Greedy);
        assert_eq!(c.run_for(ManagerKind::Wolf).manager.cleaning, Cleaning::Greedy);
        let c = Config::parse("manager.kind = fdp").unwrap();
        assert_eq!(c.run_for(ManagerKind::Wolf).manager.cleaning, Cleaning::Greedy);
    }

    #[test]
    fn workload_forms() {
        let mut c = Config::parse(
            "[workload]\nkind = kmodal\nsizes = 0.5, 0.5\nprobs = 0.9, 0.1\nswaps = 5x:0-1; 6000:1-0\n",
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(
            c.run.workload.swaps(),
            &[
                Swap { at: WriteCount::TimesLba(5.0), a: 0, b: 1 },
                Swap { at: WriteCount::Writes(6000), a: 1, b: 0 },
            ]
        );
        let mut c = Config::parse("workload.kind = exponential\nworkload.groups = 3").unwrap();
        c.validate().unwrap();
        let WorkloadConfig::KModal { probs, .. } = &c.run.workload else {
            panic!("expected k-modal");
        };
        assert!((probs[2] - 4.0 / 7.0).abs() < 1e-12);
        let mut c = Config::parse("workload.kind = zipf").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("workload.kind"));
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let samples = [
            ("geometry.preset", "full"),
            ("manager.kind", "baseline"),
            ("manager.cleaning", "lru"),
            ("manager.detector", "oracle"),
            ("fdp.frequencies", "measured"),
            ("workload.kind", "trace"),
            ("workload.sizes", "0.5,0.5"),
            ("workload.probs", "0.5,0.5"),
            ("workload.swaps", "1x:0-1"),
            ("workload.trace", "t.txt"),
            ("run.warmup_writes", "2x"),
            ("run.measured_writes", "2x"),
            ("run.window", "1000"),
            ("run.check_invariants", "true"),
            ("experiment.kind", "grid_study"),
            ("experiment.managers", "wolf,fdp"),
            ("experiment.compare_noswap", "yes"),
            ("experiment.swap_at", "3x"),
            ("experiment.horizon", "1x"),
            ("grid.groups", "2,3"),
            ("grid.ratios", "0.6,0.7"),
            ("device.ratio", "0.75"),
            ("wolf.h_multiplier", "0.002"),
            ("wolf.a", "0.5"),
            ("wolf.q", "2.5"),
            ("wolf.cold_hit_rate_fraction", "0.1"),
            ("wolf.cold_size_fraction", "0.1"),
            ("detector.fp_rate", "0.2"),
        ];
        let mut c = Config::default();
        for key in KEYS {
            let v = samples.iter().find(|(k, _)| k == key).map_or("3", |(_, v)| *v);
            c.set(key, v).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
        assert_eq!(c.run.manager.detector, DetectorKind::Oracle);
        assert_eq!(c.experiment.managers, vec![ManagerKind::Wolf, ManagerKind::Fdp]);
    }

    #[test]
    fn syntax_errors_name_the_line() {
        let err = Config::parse("\n[wolf\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let err = Config::parse("wolf.q 3").unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
    }
}
