//! Turns a [`Config`] into runs and named output files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::config::{Config, ExperimentKind};
use crate::error::{Error, Result};
use crate::ftl::Cleaning;
use crate::grid::{self, GridRow};
use crate::manager::{FdpFrequencies, ManagerKind};
use crate::par;
use crate::sim::{self, extra_migrations, RunConfig, RunOutput, Swap, WorkloadConfig};

/// One file the experiment produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone)]
pub struct LabeledRun {
    pub label: String,
    pub output: RunOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairResult {
    pub a: usize,
    pub b: usize,
    pub manager: ManagerKind,
    pub migrations: u64,
    pub extra_migrations_per_pba: f64,
    pub steady_state_wa: f64,
}

/// Migrations after the last swap, summed over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleaningResult {
    pub greedy: u64,
    pub lru: u64,
}

impl CleaningResult {
    /// LRU migrations relative to greedy, minus one.
    pub fn lru_excess(&self) -> f64 {
        self.lru as f64 / self.greedy as f64 - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyResult {
    pub assumed_wa: f64,
    pub measured_wa: f64,
}

impl FrequencyResult {
    /// How much higher the steady-state WA is under assumed frequencies.
    pub fn gain(&self) -> f64 {
        self.assumed_wa / self.measured_wa - 1.0
    }
}

#[derive(Debug, Clone)]
pub enum Findings {
    Runs,
    SwapPairs(Vec<PairResult>),
    Cleaning(CleaningResult),
    Frequencies(FrequencyResult),
    Grid(Vec<GridRow>),
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub kind: ExperimentKind,
    pub runs: Vec<LabeledRun>,
    pub findings: Findings,
}

impl ExperimentOutput {
    pub fn run(&self, label: &str) -> Option<&RunOutput> {
        self.runs.iter().find(|r| r.label == label).map(|r| &r.output)
    }

    /// Per-run CSVs and summaries, then the experiment report.
    pub fn artifacts(&self) -> Vec<Artifact> {
        let mut out = Vec::new();
        for r in &self.runs {
            out.push(Artifact {
                name: format!("{}.csv", r.label),
                contents: r.output.csv(),
            });
            out.push(Artifact {
                name: format!("{}.summary.txt", r.label),
                contents: r.output.summary.render(),
            });
        }
        match &self.findings {
            Findings::Runs => {}
            Findings::SwapPairs(rows) => {
                let mut csv = String::from("a,b,manager,migrations,extra_migrations_per_pba,steady_state_wa\n");
                for p in rows {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{},{:.6},{:.6}",
                        p.a, p.b, p.manager, p.migrations, p.extra_migrations_per_pba, p.steady_state_wa
                    );
                }
                out.push(Artifact { name: "pairs.csv".into(), contents: csv });
            }
            Findings::Cleaning(c) => out.push(Artifact {
                name: "cleaning.txt".into(),
                contents: format!(
                    "greedy_migrations={}\nlru_migrations={}\nlru_excess={:.4}\n",
                    c.greedy,
                    c.lru,
                    c.lru_excess()
                ),
            }),
            Findings::Frequencies(f) => out.push(Artifact {
                name: "frequencies.txt".into(),
                contents: format!(
                    "assumed_steady_state_wa={:.6}\nmeasured_steady_state_wa={:.6}\ngain={:.4}\n",
                    f.assumed_wa,
                    f.measured_wa,
                    f.gain()
                ),
            }),
            Findings::Grid(rows) => {
                let mut csv = Vec::new();
                grid::write_csv(rows, &mut csv).expect("writing to memory");
                out.push(Artifact {
                    name: "grid.csv".into(),
                    contents: String::from_utf8(csv).expect("ascii csv"),
                });
                let mut summary = String::from("groups,ratio,Q,configs,mean_pct_off,max_pct_off\n");
                for s in grid::summarize(rows) {
                    let _ = writeln!(
                        summary,
                        "{},{:.2},{},{},{:.6},{:.6}",
                        s.groups, s.ratio, s.q, s.configs, s.mean_pct_off, s.max_pct_off
                    );
                }
                out.push(Artifact { name: "grid_summary.csv".into(), contents: summary });
            }
        }
        out
    }

    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        self.artifacts()
            .into_iter()
            .map(|a| {
                let path = dir.join(&a.name);
                std::fs::write(&path, a.contents)?;
                Ok(path)
            })
            .collect()
    }
}

/// Validates `cfg` and runs the experiment it describes. `work_dir` receives
/// a synthesized trace when the configuration asks for a trace without
/// naming one.
pub fn run(cfg: &Config, work_dir: Option<&Path>) -> Result<ExperimentOutput> {
    let mut cfg = cfg.clone();
    if let WorkloadConfig::Trace { path, .. } = &cfg.run.workload {
        if path.as_os_str().is_empty() {
            let dir = work_dir.ok_or_else(|| {
                Error::config("workload.trace", "no trace given and no output directory to generate one in")
            })?;
            std::fs::create_dir_all(dir)?;
            let path = dir.join("synthetic.trace");
            cfg.set_trace(path.clone());
            cfg.validate()?;
            sim::synthesize_trace(&cfg.run, &path)?;
        }
    }
    cfg.validate()?;
    let kind = cfg.experiment.kind;
    let (runs, findings) = match kind {
        ExperimentKind::Single => (single(&cfg)?, Findings::Runs),
        ExperimentKind::SwapPairs => swap_pairs(&cfg)?,
        ExperimentKind::Cleaning => cleaning(&cfg)?,
        ExperimentKind::Frequencies => frequencies(&cfg)?,
        ExperimentKind::GridStudy => {
            let g = &cfg.experiment.grid;
            (Vec::new(), Findings::Grid(grid::grid_study(g.q, &g.groups, &g.ratios)?))
        }
    };
    Ok(ExperimentOutput { kind, runs, findings })
}

fn labeled(jobs: Vec<(String, RunConfig)>) -> Result<Vec<LabeledRun>> {
    par::map(&jobs, |(label, run)| {
        sim::run(run).map(|output| LabeledRun {
            label: label.clone(),
            output,
        })
    })
    .into_iter()
    .collect()
}

fn single(cfg: &Config) -> Result<Vec<LabeledRun>> {
    let compare = cfg.experiment.compare_noswap && !cfg.run.workload.swaps().is_empty();
    let mut jobs = Vec::new();
    for kind in cfg.managers() {
        let run = cfg.run_for(kind);
        if compare {
            let mut quiet = run.clone();
            quiet.workload = run.workload.without_swaps();
            jobs.push((format!("{kind}.noswap"), quiet));
        }
        jobs.push((kind.to_string(), run));
    }
    let mut runs = labeled(jobs)?;
    if compare {
        for i in (0..runs.len()).step_by(2) {
            let extra = extra_migrations(&runs[i + 1].output.summary, &runs[i].output.summary);
            runs[i + 1].output.summary.extra_migrations_per_pba = Some(extra);
        }
    }
    Ok(runs)
}

fn swap_pairs(cfg: &Config) -> Result<(Vec<LabeledRun>, Findings)> {
    let n = cfg.cluster_count();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let mut jobs = Vec::new();
    for kind in cfg.managers() {
        let base = cfg.run_for(kind);
        let mut quiet = base.clone();
        quiet.workload = base.workload.without_swaps();
        jobs.push((format!("{kind}.noswap"), quiet));
        for &(a, b) in &pairs {
            let mut run = base.clone();
            if let WorkloadConfig::KModal { swaps, .. } = &mut run.workload {
                *swaps = vec![Swap { at: cfg.experiment.swap_at, a, b }];
            }
            jobs.push((format!("swap_{a}_{b}.{kind}"), run));
        }
    }
    let mut runs = labeled(jobs)?;
    let mut rows = Vec::new();
    for chunk in runs.chunks_mut(pairs.len() + 1) {
        let (quiet, swapped) = chunk.split_first_mut().expect("baseline run first");
        for (r, &(a, b)) in swapped.iter_mut().zip(&pairs) {
            let s = &mut r.output.summary;
            let extra = extra_migrations(s, &quiet.output.summary);
            s.extra_migrations_per_pba = Some(extra);
            rows.push(PairResult {
                a,
                b,
                manager: s.manager,
                migrations: s.totals.migrations,
                extra_migrations_per_pba: extra,
                steady_state_wa: s.steady_state_wa,
            });
        }
    }
    Ok((runs, Findings::SwapPairs(rows)))
}

fn cleaning(cfg: &Config) -> Result<(Vec<LabeledRun>, Findings)> {
    let run = &cfg.run;
    let l = run.logical_pages();
    let width = run.window.resolve(l);
    let last_swap = run.workload.swaps().iter().map(|s| s.at.resolve(l)).max().unwrap_or(0);
    let first = last_swap.saturating_sub(run.warmup_writes.resolve(l)).div_ceil(width) as usize;
    let span = (cfg.experiment.horizon.resolve(l) as f64 / width as f64).round() as usize;
    let mut jobs = Vec::new();
    for policy in [Cleaning::Greedy, Cleaning::Lru] {
        for k in 0..cfg.experiment.seeds {
            let mut r = run.clone();
            r.manager.cleaning = policy;
            r.seed = run.seed + k;
            jobs.push((format!("{policy}.seed{}", r.seed), r));
        }
    }
    let runs = labeled(jobs)?;
    let mut totals = [0u64; 2];
    for (i, r) in runs.iter().enumerate() {
        let w = &r.output.windows;
        if w.len() < first + span {
            return Err(Error::config(
                "run.measured_writes",
                format!("the measured phase ends before the {}-window horizon after the last swap", span),
            ));
        }
        totals[i / cfg.experiment.seeds as usize] += w[first..first + span].iter().map(|w| w.migrations).sum::<u64>();
    }
    let result = CleaningResult {
        greedy: totals[0],
        lru: totals[1],
    };
    Ok((runs, Findings::Cleaning(result)))
}

fn frequencies(cfg: &Config) -> Result<(Vec<LabeledRun>, Findings)> {
    let jobs = [FdpFrequencies::Assumed, FdpFrequencies::Measured]
        .into_iter()
        .map(|f| {
            let mut r = cfg.run_for(ManagerKind::Fdp);
            r.manager.fdp_frequencies = f;
            (format!("fdp.{f}"), r)
        })
        .collect();
    let runs = labeled(jobs)?;
    let result = FrequencyResult {
        assumed_wa: runs[0].output.summary.steady_state_wa,
        measured_wa: runs[1].output.summary.steady_state_wa,
    };
    Ok((runs, Findings::Frequencies(result)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(text: &str) -> Config {
        let mut c = Config::parse(text).unwrap();
        c.apply_all([
            ("geometry.blocks_per_lun", "64"),
            ("geometry.pages_per_block", "16"),
            ("run.warmup_writes", "1x"),
            ("run.measured_writes", "2x"),
            ("run.window", "0.25x"),
        ])
        .unwrap();
        c
    }

    #[test]
    fn single_with_noswap_labels_and_extra() {
        let c = small(
            "workload.kind=kmodal\nworkload.sizes=0.5,0.5\nworkload.probs=0.9,0.1\nworkload.swaps=1.5x:0-1\n\
             manager.detector=oracle\nexperiment.managers=wolf,fdp\nexperiment.compare_noswap=true",
        );
        let out = run(&c, None).unwrap();
        let labels: Vec<_> = out.runs.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(labels, ["wolf.noswap", "wolf", "fdp.noswap", "fdp"]);
        assert!(out.run("wolf").unwrap().summary.extra_migrations_per_pba.is_some());
        assert!(out.run("wolf.noswap").unwrap().summary.extra_migrations_per_pba.is_none());
        let names: Vec<_> = out.artifacts().into_iter().map(|a| a.name).collect();
        assert!(names.contains(&"fdp.summary.txt".to_string()));
    }

    #[test]
    fn swap_pairs_covers_every_pair() {
        let c = small(
            "workload.kind=exponential\nworkload.groups=3\nmanager.detector=oracle\n\
             experiment.kind=swap_pairs\nexperiment.managers=wolf\nexperiment.swap_at=1.5x",
        );
        let out = run(&c, None).unwrap();
        let Findings::SwapPairs(rows) = &out.findings else { panic!("pairs expected") };
        let pairs: Vec<_> = rows.iter().map(|p| (p.a, p.b)).collect();
        assert_eq!(pairs, [(0, 1), (0, 2), (1, 2)]);
        assert_eq!(out.runs.len(), 4);
    }

    #[test]
    fn trace_is_synthesized_into_work_dir() {
        let dir = tempfile::tempdir().unwrap();
        let c = small(
            "workload.kind=trace\nworkload.sizes=0.5,0.5\nworkload.probs=0.2,0.8\n\
             manager.detector=oracle\nexperiment.kind=frequencies",
        );
        assert!(run(&c, None).unwrap_err().to_string().contains("workload.trace"));
        let out = run(&c, Some(dir.path())).unwrap();
        assert!(dir.path().join("synthetic.trace").exists());
        let Findings::Frequencies(f) = out.findings else { panic!("frequencies expected") };
        assert!(f.assumed_wa >= 1.0 && f.measured_wa >= 1.0);
    }

    #[test]
    fn cleaning_needs_room_after_the_swap() {
        let c = small(
            "workload.kind=kmodal\nworkload.sizes=0.5,0.5\nworkload.probs=1,0\nworkload.swaps=1x:0-1;1.5x:0-1\n\
             experiment.kind=cleaning\nexperiment.horizon=3x",
        );
        assert!(run(&c, None).unwrap_err().to_string().contains("run.measured_writes"));
    }
}
