//! Exhaustive comparison of the closed-form allocation against the optimum.
//!
//! The logical space is cut into `Q` chunks of `LBA/Q` pages and the update
//! frequency space into `Q` chunks of `1/Q`. Every way of handing each group at
//! least one chunk of each is a workload configuration; configurations that
//! only differ by a permutation of the groups are evaluated once.

use std::collections::BTreeSet;
use std::io::Write;

use crate::alloc::{alloc_mixed, alloc_optimal, total_wa, AllocProblem, GroupStat};
use crate::error::{Error, Result};
use crate::par;

/// Physical size of the synthetic device used for every grid point.
pub const GRID_PHYSICAL_PAGES: u64 = 100_000;
/// Allocation granularity (pages) for both policies.
pub const GRID_UNIT: u64 = 100;

pub const CSV_HEADER: &str = "groups,ratio,Q,config_id,wa_mixed,wa_optimal,pct_off";

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub groups: usize,
    pub ratio: f64,
    pub q: u32,
    pub config_id: usize,
    pub wa_mixed: f64,
    pub wa_optimal: f64,
    /// `(wa_mixed / wa_optimal - 1) · 100`.
    pub pct_off: f64,
}

impl GridRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.2},{},{},{:.9},{:.9},{:.6}",
            self.groups, self.ratio, self.q, self.config_id, self.wa_mixed, self.wa_optimal, self.pct_off
        )
    }
}

/// Mean and maximum departure for one `(groups, ratio, Q)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub groups: usize,
    pub ratio: f64,
    pub q: u32,
    pub configs: usize,
    pub mean_pct_off: f64,
    pub max_pct_off: f64,
}

/// One workload: per-group chunk counts of size and of frequency.
type Config = Vec<(u32, u32)>;

fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    fn rec(left: u32, parts: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if parts == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for first in 1..=left - (parts as u32 - 1) {
            cur.push(first);
            rec(left - first, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if parts >= 1 && total >= parts as u32 {
        rec(total, parts, &mut Vec::with_capacity(parts), &mut out);
    }
    out
}

/// Distinct configurations of `groups` groups over `q` chunks, in a fixed
/// order (lexicographic on the sorted `(size, freq)` chunk pairs).
pub fn configurations(q: u32, groups: usize) -> Vec<Vec<(u32, u32)>> {
    let parts = compositions(q, groups);
    let mut seen = BTreeSet::new();
    for sizes in &parts {
        for freqs in &parts {
            let mut cfg: Config = sizes.iter().copied().zip(freqs.iter().copied()).collect();
            cfg.sort_unstable();
            seen.insert(cfg);
        }
    }
    seen.into_iter().collect()
}

fn problem_for(ratio: f64, q: u32) -> Result<AllocProblem> {
    let lba_f = ratio * GRID_PHYSICAL_PAGES as f64;
    let lba = lba_f.round() as u64;
    if !(ratio > 0.0 && ratio < 1.0) || (lba_f - lba as f64).abs() > 1e-6 {
        return Err(Error::domain(format!(
            "ratio {ratio} does not give a whole logical space on {GRID_PHYSICAL_PAGES} pages"
        )));
    }
    if !lba.is_multiple_of(q as u64) {
        return Err(Error::domain(format!("LBA={lba} is not divisible into Q={q} chunks")));
    }
    AllocProblem::new(lba, GRID_PHYSICAL_PAGES, GRID_UNIT)
}

fn evaluate(cfg: &[(u32, u32)], problem: &AllocProblem, q: u32) -> Result<(f64, f64)> {
    let chunk = problem.logical_pages / q as u64;
    let stats: Vec<GroupStat> = cfg
        .iter()
        .map(|&(s, p)| GroupStat::new(s as u64 * chunk, p as f64 / q as f64))
        .collect();
    // The fixed cold-group rule is a runtime safeguard; the grid measures the
    // bare closed form.
    let mixed = total_wa(&stats, &alloc_mixed(&stats, problem, None)?)?;
    let optimal = total_wa(&stats, &alloc_optimal(&stats, problem)?)?;
    Ok((mixed, optimal))
}

struct Job {
    groups: usize,
    ratio: f64,
    q: u32,
    config_id: usize,
    problem: AllocProblem,
    config: Config,
}

fn jobs(q: u32, group_counts: &[usize], ratios: &[f64]) -> Result<Vec<Job>> {
    if q < 2 {
        return Err(Error::domain(format!("Q must be at least 2, got {q}")));
    }
    let mut out = Vec::new();
    for &groups in group_counts {
        if groups < 2 || groups > q as usize {
            return Err(Error::domain(format!(
                "cannot split Q={q} chunks among {groups} groups (need 2..=Q)"
            )));
        }
        let configs = configurations(q, groups);
        for &ratio in ratios {
            let problem = problem_for(ratio, q)?;
            for (config_id, config) in configs.iter().enumerate() {
                out.push(Job {
                    groups,
                    ratio,
                    q,
                    config_id,
                    problem,
                    config: config.clone(),
                });
            }
        }
    }
    Ok(out)
}

fn run_job(job: &Job) -> Result<GridRow> {
    let (wa_mixed, wa_optimal) = evaluate(&job.config, &job.problem, job.q)?;
    Ok(GridRow {
        groups: job.groups,
        ratio: job.ratio,
        q: job.q,
        config_id: job.config_id,
        wa_mixed,
        wa_optimal,
        pct_off: (wa_mixed / wa_optimal - 1.0) * 100.0,
    })
}

/// Runs the grid study; rows come back in enumeration order whether or not the
/// work was spread over threads.
pub fn grid_study(q: u32, group_counts: &[usize], ratios: &[f64]) -> Result<Vec<GridRow>> {
    par::map(&jobs(q, group_counts, ratios)?, run_job)
        .into_iter()
        .collect()
}

/// Single-threaded reference implementation of [`grid_study`].
pub fn grid_study_sequential(
    q: u32,
    group_counts: &[usize],
    ratios: &[f64],
) -> Result<Vec<GridRow>> {
    par::map_sequential(&jobs(q, group_counts, ratios)?, run_job)
        .into_iter()
        .collect()
}

/// Aggregates rows per `(groups, ratio, Q)` cell, in first-seen order.
pub fn summarize(rows: &[GridRow]) -> Vec<GridSummary> {
    let mut out: Vec<GridSummary> = Vec::new();
    for row in rows {
        let cell = out
            .iter_mut()
            .find(|s| s.groups == row.groups && s.ratio == row.ratio && s.q == row.q);
        match cell {
            Some(s) => {
                s.mean_pct_off += row.pct_off;
                s.max_pct_off = s.max_pct_off.max(row.pct_off);
                s.configs += 1;
            }
            None => out.push(GridSummary {
                groups: row.groups,
                ratio: row.ratio,
                q: row.q,
                configs: 1,
                mean_pct_off: row.pct_off,
                max_pct_off: row.pct_off,
            }),
        }
    }
    for s in &mut out {
        s.mean_pct_off /= s.configs as f64;
    }
    out
}

pub fn write_csv<W: Write>(rows: &[GridRow], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composition_counts() {
        // C(9, n-1) ordered compositions of 10 into n positive parts.
        assert_eq!(compositions(10, 2).len(), 9);
        assert_eq!(compositions(10, 3).len(), 36);
        assert_eq!(compositions(10, 10).len(), 1);
        assert!(compositions(3, 4).is_empty());
        assert!(compositions(10, 3).iter().all(|c| c.iter().sum::<u32>() == 10));
    }

    #[test]
    fn configurations_are_unique_up_to_permutation() {
        let cfgs = configurations(10, 2);
        // 81 ordered pairs; (a,b) and its swap coincide except on the diagonal.
        assert_eq!(cfgs.len(), 41);
        let cfgs3 = configurations(4, 3);
        assert!(cfgs3.iter().all(|c| c.iter().map(|x| x.0).sum::<u32>() == 4));
    }

    #[test]
    fn departures_are_non_negative() {
        let rows = grid_study(10, &[2, 3], &[0.7]).unwrap();
        assert!(!rows.is_empty());
        for r in &rows {
            assert!(r.pct_off >= -1e-9, "{r:?}");
        }
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let a = grid_study(6, &[2, 3], &[0.6, 0.9]).unwrap();
        let b = grid_study_sequential(6, &[2, 3], &[0.6, 0.9]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_infeasible_parameters() {
        assert!(grid_study(10, &[11], &[0.7]).is_err());
        assert!(grid_study(10, &[1], &[0.7]).is_err());
        assert!(grid_study(10, &[2], &[0.123_456_7]).is_err());
        assert!(grid_study(1, &[2], &[0.7]).is_err());
    }

    #[test]
    fn csv_layout() {
        let rows = grid_study(4, &[2], &[0.8]).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.count(), rows.len());
    }
}
