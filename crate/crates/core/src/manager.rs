//! Block managers: a single-group baseline, an FDP-style manager with a fixed
//! ladder of groups, and Wolf.
//!
//! All three share one engine. A write resolves the page's current group
//! through the mapping table and the block-to-group map, asks the temperature
//! detector whether the page should move to a neighbouring group, invalidates
//! the old copy and programs the new one on a LUN of the target group. A
//! subgroup (the blocks a group holds on one LUN) is garbage collected when it
//! has fewer than `B` free pages; migrated pages re-enter the write path
//! flagged as GC writes. The managers differ in where erased blocks go, in
//! how groups are ordered, created and merged, and in how spare space is
//! divided between groups.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::alloc::{alloc_mixed, alloc_optimal, round_to_units, AllocProblem, ColdRule, GroupStat};
use crate::detector::{BloomDetector, Verdict};
use crate::device::{
    BlockId, DeviceCounters, FlashDevice, FlashGeometry, LunId, PageState, RoundRobin, WriteKind,
};
use crate::error::{Error, Result};
use crate::ftl::{pick_victim, pick_victim_greedy, Cleaning, MappingTable, Subgroup};
use crate::workload::Truth;

pub type GroupId = usize;

/// Why a block is being collected, which decides where it goes afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reclaim {
    /// Ordinary cleaning of a subgroup that ran low on free pages.
    Cleaning,
    /// Collection on behalf of another group: compaction by a movement
    /// operation, or a group that has nowhere to write.
    For(GroupId),
}

/// Floor used when comparing rates on a log scale, so idle pages and groups
/// stay comparable.
const RATE_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManagerKind {
    Baseline,
    Fdp,
    Wolf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Bloom,
    Oracle,
}

/// Where the FDP manager takes group update frequencies from when it sizes
/// spare space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdpFrequencies {
    /// Each group assumed twice as hot as the previous one.
    Assumed,
    /// The same moving average Wolf measures.
    Measured,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    _ => Err(format!(
                        "expected one of {}, got `{s}`",
                        [$($text),+].join(", ")
                    )),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text,)+ })
            }
        }
    };
}

keyword_enum!(ManagerKind { Baseline => "baseline", Fdp => "fdp", Wolf => "wolf" });
keyword_enum!(DetectorKind { Bloom => "bloom", Oracle => "oracle" });
keyword_enum!(FdpFrequencies { Assumed => "assumed", Measured => "measured" });

#[derive(Debug, Clone, PartialEq)]
pub struct ManagerConfig {
    pub kind: ManagerKind,
    pub cleaning: Cleaning,
    pub detector: DetectorKind,
    /// Interval length as a fraction of LBA.
    pub h_multiplier: f64,
    /// Lower bound on the interval length in writes.
    pub interval_min: u64,
    /// Weight of the newest interval in the frequency moving average.
    pub ewma_weight: f64,
    /// Hit-rate ratio that justifies a separate group.
    pub q: f64,
    /// Intervals a new group stays frozen, and the convergence span for merges.
    pub w: u64,
    pub cold_rule: ColdRule,
    pub fp_rate: f64,
    pub initial_groups: usize,
    pub max_groups: usize,
    pub fdp_frequencies: FdpFrequencies,
}

impl ManagerConfig {
    pub fn new(kind: ManagerKind) -> Self {
        ManagerConfig {
            kind,
            cleaning: match kind {
                ManagerKind::Fdp => Cleaning::Lru,
                _ => Cleaning::Greedy,
            },
            detector: DetectorKind::Bloom,
            h_multiplier: 0.001,
            interval_min: 256,
            ewma_weight: 1.0 / 3.0,
            q: 2.0,
            w: 50,
            cold_rule: ColdRule::default(),
            fp_rate: 0.3,
            initial_groups: 2,
            max_groups: 16,
            fdp_frequencies: FdpFrequencies::Assumed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.h_multiplier > 0.0) {
            return Err(Error::config("wolf.h_multiplier", "must be positive"));
        }
        if !unit(self.ewma_weight) {
            return Err(Error::config("wolf.a", "must lie in (0, 1]"));
        }
        if !(self.q > 1.0) {
            return Err(Error::config("wolf.q", "must exceed 1"));
        }
        if !(self.fp_rate > 0.0 && self.fp_rate < 1.0) {
            return Err(Error::config("detector.fp_rate", "must lie in (0, 1)"));
        }
        if !unit(self.cold_rule.hit_rate_fraction) || !unit(self.cold_rule.size_fraction) {
            return Err(Error::config("wolf.cold_*", "cold-rule fractions must lie in (0, 1]"));
        }
        if self.initial_groups < 2 && self.kind != ManagerKind::Baseline {
            return Err(Error::config("manager.initial_groups", "at least two groups are needed"));
        }
        if self.max_groups < self.initial_groups {
            return Err(Error::config("manager.max_groups", "smaller than initial_groups"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Group {
    size: u64,
    freq: f64,
    interval_writes: u64,
    target_op: u64,
    frozen_until: u64,
    subgroups: Vec<Subgroup>,
    /// Live pages per LUN.
    live: Vec<u64>,
    cursor: RoundRobin,
    /// Consecutive intervals within a factor `Q` of the next hotter group.
    streak: u64,
    /// Live pages per oracle cluster.
    counts: Vec<u64>,
}

impl Group {
    fn new(luns: usize, clusters: usize, freq: f64) -> Self {
        Group {
            size: 0,
            freq,
            interval_writes: 0,
            target_op: 0,
            frozen_until: 0,
            subgroups: vec![Subgroup::default(); luns],
            live: vec![0; luns],
            cursor: RoundRobin::default(),
            streak: 0,
            counts: vec![0; clusters],
        }
    }

    fn held(&self) -> u64 {
        self.subgroups.iter().map(|s| s.held() as u64).sum()
    }

    fn hit_rate(&self) -> f64 {
        if self.size > 0 {
            self.freq / self.size as f64
        } else if self.freq > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// Read-only view of one group, reported in SGV order (coldest first).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupView {
    pub id: GroupId,
    pub size: u64,
    pub freq: f64,
    pub target_op: u64,
    pub held_blocks: u64,
    pub held_per_lun: Vec<u64>,
    pub frozen: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ManagerStats {
    pub intervals: u64,
    pub creations: u64,
    pub merges: u64,
    pub promotions: u64,
    pub demotions: u64,
    /// Garbage collections issued to move spare space between groups.
    pub movement_gcs: u64,
    /// Free blocks handed between groups without a collection.
    pub block_transfers: u64,
    /// Pages that could not be written to their target group.
    pub fallback_placements: u64,
}

pub struct Ftl {
    cfg: ManagerConfig,
    dev: FlashDevice,
    map: MappingTable,
    bgm: Vec<GroupId>,
    groups: Vec<Option<Group>>,
    sgv: Vec<GroupId>,
    problem: AllocProblem,
    bloom: Option<BloomDetector>,
    truth: Option<Truth>,
    interval_len: u64,
    app_writes: u64,
    ban_until: u64,
    fdp_overflow: u64,
    gc_queue: VecDeque<(GroupId, LunId)>,
    movement_pending: bool,
    in_movement: bool,
    in_donation: bool,
    stats: ManagerStats,
}

impl Ftl {
    /// Builds a manager over a fresh device. `truth` is required by the oracle
    /// detector and ignored otherwise.
    pub fn new(
        geometry: FlashGeometry,
        logical_pages: u64,
        cfg: ManagerConfig,
        truth: Option<Truth>,
    ) -> Result<Self> {
        cfg.validate()?;
        let dev = FlashDevice::new(geometry)?;
        let pba = geometry.physical_pages();
        let b = geometry.pages_per_block() as u64;
        let problem = AllocProblem::new(logical_pages, pba, b)?;
        let n0 = match cfg.kind {
            ManagerKind::Baseline => 1,
            _ => cfg.initial_groups,
        };
        if geometry.blocks_per_lun as usize <= n0 {
            return Err(Error::config(
                "geometry.blocks_per_lun",
                format!("need more than {n0} blocks per LUN"),
            ));
        }
        let truth = match (cfg.detector, truth) {
            (DetectorKind::Oracle, None) if cfg.kind != ManagerKind::Baseline => {
                return Err(Error::config(
                    "manager.detector",
                    "the oracle detector needs a workload with known frequencies",
                ))
            }
            (DetectorKind::Oracle, t) => t,
            (DetectorKind::Bloom, _) => None,
        };
        let clusters = truth.as_ref().map_or(0, Truth::clusters);
        let luns = geometry.luns();
        let mut groups: Vec<Option<Group>> = (0..n0)
            .map(|_| Some(Group::new(luns, clusters, 1.0 / n0 as f64)))
            .collect();
        // Every hotter group starts with one block per LUN; the coldest group,
        // which receives all first writes, holds the rest.
        let mut bgm = vec![0; geometry.blocks()];
        for lun in 0..luns {
            for (k, blk) in geometry.lun_blocks(lun).enumerate() {
                let g = if k + 1 < n0 { k + 1 } else { 0 };
                bgm[blk] = g;
                groups[g].as_mut().unwrap().subgroups[lun].free.push_back(blk);
            }
        }
        let interval_len = ((logical_pages as f64 * cfg.h_multiplier).round() as u64)
            .max(cfg.interval_min)
            .max(1);
        let bloom = (cfg.detector == DetectorKind::Bloom && cfg.kind != ManagerKind::Baseline)
            .then(|| BloomDetector::new(cfg.fp_rate));
        let mut ftl = Ftl {
            map: MappingTable::new(logical_pages, pba),
            dev,
            bgm,
            groups,
            sgv: (0..n0).collect(),
            problem,
            bloom,
            truth,
            interval_len,
            app_writes: 0,
            ban_until: 0,
            fdp_overflow: 0,
            gc_queue: VecDeque::new(),
            movement_pending: false,
            in_movement: false,
            in_donation: false,
            stats: ManagerStats::default(),
            cfg,
        };
        match ftl.cfg.kind {
            ManagerKind::Fdp => ftl.fdp_targets()?,
            _ => {
                let even = round_to_units(&vec![1.0; n0], ftl.problem.op(), b);
                for (g, t) in ftl.sgv.clone().into_iter().zip(even) {
                    ftl.group_mut(g).target_op = t;
                }
            }
        }
        Ok(ftl)
    }

    pub fn config(&self) -> &ManagerConfig {
        &self.cfg
    }

    pub fn device(&self) -> &FlashDevice {
        &self.dev
    }

    pub fn counters(&self) -> DeviceCounters {
        self.dev.counters()
    }

    pub fn logical_pages(&self) -> u64 {
        self.problem.logical_pages
    }

    pub fn physical_pages(&self) -> u64 {
        self.problem.physical_pages
    }

    pub fn interval_len(&self) -> u64 {
        self.interval_len
    }

    pub fn stats(&self) -> ManagerStats {
        self.stats
    }

    pub fn translate(&self, lpa: u64) -> Result<Option<usize>> {
        self.map.translate(lpa)
    }

    /// Group currently holding `lpa`, if it was ever written.
    pub fn group_of(&self, lpa: u64) -> Result<Option<GroupId>> {
        Ok(self
            .map
            .translate(lpa)?
            .map(|p| self.bgm[self.dev.geometry().block_of(p)]))
    }

    pub fn block_group(&self, block: BlockId) -> GroupId {
        self.bgm[block]
    }

    pub fn group_count(&self) -> usize {
        self.sgv.len()
    }

    /// Groups in SGV order, coldest first.
    pub fn groups(&self) -> Vec<GroupView> {
        let interval = self.stats.intervals;
        self.sgv
            .iter()
            .map(|&id| {
                let g = self.group(id);
                GroupView {
                    id,
                    size: g.size,
                    freq: g.freq,
                    target_op: g.target_op,
                    held_blocks: g.held(),
                    held_per_lun: g.subgroups.iter().map(|s| s.held() as u64).collect(),
                    frozen: g.frozen_until > interval,
                }
            })
            .collect()
    }

    /// Replaces the oracle's knowledge, e.g. after a frequency swap. The
    /// cluster layout must be unchanged.
    pub fn set_truth(&mut self, truth: &Truth) {
        if let Some(t) = &mut self.truth {
            *t = truth.clone();
        }
    }

    fn group(&self, id: GroupId) -> &Group {
        self.groups[id].as_ref().expect("live group id")
    }

    fn group_mut(&mut self, id: GroupId) -> &mut Group {
        self.groups[id].as_mut().expect("live group id")
    }

    fn b(&self) -> usize {
        self.dev.geometry().pages_per_block()
    }

    fn luns(&self) -> usize {
        self.dev.geometry().luns()
    }

    fn position(&self, id: GroupId) -> usize {
        self.sgv.iter().position(|&g| g == id).expect("group in SGV")
    }

    /// Handles one application write.
    pub fn write(&mut self, lpa: u64) -> Result<()> {
        if lpa >= self.problem.logical_pages {
            return Err(Error::domain(format!(
                "logical page {lpa} is outside LBA={}",
                self.problem.logical_pages
            )));
        }
        self.write_page(lpa, false)?;
        self.app_writes += 1;
        self.drain()?;
        if self.app_writes.is_multiple_of(self.interval_len) {
            self.complete_interval()?;
            self.drain()?;
        }
        Ok(())
    }

    fn write_page(&mut self, lpa: u64, is_gc: bool) -> Result<()> {
        let old = self.map.translate(lpa)?;
        let current = old.map(|p| self.bgm[self.dev.geometry().block_of(p)]);
        let target = self.classify(lpa, current, is_gc);
        if let Some(p) = old {
            // Unmap now: placing the new copy can trigger a collection that
            // erases and reuses this page before the remap below.
            self.dev.invalidate_page(p)?;
            self.map.unmap(lpa);
            let c = current.expect("mapped page has a group");
            let cluster = self.cluster_of(lpa);
            let lun = self.dev.geometry().lun_of(self.dev.geometry().block_of(p));
            let g = self.group_mut(c);
            g.size -= 1;
            g.live[lun] -= 1;
            if let Some(k) = cluster {
                g.counts[k] -= 1;
            }
        }
        let kind = if is_gc {
            WriteKind::Migration
        } else {
            WriteKind::Application
        };
        let placed = self.place(target, lpa, kind, current)?;
        let cluster = self.cluster_of(lpa);
        let g = self.group_mut(placed);
        g.size += 1;
        if let Some(k) = cluster {
            g.counts[k] += 1;
        }
        if !is_gc {
            g.interval_writes += 1;
            let size = g.size;
            if let Some(bloom) = &mut self.bloom {
                bloom.record(placed, lpa, size);
            }
        }
        Ok(())
    }

    fn cluster_of(&self, lpa: u64) -> Option<usize> {
        self.truth.as_ref().map(|t| t.cluster_of(lpa))
    }

    fn classify(&mut self, lpa: u64, current: Option<GroupId>, is_gc: bool) -> GroupId {
        let Some(cur) = current else {
            return self.sgv[0];
        };
        if self.cfg.kind == ManagerKind::Baseline {
            return cur;
        }
        let pos = self.position(cur);
        let n = self.sgv.len();
        let verdict = match (&self.bloom, &self.truth) {
            (Some(bloom), _) => bloom.classify(cur, lpa, is_gc),
            (None, Some(truth)) => match self.cfg.kind {
                ManagerKind::Fdp => {
                    let want = truth.rank_of(lpa);
                    if !is_gc && want > pos {
                        Verdict::Promote
                    } else if is_gc && want < pos {
                        Verdict::Demote
                    } else {
                        Verdict::Stay
                    }
                }
                _ => self.oracle_wolf(truth.page_rate(lpa), pos, is_gc),
            },
            (None, None) => Verdict::Stay,
        };
        match verdict {
            Verdict::Promote if pos + 1 < n => {
                self.stats.promotions += 1;
                self.sgv[pos + 1]
            }
            Verdict::Promote => {
                if self.cfg.kind == ManagerKind::Fdp {
                    self.fdp_overflow += 1;
                }
                cur
            }
            Verdict::Demote if pos > 0 => {
                self.stats.demotions += 1;
                self.sgv[pos - 1]
            }
            _ => cur,
        }
    }

    /// Moves a page one SGV position when its true rate is closer, on a log
    /// scale, to the neighbouring group's rate than to its own group's.
    fn oracle_wolf(&self, rate: f64, pos: usize, is_gc: bool) -> Verdict {
        let rate = rate.max(RATE_FLOOR);
        let dist = |p: usize| (rate / self.true_rate_at(p).max(RATE_FLOOR)).ln().abs();
        let here = dist(pos);
        if !is_gc && pos + 1 < self.sgv.len() && dist(pos + 1) < here {
            Verdict::Promote
        } else if is_gc && pos > 0 && dist(pos - 1) < here {
            Verdict::Demote
        } else {
            Verdict::Stay
        }
    }

    /// Mean true per-page rate of the group at SGV position `pos`. An empty
    /// group stands for the rate between its neighbours: their geometric mean,
    /// or a factor √Q beyond the single non-empty neighbour.
    fn true_rate_at(&self, pos: usize) -> f64 {
        let truth = self.truth.as_ref().expect("oracle truth");
        let mean = |p: usize| -> Option<f64> {
            let g = self.group(self.sgv[p]);
            (g.size > 0).then(|| {
                g.counts
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| c as f64 * truth.cluster_rate(k))
                    .sum::<f64>()
                    / g.size as f64
            })
        };
        if let Some(r) = mean(pos) {
            return r;
        }
        let colder = pos.checked_sub(1).and_then(mean);
        let hotter = (pos + 1 < self.sgv.len()).then(|| mean(pos + 1)).flatten();
        let sq = self.cfg.q.sqrt();
        match (colder, hotter) {
            (Some(c), Some(h)) => (c.max(RATE_FLOOR) * h.max(RATE_FLOOR)).sqrt(),
            (Some(c), None) => c * sq,
            (None, Some(h)) => h / sq,
            (None, None) => 1.0 / self.problem.logical_pages as f64,
        }
    }

    fn pick_lun(&mut self, g: GroupId) -> Option<LunId> {
        let dev = &self.dev;
        let luns = dev.geometry().luns();
        let group = self.groups[g].as_mut()?;
        let subs = &group.subgroups;
        group.cursor.select(luns, |l| subs[l].has_space(dev)).ok()
    }

    /// Programs `lpa` into group `target`, falling back to a free block taken
    /// from another group, then to the group the page came from, then to any
    /// group with room.
    fn place(
        &mut self,
        target: GroupId,
        lpa: u64,
        kind: WriteKind,
        source: Option<GroupId>,
    ) -> Result<GroupId> {
        if let Some(lun) = self.pick_lun(target) {
            self.program(target, lun, lpa, kind)?;
            return Ok(target);
        }
        if self.steal_block(target, None) || self.donate_on_demand(target)? {
            if let Some(lun) = self.pick_lun(target) {
                self.program(target, lun, lpa, kind)?;
                return Ok(target);
            }
        }
        let mut fallbacks: Vec<GroupId> = source.into_iter().filter(|&s| s != target).collect();
        let mut others: Vec<GroupId> = self.sgv.iter().copied().filter(|&g| g != target).collect();
        others.sort_by_key(|&g| {
            let free: usize = self.group(g).subgroups.iter().map(|s| s.free_pages(&self.dev)).sum();
            (std::cmp::Reverse(free), g)
        });
        fallbacks.extend(others);
        for g in fallbacks {
            if let Some(lun) = self.pick_lun(g) {
                self.stats.fallback_placements += 1;
                self.program(g, lun, lpa, kind)?;
                return Ok(g);
            }
        }
        let msg = format!("no free page anywhere for logical page {lpa}");
        Err(match kind {
            WriteKind::Migration => Error::Deadlock(msg),
            WriteKind::Application => Error::CapacityExhausted(msg),
        })
    }

    fn program(&mut self, g: GroupId, lun: LunId, lpa: u64, kind: WriteKind) -> Result<()> {
        let b = self.b();
        let dev = &mut self.dev;
        let group = self.groups[g].as_mut().expect("live group");
        group.live[lun] += 1;
        let sg = &mut group.subgroups[lun];
        let page = sg.next_page(dev).expect("subgroup chosen with space");
        dev.write_page(page, kind)?;
        self.map.remap(lpa, page);
        if sg.free_pages(dev) < b && !self.gc_queue.contains(&(g, lun)) {
            self.gc_queue.push_back((g, lun));
        }
        Ok(())
    }

    /// Gives `g` a free block from the group with the most free blocks on one
    /// LUN (restricted to `lun` if given). Donors holding data keep one free
    /// block per LUN. FDP prefers its ladder neighbours.
    fn steal_block(&mut self, g: GroupId, lun: Option<LunId>) -> bool {
        let luns: Vec<LunId> = match lun {
            Some(l) => vec![l],
            None => (0..self.luns()).collect(),
        };
        let pos = self.position(g);
        let adjacent = |p: usize| p.abs_diff(pos) == 1;
        let mut best: Option<(bool, usize, GroupId, LunId)> = None;
        for (p, &d) in self.sgv.iter().enumerate() {
            if d == g {
                continue;
            }
            let donor = self.group(d);
            let keep = usize::from(donor.size > 0);
            for &l in &luns {
                let free = donor.subgroups[l].free.len();
                if free > keep {
                    let near = self.cfg.kind == ManagerKind::Fdp && adjacent(p);
                    let key = (near, free, usize::MAX - d, usize::MAX - l);
                    if best.is_none_or(|(bn, bf, bd, bl)| key > (bn, bf, usize::MAX - bd, usize::MAX - bl)) {
                        best = Some((near, free, d, l));
                    }
                }
            }
        }
        let Some((_, _, donor, l)) = best else {
            return false;
        };
        let blk = self.group_mut(donor).subgroups[l].free.pop_back().expect("donor has a free block");
        self.bgm[blk] = g;
        self.group_mut(g).subgroups[l].free.push_back(blk);
        self.stats.block_transfers += 1;
        true
    }

    /// Frees a block for `g` by collecting a victim in the group with the
    /// largest surplus (for FDP, one of its ladder neighbours) and handing the
    /// erased block over. The donor must have room for the victim's live pages.
    fn donate_on_demand(&mut self, g: GroupId) -> Result<bool> {
        if self.in_donation || self.cfg.kind == ManagerKind::Baseline {
            return Ok(false);
        }
        let pos = self.position(g);
        let fdp = self.cfg.kind == ManagerKind::Fdp;
        let mut donors: Vec<(i64, GroupId)> = self
            .sgv
            .iter()
            .enumerate()
            .filter(|&(p, &d)| d != g && (!fdp || p.abs_diff(pos) == 1))
            .map(|(_, &d)| (-self.group_deficit(d), d))
            .collect();
        donors.sort_by_key(|&(surplus, d)| (std::cmp::Reverse(surplus), d));
        for (_, d) in donors {
            let group = self.group(d);
            let free: usize = group.subgroups.iter().map(|s| s.free_pages(&self.dev)).sum();
            let sealed: Vec<BlockId> = group.subgroups.iter().flat_map(|s| s.sealed.iter().copied()).collect();
            let Some(victim) = pick_victim(self.cfg.cleaning, &sealed, &self.dev) else {
                continue;
            };
            if self.dev.live_count(victim) > free {
                continue;
            }
            let lun = self.dev.geometry().lun_of(victim);
            self.in_donation = true;
            let done = self.collect(d, lun, victim, Reclaim::For(g));
            self.in_donation = false;
            done?;
            return Ok(true);
        }
        Ok(false)
    }

    /// FDP's way of moving spare space: a group short of it on `lun` takes a
    /// block from a ladder neighbour, which hands over a free block or cleans
    /// one of its own. A neighbour qualifies when it and the groups beyond it
    /// together hold at least a block of surplus, so space crosses the ladder
    /// one rung at a time.
    fn pull_block(&mut self, g: GroupId, lun: LunId) -> Result<bool> {
        let b = self.b() as i64;
        let pos = self.position(g);
        let n = self.sgv.len();
        let chain = |range: &mut dyn Iterator<Item = usize>| -> i64 {
            range.map(|p| -self.deficit(self.sgv[p], lun)).sum()
        };
        let mut donors = Vec::new();
        if pos > 0 {
            donors.push((chain(&mut (0..pos)), pos - 1));
        }
        if pos + 1 < n {
            donors.push((chain(&mut (pos + 1..n)), pos + 1));
        }
        donors.retain(|&(surplus, _)| surplus >= b);
        donors.sort_by_key(|&(surplus, p)| (std::cmp::Reverse(surplus), p));
        for (_, p) in donors {
            let d = self.sgv[p];
            let donor = self.group(d);
            if donor.subgroups[lun].free.len() > usize::from(donor.size > 0) {
                let blk = self.group_mut(d).subgroups[lun].free.pop_back().expect("free block");
                self.bgm[blk] = g;
                self.group_mut(g).subgroups[lun].free.push_back(blk);
                self.stats.block_transfers += 1;
                return Ok(true);
            }
            let free: usize = donor.subgroups.iter().map(|s| s.free_pages(&self.dev)).sum();
            let Some(victim) = pick_victim(self.cfg.cleaning, &donor.subgroups[lun].sealed, &self.dev) else {
                continue;
            };
            if self.dev.live_count(victim) > free {
                continue;
            }
            self.stats.movement_gcs += 1;
            self.collect(d, lun, victim, Reclaim::For(g))?;
            return Ok(true);
        }
        Ok(false)
    }

    fn drain(&mut self) -> Result<()> {
        loop {
            if let Some((g, lun)) = self.gc_queue.pop_front() {
                if self.groups[g].is_some() {
                    self.clean_subgroup(g, lun)?;
                }
                continue;
            }
            if self.movement_pending {
                self.movement_pending = false;
                self.movement()?;
                continue;
            }
            return Ok(());
        }
    }

    /// Collects garbage in one subgroup until it has `B` free pages again.
    fn clean_subgroup(&mut self, g: GroupId, lun: LunId) -> Result<()> {
        let b = self.b();
        let limit = 2 * self.dev.geometry().blocks_per_lun as usize + 2;
        for _ in 0..limit {
            if self.groups[g].is_none() {
                return Ok(());
            }
            let sg = &self.group(g).subgroups[lun];
            if sg.free_pages(&self.dev) >= b {
                return Ok(());
            }
            if self.cfg.kind == ManagerKind::Fdp && self.deficit(g, lun) >= b as i64 && self.pull_block(g, lun)? {
                continue;
            }
            let sg = &self.group(g).subgroups[lun];
            match pick_victim(self.cfg.cleaning, &sg.sealed, &self.dev) {
                Some(victim) => self.collect(g, lun, victim, Reclaim::Cleaning)?,
                None => {
                    if !self.steal_block(g, Some(lun)) {
                        return Ok(());
                    }
                }
            }
        }
        Err(Error::Deadlock(format!(
            "group {g} on LUN {lun} cannot regain {b} free pages"
        )))
    }

    /// Migrates the live pages of `victim`, erases it and hands it out.
    fn collect(&mut self, g: GroupId, lun: LunId, victim: BlockId, why: Reclaim) -> Result<()> {
        let taken = self.group_mut(g).subgroups[lun].take_sealed(victim);
        debug_assert!(taken, "victim {victim} not sealed in group {g}");
        let start = self.dev.geometry().page_addr(victim, 0);
        for page in start..start + self.dev.write_pointer(victim) {
            if self.dev.page_state(page) == PageState::Live {
                let lpa = self.map.owner(page).expect("live page is mapped");
                self.write_page(lpa, true)?;
            }
        }
        self.dev.erase_block(victim)?;
        self.wear_level_hook(victim);
        let dest = match why {
            Reclaim::For(to) if self.groups[to].is_some() => to,
            _ => self.erase_destination(victim, g),
        };
        self.bgm[victim] = dest;
        self.group_mut(dest).subgroups[lun].free.push_back(victim);
        if self.cfg.kind == ManagerKind::Wolf && !self.in_movement {
            self.movement_pending = true;
        }
        Ok(())
    }

    /// Wear levelling is not modelled; a block reassignment policy would go here.
    fn wear_level_hook(&mut self, _block: BlockId) {}

    /// Spare pages group `id` is short of on one LUN. The group's need,
    /// `max(target, floor)` with a floor of one block per LUN for groups
    /// holding data, is split evenly over the LUNs and compared with the
    /// LUN's free and dead pages.
    fn deficit(&self, id: GroupId, lun: LunId) -> i64 {
        let g = self.group(id);
        let b = self.b() as i64;
        let luns = self.luns() as i64;
        let floor = if g.size > 0 { luns * b } else { 0 };
        let need = (g.target_op as i64).max(floor);
        let share = need / luns + i64::from((lun as i64) < need % luns);
        share - (g.subgroups[lun].held() as i64 * b - g.live[lun] as i64)
    }

    fn group_deficit(&self, id: GroupId) -> i64 {
        (0..self.luns()).map(|l| self.deficit(id, l)).sum()
    }

    /// Chooses the group that receives a freshly erased block.
    ///
    /// The owner keeps it while its subgroup on that LUN is short of a block
    /// and it has no spare space to give. Otherwise a data-holding group that is short on this LUN gets it, then
    /// the group with the largest spare-space deficit. FDP only considers its
    /// two ladder neighbours; the baseline has a single group.
    fn erase_destination(&self, block: BlockId, owner: GroupId) -> GroupId {
        let b = self.b();
        let lun = self.dev.geometry().lun_of(block);
        let starving = |g: GroupId| {
            let grp = self.group(g);
            grp.size > 0 && grp.subgroups[lun].free_pages(&self.dev) < b
        };
        if starving(owner) && self.deficit(owner, lun) > 0 {
            return owner;
        }
        let owner_pos = self.position(owner);
        let candidates: Vec<(usize, GroupId)> = match self.cfg.kind {
            ManagerKind::Baseline => return owner,
            ManagerKind::Wolf => self.sgv.iter().copied().enumerate().filter(|&(_, g)| g != owner).collect(),
            ManagerKind::Fdp => self
                .sgv
                .iter()
                .copied()
                .enumerate()
                .filter(|&(p, _)| p.abs_diff(owner_pos) == 1)
                .collect(),
        };
        // Ties go to the hotter group, then to the lower id.
        let starving_pick = candidates
            .iter()
            .filter(|&&(_, g)| starving(g))
            .min_by_key(|&&(p, g)| {
                (self.group(g).subgroups[lun].free_pages(&self.dev), std::cmp::Reverse(p), g)
            });
        if let Some(&(_, g)) = starving_pick {
            return g;
        }
        let deficit_pick = candidates
            .iter()
            .map(|&(p, g)| (self.deficit(g, lun), p, g))
            .filter(|&(d, _, _)| d > 0)
            .max_by_key(|&(d, p, g)| (d, p, std::cmp::Reverse(g)));
        match deficit_pick {
            Some((_, _, g)) => g,
            None => owner,
        }
    }

    /// Moves spare space from subgroups holding more than their share of the
    /// target to subgroups on the same LUN short of theirs, one block at a
    /// time: idle free blocks are handed over directly, otherwise the surplus
    /// subgroup is compacted by a greedy collection whose erased block goes to
    /// the needy group.
    fn movement(&mut self) -> Result<()> {
        if self.cfg.kind != ManagerKind::Wolf {
            return Ok(());
        }
        self.in_movement = true;
        let result = (|| {
            for _ in 0..self.dev.geometry().blocks() {
                if !self.movement_step()? {
                    break;
                }
            }
            Ok(())
        })();
        self.in_movement = false;
        result
    }

    fn movement_step(&mut self) -> Result<bool> {
        let b = self.b() as i64;
        let mut needs: Vec<(i64, usize, GroupId, LunId)> = Vec::new();
        for (p, &g) in self.sgv.iter().enumerate() {
            for lun in 0..self.luns() {
                let d = self.deficit(g, lun);
                if d >= b {
                    needs.push((d, p, g, lun));
                }
            }
        }
        needs.sort_by_key(|&(d, p, g, lun)| (std::cmp::Reverse((d, p)), g, lun));
        for (_, _, needy, lun) in needs {
            let mut donors: Vec<(i64, GroupId)> = self
                .sgv
                .iter()
                .filter(|&&d| d != needy)
                .map(|&d| (-self.deficit(d, lun), d))
                .filter(|&(surplus, _)| surplus >= b)
                .collect();
            donors.sort_by_key(|&(surplus, d)| (std::cmp::Reverse(surplus), d));
            for (_, d) in donors {
                let donor = self.group(d);
                let keep = usize::from(donor.size > 0);
                if donor.subgroups[lun].free.len() > keep {
                    let blk = self.group_mut(d).subgroups[lun].free.pop_back().expect("free block");
                    self.bgm[blk] = needy;
                    self.group_mut(needy).subgroups[lun].free.push_back(blk);
                    self.stats.block_transfers += 1;
                    return Ok(true);
                }
                if let Some(victim) = pick_victim_greedy(&donor.subgroups[lun].sealed, &self.dev) {
                    self.stats.movement_gcs += 1;
                    self.collect(d, lun, victim, Reclaim::For(needy))?;
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    fn complete_interval(&mut self) -> Result<()> {
        self.stats.intervals += 1;
        let h = self.interval_len as f64;
        let a = self.cfg.ewma_weight;
        let ids = self.sgv.clone();
        for &id in &ids {
            let g = self.group_mut(id);
            let u = g.interval_writes as f64 / h;
            g.freq = g.freq * (1.0 - a) + a * u;
            g.interval_writes = 0;
        }
        let total: f64 = ids.iter().map(|&id| self.group(id).freq).sum();
        if total > 0.0 {
            for &id in &ids {
                self.group_mut(id).freq /= total;
            }
        }
        match self.cfg.kind {
            ManagerKind::Baseline => self.group_mut(ids[0]).target_op = self.problem.op(),
            ManagerKind::Fdp => {
                self.fdp_maybe_create();
                self.fdp_targets()?;
            }
            ManagerKind::Wolf => {
                self.sort_sgv();
                self.merge_or_create();
                self.wolf_targets()?;
                self.movement_pending = true;
            }
        }
        Ok(())
    }

    /// Re-sorts non-frozen groups by hit rate; frozen groups keep their slots.
    fn sort_sgv(&mut self) {
        let interval = self.stats.intervals;
        let slots: Vec<usize> = (0..self.sgv.len())
            .filter(|&p| self.group(self.sgv[p]).frozen_until <= interval)
            .collect();
        let mut movable: Vec<(usize, GroupId)> = slots.iter().map(|&p| (p, self.sgv[p])).collect();
        movable.sort_by(|a, b| {
            self.group(a.1)
                .hit_rate()
                .total_cmp(&self.group(b.1).hit_rate())
                .then(a.0.cmp(&b.0))
        });
        for (slot, (_, g)) in slots.into_iter().zip(movable) {
            self.sgv[slot] = g;
        }
    }

    fn frozen(&self, id: GroupId) -> bool {
        self.group(id).frozen_until > self.stats.intervals
    }

    fn merge_or_create(&mut self) {
        let f = (self.luns() * self.b()) as u64;
        let q = self.cfg.q;
        // Track how long each group has stayed within a factor Q of whichever
        // group currently sits above it.
        let n = self.sgv.len();
        for i in 0..n {
            let c = self.sgv[i];
            let close = i + 1 < n && {
                let h = self.sgv[i + 1];
                !self.frozen(c)
                    && !self.frozen(h)
                    && self.group(c).size > 0
                    && self.group(h).size > 0
                    && self.group(h).hit_rate() <= q * self.group(c).hit_rate()
            };
            let g = self.group_mut(c);
            g.streak = if close { g.streak + 1 } else { 0 };
        }
        if self.stats.intervals < self.ban_until {
            return;
        }
        while self.sgv.len() > 2 {
            if let Some(p) = (0..self.sgv.len())
                .find(|&p| !self.frozen(self.sgv[p]) && self.group(self.sgv[p]).size < f)
            {
                let partner = self.closer_neighbour(p);
                self.merge(self.sgv[p], partner);
                continue;
            }
            let w = self.cfg.w;
            if let Some(p) = (0..self.sgv.len() - 1).find(|&p| self.group(self.sgv[p]).streak > w) {
                self.merge(self.sgv[p], self.sgv[p + 1]);
                continue;
            }
            break;
        }
        if self.sgv.len() >= self.cfg.max_groups {
            return;
        }
        let n = self.sgv.len();
        let (second, hottest) = (self.group(self.sgv[n - 2]), self.group(self.sgv[n - 1]));
        if !self.frozen(self.sgv[n - 1])
            && hottest.size >= f
            && second.size > 0
            && hottest.hit_rate() >= q * second.hit_rate()
        {
            self.create(n);
            return;
        }
        if let Some(p) = (0..n - 1).find(|&p| {
            let (c, h) = (self.sgv[p], self.sgv[p + 1]);
            !self.frozen(c)
                && !self.frozen(h)
                && self.group(c).size > 0
                && self.group(h).size > 0
                && self.group(h).hit_rate() > 2.0 * q * self.group(c).hit_rate()
        }) {
            self.create(p + 1);
        }
    }

    /// SGV neighbour of position `p` whose hit rate is closer on a log scale.
    fn closer_neighbour(&self, p: usize) -> GroupId {
        let n = self.sgv.len();
        if p == 0 {
            return self.sgv[1];
        }
        if p + 1 == n {
            return self.sgv[n - 2];
        }
        let r = self.group(self.sgv[p]).hit_rate().max(RATE_FLOOR);
        let d = |q: usize| (r / self.group(self.sgv[q]).hit_rate().max(RATE_FLOOR)).ln().abs();
        if d(p + 1) < d(p - 1) {
            self.sgv[p + 1]
        } else {
            self.sgv[p - 1]
        }
    }

    /// Folds group `from` into `into`. Only metadata changes: the blocks are
    /// relabelled and the statistics added up.
    fn merge(&mut self, from: GroupId, into: GroupId) {
        let gone = self.groups[from].take().expect("live group");
        for sg in &gone.subgroups {
            for blk in sg.blocks() {
                self.bgm[blk] = into;
            }
        }
        let dst = self.group_mut(into);
        for (mine, theirs) in dst.subgroups.iter_mut().zip(gone.subgroups) {
            mine.absorb(theirs);
        }
        dst.size += gone.size;
        for (a, b) in dst.live.iter_mut().zip(&gone.live) {
            *a += b;
        }
        dst.freq += gone.freq;
        dst.interval_writes += gone.interval_writes;
        dst.target_op += gone.target_op;
        for (a, b) in dst.counts.iter_mut().zip(&gone.counts) {
            *a += b;
        }
        dst.streak = 0;
        self.sgv.retain(|&g| g != from);
        for entry in &mut self.gc_queue {
            if entry.0 == from {
                entry.0 = into;
            }
        }
        if let Some(bloom) = &mut self.bloom {
            bloom.drop_group(from);
        }
        self.stats.merges += 1;
    }

    /// Inserts an empty, frozen group at SGV position `pos` and bans further
    /// structural changes for `w` intervals.
    fn create(&mut self, pos: usize) -> GroupId {
        let clusters = self.truth.as_ref().map_or(0, Truth::clusters);
        let mut g = Group::new(self.luns(), clusters, 0.0);
        let id = self.groups.len();
        if self.cfg.kind == ManagerKind::Wolf {
            g.frozen_until = self.stats.intervals + self.cfg.w;
            self.ban_until = self.stats.intervals + self.cfg.w;
        }
        self.groups.push(Some(g));
        self.sgv.insert(pos, id);
        let cap = (self.luns() * self.b()) as u64;
        if let Some(bloom) = &mut self.bloom {
            bloom.ensure(id, cap);
        }
        self.stats.creations += 1;
        id
    }

    fn stats_in_sgv_order(&self, freqs: impl Fn(usize, &Group) -> f64) -> Vec<GroupStat> {
        let raw: Vec<(u64, f64)> = self
            .sgv
            .iter()
            .enumerate()
            .map(|(p, &id)| {
                let g = self.group(id);
                (g.size, freqs(p, g))
            })
            .collect();
        let total: f64 = raw.iter().map(|r| r.1).sum();
        raw.into_iter()
            .map(|(s, p)| {
                let p = if total > 0.0 { p / total } else { 1.0 / self.sgv.len() as f64 };
                GroupStat::new(s, p)
            })
            .collect()
    }

    fn apply_targets(&mut self, op: Vec<u64>) {
        for (id, t) in self.sgv.clone().into_iter().zip(op) {
            self.group_mut(id).target_op = t;
        }
    }

    fn wolf_targets(&mut self) -> Result<()> {
        let stats = self.stats_in_sgv_order(|_, g| g.freq);
        let alloc = alloc_mixed(&stats, &self.problem, Some(&self.cfg.cold_rule))?;
        self.apply_targets(alloc.op);
        Ok(())
    }

    fn fdp_targets(&mut self) -> Result<()> {
        let stats = match self.cfg.fdp_frequencies {
            FdpFrequencies::Assumed => self.stats_in_sgv_order(|p, _| 2f64.powi(p as i32)),
            FdpFrequencies::Measured => self.stats_in_sgv_order(|_, g| g.freq),
        };
        let alloc = alloc_optimal(&stats, &self.problem)?;
        self.apply_targets(alloc.op);
        Ok(())
    }

    /// FDP grows a new hottest group once more than `F` promotions out of the
    /// current hottest group were refused.
    fn fdp_maybe_create(&mut self) {
        let f = (self.luns() * self.b()) as u64;
        if self.fdp_overflow > f && self.sgv.len() < self.cfg.max_groups {
            self.create(self.sgv.len());
            self.fdp_overflow = 0;
        }
    }

    /// Non-frozen groups appear in ascending hit-rate order (Wolf only; the
    /// other managers keep a fixed order).
    pub fn sgv_is_sorted(&self) -> bool {
        if self.cfg.kind != ManagerKind::Wolf {
            return true;
        }
        let rates: Vec<f64> = self
            .sgv
            .iter()
            .filter(|&&g| !self.frozen(g))
            .map(|&g| self.group(g).hit_rate())
            .collect();
        rates.windows(2).all(|w| w[0] <= w[1])
    }

    /// Recomputes every bookkeeping quantity from scratch and compares.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Constraint(m));
        self.dev.check_consistency()?;
        if self.map.mapped() != self.dev.live_pages() {
            return fail(format!(
                "{} mapped pages but {} live pages",
                self.map.mapped(),
                self.dev.live_pages()
            ));
        }
        for page in 0..self.dev.geometry().physical_pages() as usize {
            let live = self.dev.page_state(page) == PageState::Live;
            match self.map.owner(page) {
                Some(lpa) if !live => return fail(format!("page {page} maps logical page {lpa} but is not live")),
                Some(lpa) if self.map.translate(lpa)? != Some(page) => {
                    return fail(format!("page {page} claims logical page {lpa}, which maps elsewhere"))
                }
                None if live => return fail(format!("live page {page} has no logical owner")),
                _ => {}
            }
        }
        let geo = *self.dev.geometry();
        let mut seen = vec![false; geo.blocks()];
        let mut targets = 0;
        for &id in &self.sgv {
            let g = self.group(id);
            targets += g.target_op;
            let mut live = 0;
            for (lun, sg) in g.subgroups.iter().enumerate() {
                let lun_live: u64 = sg.blocks().map(|blk| self.dev.live_count(blk) as u64).sum();
                if lun_live != g.live[lun] {
                    return fail(format!("group {id} LUN {lun} counts {} live pages, found {lun_live}", g.live[lun]));
                }
                for blk in sg.blocks() {
                    if seen[blk] {
                        return fail(format!("block {blk} held twice"));
                    }
                    seen[blk] = true;
                    if self.bgm[blk] != id || geo.lun_of(blk) != lun {
                        return fail(format!("block {blk} misfiled under group {id} LUN {lun}"));
                    }
                    live += self.dev.live_count(blk) as u64;
                }
                for &blk in &sg.free {
                    if self.dev.write_pointer(blk) != 0 {
                        return fail(format!("free-listed block {blk} is programmed"));
                    }
                }
            }
            if live != g.size {
                return fail(format!("group {id} size {} but {live} live pages", g.size));
            }
            if self.truth.is_some() && g.counts.iter().sum::<u64>() != g.size {
                return fail(format!("group {id} oracle counts disagree with its size"));
            }
        }
        if let Some(blk) = seen.iter().position(|s| !s) {
            return fail(format!("block {blk} belongs to no group"));
        }
        if targets != self.problem.op() {
            return fail(format!("targets sum to {targets}, OP is {}", self.problem.op()));
        }
        Ok(())
    }
}
