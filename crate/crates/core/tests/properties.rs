use proptest::prelude::*;

use wolfsim::alloc::{
    alloc_by_frequency, alloc_by_size, alloc_mixed, alloc_optimal, total_wa, AllocProblem, ColdRule,
    GroupStat,
};
use wolfsim::config::Config;
use wolfsim::device::{FlashGeometry, PageState};
use wolfsim::ftl::Cleaning;
use wolfsim::manager::{DetectorKind, Ftl, ManagerConfig, ManagerKind};
use wolfsim::model;
use wolfsim::sim::{self, RunConfig, Swap, WorkloadConfig, WriteCount};
use wolfsim::workload::{KModalSpec, Workload};

fn small_geometry(blocks_per_lun: u32) -> FlashGeometry {
    FlashGeometry {
        channels: 1,
        luns_per_channel: 2,
        blocks_per_lun,
        pages_per_block: 8,
        page_size: 4096,
    }
}

/// Splits `total` into `weights.len()` positive integer parts roughly
/// proportional to `weights`.
fn split(total: u64, weights: &[u32]) -> Vec<u64> {
    let sum: u64 = weights.iter().map(|&w| w as u64).sum();
    let mut parts: Vec<u64> = weights.iter().map(|&w| (total * w as u64 / sum).max(1)).collect();
    let used: u64 = parts.iter().sum();
    let last = parts.len() - 1;
    parts[last] = (parts[last] + total).saturating_sub(used).max(1);
    parts
}

fn groups() -> impl Strategy<Value = (Vec<u32>, Vec<u32>)> {
    (2usize..6).prop_flat_map(|n| (prop::collection::vec(1u32..20, n), prop::collection::vec(1u32..20, n)))
}

fn stats_for(l: u64, sizes: &[u32], freqs: &[u32]) -> Vec<GroupStat> {
    let s = split(l, sizes);
    let fsum: u32 = freqs.iter().sum();
    s.iter()
        .zip(freqs)
        .map(|(&size, &f)| GroupStat::new(size, f as f64 / fsum as f64))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn allocations_conserve_spare_space((sizes, freqs) in groups(), r in 0.55f64..0.92) {
        let pba = 40_000u64;
        let l = (pba as f64 * r) as u64;
        let stats = stats_for(l, &sizes, &freqs);
        let problem = AllocProblem::new(l, pba, 100).unwrap();
        let op = pba - l;
        for a in [
            alloc_by_size(&stats, &problem).unwrap(),
            alloc_by_frequency(&stats, &problem).unwrap(),
            alloc_mixed(&stats, &problem, None).unwrap(),
            alloc_mixed(&stats, &problem, Some(&ColdRule::default())).unwrap(),
            alloc_optimal(&stats, &problem).unwrap(),
        ] {
            prop_assert_eq!(a.op.iter().sum::<u64>(), op);
        }
    }

    #[test]
    fn optimum_dominates_closed_forms((sizes, freqs) in groups(), r in 0.55f64..0.92) {
        // Page granularity, so every closed-form answer is a point the hill
        // climber could also reach.
        let pba = 4_000u64;
        let l = (pba as f64 * r) as u64;
        let stats = stats_for(l, &sizes, &freqs);
        let problem = AllocProblem::pages(l, pba).unwrap();
        let best = total_wa(&stats, &alloc_optimal(&stats, &problem).unwrap()).unwrap();
        for a in [
            alloc_by_size(&stats, &problem).unwrap(),
            alloc_by_frequency(&stats, &problem).unwrap(),
            alloc_mixed(&stats, &problem, None).unwrap(),
        ] {
            let wa = total_wa(&stats, &a).unwrap();
            prop_assert!(best <= wa + 1e-9, "optimal {} above {} for {:?}", best, wa, a.op);
        }
    }

    #[test]
    fn equilibrium_wa_grows_with_ratio(a in 0.01f64..0.98, gap in 0.001f64..0.01) {
        let lo = model::equilibrium(a).unwrap();
        let hi = model::equilibrium((a + gap).min(0.99)).unwrap();
        prop_assert!(lo.wa >= 1.0);
        // Below r of about 0.1 both values round to exactly 1.
        prop_assert!(hi.wa >= lo.wa);
        if a >= 0.2 {
            prop_assert!(hi.wa > lo.wa);
        }
        prop_assert!((lo.wa - 1.0 / (1.0 - lo.delta)).abs() < 1e-12);
    }

    #[test]
    fn overrides_round_trip(q in 1.5f64..8.0, w in 1u64..200, seed in any::<u64>(), ratio in 0.3f64..0.9) {
        let text = format!("[wolf]\nq = {q}\nw = {w}\n[run]\nseed = {seed}\n[device]\nratio = {ratio}\n");
        let c = Config::parse(&text).unwrap();
        prop_assert_eq!(c.run.manager.q, q);
        prop_assert_eq!(c.run.manager.w, w);
        prop_assert_eq!(c.run.seed, seed);
        prop_assert_eq!(c.run.ratio, ratio);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Random managers, workloads and geometries keep every bookkeeping
    /// invariant at every interval boundary.
    #[test]
    fn managers_keep_books(
        kind in prop::sample::select(vec![ManagerKind::Baseline, ManagerKind::Fdp, ManagerKind::Wolf]),
        detector in prop::sample::select(vec![DetectorKind::Bloom, DetectorKind::Oracle]),
        cleaning in prop::sample::select(vec![Cleaning::Greedy, Cleaning::Lru]),
        (sizes, freqs) in groups(),
        blocks in 24u32..64,
        r in 0.5f64..0.8,
        seed in any::<u64>(),
    ) {
        let geo = small_geometry(blocks);
        let pba = geo.physical_pages();
        let l = (pba as f64 * r) as u64;
        prop_assume!(pba - l >= 2 * 2 * 8);
        let fsum: u32 = freqs.iter().sum();
        let ssum: u32 = sizes.iter().sum();
        let fractions: Vec<f64> = sizes.iter().map(|&s| s as f64 / ssum as f64).collect();
        let probs: Vec<f64> = freqs.iter().map(|&f| f as f64 / fsum as f64).collect();
        let spec = KModalSpec::from_fractions(l, &fractions, &probs, vec![]).unwrap();
        let mut w = Workload::kmodal(spec, seed);
        let mut cfg = ManagerConfig::new(kind);
        cfg.detector = detector;
        cfg.cleaning = cleaning;
        cfg.interval_min = 64;
        let mut ftl = Ftl::new(geo, l, cfg, w.truth().cloned()).unwrap();
        let interval = ftl.interval_len();
        for lpa in 0..l {
            ftl.write(lpa).unwrap();
        }
        for i in 1..=4 * l {
            ftl.write(w.next_write().unwrap().unwrap()).unwrap();
            if !(l + i).is_multiple_of(interval) {
                continue;
            }
            ftl.check_invariants().unwrap();
            prop_assert!(ftl.sgv_is_sorted());
            let dev = ftl.device();
            let (mut free, mut live, mut dead) = (0u64, 0u64, 0u64);
            for page in 0..pba as usize {
                match dev.page_state(page) {
                    PageState::Free => free += 1,
                    PageState::Live => live += 1,
                    PageState::Dead => dead += 1,
                }
            }
            prop_assert_eq!(free + live + dead, pba);
            prop_assert_eq!(live, l);
            let op: u64 = ftl.groups().iter().map(|g| g.target_op).sum();
            prop_assert_eq!(op, pba - l);
            let c = ftl.counters();
            prop_assert_eq!(c.physical_writes, c.logical_writes + c.migrations);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn same_seed_same_csv(seed in any::<u64>(), kind in prop::sample::select(vec![ManagerKind::Fdp, ManagerKind::Wolf])) {
        let cfg = RunConfig {
            geometry: small_geometry(48),
            manager: ManagerConfig::new(kind),
            workload: WorkloadConfig::KModal {
                sizes: vec![0.3, 0.7],
                probs: vec![0.8, 0.2],
                swaps: vec![Swap { at: WriteCount::TimesLba(1.5), a: 0, b: 1 }],
            },
            seed,
            warmup_writes: WriteCount::TimesLba(1.0),
            measured_writes: WriteCount::TimesLba(2.0),
            window: WriteCount::TimesLba(0.2),
            ..RunConfig::default()
        };
        let a = sim::run(&cfg).unwrap();
        let b = sim::run(&cfg).unwrap();
        prop_assert_eq!(a.csv(), b.csv());
        prop_assert_eq!(a.windows.len(), 10);
        let t = a.summary.totals;
        prop_assert_eq!(t.physical_writes, t.logical_writes + t.migrations);
        prop_assert!(t.erases * 8 + cfg.geometry.physical_pages() >= t.physical_writes);
        prop_assert!(a.windows.iter().all(|w| w.wa >= 1.0));
    }
}

/// A write whose placement triggers a collection of the block holding the
/// page it just invalidated used to leave a live page without an owner.
#[test]
fn nested_collection_keeps_reverse_map() {
    let geo = small_geometry(38);
    let l = (geo.physical_pages() as f64 * 0.69) as u64;
    let fractions: Vec<f64> = [3.0, 12.0, 12.0, 9.0].iter().map(|s| s / 36.0).collect();
    let probs: Vec<f64> = [1.0, 5.0, 17.0, 18.0].iter().map(|f| f / 41.0).collect();
    let spec = KModalSpec::from_fractions(l, &fractions, &probs, vec![]).unwrap();
    let mut w = Workload::kmodal(spec, 2678752167284816408);
    let mut cfg = ManagerConfig::new(ManagerKind::Fdp);
    cfg.detector = DetectorKind::Oracle;
    cfg.cleaning = Cleaning::Greedy;
    cfg.interval_min = 64;
    let mut ftl = Ftl::new(geo, l, cfg, w.truth().cloned()).unwrap();
    for lpa in 0..l {
        ftl.write(lpa).unwrap();
    }
    for i in 0..4 * l {
        ftl.write(w.next_write().unwrap().unwrap()).unwrap();
        if let Err(e) = ftl.check_invariants() {
            panic!("after write {i}: {e}");
        }
    }
}
