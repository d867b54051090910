//! Logical write streams: uniform, k-modal with frequency swaps, and traces.
//!
//! Random streams use ChaCha8 seeded from a `u64`, so a `(spec, seed)` pair
//! always yields the same addresses.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Name of the generator algorithm, recorded in run metadata.
pub const RNG_ALGORITHM: &str = "ChaCha8";

/// A contiguous address range updated with total probability `prob`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub start: u64,
    pub len: u64,
    pub prob: f64,
}

/// Exchange the update probabilities of clusters `a` and `b` once `at`
/// writes have been issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SwapEvent {
    pub at: u64,
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KModalSpec {
    pub logical_pages: u64,
    pub clusters: Vec<Cluster>,
    pub swaps: Vec<SwapEvent>,
}

impl KModalSpec {
    pub fn new(logical_pages: u64, clusters: Vec<Cluster>, swaps: Vec<SwapEvent>) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::config("workload.sizes", "at least one cluster is required"));
        }
        let total: f64 = clusters.iter().map(|c| c.prob).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "workload.probs",
                format!("probabilities sum to {total}, not 1"),
            ));
        }
        let mut sorted: Vec<&Cluster> = clusters.iter().collect();
        sorted.sort_by_key(|c| c.start);
        let mut end = 0;
        for c in sorted {
            if c.len == 0 {
                return Err(Error::config("workload.sizes", "clusters must be non-empty"));
            }
            if !(c.prob >= 0.0) {
                return Err(Error::config("workload.probs", "probabilities must be >= 0"));
            }
            if c.start < end {
                return Err(Error::config("workload.sizes", "clusters overlap"));
            }
            end = c.start + c.len;
        }
        if end > logical_pages {
            return Err(Error::config(
                "workload.sizes",
                format!("clusters reach page {end}, beyond LBA={logical_pages}"),
            ));
        }
        let mut prev = None;
        for s in &swaps {
            if s.a >= clusters.len() || s.b >= clusters.len() || s.a == s.b {
                return Err(Error::config(
                    "workload.swaps",
                    format!("swap {}-{} does not name two distinct clusters", s.a, s.b),
                ));
            }
            if prev.is_some_and(|p| s.at <= p) {
                return Err(Error::config("workload.swaps", "swap indices must increase"));
            }
            prev = Some(s.at);
        }
        Ok(KModalSpec {
            logical_pages,
            clusters,
            swaps,
        })
    }

    /// Consecutive clusters whose lengths are the given fractions of the
    /// logical space. When the fractions add up to one the last cluster
    /// absorbs the rounding so the whole space is covered.
    pub fn from_fractions(
        logical_pages: u64,
        sizes: &[f64],
        probs: &[f64],
        swaps: Vec<SwapEvent>,
    ) -> Result<Self> {
        if sizes.len() != probs.len() {
            return Err(Error::config(
                "workload.probs",
                format!("{} sizes but {} probabilities", sizes.len(), probs.len()),
            ));
        }
        let total: f64 = sizes.iter().sum();
        if sizes.iter().any(|&s| !(s > 0.0)) || total > 1.0 + 1e-9 {
            return Err(Error::config(
                "workload.sizes",
                "fractions must be positive and sum to at most 1",
            ));
        }
        let covers_all = (total - 1.0).abs() <= 1e-9;
        let mut start = 0;
        let mut clusters = Vec::with_capacity(sizes.len());
        for (i, (&s, &p)) in sizes.iter().zip(probs).enumerate() {
            let len = if covers_all && i + 1 == sizes.len() {
                logical_pages - start
            } else {
                (s * logical_pages as f64).floor() as u64
            };
            clusters.push(Cluster { start, len, prob: p });
            start += len;
        }
        Self::new(logical_pages, clusters, swaps)
    }

    /// `n` equal clusters with probabilities proportional to `2^i`.
    pub fn exponential(logical_pages: u64, n: usize, swaps: Vec<SwapEvent>) -> Result<Self> {
        let weights: Vec<f64> = (0..n).map(|i| 2f64.powi(i as i32)).collect();
        let sum: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        Self::from_fractions(logical_pages, &vec![1.0 / n as f64; n], &probs, swaps)
    }

    pub fn probs(&self) -> Vec<f64> {
        self.clusters.iter().map(|c| c.prob).collect()
    }
}

/// What the oracle detector knows: the cluster of every page and each
/// cluster's current per-page update rate. Pages outside every cluster form
/// one extra cluster with rate zero.
#[derive(Debug, Clone)]
pub struct Truth {
    cluster_of: Vec<u16>,
    lens: Vec<u64>,
    rates: Vec<f64>,
    ranks: Vec<usize>,
}

impl Truth {
    pub fn uniform(logical_pages: u64) -> Self {
        Truth {
            cluster_of: vec![0; logical_pages as usize],
            lens: vec![logical_pages],
            rates: vec![1.0 / logical_pages as f64],
            ranks: vec![0],
        }
    }

    pub fn from_spec(spec: &KModalSpec) -> Self {
        let n = spec.clusters.len();
        let mut cluster_of = vec![n as u16; spec.logical_pages as usize];
        let mut lens = vec![0; n + 1];
        for (i, c) in spec.clusters.iter().enumerate() {
            cluster_of[c.start as usize..(c.start + c.len) as usize].fill(i as u16);
            lens[i] = c.len;
        }
        lens[n] = spec.logical_pages - lens.iter().sum::<u64>();
        let mut t = Truth {
            cluster_of,
            lens,
            rates: vec![0.0; n + 1],
            ranks: vec![0; n + 1],
        };
        t.set_probs(&spec.probs());
        t
    }

    fn set_probs(&mut self, probs: &[f64]) {
        for (i, &p) in probs.iter().enumerate() {
            self.rates[i] = p / self.lens[i] as f64;
        }
        let mut distinct: Vec<f64> = (0..self.rates.len())
            .filter(|&i| self.lens[i] > 0)
            .map(|i| self.rates[i])
            .collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        for (rank, &rate) in self.ranks.iter_mut().zip(&self.rates) {
            *rank = distinct.iter().filter(|&&x| x < rate).count();
        }
    }

    pub fn clusters(&self) -> usize {
        self.rates.len()
    }

    pub fn cluster_of(&self, lpa: u64) -> usize {
        self.cluster_of[lpa as usize] as usize
    }

    /// Probability that a given write targets one specific page of `cluster`.
    pub fn cluster_rate(&self, cluster: usize) -> f64 {
        self.rates[cluster]
    }

    pub fn page_rate(&self, lpa: u64) -> f64 {
        self.rates[self.cluster_of(lpa)]
    }

    /// Dense rank of the page's rate among the distinct rates of non-empty
    /// clusters, 0 being the coldest.
    pub fn rank_of(&self, lpa: u64) -> usize {
        self.ranks[self.cluster_of(lpa)]
    }
}

enum Source {
    Uniform,
    KModal { cumulative: Vec<f64> },
    Trace(TraceReader<BufReader<File>>),
}

/// A seeded logical write stream.
pub struct Workload {
    logical_pages: u64,
    rng: ChaCha8Rng,
    issued: u64,
    source: Source,
    spec: Option<KModalSpec>,
    probs: Vec<f64>,
    next_swap: usize,
    truth: Option<Truth>,
    truth_version: u64,
}

impl Workload {
    pub fn uniform(logical_pages: u64, seed: u64) -> Result<Self> {
        if logical_pages == 0 {
            return Err(Error::domain("uniform workload needs LBA > 0"));
        }
        Ok(Workload {
            logical_pages,
            rng: ChaCha8Rng::seed_from_u64(seed),
            issued: 0,
            source: Source::Uniform,
            spec: None,
            probs: Vec::new(),
            next_swap: 0,
            truth: Some(Truth::uniform(logical_pages)),
            truth_version: 0,
        })
    }

    pub fn kmodal(spec: KModalSpec, seed: u64) -> Self {
        let probs = spec.probs();
        Workload {
            logical_pages: spec.logical_pages,
            rng: ChaCha8Rng::seed_from_u64(seed),
            issued: 0,
            source: Source::KModal {
                cumulative: cumulative(&probs),
            },
            truth: Some(Truth::from_spec(&spec)),
            probs,
            spec: Some(spec),
            next_swap: 0,
            truth_version: 0,
        }
    }

    /// Replays a trace file. `truth`, when given, describes the generator the
    /// trace came from so an oracle detector can be used; its swap schedule is
    /// applied against the trace's write index.
    pub fn trace(path: &Path, logical_pages: u64, truth: Option<KModalSpec>) -> Result<Self> {
        let reader = TraceReader::open(path, logical_pages)?;
        if let Some(spec) = &truth {
            if spec.logical_pages != logical_pages {
                return Err(Error::config("workload", "trace truth spec has a different LBA"));
            }
        }
        Ok(Workload {
            logical_pages,
            rng: ChaCha8Rng::seed_from_u64(0),
            issued: 0,
            source: Source::Trace(reader),
            probs: truth.as_ref().map(KModalSpec::probs).unwrap_or_default(),
            truth: truth.as_ref().map(Truth::from_spec),
            spec: truth,
            next_swap: 0,
            truth_version: 0,
        })
    }

    pub fn logical_pages(&self) -> u64 {
        self.logical_pages
    }

    /// Number of writes produced so far.
    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn truth(&self) -> Option<&Truth> {
        self.truth.as_ref()
    }

    /// Incremented each time a swap changes the truth.
    pub fn truth_version(&self) -> u64 {
        self.truth_version
    }

    /// Current cluster probabilities (after the swaps applied so far).
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn apply_swaps(&mut self) {
        let Some(spec) = &self.spec else { return };
        let mut changed = false;
        while let Some(s) = spec.swaps.get(self.next_swap) {
            if s.at > self.issued {
                break;
            }
            self.probs.swap(s.a, s.b);
            self.next_swap += 1;
            changed = true;
        }
        if changed {
            if let Source::KModal { cumulative: c } = &mut self.source {
                *c = cumulative(&self.probs);
            }
            if let Some(t) = &mut self.truth {
                t.set_probs(&self.probs);
            }
            self.truth_version += 1;
        }
    }

    /// Next logical page to write; `None` once a trace is exhausted.
    pub fn next_write(&mut self) -> Result<Option<u64>> {
        self.apply_swaps();
        let lpa = match &mut self.source {
            Source::Uniform => Some(self.rng.random_range(0..self.logical_pages)),
            Source::KModal { cumulative } => {
                let spec = self.spec.as_ref().expect("k-modal source has a spec");
                Some(kmodal_draw(spec, cumulative, &mut self.rng))
            }
            Source::Trace(reader) => reader.next().transpose()?,
        };
        if lpa.is_some() {
            self.issued += 1;
        }
        Ok(lpa)
    }
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect()
}

fn kmodal_draw(spec: &KModalSpec, cumulative: &[f64], rng: &mut impl Rng) -> u64 {
    let u: f64 = rng.random();
    let mut i = cumulative.partition_point(|&c| c <= u);
    if i >= cumulative.len() {
        // u landed in the rounding gap above the last partial sum.
        i = cumulative.len() - 1;
    }
    // Never draw from a cluster that cannot be written.
    while i > 0 && cumulative[i] == cumulative[i - 1] {
        i -= 1;
    }
    let c = &spec.clusters[i];
    c.start + rng.random_range(0..c.len)
}

/// Streams addresses from a text trace: one decimal page address per line,
/// blank lines and lines starting with `#` ignored.
pub struct TraceReader<R> {
    lines: std::io::Lines<R>,
    path: PathBuf,
    line: usize,
    logical_pages: u64,
}

impl TraceReader<BufReader<File>> {
    pub fn open(path: &Path, logical_pages: u64) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::Trace {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        Ok(Self::new(BufReader::new(file), path, logical_pages))
    }
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(reader: R, path: &Path, logical_pages: u64) -> Self {
        TraceReader {
            lines: reader.lines(),
            path: path.to_path_buf(),
            line: 0,
            logical_pages,
        }
    }

    fn error(&self, message: String) -> Error {
        Error::Trace {
            path: self.path.clone(),
            line: self.line,
            message,
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<u64>;

    fn next(&mut self) -> Option<Result<u64>> {
        loop {
            let raw = self.lines.next()?;
            self.line += 1;
            let raw = match raw {
                Ok(r) => r,
                Err(e) => return Some(Err(self.error(e.to_string()))),
            };
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            return Some(match text.parse::<u64>() {
                Ok(a) if a < self.logical_pages => Ok(a),
                Ok(a) => Err(self.error(format!(
                    "address {a} is outside LBA={}",
                    self.logical_pages
                ))),
                Err(e) => Err(self.error(format!("`{text}` is not a page address: {e}"))),
            });
        }
    }
}

/// Reads a whole trace into memory.
pub fn load_trace(path: &Path, logical_pages: u64) -> Result<Vec<u64>> {
    TraceReader::open(path, logical_pages)?.collect()
}

/// Writes addresses in the trace format, with a leading comment line.
pub fn write_trace(path: &Path, comment: &str, addrs: impl IntoIterator<Item = u64>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for line in comment.lines() {
        writeln!(out, "# {line}")?;
    }
    for a in addrs {
        writeln!(out, "{a}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drain(w: &mut Workload, n: usize) -> Vec<u64> {
        (0..n).map(|_| w.next_write().unwrap().unwrap()).collect()
    }

    #[test]
    fn uniform_is_reproducible_and_bounded() {
        let mut a = Workload::uniform(1000, 7).unwrap();
        let mut b = Workload::uniform(1000, 7).unwrap();
        let xs = drain(&mut a, 5000);
        assert_eq!(xs, drain(&mut b, 5000));
        assert!(xs.iter().all(|&x| x < 1000));
        let mut c = Workload::uniform(1000, 8).unwrap();
        assert_ne!(xs, drain(&mut c, 5000));
    }

    #[test]
    fn spec_validation() {
        assert!(KModalSpec::from_fractions(100, &[0.5, 0.5], &[0.5, 0.4], vec![]).is_err());
        assert!(KModalSpec::from_fractions(100, &[0.7, 0.5], &[0.5, 0.5], vec![]).is_err());
        let swap = |at, a, b| SwapEvent { at, a, b };
        assert!(KModalSpec::from_fractions(100, &[0.5, 0.5], &[0.5, 0.5], vec![swap(5, 0, 0)]).is_err());
        assert!(KModalSpec::from_fractions(
            100,
            &[0.5, 0.5],
            &[0.5, 0.5],
            vec![swap(5, 0, 1), swap(5, 1, 0)]
        )
        .is_err());
        let overlap = vec![
            Cluster { start: 0, len: 60, prob: 0.5 },
            Cluster { start: 50, len: 10, prob: 0.5 },
        ];
        assert!(KModalSpec::new(100, overlap, vec![]).is_err());
        let s = KModalSpec::from_fractions(101, &[0.5, 0.5], &[0.5, 0.5], vec![]).unwrap();
        assert_eq!(s.clusters[1].start + s.clusters[1].len, 101);
    }

    #[test]
    fn swap_exchanges_rates_at_index() {
        let spec = KModalSpec::from_fractions(
            1000,
            &[0.5, 0.5],
            &[0.1, 0.9],
            vec![SwapEvent { at: 10, a: 0, b: 1 }],
        )
        .unwrap();
        let mut w = Workload::kmodal(spec, 1);
        let before = w.truth().unwrap().page_rate(0);
        drain(&mut w, 10);
        assert_eq!(w.truth_version(), 0);
        drain(&mut w, 1);
        assert_eq!(w.truth_version(), 1);
        assert_eq!(w.probs(), &[0.9, 0.1]);
        let t = w.truth().unwrap();
        assert!((t.page_rate(0) - 9.0 * before).abs() < 1e-15);
        assert_eq!(t.rank_of(0), 1);
        assert_eq!(t.rank_of(999), 0);
    }

    #[test]
    fn truth_covers_gaps() {
        let spec = KModalSpec::from_fractions(100, &[0.3, 0.3], &[0.25, 0.75], vec![]).unwrap();
        let t = Truth::from_spec(&spec);
        assert_eq!(t.clusters(), 3);
        assert_eq!(t.page_rate(99), 0.0);
        assert_eq!(t.rank_of(99), 0);
        assert_eq!(t.rank_of(0), 1);
        assert_eq!(t.rank_of(30), 2);
        assert_eq!(Truth::uniform(10).rank_of(3), 0);
    }

    #[test]
    fn zero_probability_cluster_is_never_drawn() {
        let spec = KModalSpec::from_fractions(100, &[0.5, 0.5], &[1.0, 0.0], vec![]).unwrap();
        let mut w = Workload::kmodal(spec, 3);
        assert!(drain(&mut w, 10_000).iter().all(|&a| a < 50));
    }

    #[test]
    fn trace_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        std::fs::write(&path, "# header\n3\n\n1\n2\n").unwrap();
        assert_eq!(load_trace(&path, 10).unwrap(), vec![3, 1, 2]);
        std::fs::write(&path, "1\nabc\n").unwrap();
        match load_trace(&path, 10) {
            Err(Error::Trace { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, "1\n# c\n10\n").unwrap();
        match load_trace(&path, 10) {
            Err(Error::Trace { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("outside"));
            }
            other => panic!("unexpected {other:?}"),
        }
        write_trace(&path, "two\nlines", [4, 5]).unwrap();
        assert_eq!(load_trace(&path, 10).unwrap(), vec![4, 5]);
        let mut w = Workload::trace(&path, 10, None).unwrap();
        assert_eq!(w.next_write().unwrap(), Some(4));
        assert_eq!(w.next_write().unwrap(), Some(5));
        assert_eq!(w.next_write().unwrap(), None);
        assert_eq!(w.issued(), 2);
    }
}
