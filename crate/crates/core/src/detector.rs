//! Temperature detection with an active/passive pair of bloom filters per group.
//!
//! Every application write inserts its address into the active filter of the
//! group it lands in. Once a group has seen as many application writes as it
//! holds pages, the active filter becomes the passive one and a fresh active
//! filter is started, sized for the group's current population. An update
//! found in both filters was written twice in a short span and is promoted; a
//! migrated page found in neither was not written recently and is demoted.

/// Outcome of a classification relative to the page's current group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stay,
    Promote,
    Demote,
}

const HASHES: u32 = 2;
const MIN_BITS: usize = 64;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Two-hash bloom filter over page addresses.
#[derive(Debug, Clone)]
pub struct BloomFilter {
    bits: Vec<u64>,
    nbits: u64,
}

impl BloomFilter {
    /// Sized so that `capacity` insertions give false positives at rate
    /// `fp_rate` with two hash functions: `m = -k·n / ln(1 - p^(1/k))`.
    pub fn with_capacity(capacity: usize, fp_rate: f64) -> Self {
        let k = HASHES as f64;
        let per_item = -k / (1.0 - fp_rate.powf(1.0 / k)).ln();
        let nbits = ((capacity.max(1) as f64 * per_item).ceil() as usize).max(MIN_BITS);
        let words = nbits.div_ceil(64);
        BloomFilter {
            bits: vec![0; words],
            nbits: (words * 64) as u64,
        }
    }

    fn positions(&self, key: u64) -> [u64; HASHES as usize] {
        let h1 = splitmix64(key);
        let h2 = splitmix64(key ^ 0xD6E8_FEB8_6659_FD93) | 1;
        [h1 % self.nbits, h1.wrapping_add(h2) % self.nbits]
    }

    pub fn insert(&mut self, key: u64) {
        for p in self.positions(key) {
            self.bits[(p / 64) as usize] |= 1 << (p % 64);
        }
    }

    pub fn contains(&self, key: u64) -> bool {
        self.positions(key)
            .iter()
            .all(|&p| self.bits[(p / 64) as usize] & (1 << (p % 64)) != 0)
    }

    pub fn bits(&self) -> u64 {
        self.nbits
    }
}

/// The filter pair of one group.
#[derive(Debug, Clone)]
pub struct FilterPair {
    active: BloomFilter,
    passive: BloomFilter,
    writes: u64,
}

impl FilterPair {
    pub fn new(capacity: usize, fp_rate: f64) -> Self {
        FilterPair {
            active: BloomFilter::with_capacity(capacity, fp_rate),
            passive: BloomFilter::with_capacity(capacity, fp_rate),
            writes: 0,
        }
    }

    pub fn classify(&self, lpa: u64, is_gc: bool) -> Verdict {
        let (a, p) = (self.active.contains(lpa), self.passive.contains(lpa));
        match (is_gc, a && p, a || p) {
            (false, true, _) => Verdict::Promote,
            (true, _, false) => Verdict::Demote,
            _ => Verdict::Stay,
        }
    }

    /// Records an application write; rotates once `group_size` writes have
    /// been seen since the last rotation.
    pub fn record(&mut self, lpa: u64, group_size: u64, fp_rate: f64) {
        self.active.insert(lpa);
        self.writes += 1;
        if self.writes >= group_size.max(1) {
            let fresh = BloomFilter::with_capacity(group_size as usize, fp_rate);
            self.passive = std::mem::replace(&mut self.active, fresh);
            self.writes = 0;
        }
    }
}

/// Filter pairs indexed by group id.
#[derive(Debug, Clone)]
pub struct BloomDetector {
    fp_rate: f64,
    groups: Vec<Option<FilterPair>>,
}

impl BloomDetector {
    pub fn new(fp_rate: f64) -> Self {
        BloomDetector {
            fp_rate,
            groups: Vec::new(),
        }
    }

    pub fn ensure(&mut self, group: usize, capacity: u64) {
        if self.groups.len() <= group {
            self.groups.resize(group + 1, None);
        }
        if self.groups[group].is_none() {
            self.groups[group] = Some(FilterPair::new(capacity as usize, self.fp_rate));
        }
    }

    pub fn drop_group(&mut self, group: usize) {
        if let Some(slot) = self.groups.get_mut(group) {
            *slot = None;
        }
    }

    pub fn classify(&self, group: usize, lpa: u64, is_gc: bool) -> Verdict {
        match self.groups.get(group).and_then(Option::as_ref) {
            Some(pair) => pair.classify(lpa, is_gc),
            None => Verdict::Stay,
        }
    }

    pub fn record(&mut self, group: usize, lpa: u64, group_size: u64) {
        self.ensure(group, group_size);
        let fp = self.fp_rate;
        if let Some(pair) = self.groups[group].as_mut() {
            pair.record(lpa, group_size, fp);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_false_negatives() {
        let mut f = BloomFilter::with_capacity(1000, 0.3);
        for k in 0..1000 {
            f.insert(k * 7919);
        }
        assert!((0..1000).all(|k| f.contains(k * 7919)));
    }

    #[test]
    fn false_positive_rate_near_target() {
        let n = 20_000;
        let mut f = BloomFilter::with_capacity(n, 0.3);
        for k in 0..n as u64 {
            f.insert(k);
        }
        let probes = 100_000u64;
        let fp = (0..probes).filter(|&k| f.contains(1_000_000 + k)).count() as f64 / probes as f64;
        assert!((fp - 0.3).abs() < 0.02, "fp rate {fp}");
        // About 2.5 bits per element for two hashes at 30%.
        let per = f.bits() as f64 / n as f64;
        assert!(per > 2.3 && per < 2.7, "{per} bits per element");
    }

    #[test]
    fn repeated_updates_promote() {
        let mut d = BloomDetector::new(0.3);
        d.ensure(0, 4);
        let lpa = 123_456;
        assert_eq!(d.classify(0, lpa, false), Verdict::Stay);
        // Four writes per rotation; the address lands in two consecutive spans.
        d.record(0, lpa, 4);
        for k in 0..3 {
            d.record(0, k, 4);
        }
        d.record(0, lpa, 4);
        assert_eq!(d.classify(0, lpa, false), Verdict::Promote);
        assert_eq!(d.classify(0, lpa, true), Verdict::Stay);
    }

    #[test]
    fn untouched_page_is_demoted_on_migration() {
        let mut d = BloomDetector::new(0.3);
        d.ensure(1, 1000);
        assert_eq!(d.classify(1, 42, true), Verdict::Demote);
        assert_eq!(d.classify(1, 42, false), Verdict::Stay);
        assert_eq!(d.classify(7, 42, true), Verdict::Stay);
        d.drop_group(1);
        assert_eq!(d.classify(1, 42, true), Verdict::Stay);
    }
}
