//! Over-provisioning allocation across groups of pages.
//!
//! Each group `x` holds `s_x` logical pages, receives a fraction `p_x` of the
//! application updates and is given `OP_x` spare pages. Treated as a closed
//! system it behaves like a uniform device at ratio `s_x / (s_x + OP_x)`, and
//! the device-wide write amplification is `Σ p_x · WA(s_x, OP_x)`.
//!
//! Three policies are provided: proportional to size, proportional to update
//! frequency, and their average (with an optional special case for a
//! near-idle coldest group). [`alloc_optimal`] is the hill-climbing reference.

use crate::error::{Error, Result};
use crate::model::delta_at_equilibrium;

/// Size and update frequency of one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupStat {
    /// Logical pages held by the group.
    pub size: u64,
    /// Probability that an application write targets the group.
    pub freq: f64,
}

impl GroupStat {
    pub fn new(size: u64, freq: f64) -> Self {
        Self { size, freq }
    }

    /// Updates per logical page, `p_x / s_x`. Infinite for a non-empty
    /// frequency on an empty group, zero for an idle one.
    pub fn hit_rate(&self) -> f64 {
        if self.size == 0 {
            if self.freq > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            self.freq / self.size as f64
        }
    }
}

/// Spare pages handed to each group, in the same order as the input stats.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Allocation {
    pub op: Vec<u64>,
}

impl Allocation {
    pub fn total(&self) -> u64 {
        self.op.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.op.len()
    }

    pub fn is_empty(&self) -> bool {
        self.op.is_empty()
    }
}

/// Device dimensions for an allocation: logical and physical pages, and the
/// granularity (in pages) at which spare space can be handed out. Use a unit
/// of 1 for page-level answers and the block size for device-level ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocProblem {
    pub logical_pages: u64,
    pub physical_pages: u64,
    pub unit: u64,
}

impl AllocProblem {
    pub fn new(logical_pages: u64, physical_pages: u64, unit: u64) -> Result<Self> {
        if unit == 0 {
            return Err(Error::domain("allocation unit must be positive"));
        }
        if logical_pages == 0 || logical_pages >= physical_pages {
            return Err(Error::domain(format!(
                "need 0 < LBA < PBA, got LBA={logical_pages} PBA={physical_pages}"
            )));
        }
        Ok(Self {
            logical_pages,
            physical_pages,
            unit,
        })
    }

    /// Page-granular problem.
    pub fn pages(logical_pages: u64, physical_pages: u64) -> Result<Self> {
        Self::new(logical_pages, physical_pages, 1)
    }

    /// Total spare pages, `OP = PBA - LBA`.
    pub fn op(&self) -> u64 {
        self.physical_pages - self.logical_pages
    }

    /// `V = PBA/LBA - 1`.
    pub fn v(&self) -> f64 {
        self.physical_pages as f64 / self.logical_pages as f64 - 1.0
    }
}

/// Fixed allocation for a coldest group that is far colder than the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColdRule {
    /// The rule fires when the coldest hit rate is below this fraction of the
    /// second coldest.
    pub hit_rate_fraction: f64,
    /// The coldest group then gets this fraction of the smallest group's size.
    pub size_fraction: f64,
}

impl Default for ColdRule {
    fn default() -> Self {
        Self {
            hit_rate_fraction: 0.05,
            size_fraction: 0.05,
        }
    }
}

/// Migration fraction of a group with `size` logical and `op` spare pages,
/// solving `s/(s + op) = (δ - 1)/ln δ`.
///
/// Sentinels: an empty group has `δ = 0`; a group without spare space has
/// `δ = 1` (infinite write amplification).
pub fn group_delta(size: f64, op: f64) -> Result<f64> {
    if !(size >= 0.0 && op >= 0.0) || !size.is_finite() || !op.is_finite() {
        return Err(Error::domain(format!(
            "group size and spare space must be finite and >= 0, got s={size} op={op}"
        )));
    }
    if size == 0.0 {
        return Ok(0.0);
    }
    if op == 0.0 {
        return Ok(1.0);
    }
    delta_at_equilibrium(size / (size + op))
}

/// Write amplification of one group, `1/(1 - δ)`; `+∞` when `op = 0`.
pub fn group_wa(size: f64, op: f64) -> Result<f64> {
    let d = group_delta(size, op)?;
    Ok(if d >= 1.0 { f64::INFINITY } else { 1.0 / (1.0 - d) })
}

/// Device write amplification `Σ p_i · WA(s_i, OP_i)`. Idle groups contribute
/// nothing even without spare space.
pub fn total_wa(stats: &[GroupStat], alloc: &Allocation) -> Result<f64> {
    if stats.len() != alloc.len() {
        return Err(Error::domain(format!(
            "{} groups but {} allocations",
            stats.len(),
            alloc.len()
        )));
    }
    let mut sum = 0.0;
    for (st, &op) in stats.iter().zip(&alloc.op) {
        if st.freq > 0.0 {
            sum += st.freq * group_wa(st.size as f64, op as f64)?;
        }
    }
    Ok(sum)
}

fn validate(stats: &[GroupStat], problem: &AllocProblem) -> Result<()> {
    if stats.is_empty() {
        return Err(Error::domain("at least one group is required"));
    }
    let mut freq = 0.0;
    let mut size = 0u64;
    for st in stats {
        if !(st.freq >= 0.0) || !st.freq.is_finite() {
            return Err(Error::domain(format!("invalid update frequency {}", st.freq)));
        }
        freq += st.freq;
        size += st.size;
    }
    if (freq - 1.0).abs() > 1e-6 {
        return Err(Error::domain(format!("update frequencies sum to {freq}, not 1")));
    }
    if size > problem.logical_pages {
        return Err(Error::domain(format!(
            "groups hold {size} pages, more than LBA={}",
            problem.logical_pages
        )));
    }
    Ok(())
}

/// Scales `raw` to `total` pages and rounds it to whole units by the largest
/// remainder method (ties to the lowest index). Pages that do not fill a unit
/// go to the group whose rounded share fell furthest short.
pub fn round_to_units(raw: &[f64], total: u64, unit: u64) -> Vec<u64> {
    let n = raw.len();
    if n == 0 {
        return Vec::new();
    }
    let sum: f64 = raw.iter().sum();
    let scaled: Vec<f64> = if sum > 0.0 {
        raw.iter().map(|r| r / sum * total as f64).collect()
    } else {
        vec![total as f64 / n as f64; n]
    };
    let units = total / unit;
    let mut out: Vec<u64> = scaled
        .iter()
        .map(|x| ((x / unit as f64).floor() as u64).min(units))
        .collect();
    let mut assigned: u64 = out.iter().sum();
    if assigned > units {
        // Only reachable through float noise; trim the largest shares.
        while assigned > units {
            let i = argmax(&out.iter().map(|&u| u as f64).collect::<Vec<_>>());
            out[i] -= 1;
            assigned -= 1;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let frac = |i: usize| scaled[i] / unit as f64 - out[i] as f64;
    let fracs: Vec<f64> = (0..n).map(frac).collect();
    order.sort_by(|&a, &b| fracs[b].total_cmp(&fracs[a]).then(a.cmp(&b)));
    for &i in order.iter().take((units - assigned) as usize) {
        out[i] += 1;
    }
    for v in &mut out {
        *v *= unit;
    }
    let leftover = total - units * unit;
    if leftover > 0 {
        let short: Vec<f64> = (0..n).map(|i| scaled[i] - out[i] as f64).collect();
        out[argmax(&short)] += leftover;
    }
    out
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Spare space proportional to size only: `OP_x = s_x · V`.
pub fn alloc_by_size(stats: &[GroupStat], problem: &AllocProblem) -> Result<Allocation> {
    validate(stats, problem)?;
    let v = problem.v();
    let raw: Vec<f64> = stats.iter().map(|s| s.size as f64 * v).collect();
    Ok(Allocation {
        op: round_to_units(&raw, problem.op(), problem.unit),
    })
}

/// Spare space proportional to update frequency only: `OP_x = p_x · OP`.
pub fn alloc_by_frequency(stats: &[GroupStat], problem: &AllocProblem) -> Result<Allocation> {
    validate(stats, problem)?;
    let op = problem.op() as f64;
    let raw: Vec<f64> = stats.iter().map(|s| s.freq * op).collect();
    Ok(Allocation {
        op: round_to_units(&raw, problem.op(), problem.unit),
    })
}

/// Unrounded mixed allocation, `(s_x·V + p_x·OP) / 2`, with the cold rule
/// applied first when given. The result is not yet normalised.
pub fn mixed_raw(
    stats: &[GroupStat],
    problem: &AllocProblem,
    cold: Option<&ColdRule>,
) -> Result<Vec<f64>> {
    validate(stats, problem)?;
    let op = problem.op() as f64;
    if let Some(rule) = cold {
        if let Some(raw) = cold_split(stats, op, rule) {
            return Ok(raw);
        }
    }
    let v = problem.v();
    Ok(stats
        .iter()
        .map(|s| 0.5 * (s.size as f64 * v + s.freq * op))
        .collect())
}

fn cold_split(stats: &[GroupStat], op: f64, rule: &ColdRule) -> Option<Vec<f64>> {
    let mut nonempty: Vec<usize> = (0..stats.len()).filter(|&i| stats[i].size > 0).collect();
    if nonempty.len() < 2 {
        return None;
    }
    nonempty.sort_by(|&a, &b| {
        stats[a]
            .hit_rate()
            .total_cmp(&stats[b].hit_rate())
            .then(a.cmp(&b))
    });
    let coldest = nonempty[0];
    let second = nonempty[1];
    if !(stats[coldest].hit_rate() < rule.hit_rate_fraction * stats[second].hit_rate()) {
        return None;
    }
    let smallest = nonempty.iter().map(|&i| stats[i].size).min()?;
    let fixed = (rule.size_fraction * smallest as f64).min(op);
    let rest = op - fixed;
    let (size_rest, freq_rest) = stats
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != coldest)
        .fold((0.0, 0.0), |(s, p), (_, st)| (s + st.size as f64, p + st.freq));
    let raw = stats
        .iter()
        .enumerate()
        .map(|(i, st)| {
            if i == coldest {
                return fixed;
            }
            let by_size = if size_rest > 0.0 { st.size as f64 / size_rest } else { 0.0 };
            let by_freq = if freq_rest > 0.0 { st.freq / freq_rest } else { by_size };
            rest * 0.5 * (by_size + by_freq)
        })
        .collect();
    Some(raw)
}

/// The closed-form mixed policy, normalised to `OP` and rounded to whole units.
pub fn alloc_mixed(
    stats: &[GroupStat],
    problem: &AllocProblem,
    cold: Option<&ColdRule>,
) -> Result<Allocation> {
    let raw = mixed_raw(stats, problem, cold)?;
    Ok(Allocation {
        op: round_to_units(&raw, problem.op(), problem.unit),
    })
}

/// Minimises `Σ p_x · WA(s_x, OP_x)` by moving one unit at a time.
///
/// Starts from [`alloc_by_size`] (every group holding at least one unit) and
/// repeatedly moves a unit from the group whose loss raises the objective
/// least to the group whose gain lowers it most, stopping once no such move
/// helps. The objective is separable and convex in each `OP_x`, so the local
/// optimum reached this way is global.
pub fn alloc_optimal(stats: &[GroupStat], problem: &AllocProblem) -> Result<Allocation> {
    validate(stats, problem)?;
    let n = stats.len();
    let unit = problem.unit;
    let units = problem.op() / unit;
    if units < n as u64 {
        return Err(Error::Infeasible(format!(
            "{units} allocation units cannot give each of {n} groups one unit"
        )));
    }

    let start = alloc_by_size(stats, problem)?.op;
    let mut k: Vec<u64> = start.iter().map(|op| op / unit).collect();
    let mut extra: Vec<u64> = vec![0; n];
    extra[argmax(&start.iter().map(|&x| x as f64).collect::<Vec<_>>())] +=
        problem.op() - units * unit;
    for i in 0..n {
        while k[i] == 0 {
            let donor = argmax(&k.iter().map(|&x| x as f64).collect::<Vec<_>>());
            k[donor] -= 1;
            k[i] += 1;
        }
    }

    let cost = |i: usize, units_i: u64| -> Result<f64> {
        if stats[i].freq == 0.0 {
            return Ok(0.0);
        }
        Ok(stats[i].freq * group_wa(stats[i].size as f64, (units_i * unit + extra[i]) as f64)?)
    };

    let mut here: Vec<f64> = (0..n).map(|i| cost(i, k[i])).collect::<Result<_>>()?;
    let mut up: Vec<f64> = (0..n).map(|i| cost(i, k[i] + 1)).collect::<Result<_>>()?;
    let mut down: Vec<f64> = (0..n)
        .map(|i| if k[i] > 1 { cost(i, k[i] - 1) } else { Ok(f64::INFINITY) })
        .collect::<Result<_>>()?;

    // Each accepted move strictly lowers the objective, so this terminates;
    // the cap only guards against float pathologies.
    let cap = units.saturating_mul(n as u64).saturating_add(16);
    for _ in 0..cap {
        let mut best: Option<(f64, usize, usize)> = None;
        for j in 0..n {
            let gain = here[j] - up[j];
            for i in 0..n {
                if i == j {
                    continue;
                }
                let loss = down[i] - here[i];
                let delta = gain - loss;
                if best.is_none_or(|(b, _, _)| delta > b) {
                    best = Some((delta, i, j));
                }
            }
        }
        let Some((improvement, from, to)) = best else {
            break;
        };
        let scale = here.iter().sum::<f64>().abs().max(1.0);
        if !(improvement > 1e-13 * scale) {
            break;
        }
        k[from] -= 1;
        k[to] += 1;
        for i in [from, to] {
            here[i] = cost(i, k[i])?;
            up[i] = cost(i, k[i] + 1)?;
            down[i] = if k[i] > 1 { cost(i, k[i] - 1)? } else { f64::INFINITY };
        }
    }

    Ok(Allocation {
        op: (0..n).map(|i| k[i] * unit + extra[i]).collect(),
    })
}
