//! Analytical write-amplification model for a uniformly random workload.
//!
//! A freshly written block of `B` pages decays exponentially as the rest of the
//! logical space is overwritten. Closing the loop over one full cleaning cycle
//! gives the equilibrium condition
//!
//! ```text
//! LBA / PBA = (δ - 1) / ln δ
//! ```
//!
//! where `δ` is the fraction of a victim's pages that are still live when it is
//! cleaned, and write amplification follows as `1 / (1 - δ)`.

use crate::error::{Error, Result};
use crate::lambert::{lambert_w0, BRANCH_POINT};

/// Lower/upper margin of the bisection bracket inside `(0, 1)`.
const BRACKET_EPS: f64 = 1e-15;

/// Sizes of the logical and physical spaces, in pages, plus the block size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelParams {
    pages_per_block: u64,
    logical_pages: u64,
    physical_pages: u64,
}

impl ModelParams {
    pub fn new(pages_per_block: u64, logical_pages: u64, physical_pages: u64) -> Result<Self> {
        if pages_per_block == 0 {
            return Err(Error::domain("pages per block must be positive"));
        }
        if logical_pages == 0 || logical_pages >= physical_pages {
            return Err(Error::domain(format!(
                "need 0 < LBA < PBA, got LBA={logical_pages} PBA={physical_pages}"
            )));
        }
        if !physical_pages.is_multiple_of(pages_per_block) {
            return Err(Error::domain(format!(
                "PBA={physical_pages} is not a whole number of {pages_per_block}-page blocks"
            )));
        }
        Ok(Self {
            pages_per_block,
            logical_pages,
            physical_pages,
        })
    }

    pub fn pages_per_block(&self) -> u64 {
        self.pages_per_block
    }

    pub fn logical_pages(&self) -> u64 {
        self.logical_pages
    }

    pub fn physical_pages(&self) -> u64 {
        self.physical_pages
    }

    /// Over-provisioned pages, `PBA - LBA`.
    pub fn over_provisioning(&self) -> u64 {
        self.physical_pages - self.logical_pages
    }

    /// Number of erase blocks, `K = PBA / B`.
    pub fn blocks(&self) -> u64 {
        self.physical_pages / self.pages_per_block
    }

    /// `LBA / PBA`.
    pub fn ratio(&self) -> f64 {
        self.logical_pages as f64 / self.physical_pages as f64
    }
}

/// Migration fraction and write amplification at equilibrium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquilibriumPoint {
    pub delta: f64,
    pub wa: f64,
}

impl EquilibriumPoint {
    pub fn from_delta(delta: f64) -> Result<Self> {
        Ok(Self {
            delta,
            wa: write_amplification(delta)?,
        })
    }
}

/// Expected live pages left in a just-written block after `writes` further
/// uniform application writes: `G = B·e^(-X/LBA)`.
pub fn live_pages_after(writes: f64, params: &ModelParams) -> Result<f64> {
    if !(writes >= 0.0) {
        return Err(Error::domain(format!("write count must be >= 0, got {writes}")));
    }
    let b = params.pages_per_block as f64;
    Ok(b * (-writes / params.logical_pages as f64).exp())
}

/// Inverse of [`live_pages_after`]: writes until `live` pages remain,
/// `X = LBA·ln(B/G)`.
pub fn writes_until_live_count(live: f64, params: &ModelParams) -> Result<f64> {
    let b = params.pages_per_block as f64;
    if !(live > 0.0 && live <= b) {
        return Err(Error::domain(format!(
            "live page target must lie in (0, {b}], got {live}"
        )));
    }
    Ok(params.logical_pages as f64 * (b / live).ln())
}

/// `(δ - 1) / ln δ`, evaluated stably near `δ = 1`.
pub(crate) fn utilisation_of(delta: f64) -> f64 {
    let x = delta - 1.0;
    x / x.ln_1p()
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("LBA/PBA must lie in (0, 1), got {ratio}")))
    }
}

/// Solves `ratio = (δ - 1)/ln δ` for `δ ∈ (0, 1)` by bisection.
///
/// The right-hand side is strictly increasing on `(0, 1)`, so the root is
/// unique. Bisection runs on `(1e-15, 1 - 1e-15)` until the bracket stops
/// shrinking in floating point, which is well inside `1e-12`. For ratios below
/// about 0.029 the root lies under that bracket; there `δ = e^((δ-1)/r)` is a
/// strong contraction and a few fixed-point steps give it to full precision.
pub fn delta_at_equilibrium(ratio: f64) -> Result<f64> {
    check_ratio(ratio)?;
    let mut lo = BRACKET_EPS;
    let mut hi = 1.0 - BRACKET_EPS;
    if utilisation_of(lo) >= ratio {
        let mut d = 0.0f64;
        for _ in 0..64 {
            let next = ((d - 1.0) / ratio).exp();
            if next == d {
                break;
            }
            d = next;
        }
        return Ok(d);
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if utilisation_of(mid) < ratio {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Closed form of [`delta_at_equilibrium`] through the Lambert W function:
/// `δ = -r·W₀(-(1/r)·e^(-1/r))`.
pub fn delta_at_equilibrium_lambert(ratio: f64) -> Result<f64> {
    check_ratio(ratio)?;
    let inv = 1.0 / ratio;
    // Mathematically strictly above -1/e for r < 1; rounding can land a hair below.
    let z = (-inv * (-inv).exp()).max(BRANCH_POINT);
    Ok(-ratio * lambert_w0(z)?)
}

/// `WA = 1 / (1 - δ)` for `δ ∈ [0, 1)`.
pub fn write_amplification(delta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::domain(format!("delta must lie in [0, 1), got {delta}")));
    }
    Ok(1.0 / (1.0 - delta))
}

/// Equilibrium point of a uniform workload at over-provisioning ratio `LBA/PBA`.
pub fn equilibrium(ratio: f64) -> Result<EquilibriumPoint> {
    EquilibriumPoint::from_delta(delta_at_equilibrium(ratio)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent route to δ: the fixed point of `δ = exp((δ - 1)/r)`, which is
    /// a contraction at the root because `δ < r` there.
    fn fixed_point_delta(r: f64) -> f64 {
        let mut d = 0.5;
        for _ in 0..200_000 {
            let next = ((d - 1.0) / r).exp();
            if (next - d).abs() < 1e-15 {
                return next;
            }
            d = next;
        }
        d
    }

    fn params() -> ModelParams {
        ModelParams::new(128, 100_000, 131_072).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(0, 10, 20).is_err());
        assert!(ModelParams::new(4, 20, 20).is_err());
        assert!(ModelParams::new(4, 10, 18).is_err());
        let p = ModelParams::new(4, 10, 20).unwrap();
        assert_eq!(p.blocks(), 5);
        assert_eq!(p.over_provisioning(), 10);
        assert_eq!(p.ratio(), 0.5);
    }

    #[test]
    fn live_pages_examples() {
        let p = params();
        let lba = p.logical_pages() as f64;
        assert_eq!(live_pages_after(0.0, &p).unwrap(), 128.0);
        assert!((live_pages_after(lba * 128f64.ln(), &p).unwrap() - 1.0).abs() < 1e-9);
        assert!((live_pages_after(lba * 2f64.ln(), &p).unwrap() - 64.0).abs() < 1e-9);
        assert!(live_pages_after(-1.0, &p).is_err());
        assert!(live_pages_after(f64::NAN, &p).is_err());
    }

    #[test]
    fn writes_until_live_examples() {
        let p = ModelParams::new(128, 1000, 1024).unwrap();
        assert_eq!(writes_until_live_count(128.0, &p).unwrap(), 0.0);
        let x = writes_until_live_count(64.0, &p).unwrap();
        assert!((x - 693.147_180_56).abs() < 1e-6);
        assert!(writes_until_live_count(0.0, &p).is_err());
        assert!(writes_until_live_count(129.0, &p).is_err());

        let p = params();
        let g = live_pages_after(writes_until_live_count(17.0, &p).unwrap(), &p).unwrap();
        assert!((g - 17.0).abs() / 17.0 < 1e-9);
    }

    #[test]
    fn inverse_pair_over_range() {
        let p = params();
        for i in 1..=1280 {
            let g = i as f64 / 10.0;
            let back = live_pages_after(writes_until_live_count(g, &p).unwrap(), &p).unwrap();
            assert!((back - g).abs() / g <= 1e-9, "g = {g}");
        }
    }

    #[test]
    fn equilibrium_examples_against_fixed_point() {
        // Frozen from the fixed-point oracle above.
        let cases = [
            (0.5, 0.203_187_869_979_98, 1.255_000_974_915_98),
            (0.7, 0.466_996_422_218_42, 1.876_160_014_088_67),
            (0.9, 0.806_899_832_855_80, 5.178_659_422_149_82),
        ];
        for (r, delta, wa) in cases {
            let oracle = fixed_point_delta(r);
            assert!((oracle - delta).abs() < 1e-10, "oracle drifted at r={r}");
            let d = delta_at_equilibrium(r).unwrap();
            assert!((d - delta).abs() < 1e-10, "r={r}: {d} vs {delta}");
            let e = equilibrium(r).unwrap();
            assert!((e.wa - wa).abs() < 1e-8);
            assert_eq!(e.wa, 1.0 / (1.0 - e.delta));
        }
    }

    #[test]
    fn small_ratio_tends_to_unit_wa() {
        let d = delta_at_equilibrium(0.02).unwrap();
        assert!(d < 1e-20 + 1e-12);
        assert!(write_amplification(d).unwrap() - 1.0 < 1e-9);
    }

    #[test]
    fn rejects_out_of_range_ratio() {
        for r in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(delta_at_equilibrium(r).is_err());
            assert!(delta_at_equilibrium_lambert(r).is_err());
        }
    }

    #[test]
    fn lambert_matches_bisection_on_grid() {
        for i in 1..=99 {
            let r = i as f64 / 100.0;
            let a = delta_at_equilibrium(r).unwrap();
            let b = delta_at_equilibrium_lambert(r).unwrap();
            assert!((a - b).abs() <= 1e-9, "r={r}: {a} vs {b}");
        }
        let r = 0.5;
        assert!((delta_at_equilibrium_lambert(r).unwrap() - 0.203_187_87).abs() < 1e-8);
    }

    #[test]
    fn lambert_argument_is_inside_principal_domain() {
        for i in 1..1000 {
            let r = i as f64 / 1000.0;
            let inv = 1.0 / r;
            let z = -inv * (-inv).exp();
            // Underflows to -0 for very small r, which W₀ maps to 0.
            assert!((BRANCH_POINT..=0.0).contains(&z));
        }
    }

    #[test]
    fn monotone_in_ratio() {
        let mut prev = (0.0, 1.0);
        for i in 1..=99 {
            let r = i as f64 / 100.0;
            let e = equilibrium(r).unwrap();
            assert!(e.delta > prev.0, "r={r}");
            // 1/(1-δ) rounds to exactly 1 while δ is below machine epsilon.
            if e.delta > f64::EPSILON {
                assert!(e.wa > prev.1, "r={r}");
            } else {
                assert!(e.wa >= prev.1, "r={r}");
            }
            prev = (e.delta, e.wa);
        }
    }

    #[test]
    fn write_amplification_examples() {
        assert_eq!(write_amplification(0.0).unwrap(), 1.0);
        assert_eq!(write_amplification(0.5).unwrap(), 2.0);
        assert!((write_amplification(0.9).unwrap() - 10.0).abs() < 1e-12);
        assert!(write_amplification(1.0).is_err());
        assert!(write_amplification(-0.01).is_err());
    }

    /// Simulates one block of `b` pages inside a uniformly overwritten logical
    /// space and returns how many pages survive `writes` writes. Writes that
    /// miss the block are skipped in geometric batches.
    fn surviving_pages(rng: &mut ChaCha8Rng, b: usize, lba: u64, writes: u64) -> usize {
        let hit = b as f64 / lba as f64;
        let mut live = vec![true; b];
        let mut done = 0u64;
        loop {
            let u: f64 = rng.random();
            let gap = ((1.0 - u).ln() / (1.0 - hit).ln()).floor() as u64;
            done += gap + 1;
            if done > writes {
                break;
            }
            live[rng.random_range(0..b)] = false;
        }
        live.iter().filter(|&&l| l).count()
    }

    #[test]
    fn monte_carlo_block_decay_matches_exponential() {
        let p = params();
        let lba = p.logical_pages();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for factor in [0.5, 1.0, 2.0] {
            let writes = (lba as f64 * factor) as u64;
            let trials = 2000;
            let total: usize = (0..trials)
                .map(|_| surviving_pages(&mut rng, 128, lba, writes))
                .sum();
            let mean = total as f64 / trials as f64;
            let expected = live_pages_after(writes as f64, &p).unwrap();
            assert!(
                (mean - expected).abs() / expected < 0.02,
                "X = {factor}·LBA: simulated {mean}, model {expected}"
            );
        }
    }
}
