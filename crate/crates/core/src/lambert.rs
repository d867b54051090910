//! Principal branch of the Lambert W function on the real line.
//!
//! Halley iteration on `f(w) = w e^w - z`. The starting point is chosen by
//! region so the iteration converges in a handful of steps everywhere:
//!
//! * `z < -0.25`: branch-point series in `p = sqrt(2 (e z + 1))`,
//!   `w ≈ -1 + p - p²/3 + 11 p³/72`.
//! * `-0.25 <= z <= e`: Winitzki's approximation
//!   `w ≈ L (1 - ln(1 + L) / (2 + L))` with `L = ln(1 + z)`.
//! * `z > e`: asymptotic `w ≈ ln z - ln ln z`.

use std::f64::consts::E;

use crate::error::{Error, Result};

/// `-1/e`, the branch point of W.
pub const BRANCH_POINT: f64 = -1.0 / E;

const MAX_ITERATIONS: usize = 64;

/// Evaluates `W₀(z)`, the real solution `w ≥ -1` of `w·e^w = z`.
///
/// Fails with a domain error for `z < -1/e` or a non-finite `z`.
pub fn lambert_w0(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(Error::domain(format!("lambert_w0 needs a finite argument, got {z}")));
    }
    if z < BRANCH_POINT {
        return Err(Error::domain(format!(
            "lambert_w0 is undefined below -1/e, got {z}"
        )));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z == BRANCH_POINT {
        return Ok(-1.0);
    }

    let mut w = initial_guess(z);
    for _ in 0..MAX_ITERATIONS {
        let ew = w.exp();
        let f = w * ew - z;
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        let next = w - step;
        // W₀ never goes below the branch point.
        let next = if next < -1.0 { 0.5 * (w - 1.0) } else { next };
        if (next - w).abs() <= 4.0 * f64::EPSILON * (1.0 + next.abs()) {
            w = next;
            break;
        }
        w = next;
    }
    Ok(w)
}

fn initial_guess(z: f64) -> f64 {
    if z < -0.25 {
        let p = (2.0 * (E * z + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else if z <= E {
        let l = z.ln_1p();
        l * (1.0 - l.ln_1p() / (2.0 + l))
    } else {
        let l = z.ln();
        l - l.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(z: f64) -> f64 {
        let w = lambert_w0(z).unwrap();
        (w * w.exp() - z).abs()
    }

    #[test]
    fn fixed_points() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert_eq!(lambert_w0(BRANCH_POINT).unwrap(), -1.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-14);
        // Omega constant.
        assert!((lambert_w0(1.0).unwrap() - 0.567_143_290_409_783_8).abs() < 1e-15);
    }

    #[test]
    fn rejects_below_branch_point() {
        assert!(matches!(lambert_w0(-0.4), Err(Error::Domain(_))));
        assert!(lambert_w0(f64::NAN).is_err());
        assert!(lambert_w0(f64::INFINITY).is_err());
    }

    #[test]
    fn residual_is_small_across_regions() {
        let mut z = BRANCH_POINT + 1e-12;
        while z < 1e6 {
            assert!(residual(z) <= 1e-12 * z.abs().max(1.0), "z = {z}");
            z = if z < 0.0 { z * 0.8 + 1e-9 } else { z * 1.7 + 1e-3 };
        }
    }

    #[test]
    fn stays_on_principal_branch_near_branch_point() {
        for k in 1..200 {
            let z = BRANCH_POINT + k as f64 * 1e-4;
            let w = lambert_w0(z).unwrap();
            assert!(w >= -1.0, "w = {w} for z = {z}");
            assert!(residual(z) < 1e-12);
        }
    }
}
