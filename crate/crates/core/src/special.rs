//! Real branches of the Lambert W function.
//!
//! `W(x)` solves `w * exp(w) = x`. For `x` in `[-1/e, 0)` there are two real
//! solutions: the principal branch `W0 >= -1` and the secondary branch
//! `W-1 <= -1`. The closed-form rate expressions for the KL and geometric
//! Jensen-Shannon constraints evaluate both branches at arguments of the form
//! `-exp(-(1 + excess))`, which sit right next to the branch point when the
//! perception budget is small. [`neg_exp_lambert`] handles that family without
//! ever forming `1 + e*x`, so the branch offset keeps full relative precision.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::{RdpError, Result};

/// `-1/e`, the common end point of both real branches.
pub const BRANCH_POINT: f64 = -0.367_879_441_171_442_33;

const BRANCH_CLAMP: f64 = 1e-15;
const MAX_HALLEY_ITERS: usize = 60;
const STEP_TOL: f64 = 1e-14;
const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// `W0`, defined on `[-1/e, inf)`, values `>= -1`.
    Principal,
    /// `W-1`, defined on `[-1/e, 0)`, values `<= -1`.
    Secondary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchedLambertResult {
    pub value: f64,
    pub branch: Branch,
    /// `|w * exp(w) - x|`.
    pub residual: f64,
}

/// Principal branch `W0(x)`, `x >= -1/e`.
pub fn lambert_w0(x: f64) -> Result<f64> {
    lambert_w(x, Branch::Principal).map(|r| r.value)
}

/// Secondary branch `W-1(x)`, `-1/e <= x < 0`.
pub fn lambert_wm1(x: f64) -> Result<f64> {
    lambert_w(x, Branch::Secondary).map(|r| r.value)
}

/// Evaluates the requested branch with Halley's method.
///
/// The residual is checked against `1e-12 * max(1, |x|)`; for `|x| <= 1` this is
/// an absolute bound.
pub fn lambert_w(x: f64, branch: Branch) -> Result<BranchedLambertResult> {
    if !x.is_finite() {
        return Err(RdpError::Domain(format!("Lambert W argument must be finite, got {x}")));
    }
    if x < BRANCH_POINT - BRANCH_CLAMP {
        return Err(RdpError::Domain(format!("Lambert W undefined below -1/e, got {x}")));
    }
    if branch == Branch::Secondary && x >= 0.0 {
        return Err(RdpError::Domain(format!("W-1 requires x < 0, got {x}")));
    }
    if x <= BRANCH_POINT + BRANCH_CLAMP {
        return Ok(BranchedLambertResult { value: -1.0, branch, residual: (-(-1.0f64).exp() - x).abs() });
    }
    if x == 0.0 {
        return Ok(BranchedLambertResult { value: 0.0, branch, residual: 0.0 });
    }

    let mut w = initial_guess(x, branch);
    for _ in 0..MAX_HALLEY_ITERS {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            break;
        }
        let wp1 = w + 1.0;
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        if !denom.is_finite() || denom == 0.0 {
            break;
        }
        let step = f / denom;
        let next = w - step;
        if !next.is_finite() {
            break;
        }
        w = next;
        if step.abs() <= STEP_TOL * w.abs().max(1e-300) {
            break;
        }
    }
    // Keep the result on the requested side of the branch point.
    w = match branch {
        Branch::Principal => w.max(-1.0),
        Branch::Secondary => w.min(-1.0),
    };

    let residual = (w * w.exp() - x).abs();
    if residual > RESIDUAL_TOL * x.abs().max(1.0) || !w.is_finite() {
        return Err(RdpError::NonConvergence(format!(
            "Lambert W({x}) on {branch:?} branch left residual {residual:e}"
        )));
    }
    Ok(BranchedLambertResult { value: w, branch, residual })
}

fn initial_guess(x: f64, branch: Branch) -> f64 {
    let p = (2.0 * (E * x + 1.0)).max(0.0).sqrt();
    match branch {
        Branch::Principal => {
            if x < -0.32 {
                -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
            } else if x < E {
                x.ln_1p()
            } else {
                let l1 = x.ln();
                let l2 = l1.ln();
                l1 - l2 + l2 / l1
            }
        }
        Branch::Secondary => {
            if x < -0.25 {
                -1.0 - p - p * p / 3.0 - 11.0 / 72.0 * p * p * p
            } else {
                let l1 = (-x).ln();
                let l2 = (-l1).ln();
                l1 - l2 + l2 / l1
            }
        }
    }
}

/// `W(-exp(-(1 + excess)))` on one branch, together with `|W + 1|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegExpLambert {
    pub value: f64,
    /// Distance from the branch point, `|value + 1|`, accurate to full
    /// relative precision even when it is tiny.
    pub offset: f64,
}

/// Evaluates `W(-exp(-(1 + excess)))` for `excess >= 0`.
///
/// Writing `w = -1 - z` turns `w * exp(w) = -exp(-(1 + excess))` into
/// `z - ln(1 + z) = excess`, whose positive root belongs to `W-1` and whose
/// negative root belongs to `W0`. Both are found with a bracketed Newton solve
/// on `z`, so no precision is lost to cancellation near the branch point.
pub fn neg_exp_lambert(excess: f64, branch: Branch) -> Result<NegExpLambert> {
    if !(excess.is_finite() && excess >= 0.0) {
        return Err(RdpError::Domain(format!("excess must be finite and >= 0, got {excess}")));
    }
    if excess == 0.0 {
        return Ok(NegExpLambert { value: -1.0, offset: 0.0 });
    }
    match branch {
        Branch::Secondary => {
            let z = solve_offset(excess, 0.0, 2.0 * excess + 2.0)?;
            Ok(NegExpLambert { value: -1.0 - z, offset: z })
        }
        Branch::Principal => {
            if excess > 30.0 {
                // Far from the branch point W0 is tiny and 1 + w is exact enough.
                let w = lambert_w0(-(-(1.0 + excess)).exp())?;
                return Ok(NegExpLambert { value: w, offset: 1.0 + w });
            }
            let lo = -1.0 + (-(1.0 + excess)).exp();
            let z = solve_offset(excess, lo, 0.0)?;
            Ok(NegExpLambert { value: -1.0 - z, offset: -z })
        }
    }
}

/// `W-1(-exp(-(1 + excess)))`.
pub fn lambert_wm1_neg_exp(excess: f64) -> Result<f64> {
    neg_exp_lambert(excess, Branch::Secondary).map(|r| r.value)
}

/// `W0(-exp(-(1 + excess)))`.
pub fn lambert_w0_neg_exp(excess: f64) -> Result<f64> {
    neg_exp_lambert(excess, Branch::Principal).map(|r| r.value)
}

/// `z - ln(1 + z)` without cancellation for small `|z|`.
pub(crate) fn z_minus_log1p(z: f64) -> f64 {
    if z.abs() < 0.05 {
        // z^2/2 - z^3/3 + z^4/4 - ...
        let mut term = z * z;
        let mut sum = 0.0;
        for k in 2..30 {
            let contrib = term / k as f64;
            sum += if k % 2 == 0 { contrib } else { -contrib };
            if contrib.abs() < 1e-18 * sum.abs() {
                break;
            }
            term *= z;
        }
        sum
    } else {
        z - z.ln_1p()
    }
}

fn solve_offset(excess: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    // phi(z) = z - ln(1+z) - excess is negative at the end nearer zero.
    let phi = |z: f64| z_minus_log1p(z) - excess;
    let increasing = hi > 0.0;
    let mut z = if increasing {
        let p = (2.0 * excess).sqrt();
        (p + p * p / 3.0).clamp(lo, hi)
    } else {
        let p = (2.0 * excess).sqrt();
        (-(p - p * p / 3.0)).clamp(lo, hi)
    };
    for _ in 0..200 {
        let f = phi(z);
        if f == 0.0 {
            return Ok(z);
        }
        // Shrink the bracket: on the W-1 side phi increases with z, on the W0
        // side it decreases.
        if (f > 0.0) == increasing {
            hi = z;
        } else {
            lo = z;
        }
        let slope = z / (1.0 + z);
        let mut next = z - f / slope;
        if !next.is_finite() || next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        let step = (next - z).abs();
        z = next;
        if step <= 1e-16 * z.abs() || hi - lo <= 1e-16 * z.abs() {
            return Ok(z);
        }
    }
    Err(RdpError::NonConvergence(format!("branch offset solve for excess {excess} did not settle")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let flo = f(lo);
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn principal_examples() {
        assert_eq!(lambert_w0(0.0).unwrap(), 0.0);
        assert!((lambert_w0(E).unwrap() - 1.0).abs() < 1e-15);

        // Omega constant: fixed point of w = exp(-w).
        let mut omega = 0.5f64;
        for _ in 0..200 {
            omega = (-omega).exp();
        }
        assert!((omega - 0.567_143_290_409_783_8).abs() < 1e-15);
        assert!((lambert_w0(1.0).unwrap() - omega).abs() < 1e-15);
    }

    #[test]
    fn secondary_examples() {
        assert_eq!(lambert_wm1(BRANCH_POINT).unwrap(), -1.0);
        assert_eq!(lambert_wm1(-(-1.0f64).exp()).unwrap(), -1.0);
        let oracle = bisect(|w| w * w.exp() + 0.1, -20.0, -1.0);
        assert!((oracle - (-3.577_152_063_957_297)).abs() < 1e-12);
        assert!((lambert_wm1(-0.1).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(lambert_w0(-0.5), Err(RdpError::Domain(_))));
        assert!(matches!(lambert_wm1(-0.5), Err(RdpError::Domain(_))));
        assert!(matches!(lambert_wm1(0.0), Err(RdpError::Domain(_))));
        assert!(matches!(lambert_wm1(0.3), Err(RdpError::Domain(_))));
        assert!(matches!(lambert_w0(f64::NAN), Err(RdpError::Domain(_))));
        // Just inside the clamp window is accepted as the branch point.
        assert_eq!(lambert_w0(BRANCH_POINT - 5e-16).unwrap(), -1.0);
    }

    #[test]
    fn near_branch_point() {
        for k in 1..15 {
            let x = BRANCH_POINT + 10f64.powi(-k);
            for branch in [Branch::Principal, Branch::Secondary] {
                let r = lambert_w(x, branch).unwrap();
                assert!(r.residual <= 1e-12, "{x} {branch:?} {}", r.residual);
            }
        }
    }

    #[test]
    fn neg_exp_matches_direct_evaluation() {
        for &excess in &[1e-6f64, 1e-3, 0.05, 0.3, 1.0, 2.5, 10.0, 40.0] {
            let x = -(-(1.0 + excess)).exp();
            let wm1 = neg_exp_lambert(excess, Branch::Secondary).unwrap();
            let w0 = neg_exp_lambert(excess, Branch::Principal).unwrap();
            let tol = if excess < 1e-2 { 1e-7 } else { 1e-12 };
            assert!((wm1.value - lambert_wm1(x).unwrap()).abs() <= tol * wm1.value.abs(), "{excess}");
            assert!((w0.value - lambert_w0(x).unwrap()).abs() <= tol, "{excess}");
            assert!((wm1.offset - (-1.0 - wm1.value)).abs() <= 1e-15 * wm1.value.abs());
        }
    }

    #[test]
    fn neg_exp_offsets_near_branch_point() {
        // z - ln(1 + z) = e  =>  z ~ sqrt(2e) for tiny e.
        let excess = 1e-20;
        let r = neg_exp_lambert(excess, Branch::Secondary).unwrap();
        assert!((r.offset / (2.0 * excess).sqrt() - 1.0).abs() < 1e-9);
        let r0 = neg_exp_lambert(excess, Branch::Principal).unwrap();
        assert!((r0.offset / (2.0 * excess).sqrt() - 1.0).abs() < 1e-9);
        // Very large excess stays finite on both branches.
        let big = neg_exp_lambert(2000.0, Branch::Secondary).unwrap();
        assert!(big.value < -2000.0 && big.value.is_finite());
        let big0 = neg_exp_lambert(2000.0, Branch::Principal).unwrap();
        assert_eq!(big0.offset, 1.0);
    }

    proptest! {
        #[test]
        fn round_trip_principal(x in BRANCH_POINT..50.0f64) {
            let w = lambert_w0(x).unwrap();
            prop_assert!(w >= -1.0);
            prop_assert!((w * w.exp() - x).abs() <= 1e-12 * x.abs().max(1.0));
        }

        #[test]
        fn round_trip_secondary(x in BRANCH_POINT..-1e-300f64) {
            let w = lambert_wm1(x).unwrap();
            prop_assert!(w <= -1.0);
            prop_assert!((w * w.exp() - x).abs() <= 1e-12);
        }

        #[test]
        fn branches_are_ordered(x in BRANCH_POINT..0.0f64) {
            prop_assume!(x < 0.0);
            prop_assert!(lambert_wm1(x).unwrap() <= -1.0);
            prop_assert!(lambert_w0(x).unwrap() >= -1.0);
        }

        #[test]
        fn monotone_on_samples(a in BRANCH_POINT..-1e-12f64, b in BRANCH_POINT..-1e-12f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            prop_assert!(lambert_w0(lo).unwrap() <= lambert_w0(hi).unwrap());
            prop_assert!(lambert_wm1(lo).unwrap() >= lambert_wm1(hi).unwrap());
        }
    }
}
