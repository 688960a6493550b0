//! Closed-form scalar Gaussian rate-distortion-perception function under MSE.
//!
//! Every metric enters only through its perception floor `t(P)`, the smallest
//! reconstruction variance with `d(var_x, t) <= P`. With `S = {|var_x - D| <= t}`
//! the optimum falls into one of three regions:
//!
//! * Case I (`D < var_x - t`): only the distortion constraint binds and the
//!   classical `R = ln(var_x / D) / 2` is achieved by `a = 1 - D / var_x`.
//! * Case II (`D >= var_x + t`): an independent reconstruction with variance
//!   `t` meets both constraints, so `R = 0`.
//! * Case III (otherwise, i.e. inside `S`): both constraints are tight and the
//!   reconstruction variance sits exactly on the floor.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::divergence::{divergence_scalar, floor_ratio_slope, perception_floor, PerceptionFloor, PerceptionMetric};
use crate::error::{ensure_nonnegative, ensure_positive, RdpError, Result};
use crate::models::ScalarRealization;

/// Absolute tolerance (relative to `max(1, var_x)`) for region boundaries.
pub const REGION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionCase {
    /// Case I: distortion constraint active, perception slack.
    #[serde(rename = "case_i")]
    DistortionActive,
    /// Case II: perception constraint active, zero rate.
    #[serde(rename = "case_ii")]
    PerceptionActive,
    /// Case III: both constraints active.
    #[serde(rename = "case_iii")]
    BothActive,
}

impl RegionCase {
    pub fn name(self) -> &'static str {
        match self {
            RegionCase::DistortionActive => "case_i",
            RegionCase::PerceptionActive => "case_ii",
            RegionCase::BothActive => "case_iii",
        }
    }
}

impl fmt::Display for RegionCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarRdpSolution {
    pub metric: PerceptionMetric,
    pub var_x: f64,
    pub distortion: f64,
    pub perception: f64,
    /// Rate in nats.
    pub rate: f64,
    pub region: RegionCase,
    pub realization: ScalarRealization,
    /// Auxiliary value of the metric's closed form: `1/W-1(-e^{-(2P+1)})` for
    /// direct KL, `W0(-e^{-(2P+1)})` for reverse KL, `W-1(-2e^{-(4P+2)})` for
    /// GJS, `(1 + t/var_x)/2` for squared Hellinger and `sqrt(P)` for W2.
    pub aux_g: f64,
}

impl ScalarRdpSolution {
    pub fn rate_bits(&self) -> f64 {
        self.rate / std::f64::consts::LN_2
    }

    /// MSE of the realization, `(1 - a)^2 var_x + noise_var`.
    pub fn achieved_distortion(&self) -> f64 {
        self.realization.mse(self.var_x)
    }

    /// Divergence between the source and the realized reconstruction.
    pub fn achieved_perception(&self) -> Result<f64> {
        let v = self.realization.reconstruction_variance(self.var_x);
        if v <= 0.0 {
            // Only reachable for W2 with P >= var_x, where X_hat is constant.
            return Ok(self.var_x);
        }
        divergence_scalar(self.metric, self.var_x, v)
    }
}

/// Everything the scalar formulas produce at one `(D, P)` point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ScalarPoint {
    pub region: RegionCase,
    pub rate: f64,
    pub gain: f64,
    pub noise_var: f64,
    pub floor: PerceptionFloor,
    pub drate_dd: f64,
    pub drate_dp: f64,
}

fn validate(var_x: f64, d: f64, p: f64) -> Result<()> {
    ensure_positive("var_x", var_x)?;
    ensure_positive("D", d)?;
    ensure_nonnegative("P", p)
}

fn classify_with_floor(var_x: f64, d: f64, floor: &PerceptionFloor) -> RegionCase {
    let tol = REGION_TOL * var_x.max(1.0);
    let t = floor.variance(var_x);
    if d - var_x - t >= -tol {
        RegionCase::PerceptionActive
    } else if var_x * floor.gap - d > tol {
        RegionCase::DistortionActive
    } else {
        RegionCase::BothActive
    }
}

pub(crate) fn evaluate(metric: PerceptionMetric, var_x: f64, d: f64, p: f64) -> Result<ScalarPoint> {
    validate(var_x, d, p)?;
    let floor = perception_floor(metric, var_x, p)?;
    let region = classify_with_floor(var_x, d, &floor);
    let t = floor.variance(var_x);
    Ok(match region {
        RegionCase::DistortionActive => {
            let gain = 1.0 - d / var_x;
            ScalarPoint {
                region,
                rate: 0.5 * (var_x / d).ln(),
                gain,
                noise_var: d * gain,
                floor,
                drate_dd: -0.5 / d,
                drate_dp: 0.0,
            }
        }
        RegionCase::PerceptionActive => {
            ScalarPoint { region, rate: 0.0, gain: 0.0, noise_var: t, floor, drate_dd: 0.0, drate_dp: 0.0 }
        }
        RegionCase::BothActive => {
            let sigma = var_x.sqrt();
            let u = t.sqrt();
            // sigma - u without cancellation.
            let sigma_minus_u = sigma * floor.gap / (1.0 + floor.ratio.sqrt());
            let n = var_x + t - d;
            let delta_d = d - var_x * floor.gap;
            let q1 = delta_d + 2.0 * u * sigma_minus_u;
            let q2 = n + 2.0 * sigma * u;
            let qq = q1 * q2;
            let noise_var = qq / (4.0 * var_x);
            if noise_var < -REGION_TOL * var_x || !noise_var.is_finite() {
                return Err(RdpError::Infeasible(format!(
                    "no non-negative noise variance at D={d}, P={p} (got {noise_var:e})"
                )));
            }
            let rate = if qq > 0.0 { 0.5 * (n * n / qq).ln_1p() } else { f64::INFINITY };
            let drate_dd = if qq > 0.0 { -n / qq } else { f64::NEG_INFINITY };
            let drate_dt = delta_d.max(0.0) * n / (2.0 * t * qq);
            let slope = floor_ratio_slope(metric, var_x, p, &floor);
            let drate_dp = if drate_dt == 0.0 {
                0.0
            } else if slope.is_infinite() {
                f64::NEG_INFINITY
            } else {
                drate_dt * var_x * slope
            };
            ScalarPoint {
                region,
                rate,
                gain: n / (2.0 * var_x),
                noise_var: noise_var.max(0.0),
                floor,
                drate_dd,
                drate_dp,
            }
        }
    })
}

fn aux_value(metric: PerceptionMetric, floor: &PerceptionFloor) -> f64 {
    match metric {
        PerceptionMetric::KlDirect => 1.0 / floor.aux,
        PerceptionMetric::HellingerSq => 0.5 * (1.0 + floor.ratio),
        _ => floor.aux,
    }
}

/// Region of the optimum at `(D, P)`.
///
/// Points on the Case II / Case III boundary are reported as Case II (both
/// descriptions give the same solution there); points on the Case I / Case III
/// boundary are reported as Case III.
pub fn classify_region(metric: PerceptionMetric, var_x: f64, d: f64, p: f64) -> Result<RegionCase> {
    validate(var_x, d, p)?;
    let floor = perception_floor(metric, var_x, p)?;
    Ok(classify_with_floor(var_x, d, &floor))
}

/// Scalar RDPF `R(D, P)` in nats with its optimal linear realization.
pub fn scalar_rdpf(metric: PerceptionMetric, var_x: f64, d: f64, p: f64) -> Result<ScalarRdpSolution> {
    let pt = evaluate(metric, var_x, d, p)?;
    Ok(ScalarRdpSolution {
        metric,
        var_x,
        distortion: d,
        perception: p,
        rate: pt.rate,
        region: pt.region,
        realization: ScalarRealization { gain: pt.gain, noise_var: pt.noise_var },
        aux_g: aux_value(metric, &pt.floor),
    })
}

/// `dR/dD`; `-1/(2D)` in Case I, `0` in Case II.
///
/// The rate is continuously differentiable across region boundaries, so no
/// special handling is needed there.
pub fn drate_dd(metric: PerceptionMetric, var_x: f64, d: f64, p: f64) -> Result<f64> {
    evaluate(metric, var_x, d, p).map(|pt| pt.drate_dd)
}

/// `dR/dP`; zero outside `S` and `-inf` at `P = 0` whenever `0 < D < 2 var_x`.
pub fn drate_dp(metric: PerceptionMetric, var_x: f64, d: f64, p: f64) -> Result<f64> {
    evaluate(metric, var_x, d, p).map(|pt| pt.drate_dp)
}

/// Scalar rate under perfect realism (`P = 0`), identical for every metric.
pub fn perfect_realism_rate(var_x: f64, d: f64) -> Result<f64> {
    ensure_positive("var_x", var_x)?;
    ensure_positive("D", d)?;
    if d >= 2.0 * var_x {
        return Ok(0.0);
    }
    let n = 2.0 * var_x - d;
    Ok(0.5 * (n * n / (d * (4.0 * var_x - d))).ln_1p())
}

/// Classical rate-distortion function `max(ln(var_x / D) / 2, 0)`.
pub fn classical_rate(var_x: f64, d: f64) -> Result<f64> {
    ensure_positive("var_x", var_x)?;
    ensure_positive("D", d)?;
    Ok((0.5 * (var_x / d).ln()).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const W2: PerceptionMetric = PerceptionMetric::Wasserstein2Sq;

    #[test]
    fn classification_examples() {
        assert_eq!(classify_region(W2, 1.0, 1.0, 1.0).unwrap(), RegionCase::PerceptionActive);
        assert_eq!(classify_region(W2, 1.0, 0.25, 1.0).unwrap(), RegionCase::DistortionActive);
        assert_eq!(classify_region(W2, 1.0, 0.25, 0.01).unwrap(), RegionCase::BothActive);
        // sqrt(0.01) <= 1 - sqrt(0.75) is the W2 membership test for S.
        assert!(0.1 <= 1.0 - 0.75f64.sqrt());
    }

    #[test]
    fn classical_case() {
        let s = scalar_rdpf(W2, 1.0, 0.25, 1.0).unwrap();
        assert_eq!(s.region, RegionCase::DistortionActive);
        assert!((s.rate - 0.5 * 4f64.ln()).abs() < 1e-15);
        assert!((s.realization.gain - 0.75).abs() < 1e-15);
        assert!((s.realization.noise_var - 0.1875).abs() < 1e-15);
    }

    #[test]
    fn independent_copy_case() {
        for m in PerceptionMetric::ALL {
            let s = scalar_rdpf(m, 1.0, 2.0, 0.0).unwrap();
            assert_eq!(s.region, RegionCase::PerceptionActive);
            assert_eq!(s.rate, 0.0);
            assert_eq!(s.realization.gain, 0.0);
            assert!((s.realization.noise_var - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn w2_perfect_realism_value() {
        let s = scalar_rdpf(W2, 1.0, 0.25, 0.0).unwrap();
        let want = 0.5 * (1.0 + 1.75f64 * 1.75 / (0.25 * 3.75)).ln();
        assert!((s.rate - want).abs() < 1e-14);
        assert!((s.rate - 0.725_416_4).abs() < 1e-6);
        for m in PerceptionMetric::ALL {
            for &d in &[0.1, 0.5, 1.0, 1.7] {
                let r = scalar_rdpf(m, 1.0, d, 0.0).unwrap().rate;
                assert!((r - perfect_realism_rate(1.0, d).unwrap()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn large_budget_is_classical() {
        for m in PerceptionMetric::ALL {
            let p = if m == PerceptionMetric::HellingerSq { 1.999 } else { 50.0 };
            for &d in &[0.1, 0.5, 0.9, 1.5] {
                let r = scalar_rdpf(m, 1.0, d, p).unwrap().rate;
                assert!((r - classical_rate(1.0, d).unwrap()).abs() < 1e-6, "{m} {d} {r}");
            }
        }
    }

    #[test]
    fn kl_direct_aux_uses_secondary_branch() {
        let s = scalar_rdpf(PerceptionMetric::KlDirect, 1.0, 0.5, 0.05).unwrap();
        let w = crate::special::lambert_wm1(-(-1.1f64).exp()).unwrap();
        assert!((s.aux_g - 1.0 / w).abs() < 1e-12);
        assert_eq!(s.region, RegionCase::BothActive);
    }

    #[test]
    fn derivative_examples() {
        assert!((drate_dd(W2, 1.0, 0.5, 5.0).unwrap() + 1.0).abs() < 1e-15);
        for m in PerceptionMetric::ALL {
            assert_eq!(drate_dd(m, 1.0, 2.5, 0.1).unwrap(), 0.0);
            assert_eq!(drate_dp(m, 1.0, 2.5, 0.1).unwrap(), 0.0);
            assert_eq!(drate_dp(m, 1.0, 0.5, 0.0).unwrap(), f64::NEG_INFINITY);
        }
        // Magnitude of the explicit W2 expression at a Case III point; the rate
        // decreases in P, so the derivative carries a minus sign.
        let (s, d, p) = (1.0f64, 0.25f64, 0.01f64);
        let sp = p.sqrt();
        let explicit =
            -0.5 * ((s - sp).powi(4) - (s * s - d).powi(2)) / (sp * (d - p) * (sp - s) * (d - (2.0 * s - sp).powi(2)));
        let got = drate_dp(W2, 1.0, d, p).unwrap();
        assert!((got - explicit).abs() < 1e-12 * explicit.abs(), "{got} {explicit}");
        assert!(got < 0.0);
    }

    #[test]
    fn derivative_vanishes_on_boundary() {
        // W2 boundary of S in P at D = 0.25: sqrt(P) = 1 - sqrt(0.75).
        let b = (1.0 - 0.75f64.sqrt()).powi(2);
        let g = drate_dp(W2, 1.0, 0.25, b * (1.0 - 1e-9)).unwrap();
        assert!(g.abs() < 1e-6, "{g}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(classify_region(W2, 1.0, 0.0, 0.1).is_err());
        assert!(classify_region(W2, 1.0, 0.5, -0.1).is_err());
        assert!(classify_region(PerceptionMetric::HellingerSq, 1.0, 0.5, 2.0).is_err());
        assert!(scalar_rdpf(W2, -1.0, 0.5, 0.1).is_err());
    }

    fn metric_strategy() -> impl Strategy<Value = PerceptionMetric> {
        prop::sample::select(PerceptionMetric::ALL.to_vec())
    }

    proptest! {
        #[test]
        fn realization_is_feasible(m in metric_strategy(), var_x in 0.2f64..5.0, dr in 0.02f64..2.5, p in 0.0f64..1.9) {
            let d = dr * var_x;
            let s = scalar_rdpf(m, var_x, d, p).unwrap();
            prop_assert!(s.rate >= 0.0);
            prop_assert!(s.realization.noise_var >= 0.0);
            let mse = s.achieved_distortion();
            prop_assert!(mse <= d + 1e-9 * var_x.max(1.0), "mse {} > D {}", mse, d);
            let div = s.achieved_perception().unwrap();
            prop_assert!(div <= p + 1e-9, "div {} > P {}", div, p);
            if s.region == RegionCase::BothActive {
                prop_assert!((mse - d).abs() <= 1e-8 * var_x.max(1.0));
                prop_assert!((div - p).abs() <= 1e-8);
            }
        }

        #[test]
        fn derivatives_match_finite_differences(m in metric_strategy(), dr in 0.05f64..1.9, p in 1e-3f64..1.5) {
            let var_x = 1.3;
            let d = dr * var_x;
            let h = 1e-6;
            let f = |dd: f64, pp: f64| scalar_rdpf(m, var_x, dd, pp).unwrap().rate;
            let fd_d = (f(d + h * d, p) - f(d - h * d, p)) / (2.0 * h * d);
            let fd_p = (f(d, p + h * p) - f(d, p - h * p)) / (2.0 * h * p);
            let gd = drate_dd(m, var_x, d, p).unwrap();
            let gp = drate_dp(m, var_x, d, p).unwrap();
            prop_assert!(gd <= 0.0 && gp <= 0.0);
            prop_assert!((gd - fd_d).abs() <= 1e-5 * gd.abs().max(1e-2), "dD {} vs {}", gd, fd_d);
            prop_assert!((gp - fd_p).abs() <= 1e-5 * gp.abs().max(1e-2), "dP {} vs {}", gp, fd_p);
        }

        #[test]
        fn monotone_in_both_arguments(m in metric_strategy(), d in 0.05f64..2.0, p in 0.0f64..1.5, dd in 0.0f64..0.3, dp in 0.0f64..0.3) {
            let r = scalar_rdpf(m, 1.0, d, p).unwrap().rate;
            prop_assert!(scalar_rdpf(m, 1.0, d + dd, p).unwrap().rate <= r + 1e-12);
            prop_assert!(scalar_rdpf(m, 1.0, d, p + dp).unwrap().rate <= r + 1e-12);
        }
    }
}
