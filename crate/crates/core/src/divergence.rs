//! Closed-form divergences between zero-mean Gaussians.
//!
//! Scalar formulas are written in terms of the variance ratio
//! `r = var_xhat / var_x` and arranged so that nothing cancels as `r -> 1`.
//! [`perception_floor`] inverts each scalar divergence on the branch
//! `var_xhat <= var_x`, which is the quantity every scalar rate formula is
//! built from.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_nonnegative, ensure_positive, RdpError, Result};
use crate::linalg;
use crate::special::{neg_exp_lambert, z_minus_log1p, Branch};

/// Hellinger budgets in `[2 - HELLINGER_CLAMP, 2)` are pulled back to
/// `2 - HELLINGER_CLAMP`.
pub const HELLINGER_CLAMP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerceptionMetric {
    /// `KL(p_X || p_Xhat)`.
    #[serde(rename = "kl")]
    KlDirect,
    /// `KL(p_Xhat || p_X)`.
    #[serde(rename = "rkl")]
    KlReverse,
    /// Geometric Jensen-Shannon divergence.
    #[serde(rename = "gjs")]
    Gjs,
    /// Squared Hellinger distance, normalized to take values in `[0, 2)`.
    #[serde(rename = "h2")]
    HellingerSq,
    /// Squared 2-Wasserstein distance.
    #[serde(rename = "w2")]
    Wasserstein2Sq,
}

impl PerceptionMetric {
    pub const ALL: [PerceptionMetric; 5] = [
        PerceptionMetric::KlDirect,
        PerceptionMetric::KlReverse,
        PerceptionMetric::Gjs,
        PerceptionMetric::HellingerSq,
        PerceptionMetric::Wasserstein2Sq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerceptionMetric::KlDirect => "kl",
            PerceptionMetric::KlReverse => "rkl",
            PerceptionMetric::Gjs => "gjs",
            PerceptionMetric::HellingerSq => "h2",
            PerceptionMetric::Wasserstein2Sq => "w2",
        }
    }

    /// Metrics whose perception budget is unbounded above in the sense that
    /// the multivariate solver needs a floor on `s2`.
    pub fn needs_s2_floor(self) -> bool {
        matches!(self, PerceptionMetric::KlDirect | PerceptionMetric::KlReverse | PerceptionMetric::Gjs)
    }
}

impl fmt::Display for PerceptionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerceptionMetric {
    type Err = RdpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kl" => Ok(PerceptionMetric::KlDirect),
            "rkl" => Ok(PerceptionMetric::KlReverse),
            "gjs" => Ok(PerceptionMetric::Gjs),
            "h2" => Ok(PerceptionMetric::HellingerSq),
            "w2" => Ok(PerceptionMetric::Wasserstein2Sq),
            other => Err(RdpError::Config(format!("unknown metric '{other}' (expected one of kl, rkl, gjs, h2, w2)"))),
        }
    }
}

/// Divergence between `N(0, var_x)` and `N(0, var_xhat)`.
pub fn divergence_scalar(metric: PerceptionMetric, var_x: f64, var_xhat: f64) -> Result<f64> {
    ensure_positive("var_x", var_x)?;
    ensure_positive("var_xhat", var_xhat)?;
    let r = var_xhat / var_x;
    Ok(match metric {
        PerceptionMetric::KlDirect => 0.5 * z_minus_log1p(var_x / var_xhat - 1.0),
        PerceptionMetric::KlReverse => 0.5 * z_minus_log1p(r - 1.0),
        PerceptionMetric::Gjs => {
            let y = (1.0 - r) * (1.0 - r) / (4.0 * r);
            gjs_from_y(y)
        }
        PerceptionMetric::HellingerSq => {
            let sr = r.sqrt();
            let b2 = 2.0 * sr / (1.0 + r);
            let one_minus_b2 = (1.0 - sr) * (1.0 - sr) / (1.0 + r);
            2.0 * one_minus_b2 / (1.0 + b2.sqrt())
        }
        PerceptionMetric::Wasserstein2Sq => {
            let d = var_x.sqrt() - var_xhat.sqrt();
            d * d
        }
    })
}

/// GJS written through `y = (var_x - var_xhat)^2 / (4 var_x var_xhat)`:
/// `(2y - ln(1 + y)) / 4`.
fn gjs_from_y(y: f64) -> f64 {
    0.25 * (y + z_minus_log1p(y))
}

/// Sum of per-dimension divergences for covariances sharing an eigenbasis
/// with aligned eigenvalues. Squared Hellinger composes through the product of
/// Bhattacharyya coefficients instead.
pub fn divergence_commuting(metric: PerceptionMetric, lambda_x: &[f64], lambda_xhat: &[f64]) -> Result<f64> {
    if lambda_x.len() != lambda_xhat.len() {
        return Err(RdpError::DimensionMismatch { expected: lambda_x.len(), got: lambda_xhat.len() });
    }
    if lambda_x.is_empty() {
        return Err(RdpError::InvalidInput("eigenvalue vectors must be non-empty".into()));
    }
    match metric {
        PerceptionMetric::HellingerSq => {
            let mut log_bc = 0.0;
            for (&x, &xh) in lambda_x.iter().zip(lambda_xhat) {
                let h = divergence_scalar(metric, x, xh)?;
                log_bc += (-0.5 * h).ln_1p();
            }
            Ok(-2.0 * log_bc.exp_m1())
        }
        _ => lambda_x.iter().zip(lambda_xhat).map(|(&x, &xh)| divergence_scalar(metric, x, xh)).sum(),
    }
}

fn spd_cholesky(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    linalg::check_symmetric(m)?;
    let sym = (m + m.transpose()) * 0.5;
    match sym.clone().cholesky() {
        Some(c) => Ok(c),
        None => {
            let (_, d) = linalg::symmetric_eigen(&sym)?;
            Err(RdpError::NotPositiveDefinite(d[d.len() - 1]))
        }
    }
}

fn log_det(c: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

fn check_same_dim(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(RdpError::DimensionMismatch { expected: a.nrows(), got: b.nrows() });
    }
    Ok(())
}

/// `KL(N(0, p) || N(0, q))`.
fn kl_matrix(p: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    check_same_dim(p, q)?;
    let cp = spd_cholesky(p)?;
    let cq = spd_cholesky(q)?;
    let n = p.nrows() as f64;
    let tr = cq.solve(p).trace();
    Ok(0.5 * (tr - n + log_det(&cq) - log_det(&cp)))
}

/// Gelbrich formula `tr[Sx + Sxh - 2 (Sxh^1/2 Sx Sxh^1/2)^1/2]`.
pub fn w2_full_matrix(cov_x: &DMatrix<f64>, cov_xhat: &DMatrix<f64>) -> Result<f64> {
    check_same_dim(cov_x, cov_xhat)?;
    spd_cholesky(cov_x)?;
    spd_cholesky(cov_xhat)?;
    let root = linalg::sym_sqrt(cov_xhat)?;
    let inner = &root * cov_x * &root;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = linalg::sym_sqrt(&inner)?;
    Ok((cov_x.trace() + cov_xhat.trace() - 2.0 * cross.trace()).max(0.0))
}

/// `2 (1 - 2^{N/2} |Sx Sxh|^{1/4} / |Sx + Sxh|^{1/2})`.
pub fn hellinger_full_matrix(cov_x: &DMatrix<f64>, cov_xhat: &DMatrix<f64>) -> Result<f64> {
    check_same_dim(cov_x, cov_xhat)?;
    let cx = spd_cholesky(cov_x)?;
    let cxh = spd_cholesky(cov_xhat)?;
    let csum = spd_cholesky(&(cov_x + cov_xhat))?;
    let n = cov_x.nrows() as f64;
    let log_bc = 0.5 * n * std::f64::consts::LN_2 + 0.25 * (log_det(&cx) + log_det(&cxh)) - 0.5 * log_det(&csum);
    Ok((-2.0 * log_bc.min(0.0).exp_m1()).max(0.0))
}

/// Geometric Jensen-Shannon through the geometric-mean covariance
/// `Sg = 2 (Sx^-1 + Sxh^-1)^-1`.
pub fn gjs_full_matrix(cov_x: &DMatrix<f64>, cov_xhat: &DMatrix<f64>) -> Result<f64> {
    check_same_dim(cov_x, cov_xhat)?;
    let cx = spd_cholesky(cov_x)?;
    let cxh = spd_cholesky(cov_xhat)?;
    let prec = cx.inverse() + cxh.inverse();
    let cg = spd_cholesky(&((&prec + prec.transpose()) * 0.5))?;
    let sg = cg.inverse() * 2.0;
    let sg = (&sg + sg.transpose()) * 0.5;
    Ok(0.5 * (kl_matrix(cov_x, &sg)? + kl_matrix(cov_xhat, &sg)?).max(0.0))
}

/// Full-covariance divergence between `N(0, cov_x)` and `N(0, cov_xhat)`.
pub fn divergence_full_matrix(metric: PerceptionMetric, cov_x: &DMatrix<f64>, cov_xhat: &DMatrix<f64>) -> Result<f64> {
    match metric {
        PerceptionMetric::KlDirect => kl_matrix(cov_x, cov_xhat).map(|v| v.max(0.0)),
        PerceptionMetric::KlReverse => kl_matrix(cov_xhat, cov_x).map(|v| v.max(0.0)),
        PerceptionMetric::Gjs => gjs_full_matrix(cov_x, cov_xhat),
        PerceptionMetric::HellingerSq => hellinger_full_matrix(cov_x, cov_xhat),
        PerceptionMetric::Wasserstein2Sq => w2_full_matrix(cov_x, cov_xhat),
    }
}

/// Divergence between two Gaussians given with means. The reconstruction is
/// always mean-matched to the source, so unequal means are rejected.
pub fn divergence_gaussians(
    metric: PerceptionMetric,
    mean_x: &DVector<f64>,
    cov_x: &DMatrix<f64>,
    mean_xhat: &DVector<f64>,
    cov_xhat: &DMatrix<f64>,
) -> Result<f64> {
    if mean_x.len() != mean_xhat.len() {
        return Err(RdpError::DimensionMismatch { expected: mean_x.len(), got: mean_xhat.len() });
    }
    let gap = (mean_x - mean_xhat).amax();
    if gap > 1e-12 * mean_x.amax().max(1.0) {
        return Err(RdpError::InvalidInput(format!("means must coincide (max difference {gap:e})")));
    }
    divergence_full_matrix(metric, cov_x, cov_xhat)
}

/// Lower root of `d(var_x, v) = P` in `v`, stored as the ratio `r = v / var_x`
/// together with `1 - r` computed without cancellation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptionFloor {
    pub ratio: f64,
    pub gap: f64,
    /// Metric-specific auxiliary value (the Lambert W evaluation for KL and
    /// GJS, `sqrt(P)` for W2, the Bhattacharyya level `1 - P/2` for Hellinger).
    pub aux: f64,
}

impl PerceptionFloor {
    pub fn variance(&self, var_x: f64) -> f64 {
        self.ratio * var_x
    }
}

/// Applies the Hellinger clamp near 2 and validates the budget.
pub fn normalize_perception(metric: PerceptionMetric, p: f64) -> Result<f64> {
    ensure_nonnegative("P", p)?;
    if metric == PerceptionMetric::HellingerSq {
        if p >= 2.0 {
            return Err(RdpError::Domain(format!("squared Hellinger budget must be below 2, got {p}")));
        }
        if p > 2.0 - HELLINGER_CLAMP {
            log::warn!("Hellinger budget {p} clamped to {}", 2.0 - HELLINGER_CLAMP);
            return Ok(2.0 - HELLINGER_CLAMP);
        }
    }
    Ok(p)
}

/// Smallest reconstruction variance ratio compatible with a divergence budget
/// `P` (the root of `d(var_x, r var_x) = P` with `r <= 1`).
pub fn perception_floor(metric: PerceptionMetric, var_x: f64, p: f64) -> Result<PerceptionFloor> {
    ensure_positive("var_x", var_x)?;
    let p = normalize_perception(metric, p)?;
    if p == 0.0 {
        let aux = match metric {
            PerceptionMetric::KlDirect | PerceptionMetric::KlReverse | PerceptionMetric::Gjs => -1.0,
            PerceptionMetric::HellingerSq => 1.0,
            PerceptionMetric::Wasserstein2Sq => 0.0,
        };
        return Ok(PerceptionFloor { ratio: 1.0, gap: 0.0, aux });
    }
    Ok(match metric {
        PerceptionMetric::KlDirect => {
            // u = 1/r - 1 solves u - ln(1 + u) = 2P.
            let w = neg_exp_lambert(2.0 * p, Branch::Secondary)?;
            let z = w.offset;
            PerceptionFloor { ratio: 1.0 / (1.0 + z), gap: z / (1.0 + z), aux: w.value }
        }
        PerceptionMetric::KlReverse => {
            // r - 1 solves z - ln(1 + z) = 2P on the negative side.
            let w = neg_exp_lambert(2.0 * p, Branch::Principal)?;
            PerceptionFloor { ratio: -w.value, gap: w.offset, aux: w.value }
        }
        PerceptionMetric::Gjs => {
            // m = 2(1 + y) solves m - ln m = 4P + 2 - ln 2.
            let excess = 4.0 * p + 1.0 - std::f64::consts::LN_2;
            let w = neg_exp_lambert(excess, Branch::Secondary)?;
            let mut y = (0.5 * (w.offset - 1.0)).max(0.0);
            // Polish in y so small budgets keep full relative precision.
            let target = 4.0 * p;
            for _ in 0..4 {
                let g = y + z_minus_log1p(y) - target;
                let slope = 2.0 - 1.0 / (1.0 + y);
                let next = (y - g / slope).clamp(2.0 * p, 4.0 * p);
                if next == y {
                    break;
                }
                y = next;
            }
            let sy = y.sqrt();
            let s1y = (1.0 + y).sqrt();
            let gap = 2.0 * sy / (s1y + sy);
            let ratio = 1.0 / (1.0 + 2.0 * y + 2.0 * sy * s1y);
            PerceptionFloor { ratio, gap, aux: w.value }
        }
        PerceptionMetric::HellingerSq => {
            // rho = sqrt(r) solves 2 rho / (1 + rho^2) = c^2, c = 1 - P/2.
            let c = 1.0 - 0.5 * p;
            let c2 = c * c;
            let one_minus_c4 = 0.5 * p * (1.0 + c) * (1.0 + c2);
            let s = one_minus_c4.sqrt();
            let rho = c2 / (1.0 + s);
            let one_minus_rho = (1.0 + s - c2) / (1.0 + s);
            PerceptionFloor { ratio: rho * rho, gap: one_minus_rho * (1.0 + rho), aux: c }
        }
        PerceptionMetric::Wasserstein2Sq => {
            let sp = p.sqrt();
            let sx = var_x.sqrt();
            if sp >= sx {
                PerceptionFloor { ratio: 0.0, gap: 1.0, aux: sp }
            } else {
                let q = sp / sx;
                PerceptionFloor { ratio: (1.0 - q) * (1.0 - q), gap: q * (2.0 - q), aux: sp }
            }
        }
    })
}

/// `dr/dP` along the perception floor; `-inf` at `P = 0`.
pub fn floor_ratio_slope(metric: PerceptionMetric, var_x: f64, p: f64, floor: &PerceptionFloor) -> f64 {
    let r = floor.ratio;
    let gap = floor.gap;
    if gap == 0.0 {
        return f64::NEG_INFINITY;
    }
    match metric {
        PerceptionMetric::KlDirect => -2.0 * r * r / gap,
        PerceptionMetric::KlReverse => -2.0 * r / gap,
        PerceptionMetric::Gjs => {
            // d'(r) = -(r + 1/r)(1 - r)(1 + r) / (8 q r^2), q = r + 1/r + 2.
            let q = r + 1.0 / r + 2.0;
            let dprime = -(r + 1.0 / r) * gap * (1.0 + r) / (8.0 * q * r * r);
            1.0 / dprime
        }
        PerceptionMetric::HellingerSq => {
            let c = 1.0 - 0.5 * p;
            -r.sqrt() * (1.0 + r) * (1.0 + r) * c / gap
        }
        PerceptionMetric::Wasserstein2Sq => {
            if r == 0.0 {
                0.0
            } else {
                -r.sqrt() / (var_x.sqrt() * p.sqrt())
            }
        }
    }
}
