//! Multivariate Gaussian RDPF by alternating minimization in the source
//! eigenbasis, together with the perfect-realism and reverse water-filling
//! allocations it is compared against.
//!
//! With commuting realizations the problem separates into scalar problems on
//! the eigenvalues `lambda_i`. For fixed multipliers `(s1, s2)` the solver
//! minimizes the Lagrangian
//!
//! `L(D, P) = sum_i R_i(D_i, P_i) + s1 sum_i D_i + s2 sum_i h(P_i)`
//!
//! by exact block updates: the `D` block has a closed form, the `P` block is
//! a monotone root-finding problem per coordinate. `h` is the identity except
//! for squared Hellinger, where `h(x) = -ln(1 - x/2)` turns the product rule
//! for Bhattacharyya coefficients into a sum.

use serde::{Deserialize, Serialize};

use crate::divergence::{divergence_scalar, perception_floor, PerceptionMetric};
use crate::error::{ensure_nonnegative, ensure_positive, RdpError, Result};
use crate::models::{assemble_realization, GaussianSource, VectorRealization};
use crate::scalar::{self, RegionCase};

/// Default floor on `s2` for metrics with unbounded perception budgets.
pub const DEFAULT_S2_FLOOR: f64 = 1e-3;

const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_ITERS: usize = 200;
const DESCENT_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangePair {
    pub s1: f64,
    pub s2: f64,
}

impl LagrangePair {
    pub fn new(s1: f64, s2: f64) -> Result<Self> {
        ensure_positive("s1", s1)?;
        ensure_nonnegative("s2", s2)?;
        Ok(Self { s1, s2 })
    }

    /// Raises `s2` to `floor` for KL and GJS.
    pub fn with_s2_floor(self, metric: PerceptionMetric, floor: f64) -> Self {
        if metric.needs_s2_floor() && self.s2 < floor {
            log::info!("s2 = {} raised to {floor} for metric {metric}", self.s2);
            Self { s2: floor, ..self }
        } else {
            self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationState {
    pub d_alloc: Vec<f64>,
    pub p_alloc: Vec<f64>,
    pub iteration: usize,
}

impl AllocationState {
    pub fn zeros(n: usize) -> Self {
        Self { d_alloc: vec![0.0; n], p_alloc: vec![0.0; n], iteration: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AlgorithmTrace {
    /// `||(D, P)^(n) - (D, P)^(n-1)||_2` after each full iteration.
    pub gaps: Vec<f64>,
    /// Lagrangian after every half-step (two entries per iteration).
    pub lagrangian_values: Vec<f64>,
    pub converged: bool,
    pub iterations_used: usize,
}

impl AlgorithmTrace {
    /// Largest increase of the Lagrangian between consecutive half-steps.
    pub fn max_ascent(&self) -> f64 {
        self.lagrangian_values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_descending(&self) -> bool {
        self.max_ascent() <= DESCENT_SLACK
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiRdpSolution {
    pub metric: PerceptionMetric,
    pub lagrange: LagrangePair,
    pub eigvals: Vec<f64>,
    pub total_d: f64,
    pub total_p: f64,
    /// Rate in nats.
    pub rate: f64,
    pub allocation: AllocationState,
    pub realization: VectorRealization,
    pub trace: AlgorithmTrace,
    /// Per-dimension regions at the final allocation.
    pub regions: Vec<RegionCase>,
    /// Coordinates where the perception subproblem had no interior root.
    pub inactive: Vec<bool>,
}

impl MultiRdpSolution {
    pub fn rate_bits(&self) -> f64 {
        self.rate / std::f64::consts::LN_2
    }

    pub fn lagrangian(&self) -> f64 {
        let h: f64 = self.allocation.p_alloc.iter().map(|&p| perception_coordinate(self.metric, p)).sum();
        self.rate + self.lagrange.s1 * self.total_d + self.lagrange.s2 * h
    }
}

/// `h(P) = -ln(1 - P/2)`.
pub fn hs_perception_transform(p: f64) -> Result<f64> {
    if !(p.is_finite() && (0.0..2.0).contains(&p)) {
        return Err(RdpError::Domain(format!("Hellinger budget must lie in [0, 2), got {p}")));
    }
    Ok(-(-0.5 * p).ln_1p())
}

/// `h^-1(P') = 2 (1 - exp(-P'))`.
pub fn hs_perception_transform_inv(p_prime: f64) -> Result<f64> {
    ensure_nonnegative("P'", p_prime)?;
    Ok(-2.0 * (-p_prime).exp_m1())
}

/// Per-coordinate perception in the additive coordinates of the Lagrangian.
fn perception_coordinate(metric: PerceptionMetric, p: f64) -> f64 {
    match metric {
        PerceptionMetric::HellingerSq => -(-0.5 * p).ln_1p(),
        _ => p,
    }
}

fn perception_from_coordinate(metric: PerceptionMetric, q: f64) -> f64 {
    match metric {
        PerceptionMetric::HellingerSq => -2.0 * (-q).exp_m1(),
        _ => q,
    }
}

/// Total perception of a commuting allocation.
pub fn compose_perception(metric: PerceptionMetric, p_alloc: &[f64]) -> f64 {
    let total: f64 = p_alloc.iter().map(|&p| perception_coordinate(metric, p)).sum();
    perception_from_coordinate(metric, total)
}

fn check_lengths(lambda: &[f64], other: &[f64]) -> Result<()> {
    if lambda.len() != other.len() {
        return Err(RdpError::DimensionMismatch { expected: lambda.len(), got: other.len() });
    }
    if lambda.is_empty() {
        return Err(RdpError::InvalidInput("at least one eigenvalue is required".into()));
    }
    for &l in lambda {
        ensure_positive("eigenvalue", l)?;
    }
    Ok(())
}

/// Minimizer of `R(D, P) + s1 D` over `D` for one eigenvalue.
pub fn optimal_distortion(metric: PerceptionMetric, lambda: f64, p: f64, s1: f64) -> Result<f64> {
    ensure_positive("eigenvalue", lambda)?;
    ensure_positive("s1", s1)?;
    let floor = perception_floor(metric, lambda, p)?;
    let w = 0.5 / s1;
    if w < lambda * floor.gap {
        return Ok(w);
    }
    let t = floor.variance(lambda);
    let d = lambda + t - 4.0 * lambda * t / (w + (4.0 * lambda * t + w * w).sqrt());
    Ok(d)
}

/// Closed-form distortion block: `D_i` minimizing `R_i(D_i, P_i) + s1 D_i`.
pub fn solve_subproblem_d(metric: PerceptionMetric, lambda: &[f64], p_alloc: &[f64], s1: f64) -> Result<Vec<f64>> {
    check_lengths(lambda, p_alloc)?;
    lambda.iter().zip(p_alloc).map(|(&l, &p)| optimal_distortion(metric, l, p, s1)).collect()
}

/// Outcome of the perception block on one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptionStep {
    pub p: f64,
    /// True when no root exists in `S` and the boundary value was returned.
    pub inactive: bool,
    /// `dR/dq + s2` at the returned point (`q = h(P)` for Hellinger).
    pub residual: f64,
}

/// `T(q) = dR/dq + s2` in the additive perception coordinate.
fn stationarity(metric: PerceptionMetric, lambda: f64, d: f64, q: f64, s2: f64) -> Result<f64> {
    let p = perception_from_coordinate(metric, q);
    let g = scalar::evaluate(metric, lambda, d, p)?.drate_dp;
    let dp_dq = match metric {
        PerceptionMetric::HellingerSq => 2.0 - p,
        _ => 1.0,
    };
    Ok(if g == f64::NEG_INFINITY { g } else { g * dp_dq + s2 })
}

/// Root of `dR/dq + s2 = 0` in `S` for one coordinate, by bisection.
pub fn optimal_perception(metric: PerceptionMetric, lambda: f64, d: f64, s2: f64) -> Result<PerceptionStep> {
    ensure_positive("eigenvalue", lambda)?;
    ensure_positive("D", d)?;
    ensure_nonnegative("s2", s2)?;

    // Boundary of S in P: the floor equals |lambda - D|.
    let edge = (lambda - d).abs();
    if edge >= lambda {
        // S is empty (or the single point P = 0): the coordinate has zero rate.
        return Ok(PerceptionStep { p: 0.0, inactive: true, residual: s2 });
    }
    let b_q = if edge > 0.0 {
        perception_coordinate(metric, divergence_scalar(metric, lambda, edge)?)
    } else {
        f64::INFINITY
    };
    if s2 == 0.0 && b_q.is_finite() {
        return Ok(PerceptionStep { p: perception_from_coordinate(metric, b_q), inactive: true, residual: 0.0 });
    }

    let t = |q: f64| stationarity(metric, lambda, d, q, s2);
    let mut hi = if b_q.is_finite() { b_q } else { 1.0 };
    if !b_q.is_finite() || t(hi)? < 0.0 {
        let mut grown = false;
        for _ in 0..200 {
            if t(hi)? >= 0.0 {
                grown = true;
                break;
            }
            if hi >= b_q {
                break;
            }
            hi = (2.0 * hi).min(b_q);
        }
        if !grown {
            if s2 == 0.0 {
                return Ok(PerceptionStep { p: perception_from_coordinate(metric, hi), inactive: true, residual: 0.0 });
            }
            return Err(RdpError::Bracket(format!(
                "no upper bracket for the perception root (metric {metric}, lambda {lambda}, D {d}, s2 {s2}, last q {hi})"
            )));
        }
    }
    let t_hi = t(hi)?;
    if (0.0..=BISECTION_TOL).contains(&t_hi) && b_q.is_finite() && hi == b_q {
        // Derivative vanishes on the boundary; only reachable with s2 ~ 0.
        return Ok(PerceptionStep { p: perception_from_coordinate(metric, hi), inactive: true, residual: t_hi });
    }

    let mut lo = 0.5 * hi;
    let mut found = false;
    for _ in 0..1100 {
        if t(lo)? < 0.0 {
            found = true;
            break;
        }
        lo *= 0.5;
        if lo == 0.0 {
            break;
        }
    }
    if !found {
        if t(0.0)? < 0.0 {
            lo = 0.0;
        } else {
            return Ok(PerceptionStep { p: perception_from_coordinate(metric, hi), inactive: true, residual: t_hi });
        }
    }

    let mut mid = 0.5 * (lo + hi);
    let mut t_mid = t(mid)?;
    for _ in 0..BISECTION_MAX_ITERS {
        if t_mid.abs() <= BISECTION_TOL || hi - lo <= BISECTION_TOL * hi {
            break;
        }
        if t_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        t_mid = t(mid)?;
    }
    Ok(PerceptionStep { p: perception_from_coordinate(metric, mid), inactive: false, residual: t_mid })
}

/// Perception block: `P_i` with `dR_i/dP_i + s2 = 0` on every active coordinate.
pub fn solve_subproblem_p(metric: PerceptionMetric, lambda: &[f64], d_alloc: &[f64], s2: f64) -> Result<Vec<f64>> {
    check_lengths(lambda, d_alloc)?;
    lambda.iter().zip(d_alloc).map(|(&l, &d)| optimal_perception(metric, l, d, s2).map(|s| s.p)).collect()
}

fn lagrangian(metric: PerceptionMetric, lambda: &[f64], d: &[f64], p: &[f64], lag: LagrangePair) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..lambda.len() {
        total += scalar::evaluate(metric, lambda[i], d[i], p[i])?.rate
            + lag.s1 * d[i]
            + lag.s2 * perception_coordinate(metric, p[i]);
    }
    Ok(total)
}

/// Alternating minimization over the distortion and perception blocks.
///
/// Stops once the Euclidean change of the stacked `(D, P)` vector drops to
/// `eps` or after `max_iters` iterations; in the latter case the partial
/// solution is returned with `trace.converged == false`.
pub fn alternating_minimization(
    source: &GaussianSource,
    metric: PerceptionMetric,
    lagrange: LagrangePair,
    eps: f64,
    max_iters: usize,
    init: Option<&AllocationState>,
) -> Result<MultiRdpSolution> {
    ensure_positive("eps", eps)?;
    ensure_positive("s1", lagrange.s1)?;
    ensure_nonnegative("s2", lagrange.s2)?;
    if max_iters == 0 {
        return Err(RdpError::InvalidInput("max_iters must be at least 1".into()));
    }
    let lambda: Vec<f64> = source.eigvals().iter().copied().collect();
    let n = lambda.len();
    let start = match init {
        Some(s) => {
            check_lengths(&lambda, &s.d_alloc)?;
            check_lengths(&lambda, &s.p_alloc)?;
            for &p in &s.p_alloc {
                crate::divergence::normalize_perception(metric, p)?;
            }
            s.clone()
        }
        None => AllocationState::zeros(n),
    };

    let mut d = start.d_alloc.clone();
    let mut p = start.p_alloc.clone();
    let mut inactive = vec![false; n];
    let mut trace = AlgorithmTrace::default();

    for iter in 1..=max_iters {
        let d_new = solve_subproblem_d(metric, &lambda, &p, lagrange.s1)?;
        trace.lagrangian_values.push(lagrangian(metric, &lambda, &d_new, &p, lagrange)?);

        let mut p_new = Vec::with_capacity(n);
        for i in 0..n {
            let step = optimal_perception(metric, lambda[i], d_new[i], lagrange.s2)?;
            inactive[i] = step.inactive;
            p_new.push(step.p);
        }
        trace.lagrangian_values.push(lagrangian(metric, &lambda, &d_new, &p_new, lagrange)?);

        let gap = d.iter().zip(&d_new).chain(p.iter().zip(&p_new)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        trace.gaps.push(gap);
        trace.iterations_used = iter;
        d = d_new;
        p = p_new;
        if gap <= eps {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        log::warn!("alternating minimization stopped after {max_iters} iterations without reaching eps = {eps}");
    }

    let mut gains = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    let mut regions = Vec::with_capacity(n);
    let mut rate = 0.0;
    for i in 0..n {
        let s = scalar::scalar_rdpf(metric, lambda[i], d[i], p[i])?;
        rate += s.rate;
        gains.push(s.realization.gain);
        noise.push(s.realization.noise_var);
        regions.push(s.region);
    }
    let realization = assemble_realization(source, &gains, &noise)?;
    Ok(MultiRdpSolution {
        metric,
        lagrange,
        total_d: d.iter().sum(),
        total_p: compose_perception(metric, &p),
        rate,
        allocation: AllocationState { d_alloc: d, p_alloc: p, iteration: trace.iterations_used },
        realization,
        trace,
        regions,
        inactive,
        eigvals: lambda,
    })
}

/// Perfect-realism allocation `D_i = 2 lambda_i + w - sqrt(4 lambda_i^2 + w^2)`,
/// `w = 1/(2 s1)`, evaluated in a cancellation-free form.
pub fn perfect_realism_allocation(lambda: &[f64], s1: f64) -> Result<Vec<f64>> {
    ensure_positive("s1", s1)?;
    if lambda.is_empty() {
        return Err(RdpError::InvalidInput("at least one eigenvalue is required".into()));
    }
    let w = 0.5 / s1;
    lambda
        .iter()
        .map(|&l| {
            ensure_positive("eigenvalue", l)?;
            Ok(2.0 * l - 4.0 * l * l / (w + (4.0 * l * l + w * w).sqrt()))
        })
        .collect()
}

/// Reverse water-filling at water level `1/(2 s1)`; returns the allocation and
/// the classical rate in nats.
pub fn water_filling(lambda: &[f64], s1: f64) -> Result<(Vec<f64>, f64)> {
    ensure_positive("s1", s1)?;
    if lambda.is_empty() {
        return Err(RdpError::InvalidInput("at least one eigenvalue is required".into()));
    }
    let level = 0.5 / s1;
    let mut alloc = Vec::with_capacity(lambda.len());
    let mut rate = 0.0;
    for &l in lambda {
        ensure_positive("eigenvalue", l)?;
        let d = level.min(l);
        rate += 0.5 * (l / d).ln();
        alloc.push(d);
    }
    Ok((alloc, rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceClass {
    Linear,
    Sublinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    /// `gap[n+1] / gap[n]`.
    pub ratios: Vec<f64>,
    /// Slope of `ln gap` against `ln n`.
    pub loglog_slope: f64,
    pub loglog_r2: f64,
    /// Slope of `ln gap` against `n`.
    pub semilog_slope: f64,
    pub semilog_r2: f64,
    pub class: ConvergenceClass,
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

/// Empirical convergence profile of a gap sequence.
///
/// A trace is classified linear when `ln gap` is better explained by a line in
/// `n` than by a line in `ln n`.
pub fn measure_convergence_rate(trace: &AlgorithmTrace) -> Result<ConvergenceReport> {
    let pts: Vec<(f64, f64)> = trace
        .gaps
        .iter()
        .enumerate()
        .filter(|(_, g)| **g > 0.0 && g.is_finite())
        .map(|(i, g)| ((i + 1) as f64, g.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(RdpError::InvalidInput(format!(
            "convergence fit needs at least 5 positive gaps, got {}",
            pts.len()
        )));
    }
    let ratios = trace.gaps.windows(2).map(|w| w[1] / w[0]).collect();
    let n: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ln_n: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let ln_g: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let (loglog_slope, loglog_r2) = linear_fit(&ln_n, &ln_g);
    let (semilog_slope, semilog_r2) = linear_fit(&n, &ln_g);
    let class = if semilog_r2 > loglog_r2 { ConvergenceClass::Linear } else { ConvergenceClass::Sublinear };
    Ok(ConvergenceReport { ratios, loglog_slope, loglog_r2, semilog_slope, semilog_r2, class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::scalar_rdpf;

    const W2: PerceptionMetric = PerceptionMetric::Wasserstein2Sq;

    fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        for _ in 0..200 {
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
            c = b - g * (b - a);
            d = a + g * (b - a);
        }
        0.5 * (a + b)
    }

    #[test]
    fn transform_examples() {
        assert_eq!(hs_perception_transform(0.0).unwrap(), 0.0);
        assert!((hs_perception_transform(1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        let rt = hs_perception_transform_inv(hs_perception_transform(0.37).unwrap()).unwrap();
        assert!((rt - 0.37).abs() < 1e-12);
        assert!(hs_perception_transform(2.0).is_err());
    }

    #[test]
    fn distortion_block_limits() {
        let d = optimal_distortion(W2, 1.0, 0.0, 1e12).unwrap();
        assert!(d < 1e-6 && d > 0.0);
        // P = lambda makes S degenerate for W2: the classical water level.
        assert!((optimal_distortion(W2, 1.0, 1.0, 2.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((optimal_distortion(W2, 1.0, 1.0, 0.1).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn distortion_block_matches_golden_section() {
        let lambda = [1.0, 3.0, 5.0];
        let got = solve_subproblem_d(W2, &lambda, &[0.01; 3], 0.5).unwrap();
        for (i, &l) in lambda.iter().enumerate() {
            let f = |d: f64| scalar_rdpf(W2, l, d, 0.01).unwrap().rate + 0.5 * d;
            let oracle = golden_min(f, 1e-9, 2.0 * l);
            assert!((got[i] - oracle).abs() < 1e-6, "{i}: {} vs {oracle}", got[i]);
        }
        for m in PerceptionMetric::ALL {
            for &(l, p, s1) in &[(1.0, 0.05, 0.3), (2.0, 0.2, 2.0), (0.5, 0.01, 5.0)] {
                let got = optimal_distortion(m, l, p, s1).unwrap();
                let f = |d: f64| scalar_rdpf(m, l, d, p).unwrap().rate + s1 * d;
                let oracle = golden_min(f, 1e-9, 2.0 * l);
                assert!((got - oracle).abs() < 1e-6, "{m} {l} {p} {s1}: {got} vs {oracle}");
            }
        }
    }

    #[test]
    fn perception_block_matches_dense_scan() {
        let (l, d, s2) = (1.0, 0.25, 0.5);
        let step = optimal_perception(W2, l, d, s2).unwrap();
        assert!(!step.inactive);
        assert!(step.residual.abs() <= 1e-9);
        let b = (1.0 - 0.75f64.sqrt()).powi(2);
        let tv = |p: f64| crate::scalar::drate_dp(W2, l, d, p).unwrap() + s2;
        let mut prev = 1e-8;
        let mut bracket = None;
        for k in 1..=10_000 {
            let p = 1e-8 + (b - 1e-8) * k as f64 / 10_000.0;
            if tv(prev) < 0.0 && tv(p) >= 0.0 {
                bracket = Some((prev, p));
                break;
            }
            prev = p;
        }
        let (mut lo, mut hi) = bracket.unwrap();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if tv(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((step.p - lo).abs() < 1e-10, "{} vs {lo}", step.p);
    }

    #[test]
    fn perception_block_limits() {
        let step = optimal_perception(W2, 1.0, 0.25, 1e9).unwrap();
        assert!(step.p < 1e-8);
        let step = optimal_perception(W2, 1.0, 2.5, 0.5).unwrap();
        assert!(step.inactive);
        assert_eq!(step.p, 0.0);
        let b = (1.0 - 0.75f64.sqrt()).powi(2);
        let step = optimal_perception(W2, 1.0, 0.25, 0.0).unwrap();
        assert!((step.p - b).abs() < 1e-15);
        for m in PerceptionMetric::ALL {
            let s = optimal_perception(m, 1.0, 1.0, 0.3).unwrap();
            assert!(s.p > 0.0 && s.p.is_finite(), "{m}");
            let s = optimal_perception(m, 2.0, 0.7, 0.05).unwrap();
            assert!(!s.inactive && s.residual.abs() < 1e-9, "{m} {}", s.residual);
        }
    }

    #[test]
    fn perfect_realism_examples() {
        let d = perfect_realism_allocation(&[1.0, 3.0, 5.0], 1e-9).unwrap();
        assert!((d.iter().sum::<f64>() - 18.0).abs() < 1e-3);
        let d = perfect_realism_allocation(&[1.0, 3.0, 5.0], 1e12).unwrap();
        assert!(d.iter().all(|&x| x < 1e-10 && x > 0.0));
        let lam = [1.0, 3.0, 5.0];
        let d = perfect_realism_allocation(&lam, 0.25).unwrap();
        let via_block = solve_subproblem_d(W2, &lam, &[0.0; 3], 0.25).unwrap();
        for i in 0..3 {
            assert!((d[i] - via_block[i]).abs() < 1e-12);
            let direct = 2.0 * lam[i] + 2.0 - (4.0 * lam[i] * lam[i] + 4.0f64).sqrt();
            assert!((d[i] - direct).abs() < 1e-12);
            assert!(d[i] < 2.0 * lam[i]);
        }
    }

    #[test]
    fn water_filling_examples() {
        let (d, r) = water_filling(&[1.0, 3.0, 5.0], 0.5).unwrap();
        assert_eq!(d, vec![1.0, 1.0, 1.0]);
        assert!((r - 0.5 * (3f64.ln() + 5f64.ln())).abs() < 1e-12);
        let (d, r) = water_filling(&[1.0, 3.0, 5.0], 0.1).unwrap();
        assert_eq!(d.iter().sum::<f64>(), 9.0);
        assert_eq!(r, 0.0);
        let (_, r1) = water_filling(&[1.0, 3.0, 5.0], 10.0).unwrap();
        let (_, r2) = water_filling(&[1.0, 3.0, 5.0], 100.0).unwrap();
        assert!(r2 > r1);
    }

    #[test]
    fn single_dimension_matches_scalar() {
        let src = GaussianSource::from_eigenvalues(&[2.0]).unwrap();
        for m in PerceptionMetric::ALL {
            let sol =
                alternating_minimization(&src, m, LagrangePair::new(0.7, 0.4).unwrap(), 1e-12, 500, None).unwrap();
            assert!(sol.trace.converged, "{m}");
            let s = scalar_rdpf(m, 2.0, sol.total_d, sol.total_p).unwrap();
            assert!((s.rate - sol.rate).abs() < 1e-12);
        }
    }

    #[test]
    fn large_s2_gives_perfect_realism() {
        let src = GaussianSource::from_eigenvalues(&[1.0, 3.0, 5.0]).unwrap();
        let sol = alternating_minimization(&src, W2, LagrangePair::new(0.5, 1e7).unwrap(), 1e-10, 500, None).unwrap();
        let pr = perfect_realism_allocation(&[5.0, 3.0, 1.0], 0.5).unwrap();
        for (d, p) in sol.allocation.d_alloc.iter().zip(&pr) {
            assert!((d - p).abs() < 1e-4);
        }
    }

    #[test]
    fn descent_and_kkt_on_reference_source() {
        let src = GaussianSource::from_eigenvalues(&[1.0, 3.0, 5.0]).unwrap();
        let sol = alternating_minimization(&src, W2, LagrangePair::new(0.5, 0.5).unwrap(), 1e-12, 2000, None).unwrap();
        assert!(sol.trace.converged);
        assert!(sol.trace.is_descending(), "ascent {}", sol.trace.max_ascent());
        for i in 0..3 {
            let (l, d, p) = (sol.eigvals[i], sol.allocation.d_alloc[i], sol.allocation.p_alloc[i]);
            let gd = crate::scalar::drate_dd(W2, l, d, p).unwrap() + 0.5;
            assert!(gd.abs() < 1e-6, "{i} {gd}");
            if !sol.inactive[i] {
                let gp = crate::scalar::drate_dp(W2, l, d, p).unwrap() + 0.5;
                assert!(gp.abs() < 1e-6, "{i} {gp}");
            }
        }
        // Realization reproduces the totals.
        assert!(sol.realization.commutator_with(&src) < 1e-8);
        assert!((sol.realization.mse(&src) - sol.total_d).abs() < 1e-8);
        let lam_hat: Vec<f64> = sol.realization.reconstruction_eigvals(&src).iter().copied().collect();
        let div = crate::divergence::divergence_commuting(W2, &sol.eigvals, &lam_hat).unwrap();
        assert!((div - sol.total_p).abs() < 1e-8);
    }

    #[test]
    fn initialization_invariance() {
        let src = GaussianSource::from_eigenvalues(&[1.0, 3.0, 5.0]).unwrap();
        for m in [W2, PerceptionMetric::HellingerSq, PerceptionMetric::KlDirect] {
            let lag = LagrangePair::new(0.5, 0.5).unwrap();
            let a = alternating_minimization(&src, m, lag, 1e-12, 5000, None).unwrap();
            let init = AllocationState { d_alloc: vec![3.0, 2.0, 0.5], p_alloc: vec![0.5, 0.1, 0.01], iteration: 0 };
            let b = alternating_minimization(&src, m, lag, 1e-12, 5000, Some(&init)).unwrap();
            assert!((a.total_d - b.total_d).abs() < 1e-6, "{m}");
            assert!((a.total_p - b.total_p).abs() < 1e-6, "{m}");
            assert!((a.rate - b.rate).abs() < 1e-6, "{m}");
        }
    }

    #[test]
    fn convergence_classification() {
        let geo = AlgorithmTrace { gaps: (0..30).map(|k| 0.5f64.powi(k)).collect(), ..Default::default() };
        assert_eq!(measure_convergence_rate(&geo).unwrap().class, ConvergenceClass::Linear);
        let sub = AlgorithmTrace { gaps: (1..200).map(|k| 1.0 / (k as f64).sqrt()).collect(), ..Default::default() };
        let rep = measure_convergence_rate(&sub).unwrap();
        assert_eq!(rep.class, ConvergenceClass::Sublinear);
        assert!((rep.loglog_slope + 0.5).abs() < 1e-9);
        let short = AlgorithmTrace { gaps: vec![1.0, 0.5], ..Default::default() };
        assert!(measure_convergence_rate(&short).is_err());
    }
}
