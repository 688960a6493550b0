use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::cli::config::{read_file, CommandKind, OutputFormat, RunConfig};
use crate::cli::output::{self, DimRecord, OutputRecord, TraceRecord};
use crate::divergence::PerceptionMetric;
use crate::error::{RdpError, Result};
use crate::models::{GaussianSource, ScalarGaussian};
use crate::multivariate::{self, LagrangePair};
use crate::oracle;
use crate::scalar;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Absolute tolerance used by `verify` when recomputing rates.
pub const VERIFY_TOL: f64 = 1e-9;

/// Records produced by one run plus the exit code they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub records: Vec<OutputRecord>,
    pub exit_code: i32,
}

impl RunOutcome {
    fn ok(records: Vec<OutputRecord>) -> Self {
        Self { records, exit_code: EXIT_OK }
    }
}

pub fn exit_code_for(err: &RdpError) -> i32 {
    if err.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_NUMERICAL
    }
}

/// Machine-readable error line written to stderr.
pub fn error_json(err: &RdpError) -> String {
    serde_json::json!({
        "status": "error",
        "kind": err.kind(),
        "message": err.to_string(),
        "exit_code": exit_code_for(err),
    })
    .to_string()
}

/// Validates the config and computes its records without touching the file system
/// beyond reading inputs.
pub fn compute(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    match cfg.command {
        CommandKind::Scalar => run_scalar(cfg).map(|r| RunOutcome::ok(vec![r])),
        CommandKind::Multivar => run_multivar(cfg),
        CommandKind::Sweep => run_sweep(cfg),
        CommandKind::PerfectRealism => run_perfect_realism(cfg).map(|r| RunOutcome::ok(vec![r])),
        CommandKind::Waterfill => run_waterfill(cfg).map(|r| RunOutcome::ok(vec![r])),
        CommandKind::Verify => run_verify(cfg),
    }
}

/// Runs the config and writes records (and the optional trace file).
///
/// Returns the exit code. Hard errors produce no records file.
pub fn execute(cfg: &RunConfig) -> Result<i32> {
    let outcome = compute(cfg)?;
    emit(cfg, &outcome.records)?;
    Ok(outcome.exit_code)
}

fn emit(cfg: &RunConfig, records: &[OutputRecord]) -> Result<()> {
    let write = |w: &mut dyn Write| match cfg.format {
        OutputFormat::Csv => output::write_csv(w, records),
        OutputFormat::Json => output::write_json(w, records),
    };
    match cfg.output_path() {
        Some(path) => {
            let mut f = BufWriter::new(create(&path)?);
            write(&mut f)?;
            f.flush().map_err(|e| io_err(&path, e))?;
        }
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    if let Some(path) = &cfg.trace {
        let mut f = BufWriter::new(create(path)?);
        output::write_trace_csv(&mut f, records)?;
        f.flush().map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

fn io_err(path: &Path, e: io::Error) -> RdpError {
    RdpError::Config(format!("cannot write {}: {e}", path.display()))
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    File::create(path).map_err(|e| io_err(path, e))
}

fn run_scalar(cfg: &RunConfig) -> Result<OutputRecord> {
    let metric = cfg.metric()?;
    let (var, d, p) = (cfg.var.unwrap_or_default(), cfg.dist.unwrap_or_default(), cfg.perc.unwrap_or_default());
    let sol = scalar::scalar_rdpf(metric, var, d, p)?;
    let mut r = OutputRecord::new(cfg.command.name(), Some(metric)).with_rate(sol.rate);
    r.d = Some(d);
    r.p = Some(p);
    r.region = Some(sol.region.name().to_string());
    r.dims = vec![DimRecord { d, p: Some(p), a: Some(sol.realization.gain), w: Some(sol.realization.noise_var) }];
    r.eigenvalues = vec![var];
    if cfg.mc_samples > 0 {
        let src = ScalarGaussian::centered(var)?;
        r.monte_carlo = Some(oracle::monte_carlo_scalar(metric, &src, &sol.realization, cfg.mc_samples, cfg.seed)?);
    }
    Ok(r)
}

fn multivar_record(
    cfg: &RunConfig,
    metric: PerceptionMetric,
    source: &GaussianSource,
    s1: f64,
    s2: f64,
) -> Result<OutputRecord> {
    let lagrange = LagrangePair::new(s1, s2)?.with_s2_floor(metric, cfg.s2_floor());
    let sol = multivariate::alternating_minimization(source, metric, lagrange, cfg.eps, cfg.max_iters, None)?;
    let mut r = OutputRecord::new(cfg.command.name(), Some(metric)).with_rate(sol.rate);
    r.s1 = Some(lagrange.s1);
    r.s2 = Some(lagrange.s2);
    r.d = Some(sol.total_d);
    r.p = Some(sol.total_p);
    r.region = Some(if sol.trace.converged { "converged" } else { "not_converged" }.to_string());
    r.iterations = Some(sol.trace.iterations_used);
    r.gap_final = sol.trace.gaps.last().copied();
    r.dims = (0..sol.eigvals.len())
        .map(|i| DimRecord {
            d: sol.allocation.d_alloc[i],
            p: Some(sol.allocation.p_alloc[i]),
            a: Some(sol.realization.gains[i]),
            w: Some(sol.realization.noise_vars[i]),
        })
        .collect();
    r.eigenvalues = sol.eigvals.clone();
    if cfg.trace.is_some() {
        r.trace =
            Some(TraceRecord { gaps: sol.trace.gaps.clone(), lagrangian_values: sol.trace.lagrangian_values.clone() });
    }
    if cfg.mc_samples > 0 {
        r.monte_carlo = Some(oracle::monte_carlo_vector(metric, source, &sol.realization, cfg.mc_samples, cfg.seed)?);
    }
    Ok(r)
}

fn run_multivar(cfg: &RunConfig) -> Result<RunOutcome> {
    let metric = cfg.metric()?;
    let source = cfg.load_source()?;
    let (s1, s2) = (cfg.s1.unwrap_or_default(), cfg.s2.unwrap_or_default());
    LagrangePair::new(s1, s2)?;
    match multivar_record(cfg, metric, &source, s1, s2) {
        Ok(mut r) => {
            if r.region.as_deref() == Some("not_converged") {
                r.status = "not_converged".into();
                r.message = format!("gap above eps = {} after {} iterations", cfg.eps, cfg.max_iters);
                return Ok(RunOutcome { records: vec![r], exit_code: EXIT_NUMERICAL });
            }
            Ok(RunOutcome::ok(vec![r]))
        }
        Err(e) if e.is_config() => Err(e),
        Err(e) => Ok(RunOutcome {
            records: vec![OutputRecord::failed(cfg.command.name(), Some(metric), Some(s1), Some(s2), &e)],
            exit_code: EXIT_NUMERICAL,
        }),
    }
}

fn sorted_grid(values: &[f64], name: &str) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(RdpError::Config(format!("{name} contains a non-finite value")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

fn run_sweep(cfg: &RunConfig) -> Result<RunOutcome> {
    let metric = cfg.metric()?;
    let source = cfg.load_source()?;
    let g1 = sorted_grid(cfg.s1_grid.as_deref().unwrap_or_default(), "s1_grid")?;
    let g2 = sorted_grid(cfg.s2_grid.as_deref().unwrap_or_default(), "s2_grid")?;
    let points: Vec<(f64, f64)> = g1.iter().flat_map(|&a| g2.iter().map(move |&b| (a, b))).collect();
    let records = points
        .par_iter()
        .map(|&(s1, s2)| {
            multivar_record(cfg, metric, &source, s1, s2).unwrap_or_else(|e| {
                log::warn!("sweep point s1 = {s1}, s2 = {s2} failed: {e}");
                OutputRecord::failed(cfg.command.name(), Some(metric), Some(s1), Some(s2), &e)
            })
        })
        .collect();
    Ok(RunOutcome::ok(records))
}

fn run_perfect_realism(cfg: &RunConfig) -> Result<OutputRecord> {
    let lambda = cfg.eigenvalues()?;
    let s1 = cfg.s1.unwrap_or_default();
    let alloc = multivariate::perfect_realism_allocation(&lambda, s1)?;
    let mut r = OutputRecord::new(cfg.command.name(), None);
    let mut rate = 0.0;
    for (&l, &d) in lambda.iter().zip(&alloc) {
        rate += scalar::perfect_realism_rate(l, d)?;
        let sol = scalar::scalar_rdpf(PerceptionMetric::Wasserstein2Sq, l, d, 0.0)?;
        r.dims.push(DimRecord { d, p: Some(0.0), a: Some(sol.realization.gain), w: Some(sol.realization.noise_var) });
    }
    r = r.with_rate(rate);
    r.s1 = Some(s1);
    r.d = Some(alloc.iter().sum());
    r.p = Some(0.0);
    r.region = Some("perfect_realism".into());
    r.eigenvalues = lambda;
    Ok(r)
}

fn run_waterfill(cfg: &RunConfig) -> Result<OutputRecord> {
    let lambda = cfg.eigenvalues()?;
    let s1 = cfg.s1.unwrap_or_default();
    let (alloc, rate) = multivariate::water_filling(&lambda, s1)?;
    let mut r = OutputRecord::new(cfg.command.name(), None).with_rate(rate);
    r.s1 = Some(s1);
    r.d = Some(alloc.iter().sum());
    r.region = Some("classical".into());
    r.dims = lambda
        .iter()
        .zip(&alloc)
        .map(|(&l, &d)| {
            let a = 1.0 - d / l;
            DimRecord { d, p: None, a: Some(a), w: Some(a * d) }
        })
        .collect();
    r.eigenvalues = lambda;
    Ok(r)
}

/// Rate implied by a record's own per-dimension allocation.
pub fn recompute_rate(r: &OutputRecord) -> Result<f64> {
    let missing = |what: &str| RdpError::Config(format!("record for '{}' has no {what}", r.command));
    if r.eigenvalues.is_empty() || r.dims.len() != r.eigenvalues.len() {
        return Err(missing("complete per-dimension allocation"));
    }
    let pairs = r.eigenvalues.iter().zip(&r.dims);
    match r.command.as_str() {
        "scalar" | "multivar" | "sweep" => {
            let metric = r.metric.ok_or_else(|| missing("metric"))?;
            pairs.map(|(&l, g)| Ok(scalar::scalar_rdpf(metric, l, g.d, g.p.ok_or_else(|| missing("P_i"))?)?.rate)).sum()
        }
        "perfect-realism" => pairs.map(|(&l, g)| scalar::perfect_realism_rate(l, g.d)).sum(),
        "waterfill" => pairs.map(|(&l, g)| scalar::classical_rate(l, g.d)).sum(),
        other => Err(RdpError::Config(format!("cannot verify records of command '{other}'"))),
    }
}

fn run_verify(cfg: &RunConfig) -> Result<RunOutcome> {
    let path = cfg.input.as_deref().unwrap_or(Path::new(""));
    let records = output::read_records(&read_file(path)?)?;
    let mut exit_code = EXIT_OK;
    let mut out = Vec::with_capacity(records.len());
    for rec in records.iter().filter(|r| r.is_ok()) {
        let mut v = OutputRecord::new(cfg.command.name(), rec.metric);
        v.s1 = rec.s1;
        v.s2 = rec.s2;
        v.d = rec.d;
        v.p = rec.p;
        v.region = Some(rec.command.clone());
        v.eigenvalues = rec.eigenvalues.clone();
        match (recompute_rate(rec), rec.r_nats) {
            (Ok(rate), Some(stored)) => {
                v = v.with_rate(rate);
                let diff = (rate - stored).abs();
                if diff > VERIFY_TOL {
                    v.status = "mismatch".into();
                    v.message = format!("stored R = {stored}, recomputed R = {rate}");
                    exit_code = EXIT_NUMERICAL;
                } else {
                    v.message = format!("|dR| = {diff:e}");
                }
            }
            (Ok(_), None) => return Err(RdpError::Config("record with status ok has no R_nats".into())),
            (Err(e), _) if e.is_config() => return Err(e),
            (Err(e), _) => {
                v.status = e.kind().to_string();
                v.message = e.to_string();
                exit_code = EXIT_NUMERICAL;
            }
        }
        out.push(v);
    }
    Ok(RunOutcome { records: out, exit_code })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> RunConfig {
        RunConfig::from_json(json).unwrap()
    }

    #[test]
    fn waterfill_hand_value() {
        let out = compute(&cfg(r#"{"command": "waterfill", "eigs": [1, 3, 5], "s1": 0.5}"#)).unwrap();
        let r = &out.records[0];
        assert!((r.d.unwrap() - 3.0).abs() < 1e-12);
        assert!((r.r_nats.unwrap() - 0.5 * (3f64.ln() + 5f64.ln())).abs() < 1e-12);
        assert!((recompute_rate(r).unwrap() - r.r_nats.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn perfect_realism_limit() {
        let out = compute(&cfg(r#"{"command": "perfect-realism", "eigs": [1, 3, 5], "s1": 1e-9}"#)).unwrap();
        assert!((out.records[0].d.unwrap() - 18.0).abs() < 1e-3);
    }

    #[test]
    fn scalar_matches_library() {
        let out =
            compute(&cfg(r#"{"command": "scalar", "metric": "w2", "var": 1, "dist": 0.25, "perc": 0.01}"#)).unwrap();
        let sol = scalar::scalar_rdpf(PerceptionMetric::Wasserstein2Sq, 1.0, 0.25, 0.01).unwrap();
        let r = &out.records[0];
        assert_eq!(r.r_nats, Some(sol.rate));
        assert_eq!(r.region.as_deref(), Some("case_iii"));
    }

    #[test]
    fn sweep_sorted_and_floored() {
        let out = compute(&cfg(r#"{"command": "sweep", "metric": "kl", "eigs": [1, 3],
                "s1_grid": [0.5, 0.1, 0.5], "s2_grid": [0.0, 1.0]}"#))
        .unwrap();
        let keys: Vec<(f64, f64)> = out.records.iter().map(|r| (r.s1.unwrap(), r.s2.unwrap())).collect();
        assert_eq!(keys, vec![(0.1, 1e-3), (0.1, 1.0), (0.5, 1e-3), (0.5, 1.0)]);
        assert!(out.records.iter().all(|r| r.is_ok()));
    }

    #[test]
    fn non_convergence_exits_numerical() {
        let out = compute(&cfg(
            r#"{"command": "multivar", "metric": "w2", "eigs": [1, 3, 5], "s1": 0.5, "s2": 0.5, "max_iters": 1}"#,
        ))
        .unwrap();
        assert_eq!(out.exit_code, EXIT_NUMERICAL);
        assert_eq!(out.records[0].status, "not_converged");
    }
}
