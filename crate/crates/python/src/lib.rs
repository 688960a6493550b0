//! Python bindings. Metrics are passed by their short names
//! (`kl`, `rkl`, `gjs`, `h2`, `w2`).

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gaussrdp::cli::{config::RunConfig, output, run};
use gaussrdp::divergence::{self, PerceptionMetric};
use gaussrdp::models::GaussianSource;
use gaussrdp::multivariate::{self, LagrangePair, DEFAULT_S2_FLOOR};
use gaussrdp::special::{self, Branch};
use gaussrdp::RdpError;

fn to_py(e: RdpError) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn metric(name: &str) -> PyResult<PerceptionMetric> {
    name.parse().map_err(to_py)
}

/// Closed-form scalar solution.
#[pyclass(frozen, get_all, skip_from_py_object, module = "pygaussrdp")]
#[derive(Clone)]
pub struct ScalarSolution {
    pub metric: String,
    pub var_x: f64,
    pub distortion: f64,
    pub perception: f64,
    /// Rate in nats.
    pub rate: f64,
    pub rate_bits: f64,
    /// `case_i`, `case_ii` or `case_iii`.
    pub region: String,
    pub gain: f64,
    pub noise_var: f64,
}

#[pymethods]
impl ScalarSolution {
    fn __repr__(&self) -> String {
        format!(
            "ScalarSolution(metric='{}', D={}, P={}, rate={}, region='{}')",
            self.metric, self.distortion, self.perception, self.rate, self.region
        )
    }
}

/// Alternating-minimization result on a diagonal source.
#[pyclass(frozen, get_all, skip_from_py_object, module = "pygaussrdp")]
#[derive(Clone)]
pub struct MultiSolution {
    pub metric: String,
    pub s1: f64,
    pub s2: f64,
    pub eigenvalues: Vec<f64>,
    pub total_d: f64,
    pub total_p: f64,
    pub rate: f64,
    pub rate_bits: f64,
    pub lagrangian: f64,
    pub d_alloc: Vec<f64>,
    pub p_alloc: Vec<f64>,
    pub gains: Vec<f64>,
    pub noise_vars: Vec<f64>,
    pub regions: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    pub gaps: Vec<f64>,
    pub lagrangian_values: Vec<f64>,
}

#[pymethods]
impl MultiSolution {
    fn __repr__(&self) -> String {
        format!(
            "MultiSolution(metric='{}', D={}, P={}, rate={}, converged={})",
            self.metric, self.total_d, self.total_p, self.rate, self.converged
        )
    }
}

#[pyfunction]
fn scalar_rdpf(metric_name: &str, var_x: f64, d: f64, p: f64) -> PyResult<ScalarSolution> {
    let s = gaussrdp::scalar_rdpf(metric(metric_name)?, var_x, d, p).map_err(to_py)?;
    Ok(ScalarSolution {
        metric: s.metric.name().to_string(),
        var_x: s.var_x,
        distortion: s.distortion,
        perception: s.perception,
        rate: s.rate,
        rate_bits: s.rate_bits(),
        region: s.region.name().to_string(),
        gain: s.realization.gain,
        noise_var: s.realization.noise_var,
    })
}

#[pyfunction]
fn divergence_scalar(metric_name: &str, var_x: f64, var_xhat: f64) -> PyResult<f64> {
    divergence::divergence_scalar(metric(metric_name)?, var_x, var_xhat).map_err(to_py)
}

/// Lower root `t` of `d(var_x, v) = p`, returned as `(ratio, gap)` with
/// `t = ratio * var_x` and `gap = 1 - ratio`.
#[pyfunction]
fn perception_floor(metric_name: &str, var_x: f64, p: f64) -> PyResult<(f64, f64)> {
    let f = divergence::perception_floor(metric(metric_name)?, var_x, p).map_err(to_py)?;
    Ok((f.ratio, f.gap))
}

#[pyfunction]
#[pyo3(signature = (x, branch = "principal"))]
fn lambert_w(x: f64, branch: &str) -> PyResult<f64> {
    let b = match branch {
        "principal" | "0" => Branch::Principal,
        "secondary" | "-1" => Branch::Secondary,
        other => return Err(PyValueError::new_err(format!("unknown branch '{other}'"))),
    };
    special::lambert_w(x, b).map(|r| r.value).map_err(to_py)
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (metric_name, eigenvalues, s1, s2, eps = 1e-9, max_iters = 10_000, s2_min = DEFAULT_S2_FLOOR))]
fn alternating_minimization(
    py: Python<'_>,
    metric_name: &str,
    eigenvalues: Vec<f64>,
    s1: f64,
    s2: f64,
    eps: f64,
    max_iters: usize,
    s2_min: f64,
) -> PyResult<MultiSolution> {
    let m = metric(metric_name)?;
    let source = GaussianSource::from_eigenvalues(&eigenvalues).map_err(to_py)?;
    let lagrange = LagrangePair::new(s1, s2).map_err(to_py)?.with_s2_floor(m, s2_min);
    let sol = py
        .detach(|| multivariate::alternating_minimization(&source, m, lagrange, eps, max_iters, None))
        .map_err(to_py)?;
    Ok(MultiSolution {
        metric: m.name().to_string(),
        s1: lagrange.s1,
        s2: lagrange.s2,
        eigenvalues: sol.eigvals.clone(),
        total_d: sol.total_d,
        total_p: sol.total_p,
        rate: sol.rate,
        rate_bits: sol.rate_bits(),
        lagrangian: sol.lagrangian(),
        d_alloc: sol.allocation.d_alloc.clone(),
        p_alloc: sol.allocation.p_alloc.clone(),
        gains: sol.realization.gains.iter().copied().collect(),
        noise_vars: sol.realization.noise_vars.iter().copied().collect(),
        regions: sol.regions.iter().map(|r| r.name().to_string()).collect(),
        converged: sol.trace.converged,
        iterations: sol.trace.iterations_used,
        gaps: sol.trace.gaps.clone(),
        lagrangian_values: sol.trace.lagrangian_values.clone(),
    })
}

/// Reverse water-filling; returns `(allocation, rate_nats)`.
#[pyfunction]
fn water_filling(eigenvalues: Vec<f64>, s1: f64) -> PyResult<(Vec<f64>, f64)> {
    multivariate::water_filling(&eigenvalues, s1).map_err(to_py)
}

#[pyfunction]
fn perfect_realism_allocation(eigenvalues: Vec<f64>, s1: f64) -> PyResult<Vec<f64>> {
    multivariate::perfect_realism_allocation(&eigenvalues, s1).map_err(to_py)
}

/// Runs a JSON run configuration and returns the records document as JSON.
#[pyfunction]
fn run_config(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg = RunConfig::from_json(config_json).map_err(to_py)?;
    let outcome = py.detach(|| run::compute(&cfg)).map_err(to_py)?;
    let mut buf = Vec::new();
    output::write_json(&mut buf, &outcome.records).map_err(to_py)?;
    String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn pygaussrdp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ScalarSolution>()?;
    m.add_class::<MultiSolution>()?;
    m.add_function(wrap_pyfunction!(scalar_rdpf, m)?)?;
    m.add_function(wrap_pyfunction!(divergence_scalar, m)?)?;
    m.add_function(wrap_pyfunction!(perception_floor, m)?)?;
    m.add_function(wrap_pyfunction!(lambert_w, m)?)?;
    m.add_function(wrap_pyfunction!(alternating_minimization, m)?)?;
    m.add_function(wrap_pyfunction!(water_filling, m)?)?;
    m.add_function(wrap_pyfunction!(perfect_realism_allocation, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add("METRICS", PerceptionMetric::ALL.iter().map(|m| m.name()).collect::<Vec<_>>())?;
    Ok(())
}
