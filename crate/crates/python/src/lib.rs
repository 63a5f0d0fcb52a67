//! Python module `pytpdv`: experiment runs and quadratic saddle problems.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use tpdv_core::bench::{self, make_quadratic_saddle, ProblemKind, QuadraticSaddleSpec, RunConfig, ScaleMode};
use tpdv_core::darcy::Variant;
use tpdv_core::error::Error;
use tpdv_core::tpdv::ParamMode;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn problem_kind(name: &str) -> PyResult<ProblemKind> {
    match name {
        "quadratic" => Ok(ProblemKind::Quadratic),
        "darcy" => Ok(ProblemKind::Darcy),
        "flow" => Ok(ProblemKind::Flow),
        other => Err(PyValueError::new_err(format!("problem: unknown value {other:?}"))),
    }
}

fn variant(name: &str) -> PyResult<Variant> {
    match name {
        "tpdv" => Ok(Variant::Tpdv),
        "tpdv-imex" => Ok(Variant::TpdvImex),
        "uzawa" => Ok(Variant::Uzawa),
        other => Err(PyValueError::new_err(format!("algo: unknown value {other:?}"))),
    }
}

fn param_mode(name: &str) -> PyResult<ParamMode> {
    match name {
        "practical" => Ok(ParamMode::Practical),
        "theoretical" => Ok(ParamMode::Theoretical),
        other => Err(PyValueError::new_err(format!("param_mode: unknown value {other:?}"))),
    }
}

/// Runs one experiment, writes its CSV files and returns a summary dict with
/// `status`, `success`, `lines`, `iterations`, `report` and `artifacts`.
#[pyfunction]
#[pyo3(signature = (
    problem = "quadratic", algo = "tpdv", param_mode = None, n = vec![64], dim = 10, mdim = 4, cond = 4.0,
    alpha = None, gamma = None, tol = 1e-6, max_iter = None, mg_cycles = 1, seed = 0, output = None,
    flow_tend = 10.0, flow_dt = 1e-3
))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    problem: &str,
    algo: &str,
    param_mode: Option<&str>,
    n: Vec<usize>,
    dim: usize,
    mdim: usize,
    cond: f64,
    alpha: Option<f64>,
    gamma: Option<f64>,
    tol: f64,
    max_iter: Option<usize>,
    mg_cycles: usize,
    seed: u64,
    output: Option<PathBuf>,
    flow_tend: f64,
    flow_dt: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let config = RunConfig {
        problem: problem_kind(problem)?,
        algo: variant(algo)?,
        param_mode: param_mode.map(self::param_mode).transpose()?,
        n,
        dim,
        mdim,
        cond,
        alpha,
        gamma,
        tol,
        max_iter,
        mg_cycles,
        seed,
        output,
        flow_tend,
        flow_dt,
        ..RunConfig::default()
    };
    let summary = py.detach(|| bench::run(&config)).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("status", summary.status.to_string())?;
    out.set_item("success", summary.success())?;
    out.set_item("lines", summary.lines.clone())?;
    out.set_item("iterations", summary.records.iter().map(|r| r.iterations()).collect::<Vec<_>>())?;
    out.set_item("report", if summary.records.is_empty() { String::new() } else { bench::report(&summary.records) })?;
    out.set_item("decay_violations", summary.decay.as_ref().map(|d| d.violations))?;
    out.set_item("artifacts", summary.artifacts.iter().map(|p| p.to_string_lossy().into_owned()).collect::<Vec<_>>())?;
    Ok(out)
}

/// Draws a quadratic saddle problem and returns `A`, `c`, `B`, `b` as nested
/// lists together with the exact solution `ustar`, `pstar`.
#[pyfunction]
#[pyo3(signature = (n, m, cond, seed = 0, unit_mu = true))]
fn quadratic_saddle<'py>(py: Python<'py>, n: usize, m: usize, cond: f64, seed: u64, unit_mu: bool) -> PyResult<Bound<'py, PyDict>> {
    let spec = QuadraticSaddleSpec { n, m, cond_a: cond, seed, scale_mode: if unit_mu { ScaleMode::UnitMu } else { ScaleMode::Raw } };
    let q = make_quadratic_saddle(&spec).map_err(to_py)?;
    let rows = |a: &DMatrix<f64>| -> Vec<Vec<f64>> {
        a.row_iter().map(|r| r.iter().copied().collect()).collect()
    };
    let out = PyDict::new(py);
    out.set_item("A", rows(q.f.hessian()))?;
    out.set_item("c", q.f.linear().to_vec())?;
    out.set_item("B", rows(&q.b_dense))?;
    out.set_item("b", q.problem.rhs.clone())?;
    out.set_item("ustar", q.ustar.clone())?;
    out.set_item("pstar", q.pstar.clone())?;
    out.set_item("iv_scale", q.iv_scale)?;
    out.set_item("seed", q.seed)?;
    Ok(out)
}

#[pymodule]
fn pytpdv(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(quadratic_saddle, m)?)?;
    m.add("OUTPUT_DIR_ENV", bench::OUTPUT_DIR_ENV)?;
    Ok(())
}
