use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use curveflow::config::load_config;
use curveflow::flow::{run_flow, solve_stationary, FlowConfig, FlowRun, RunStatus};
use curveflow::presets::SphereCap;
use curveflow::symfunc::{check_structure, CurvatureFunction, Family};
use curveflow::Error;

create_exception!(curveflow_py, FlowBreakdown, PyException);
create_exception!(curveflow_py, IncompatibleInitialData, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::FlowBreakdown { .. } | Error::ConeViolation { .. } | Error::LinearSolve(_) => {
            FlowBreakdown::new_err(e.to_string())
        }
        Error::IncompatibleInitialData { .. } => IncompatibleInitialData::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn status_name(s: RunStatus) -> &'static str {
    match s {
        RunStatus::Converged => "converged",
        RunStatus::Timeout => "timeout",
    }
}

fn cap_error(run_value: impl Fn(usize) -> f64, run: &FlowRun) -> f64 {
    let cap = SphereCap::default();
    let g = run.engine.grid();
    (0..g.n_owned())
        .map(|i| (run_value(i) - cap.exact(g.position(i))).abs())
        .fold(0.0, f64::max)
}

fn run_dict<'py>(py: Python<'py>, run: &FlowRun) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("status", status_name(run.status))?;
    d.set_item("steps", run.final_state.step)?;
    d.set_item("t", run.final_state.t())?;
    d.set_item("residual", run.final_state.residual())?;
    d.set_item("values", run.final_state.u.absolute())?;
    let checks = PyDict::new(py);
    for (name, ok, _) in run.summary.lines() {
        checks.set_item(name, ok)?;
    }
    d.set_item("checks", checks)?;
    Ok(d)
}

/// Runs the sphere-cap flow and returns a dict with the status, the final
/// values, the invariant checks and the sup error against the exact cap.
#[pyfunction]
#[pyo3(signature = (n_rho=32, n_theta=32, tol=1e-6))]
fn run_sphere_cap(py: Python<'_>, n_rho: usize, n_theta: usize, tol: f64) -> PyResult<Bound<'_, PyDict>> {
    let mut cfg = FlowConfig::sphere_cap(n_rho, n_theta).map_err(to_py)?;
    cfg.tol_res = tol;
    let run = py.detach(|| run_flow(&cfg)).map_err(to_py)?;
    let d = run_dict(py, &run)?;
    d.set_item("cap_error", cap_error(|i| run.final_state.u.value(i), &run))?;
    Ok(d)
}

/// Runs the flow described by a TOML configuration file.
#[pyfunction]
fn run_config(py: Python<'_>, path: PathBuf) -> PyResult<Bound<'_, PyDict>> {
    let rc = load_config(&path).map_err(to_py)?;
    rc.validate().map_err(to_py)?;
    let run = py.detach(|| run_flow(&rc.flow)).map_err(to_py)?;
    run_dict(py, &run)
}

/// Solves the stationary sphere-cap problem; returns `(residual, cap_error)`.
#[pyfunction]
#[pyo3(signature = (n_rho=32, n_theta=32, tol=1e-6))]
fn stationary_sphere_cap(py: Python<'_>, n_rho: usize, n_theta: usize, tol: f64) -> PyResult<(f64, f64)> {
    let mut cfg = FlowConfig::sphere_cap(n_rho, n_theta).map_err(to_py)?;
    cfg.tol_res = tol;
    let (st, run) = py
        .detach(|| Ok::<_, Error>((solve_stationary(&cfg)?, run_flow(&cfg)?)))
        .map_err(to_py)?;
    Ok((st.residual, cap_error(|i| st.field.value(i), &run)))
}

/// Structure checks of a curvature function as `(label, passed, worst)` rows.
#[pyfunction]
#[pyo3(signature = (family, n, order, samples=1000, seed=0))]
fn structure_report(
    family: &str,
    n: usize,
    order: usize,
    samples: usize,
    seed: u64,
) -> PyResult<Vec<(String, bool, f64)>> {
    let family = match family {
        "combined" => Family::Combined { l: order },
        "quotient" => Family::Quotient { l: order },
        "kth_root" => Family::KthRoot { k: order },
        other => return Err(PyValueError::new_err(format!("unknown family `{other}`"))),
    };
    let f = CurvatureFunction::new(family, n).map_err(to_py)?;
    Ok(check_structure(&f, samples, seed)
        .rows
        .into_iter()
        .map(|r| (r.condition.label().to_string(), r.passed, r.worst))
        .collect())
}

#[pymodule]
fn curveflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("FlowBreakdown", m.py().get_type::<FlowBreakdown>())?;
    m.add("IncompatibleInitialData", m.py().get_type::<IncompatibleInitialData>())?;
    m.add_function(wrap_pyfunction!(run_sphere_cap, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(stationary_sphere_cap, m)?)?;
    m.add_function(wrap_pyfunction!(structure_report, m)?)?;
    Ok(())
}
