//! Python bindings. Matrices are lists of rows; signals are lists of rows with
//! one column per time step. Index values come back as `int`, `"inf"` or `">K"`.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use secidx::data_index::DataIndexer;
use secidx::hankel::{build_blocks, is_persistently_exciting};
use secidx::linsys::{build_platoon, generate_excitation};
use secidx::{model_index, ComponentLayout, Error, IndexValue, LtiSystem, PlatoonConfig, Trajectory};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Dimension { .. } | Error::NotAComponent(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{what}: rows have different lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn value<'py>(py: Python<'py>, v: IndexValue) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        IndexValue::Finite(k) => k.into_pyobject(py)?.into_any(),
        other => other.to_string().into_pyobject(py)?.into_any(),
    })
}

fn labels(layout: &ComponentLayout, set: &[usize]) -> Vec<String> {
    set.iter().map(|&j| layout.label(j)).collect()
}

fn data_setup(u: Vec<Vec<f64>>, y: Vec<Vec<f64>>, l: usize, nu: usize) -> PyResult<(ComponentLayout, secidx::hankel::HankelBlocks)> {
    let traj = Trajectory::new(matrix(&u, "u")?, matrix(&y, "y")?).map_err(py_err)?;
    let layout = ComponentLayout::new(traj.m(), traj.p(), nu).map_err(py_err)?;
    let blocks = build_blocks(&traj, l, &layout).map_err(py_err)?;
    Ok((layout, blocks))
}

/// Model-based index of every component: `{label: (value, witness set)}`.
#[pyfunction]
#[pyo3(signature = (a, b, c, nu = 0, max_card = None))]
fn delta<'py>(
    py: Python<'py>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    nu: usize,
    max_card: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let sys = LtiSystem::new(matrix(&a, "A")?, matrix(&b, "B")?, matrix(&c, "C")?).map_err(py_err)?;
    let layout = ComponentLayout::for_system(&sys, nu).map_err(py_err)?;
    let out = PyDict::new(py);
    for i in layout.components() {
        let r = model_index::delta(&sys, &layout, i, max_card).map_err(py_err)?;
        let set = r.witness_set.as_deref().map(|s| labels(&layout, s));
        out.set_item(layout.label(i), (value(py, r.value)?, set))?;
    }
    Ok(out)
}

/// Data-driven index and its greedy bound: `{label: (rho, rho_upper)}`.
#[pyfunction]
#[pyo3(signature = (u, y, l, nu = 0, max_card = None))]
fn rho<'py>(
    py: Python<'py>,
    u: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    l: usize,
    nu: usize,
    max_card: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let (layout, blocks) = data_setup(u, y, l, nu)?;
    let idx = DataIndexer::new(&blocks).map_err(py_err)?.with_cache();
    let out = PyDict::new(py);
    for i in layout.components() {
        let r = idx.rho(i, max_card).map_err(py_err)?;
        let ub = idx.rho_upper(i).map_err(py_err)?;
        out.set_item(layout.label(i), (value(py, r.value)?, value(py, ub.value)?))?;
    }
    Ok(out)
}

/// `(exciting, rank, needed)` for the block Hankel matrix of `u` at depth `order`.
#[pyfunction]
fn pe_check(u: Vec<Vec<f64>>, order: usize) -> PyResult<(bool, usize, usize)> {
    let pe = is_persistently_exciting(&matrix(&u, "u")?, order);
    Ok((pe.exciting, pe.rank, pe.needed))
}

/// Platoon model and a persistently exciting record: `{A, B, C, u, y}`.
#[pyfunction]
#[pyo3(signature = (vehicles, n_samples = 200, l = 10, seed = 0))]
fn platoon<'py>(py: Python<'py>, vehicles: usize, n_samples: usize, l: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let cfg = PlatoonConfig {
        n_vehicles: vehicles,
        n_samples,
        seed,
        ..Default::default()
    };
    let (sys, _) = build_platoon(&cfg).map_err(py_err)?;
    let ex = generate_excitation(&sys, &cfg, sys.n() + 2 * l).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("A", rows(sys.a()))?;
    out.set_item("B", rows(sys.b()))?;
    out.set_item("C", rows(sys.c()))?;
    out.set_item("u", rows(&ex.trajectory.u))?;
    out.set_item("y", rows(&ex.trajectory.y))?;
    Ok(out)
}

/// Data witness for `(gamma, component)`: constraint residuals and the attack rows.
#[pyfunction]
#[pyo3(signature = (u, y, l, gamma, component, nu = 0, horizon = None))]
#[allow(clippy::too_many_arguments)]
fn witness<'py>(
    py: Python<'py>,
    u: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    l: usize,
    gamma: Vec<String>,
    component: &str,
    nu: usize,
    horizon: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let (layout, blocks) = data_setup(u, y, l, nu)?;
    let gamma: Vec<usize> = gamma.iter().map(|g| layout.parse_label(g)).collect::<Result<_, _>>().map_err(py_err)?;
    let i = layout.parse_label(component).map_err(py_err)?;
    let w = DataIndexer::new(&blocks)
        .and_then(|idx| idx.witness(&gamma, i, horizon))
        .map_err(py_err)?;
    let res = w.residuals(&blocks).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("max_residual", res.max_violation())?;
    out.set_item("active", res.active)?;
    out.set_item("active_step", w.active_step)?;
    out.set_item("support", labels(&layout, &w.attack.support))?;
    out.set_item("attack", rows(&w.attack.a))?;
    Ok(out)
}

#[pymodule]
fn secidx_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(delta, m)?)?;
    m.add_function(wrap_pyfunction!(rho, m)?)?;
    m.add_function(wrap_pyfunction!(pe_check, m)?)?;
    m.add_function(wrap_pyfunction!(platoon, m)?)?;
    m.add_function(wrap_pyfunction!(witness, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
