//! Python bindings for `fokker-core`.
//!
//! Worldlines are passed as lists of 4-vectors (or 3-vectors for the spatial
//! paths of the modified theory) together with their total proper time.
//! Results come back as plain dictionaries.

use fokker_core::action::{self, ModelParams, Mode};
use fokker_core::checks;
use fokker_core::grid::{Endpoints, GridSpec, Worldline};
use fokker_core::kernel;
use fokker_core::modified::{self, ClockBoundary, ClockProblem, ModifiedEndpoints, SolverOptions, SpatialPath};
use fokker_core::propagator::{self, EstimatorConfig, PropagatorEstimate, ProperTimeGrid};
use fokker_core::{FokkerError, Vec4};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(err: FokkerError) -> PyErr {
    match err {
        FokkerError::NonConvergence { .. } | FokkerError::TooManySkipped { .. } => PyRuntimeError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Physical parameters of the two-particle model.
#[pyclass(name = "ModelParams", frozen)]
struct PyModelParams {
    inner: ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (m1, m2, coupling, delta_width, hbar = 1.0, mode = "euclidean"))]
    fn new(m1: f64, m2: f64, coupling: f64, delta_width: f64, hbar: f64, mode: &str) -> PyResult<Self> {
        let mode: Mode = mode.parse().map_err(PyValueError::new_err)?;
        let inner = ModelParams::new(m1, m2, coupling, hbar, delta_width, mode).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn m1(&self) -> f64 {
        self.inner.m1
    }

    #[getter]
    fn m2(&self) -> f64 {
        self.inner.m2
    }

    #[getter]
    fn coupling(&self) -> f64 {
        self.inner.coupling
    }

    #[getter]
    fn hbar(&self) -> f64 {
        self.inner.hbar
    }

    #[getter]
    fn delta_width(&self) -> f64 {
        self.inner.delta_width
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode {
            Mode::Euclidean => "euclidean",
            Mode::Minkowski => "minkowski",
        }
    }

    fn with_coupling(&self, coupling: f64) -> Self {
        Self {
            inner: self.inner.with_coupling(coupling),
        }
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "ModelParams(m1={}, m2={}, coupling={}, delta_width={}, hbar={}, mode='{}')",
            p.m1,
            p.m2,
            p.coupling,
            p.delta_width,
            p.hbar,
            self.mode()
        )
    }
}

fn worldline(nodes: Vec<[f64; 4]>, s_total: f64, particle: u8) -> PyResult<Worldline> {
    if nodes.len() < 2 {
        return Err(PyValueError::new_err("a worldline needs at least two nodes"));
    }
    let grid = GridSpec::new(nodes.len() - 1, s_total).map_err(to_py)?;
    Worldline::new(grid, nodes, particle).map_err(to_py)
}

fn spatial_worldline(nodes: Vec<[f64; 3]>, s_total: f64, particle: u8) -> PyResult<Worldline<3>> {
    if nodes.len() < 2 {
        return Err(PyValueError::new_err("a worldline needs at least two nodes"));
    }
    let grid = GridSpec::new(nodes.len() - 1, s_total).map_err(to_py)?;
    Worldline::new(grid, nodes, particle).map_err(to_py)
}

fn estimate_dict<'py>(py: Python<'py>, e: &PropagatorEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("ratio_mean", e.ratio_mean)?;
    d.set_item("ratio_stderr", e.ratio_stderr)?;
    d.set_item("free_reference", e.free_reference)?;
    d.set_item("value", e.value)?;
    d.set_item("n_samples", e.n_samples)?;
    d.set_item("skipped", e.skipped)?;
    Ok(d)
}

/// Euclidean free kernel in `len(x_in)` dimensions.
#[pyfunction]
#[pyo3(signature = (x_in, x_out, s, m, hbar = 1.0))]
fn free_kernel_analytic(x_in: Vec<f64>, x_out: Vec<f64>, s: f64, m: f64, hbar: f64) -> PyResult<f64> {
    propagator::free_kernel_analytic(&x_in, &x_out, s, m, hbar).map_err(to_py)
}

/// Closed-form proper-time integral of the free kernel (modified Bessel function).
#[pyfunction]
#[pyo3(signature = (r, m, hbar = 1.0, d = 4))]
fn free_proper_time_integral(r: f64, m: f64, hbar: f64, d: usize) -> PyResult<f64> {
    propagator::free_proper_time_integral(r, m, hbar, d).map_err(to_py)
}

/// Lattice Fokker action split into its three terms.
#[pyfunction]
fn fokker_action<'py>(
    py: Python<'py>,
    nodes1: Vec<[f64; 4]>,
    s1: f64,
    nodes2: Vec<[f64; 4]>,
    s2: f64,
    params: &PyModelParams,
) -> PyResult<Bound<'py, PyDict>> {
    let terms = action::action_terms(&worldline(nodes1, s1, 1)?, &worldline(nodes2, s2, 2)?, &params.inner).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("kinetic1", terms.kinetic1)?;
    d.set_item("kinetic2", terms.kinetic2)?;
    d.set_item("interaction", terms.interaction)?;
    d.set_item("total", terms.total())?;
    Ok(d)
}

/// `det M`, `det A` and `√det A` of the coupling operator.
#[pyfunction]
fn measure_determinants<'py>(
    py: Python<'py>,
    nodes1: Vec<[f64; 4]>,
    s1: f64,
    nodes2: Vec<[f64; 4]>,
    s2: f64,
    params: &PyModelParams,
) -> PyResult<Bound<'py, PyDict>> {
    let op = kernel::build_coupling_operator(&worldline(nodes1, s1, 1)?, &worldline(nodes2, s2, 2)?, &params.inner)
        .map_err(to_py)?;
    let dets = kernel::measure_determinants(&op).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("det_m", dets.det_m)?;
    d.set_item("det_a", dets.det_a)?;
    d.set_item("sqrt_det_a", dets.sqrt_det_a)?;
    d.set_item("condition", op.condition())?;
    Ok(d)
}

fn estimator(n_steps: (usize, usize), n_samples: usize, seed: u64, workers: usize) -> EstimatorConfig {
    EstimatorConfig {
        n_steps1: n_steps.0,
        n_steps2: n_steps.1,
        n_samples,
        seed,
        workers,
    }
}

/// Monte Carlo estimate of the kernel at fixed proper times.
#[pyfunction]
#[pyo3(signature = (x1_in, x1_out, x2_in, x2_out, s1, s2, params, n_steps = (8, 8), n_samples = 10_000, seed = 1, workers = 1))]
#[allow(clippy::too_many_arguments)]
fn estimate_kernel<'py>(
    py: Python<'py>,
    x1_in: Vec4,
    x1_out: Vec4,
    x2_in: Vec4,
    x2_out: Vec4,
    s1: f64,
    s2: f64,
    params: &PyModelParams,
    n_steps: (usize, usize),
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let ep1 = Endpoints::new(x1_in, x1_out).map_err(to_py)?;
    let ep2 = Endpoints::new(x2_in, x2_out).map_err(to_py)?;
    let config = estimator(n_steps, n_samples, seed, workers);
    let p = params.inner;
    let est = py
        .detach(|| propagator::estimate_kernel(&ep1, &ep2, s1, s2, &p, &config))
        .map_err(to_py)?;
    estimate_dict(py, &est)
}

/// Kernel integrated over both proper times on a log-spaced grid.
#[pyfunction]
#[pyo3(signature = (x1_in, x1_out, x2_in, x2_out, params, pt_min = 0.01, pt_max = 10.0, pt_points = 25, n_steps = (8, 8), n_samples = 10_000, seed = 1, workers = 1))]
#[allow(clippy::too_many_arguments)]
fn proper_time_integral<'py>(
    py: Python<'py>,
    x1_in: Vec4,
    x1_out: Vec4,
    x2_in: Vec4,
    x2_out: Vec4,
    params: &PyModelParams,
    pt_min: f64,
    pt_max: f64,
    pt_points: usize,
    n_steps: (usize, usize),
    n_samples: usize,
    seed: u64,
    workers: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let ep1 = Endpoints::new(x1_in, x1_out).map_err(to_py)?;
    let ep2 = Endpoints::new(x2_in, x2_out).map_err(to_py)?;
    let grid = ProperTimeGrid::new(pt_min, pt_max, pt_points, pt_points).map_err(to_py)?;
    let config = estimator(n_steps, n_samples, seed, workers);
    let p = params.inner;
    let res = py
        .detach(|| propagator::proper_time_integral(&ep1, &ep2, &p, &grid, &config))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("value", res.value)?;
    d.set_item("error", res.error)?;
    d.set_item("quadrature_error", res.quadrature_error)?;
    d.set_item("statistical_error", res.statistical_error)?;
    d.set_item("tail", res.tail)?;
    Ok(d)
}

/// Solves the clock equations of both particles along fixed spatial paths.
#[pyfunction]
#[pyo3(signature = (nodes1, s1, nodes2, s2, params, x0_in = (0.0, 0.0), p_in = (0.5, 0.5)))]
#[allow(clippy::too_many_arguments)]
fn solve_constraints<'py>(
    py: Python<'py>,
    nodes1: Vec<[f64; 3]>,
    s1: f64,
    nodes2: Vec<[f64; 3]>,
    s2: f64,
    params: &PyModelParams,
    x0_in: (f64, f64),
    p_in: (f64, f64),
) -> PyResult<Bound<'py, PyDict>> {
    let a = spatial_worldline(nodes1, s1, 1)?;
    let b = spatial_worldline(nodes2, s2, 2)?;
    let clocks = [
        ClockBoundary { x0_in: x0_in.0, p_in: p_in.0 },
        ClockBoundary { x0_in: x0_in.1, p_in: p_in.1 },
    ];
    let sol = modified::solve_constraints(&a, &b, &params.inner, clocks, &SolverOptions::default()).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("x0_1", sol.first.x0)?;
    d.set_item("p_1", sol.first.p)?;
    d.set_item("x0_2", sol.second.x0)?;
    d.set_item("p_2", sol.second.p)?;
    d.set_item("iterations", sol.iterations)?;
    d.set_item("residual", sol.residual)?;
    Ok(d)
}

/// Proper time at which `particle`'s clock reaches `target`, with fixed
/// spatial node positions and the partner's proper time held at `partner_s`.
#[pyfunction]
#[pyo3(signature = (nodes1, nodes2, params, particle, partner_s, target, x0_in = (0.0, 0.0), p_in = (0.5, 0.5), s_max = 20.0))]
#[allow(clippy::too_many_arguments)]
fn shoot_proper_time(
    nodes1: Vec<[f64; 3]>,
    nodes2: Vec<[f64; 3]>,
    params: &PyModelParams,
    particle: usize,
    partner_s: f64,
    target: f64,
    x0_in: (f64, f64),
    p_in: (f64, f64),
    s_max: f64,
) -> PyResult<f64> {
    if particle != 1 && particle != 2 {
        return Err(PyValueError::new_err("particle must be 1 or 2"));
    }
    let problem = ClockProblem {
        paths: [
            SpatialPath::fixed(&spatial_worldline(nodes1, 1.0, 1)?),
            SpatialPath::fixed(&spatial_worldline(nodes2, 1.0, 2)?),
        ],
        boundary: [
            ClockBoundary { x0_in: x0_in.0, p_in: p_in.0 },
            ClockBoundary { x0_in: x0_in.1, p_in: p_in.1 },
        ],
        params: params.inner,
        options: SolverOptions::default(),
    };
    modified::shoot_proper_time(&problem, particle, partner_s, target, s_max, 1e-8).map_err(to_py)
}

/// Monte Carlo estimate of the modified kernel. Each endpoint is a 4-vector
/// whose time component is the clock reading at that end.
#[pyfunction]
#[pyo3(signature = (x1_in, x1_out, x2_in, x2_out, params, p_in = (0.5, 0.5), n_steps = (6, 6), n_samples = 1000, seed = 1, workers = 1, s_max = 20.0))]
#[allow(clippy::too_many_arguments)]
fn estimate_modified_kernel<'py>(
    py: Python<'py>,
    x1_in: Vec4,
    x1_out: Vec4,
    x2_in: Vec4,
    x2_out: Vec4,
    params: &PyModelParams,
    p_in: (f64, f64),
    n_steps: (usize, usize),
    n_samples: usize,
    seed: u64,
    workers: usize,
    s_max: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let ep = |x_in: Vec4, x_out: Vec4, p: f64| ModifiedEndpoints {
        x_in: [x_in[1], x_in[2], x_in[3]],
        x_out: [x_out[1], x_out[2], x_out[3]],
        clock: ClockBoundary { x0_in: x_in[0], p_in: p },
        x0_out: x_out[0],
    };
    let eps = [ep(x1_in, x1_out, p_in.0), ep(x2_in, x2_out, p_in.1)];
    let config = estimator(n_steps, n_samples, seed, workers);
    let p = params.inner;
    let est = py
        .detach(|| modified::estimate_modified_kernel(eps, &p, &config, s_max))
        .map_err(to_py)?;
    let d = estimate_dict(py, &est.estimate)?;
    d.set_item("free_s1", est.free_s1)?;
    d.set_item("free_s2", est.free_s2)?;
    d.set_item("mean_s1", est.mean_s1)?;
    d.set_item("mean_s2", est.mean_s2)?;
    d.set_item("mean_p1_out", est.mean_p1_out)?;
    d.set_item("mean_p2_out", est.mean_p2_out)?;
    Ok(d)
}

/// Runs the identity suites and returns one record per check.
#[pyfunction]
#[pyo3(signature = (params, seed = 1))]
fn validation_suite<'py>(py: Python<'py>, params: &PyModelParams, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let reports = checks::validation_suite(&params.inner, seed).map_err(to_py)?;
    reports
        .into_iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("name", r.name)?;
            d.set_item("residual", r.residual)?;
            d.set_item("tolerance", r.tolerance)?;
            d.set_item("trials", r.trials)?;
            d.set_item("passed", r.passed)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn fokker(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_function(wrap_pyfunction!(free_kernel_analytic, m)?)?;
    m.add_function(wrap_pyfunction!(free_proper_time_integral, m)?)?;
    m.add_function(wrap_pyfunction!(fokker_action, m)?)?;
    m.add_function(wrap_pyfunction!(measure_determinants, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(proper_time_integral, m)?)?;
    m.add_function(wrap_pyfunction!(solve_constraints, m)?)?;
    m.add_function(wrap_pyfunction!(shoot_proper_time, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_modified_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(validation_suite, m)?)?;
    Ok(())
}
