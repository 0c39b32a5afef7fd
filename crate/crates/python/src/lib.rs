//! Python bindings for the Oseen eigensolver.

use num_complex::Complex64;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use oseen_core::analysis::{fit_rate as core_fit_rate, uniform_study_meshes};
use oseen_core::assembly::{assemble_forms, build_dual_pencil, build_primal_pencil, EigenPair, OseenParams};
use oseen_core::eigensolver::{shift_invert_solve, SolverConfig};
use oseen_core::estimator::{dual_indicators, primal_indicators, EstimateReport};
use oseen_core::fem::{build_dofmap, DofMap, ElementKind};
use oseen_core::io::{mesh_to_string, parse_mesh, read_mesh};
use oseen_core::mesh::{generate_lshape, generate_square, MarkedSet};
use oseen_core::OseenError;

fn to_py(e: OseenError) -> PyErr {
    match e {
        OseenError::InvalidArgument(_) | OseenError::Mesh(_) => PyValueError::new_err(e.to_string()),
        OseenError::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Mesh", module = "oseen_spectral", from_py_object)]
#[derive(Clone)]
struct PyMesh {
    inner: oseen_core::mesh::Mesh,
}

#[pymethods]
impl PyMesh {
    /// Structured mesh of (-1, 1)^2 with `n` subdivisions per side.
    #[staticmethod]
    fn square(n: usize) -> PyResult<Self> {
        Ok(Self { inner: generate_square(n).map_err(to_py)? })
    }

    /// Structured mesh of the L-shaped domain (-1, 1)^2 minus [0, 1) x (-1, 0].
    #[staticmethod]
    fn lshape(n: usize) -> PyResult<Self> {
        Ok(Self { inner: generate_lshape(n).map_err(to_py)? })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self { inner: read_mesh(path.as_ref()).map_err(to_py)? })
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(Self { inner: parse_mesh(text).map_err(to_py)? })
    }

    fn to_text(&self) -> String {
        mesh_to_string(&self.inner)
    }

    #[getter]
    fn n_vertices(&self) -> usize {
        self.inner.n_vertices()
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.inner.n_cells()
    }

    #[getter]
    fn h_max(&self) -> f64 {
        self.inner.h_max()
    }

    #[getter]
    fn h_min(&self) -> f64 {
        self.inner.h_min()
    }

    fn vertices(&self) -> Vec<(f64, f64)> {
        self.inner.vertices().iter().map(|p| (p[0], p[1])).collect()
    }

    fn cells(&self) -> Vec<(usize, usize, usize)> {
        self.inner.cells().iter().map(|c| (c[0], c[1], c[2])).collect()
    }

    fn uniform_refine(&self) -> Self {
        Self { inner: self.inner.uniform_refine() }
    }

    #[pyo3(signature = (cells, bisections = 1))]
    fn refine(&self, cells: Vec<usize>, bisections: usize) -> PyResult<Self> {
        let marked: MarkedSet = cells.into_iter().collect();
        Ok(Self { inner: self.inner.refine_marked(&marked, bisections).map_err(to_py)? })
    }

    fn conformity_audit(&self) -> PyResult<()> {
        self.inner.conformity_audit().map_err(to_py)
    }

    /// Reported degrees of freedom for `element` ("mini" or "th").
    fn dof(&self, element: &str) -> PyResult<usize> {
        Ok(build_dofmap(&self.inner, element.parse().map_err(to_py)?).total_dof())
    }

    fn __repr__(&self) -> String {
        format!("Mesh(n_vertices={}, n_cells={}, h_max={:.4e})", self.n_vertices(), self.n_cells(), self.h_max())
    }
}

struct Problem {
    dofmap: DofMap,
    params: OseenParams,
    pairs: Vec<EigenPair>,
}

#[allow(clippy::too_many_arguments)]
fn solve_pencil(mesh: &PyMesh, nu: f64, beta: (f64, f64), element: &str, nev: usize, tol: f64, shift: Complex64, dual: bool) -> Result<Problem, OseenError> {
    let params = OseenParams::new(nu, [beta.0, beta.1])?;
    let kind: ElementKind = element.parse()?;
    let dofmap = build_dofmap(&mesh.inner, kind);
    let forms = assemble_forms(&mesh.inner, &dofmap, &params)?;
    let pencil = if dual { build_dual_pencil(&forms, &dofmap)? } else { build_primal_pencil(&forms, &dofmap)? };
    let config = SolverConfig {
        tol,
        shift: [shift.re, shift.im],
        ..SolverConfig::with_nev(nev)
    };
    let pairs = shift_invert_solve(&pencil, &config)?;
    Ok(Problem { dofmap, params, pairs })
}

/// Eigenvalues nearest `shift` as a list of `(lambda, residual)`.
#[pyfunction]
#[pyo3(signature = (mesh, nu = 1.0, beta = (1.0, 0.0), element = "mini", nev = 4, tol = 1e-9, shift = Complex64::new(0.0, 0.0), dual = false))]
#[allow(clippy::too_many_arguments)]
fn solve(py: Python<'_>, mesh: &PyMesh, nu: f64, beta: (f64, f64), element: &str, nev: usize, tol: f64, shift: Complex64, dual: bool) -> PyResult<Vec<(Complex64, f64)>> {
    let problem = py.detach(|| solve_pencil(mesh, nu, beta, element, nev, tol, shift, dual)).map_err(to_py)?;
    Ok(problem.pairs.iter().map(|p| (p.lambda, p.residual)).collect())
}

fn report_dict<'py>(py: Python<'py>, r: &EstimateReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("lambda", r.lambda)?;
    d.set_item("eta2", r.eta2)?;
    d.set_item("R", r.r)?;
    d.set_item("D", r.d)?;
    d.set_item("J", r.j)?;
    d.set_item("per_cell", r.per_cell.clone())?;
    Ok(d)
}

/// Residual estimator for the `index`-th eigenvalue: "eta" (primal) or "etastar" (dual).
#[pyfunction]
#[pyo3(signature = (mesh, estimator = "eta", nu = 1.0, beta = (1.0, 0.0), element = "mini", index = 0))]
fn estimate<'py>(py: Python<'py>, mesh: &PyMesh, estimator: &str, nu: f64, beta: (f64, f64), element: &str, index: usize) -> PyResult<Bound<'py, PyDict>> {
    let dual = match estimator {
        "eta" => false,
        "etastar" => true,
        other => return Err(PyValueError::new_err(format!("unknown estimator `{other}`"))),
    };
    let report = py
        .detach(|| {
            let p = solve_pencil(mesh, nu, beta, element, index + 1, 1e-9, Complex64::new(0.0, 0.0), dual)?;
            let pair = p.pairs.get(index).ok_or_else(|| OseenError::Internal(format!("eigenvalue {index} not found")))?;
            if dual {
                dual_indicators(&mesh.inner, &p.dofmap, &p.params, pair)
            } else {
                primal_indicators(&mesh.inner, &p.dofmap, &p.params, pair)
            }
        })
        .map_err(to_py)?;
    report_dict(py, &report)
}

/// Fits `lambda_h = lambda_extr + c h^alpha`.
#[pyfunction]
fn fit_rate<'py>(py: Python<'py>, hs: Vec<f64>, lambdas: Vec<Complex64>) -> PyResult<Bound<'py, PyDict>> {
    let fit = core_fit_rate(&hs, &lambdas).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("lambda_extr", fit.lambda_extr)?;
    d.set_item("c", fit.c)?;
    d.set_item("alpha", fit.alpha)?;
    d.set_item("residual", fit.residual)?;
    Ok(d)
}

/// Uniform study over the given meshes; returns per-level rows and per-eigenvalue fits.
#[pyfunction]
#[pyo3(signature = (meshes, nu = 1.0, beta = (1.0, 0.0), element = "mini", nev = 1))]
fn uniform_study<'py>(py: Python<'py>, meshes: Vec<PyMesh>, nu: f64, beta: (f64, f64), element: &str, nev: usize) -> PyResult<Bound<'py, PyDict>> {
    let params = OseenParams::new(nu, [beta.0, beta.1]).map_err(to_py)?;
    let kind: ElementKind = element.parse().map_err(to_py)?;
    let levels = meshes.into_iter().enumerate().map(|(i, m)| (i, m.inner)).collect();
    let study = py.detach(|| uniform_study_meshes(levels, &params, kind, &SolverConfig::with_nev(nev))).map_err(to_py)?;
    let rows = study
        .rows
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("h", r.h)?;
            d.set_item("dof", r.dof)?;
            d.set_item("lambdas", r.lambdas.iter().map(|l| Complex64::new(l[0], l[1])).collect::<Vec<_>>())?;
            d.set_item("err", r.err)?;
            d.set_item("eta2", r.eta2)?;
            d.set_item("etastar2", r.etastar2)?;
            d.set_item("eff", r.eff)?;
            d.set_item("effstar", r.effstar)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let fits = study.fits.iter().map(|f| (f.lambda_extr, f.c, f.alpha, f.residual)).collect::<Vec<_>>();
    let out = PyDict::new(py);
    out.set_item("rows", rows)?;
    out.set_item("fits", fits)?;
    out.set_item("warnings", study.warnings)?;
    Ok(out)
}

/// Runs the command-line tool in-process and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> i32 {
    let argv: Vec<String> = std::iter::once("oseen-spectral".to_string()).chain(args).collect();
    py.detach(|| oseen_core::cli::run(argv))
}

#[pymodule]
fn oseen_spectral(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_study, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("LSHAPE_REFERENCE", oseen_core::cli::LSHAPE_REFERENCE)?;
    Ok(())
}
