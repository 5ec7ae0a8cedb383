//! Python bindings: the source/observation/reservoir types, the linear
//! synchronization solver, the isometrization pipeline, and the embedding
//! certificates. Matrices cross the boundary as row-major lists of lists;
//! every library error surfaces as `ValueError`.

use nalgebra::{DMatrix, DVector, RowDVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use resembed::diagnostics;
use resembed::harness::rng::substream;
use resembed::isometrize;
use resembed::linear_gs::LinearGsProblem;
use resembed::reservoir::{self, SampledGs};
use resembed::sources;

fn err(e: resembed::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(PyValueError::new_err(format!("{what} has no rows")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!(
            "{what} rows must be nonempty and equal length"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

/// Invertible source system driving the observations.
#[pyclass(name = "Source", frozen)]
struct PySource {
    inner: sources::Source,
}

#[pymethods]
impl PySource {
    /// Planar rotation by `theta` radians.
    #[staticmethod]
    fn rotation(theta: f64) -> PyResult<Self> {
        Ok(Self { inner: sources::LinearSource::rotation(theta).map_err(err)?.into() })
    }

    /// Scalar map m -> factor * m.
    #[staticmethod]
    fn scaling(factor: f64) -> PyResult<Self> {
        Ok(Self { inner: sources::LinearSource::scaling(factor).map_err(err)?.into() })
    }

    /// Diagonal linear map with the given entries.
    #[staticmethod]
    fn diagonal(entries: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: sources::LinearSource::diagonal(&entries).map_err(err)?.into() })
    }

    /// General invertible linear map from row-major entries.
    #[staticmethod]
    fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let m = to_matrix(&rows, "source matrix")?;
        Ok(Self { inner: sources::LinearSource::new(m).map_err(err)?.into() })
    }

    /// Henon map with the classical parameters by default.
    #[staticmethod]
    #[pyo3(signature = (a=1.4, b=0.3))]
    fn henon(a: f64, b: f64) -> PyResult<Self> {
        Ok(Self { inner: sources::NonlinearSource::henon(a, b).map_err(err)?.into() })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn is_linear(&self) -> bool {
        matches!(self.inner, sources::Source::Linear(_))
    }

    /// One forward step of the source dynamics.
    fn step(&self, m: Vec<f64>) -> PyResult<Vec<f64>> {
        let next = self.inner.step_forward(&vector(&m)).map_err(err)?;
        Ok(next.iter().copied().collect())
    }

    fn __repr__(&self) -> String {
        format!("Source(dim={}, linear={})", self.inner.dim(), self.is_linear())
    }
}

/// Scalar readout from the source state.
#[pyclass(name = "Observation", frozen)]
struct PyObservation {
    inner: sources::Observation,
}

#[pymethods]
impl PyObservation {
    /// Reads one coordinate of a `dim`-dimensional state.
    #[staticmethod]
    fn coordinate(dim: usize, index: usize) -> PyResult<Self> {
        Ok(Self { inner: sources::Observation::coordinate(dim, index).map_err(err)? })
    }

    /// Linear functional with the given coefficients.
    #[staticmethod]
    fn linear(coefficients: Vec<f64>) -> Self {
        Self { inner: sources::Observation::linear(RowDVector::from_row_slice(&coefficients)) }
    }

    #[getter]
    fn coefficients(&self) -> Option<Vec<f64>> {
        self.inner.linear_coefficients().map(|c| c.iter().copied().collect())
    }

    /// Evaluates the observation at a source point.
    fn value(&self, m: Vec<f64>) -> f64 {
        self.inner.value(&vector(&m))
    }

    fn __repr__(&self) -> String {
        format!("Observation({})", self.inner.label())
    }
}

/// Linear reservoir `x' = A x + C z`.
#[pyclass(name = "LinearReservoir", frozen)]
struct PyLinearReservoir {
    inner: reservoir::LinearReservoir,
}

#[pymethods]
impl PyLinearReservoir {
    #[new]
    fn new(a_rows: Vec<Vec<f64>>, c: Vec<f64>) -> PyResult<Self> {
        let a = to_matrix(&a_rows, "reservoir matrix")?;
        Ok(Self { inner: reservoir::LinearReservoir::new(a, vector(&c)).map_err(err)? })
    }

    /// Entries i.i.d. uniform on [-1, 1], A rescaled to `spectral_radius`.
    #[staticmethod]
    fn random(n: usize, spectral_radius: f64, seed: u64) -> PyResult<Self> {
        let mut rng = substream(seed, "reservoir", 0);
        Ok(Self { inner: reservoir::LinearReservoir::random(n, spectral_radius, &mut rng).map_err(err)? })
    }

    /// Delay line of depth `n`: the state is the reversed input window.
    #[staticmethod]
    fn takens(n: usize) -> Self {
        Self { inner: reservoir::LinearReservoir::takens(n) }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn a(&self) -> Vec<Vec<f64>> {
        matrix_rows(self.inner.a())
    }

    #[getter]
    fn c(&self) -> Vec<f64> {
        self.inner.c().iter().copied().collect()
    }

    fn __repr__(&self) -> String {
        format!("LinearReservoir(dim={})", self.inner.dim())
    }
}

/// tanh echo-state network `x' = tanh(A x + C z + b)`.
#[pyclass(name = "EsnReservoir", frozen)]
struct PyEsnReservoir {
    inner: reservoir::EsnReservoir,
}

#[pymethods]
impl PyEsnReservoir {
    /// Random network with A rescaled to `spectral_radius`; `input_scale`
    /// multiplies the input weights after sampling.
    #[staticmethod]
    #[pyo3(signature = (n, spectral_radius, seed, input_scale=None))]
    fn random(n: usize, spectral_radius: f64, seed: u64, input_scale: Option<f64>) -> PyResult<Self> {
        let mut rng = substream(seed, "reservoir", 0);
        let esn = reservoir::EsnReservoir::random(n, spectral_radius, &mut rng).map_err(err)?;
        let esn = match input_scale {
            None => esn,
            Some(s) => reservoir::EsnReservoir::new(
                esn.a().clone(),
                esn.c() * s,
                esn.bias().clone(),
            )
            .map_err(err)?,
        };
        Ok(Self { inner: esn })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!("EsnReservoir(dim={})", self.inner.dim())
    }
}

/// Riemannian metric on the source space, stored as an SPD Gram matrix.
#[pyclass(name = "MetricTensor", frozen)]
struct PyMetricTensor {
    inner: isometrize::MetricTensor,
}

#[pymethods]
impl PyMetricTensor {
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let g = to_matrix(&rows, "metric")?;
        Ok(Self { inner: isometrize::MetricTensor::new(g).map_err(err)? })
    }

    #[staticmethod]
    fn euclidean(dim: usize) -> Self {
        Self { inner: isometrize::MetricTensor::euclidean(dim) }
    }

    #[staticmethod]
    fn random_spd(dim: usize, seed: u64) -> Self {
        let mut rng = substream(seed, "metric", 0);
        Self { inner: isometrize::MetricTensor::random_spd(dim, &mut rng) }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn matrix(&self) -> Vec<Vec<f64>> {
        matrix_rows(self.inner.matrix())
    }

    fn norm(&self, v: Vec<f64>) -> f64 {
        self.inner.norm(&vector(&v))
    }

    fn inner_product(&self, u: Vec<f64>, v: Vec<f64>) -> f64 {
        self.inner.inner(&vector(&u), &vector(&v))
    }

    fn __repr__(&self) -> String {
        format!("MetricTensor(dim={})", self.inner.dim())
    }
}

/// Convergence gate of the synchronization series.
#[pyclass(name = "GateReport", frozen)]
struct PyGateReport {
    #[pyo3(get)]
    rho_a: f64,
    #[pyo3(get)]
    rho_m_inv: f64,
    #[pyo3(get)]
    product: f64,
    #[pyo3(name = "pass_", get)]
    pass: bool,
    #[pyo3(get)]
    margin: f64,
}

#[pymethods]
impl PyGateReport {
    fn __repr__(&self) -> String {
        format!(
            "GateReport(product={:.6}, pass={})",
            self.product, self.pass
        )
    }
}

/// Linear reservoir + linear source + linear observation, ready to solve.
#[pyclass(name = "GsProblem", frozen)]
struct PyGsProblem {
    inner: LinearGsProblem,
}

#[pymethods]
impl PyGsProblem {
    #[new]
    fn new(
        reservoir: PyRef<'_, PyLinearReservoir>,
        source: PyRef<'_, PySource>,
        coefficients: Vec<f64>,
    ) -> PyResult<Self> {
        let linear = match &source.inner {
            sources::Source::Linear(s) => s.clone(),
            sources::Source::Nonlinear(_) => {
                return Err(PyValueError::new_err("GsProblem requires a linear source"))
            }
        };
        let problem = LinearGsProblem::new(
            reservoir.inner.clone(),
            linear,
            RowDVector::from_row_slice(&coefficients),
        )
        .map_err(err)?;
        Ok(Self { inner: problem })
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn source_dim(&self) -> usize {
        self.inner.source_dim()
    }

    /// Spectral-radius gate for the defining series.
    fn check_convergence(&self) -> PyGateReport {
        let g = self.inner.check_convergence();
        PyGateReport {
            rho_a: g.rho_a,
            rho_m_inv: g.rho_m_inv,
            product: g.product,
            pass: g.pass,
            margin: g.margin,
        }
    }

    /// Solves the fixed-point equation for the synchronization matrix J.
    fn gs_matrix(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(matrix_rows(self.inner.gs_matrix().map_err(err)?.matrix()))
    }

    /// Evaluates the synchronization map at one source point.
    fn gs_value(&self, m: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = self.inner.gs_value(&vector(&m)).map_err(err)?;
        Ok(x.iter().copied().collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "GsProblem(state_dim={}, source_dim={})",
            self.inner.state_dim(),
            self.inner.source_dim()
        )
    }
}

/// Everything the conjugation pipeline produced.
#[pyclass(name = "IsometrizationOutcome", frozen)]
struct PyIsometrizationOutcome {
    #[pyo3(get)]
    j: Vec<Vec<f64>>,
    #[pyo3(get)]
    j_star: Vec<Vec<f64>>,
    #[pyo3(get)]
    h: Vec<Vec<f64>>,
    #[pyo3(get)]
    a_star: Vec<Vec<f64>>,
    #[pyo3(get)]
    c_star: Vec<f64>,
    #[pyo3(get)]
    w: Vec<Vec<f64>>,
    #[pyo3(get)]
    pq: Vec<Vec<f64>>,
    #[pyo3(get)]
    r: Vec<Vec<f64>>,
    #[pyo3(get)]
    s: Option<Vec<Vec<f64>>>,
    #[pyo3(get)]
    completion_pivots: Vec<usize>,
    #[pyo3(get)]
    eigenvalues: Vec<(f64, f64)>,
    #[pyo3(get)]
    isometry_defect: f64,
    #[pyo3(get)]
    eigenvalue_drift: f64,
    #[pyo3(get)]
    rank_margin: f64,
    #[pyo3(get)]
    basis_image_residual: f64,
    #[pyo3(get)]
    fixed_point_residual: f64,
}

#[pymethods]
impl PyIsometrizationOutcome {
    fn __repr__(&self) -> String {
        format!(
            "IsometrizationOutcome(defect={:.3e}, drift={:.3e})",
            self.isometry_defect, self.eigenvalue_drift
        )
    }
}

/// Conjugates the reservoir so the synchronization map becomes an isometry
/// for `metric`; `rotation` spends the orthogonal freedom in the source
/// block and `rotation_perp` in the completion block.
#[pyfunction]
#[pyo3(signature = (problem, metric, rotation=None, rotation_perp=None, rank_tol=None))]
fn isometrize_problem(
    problem: PyRef<'_, PyGsProblem>,
    metric: PyRef<'_, PyMetricTensor>,
    rotation: Option<Vec<Vec<f64>>>,
    rotation_perp: Option<Vec<Vec<f64>>>,
    rank_tol: Option<f64>,
) -> PyResult<PyIsometrizationOutcome> {
    let q = problem.inner.source_dim();
    let r = match rotation {
        Some(rows) => to_matrix(&rows, "rotation")?,
        None => DMatrix::identity(q, q),
    };
    let r_perp = rotation_perp
        .map(|rows| to_matrix(&rows, "rotation_perp"))
        .transpose()?;
    let result = isometrize::isometrize(&problem.inner, &metric.inner, &r, r_perp.as_ref(), rank_tol)
        .map_err(err)?;
    Ok(PyIsometrizationOutcome {
        j: matrix_rows(&result.j),
        j_star: matrix_rows(&result.j_star),
        h: matrix_rows(&result.h),
        a_star: matrix_rows(&result.a_star),
        c_star: result.c_star.iter().copied().collect(),
        w: matrix_rows(&result.w),
        pq: matrix_rows(&result.pq),
        r: matrix_rows(&result.r),
        s: result.s.as_ref().map(matrix_rows),
        completion_pivots: result.completion_pivots.clone(),
        eigenvalues: result.eigenvalues.iter().map(|z| (z.re, z.im)).collect(),
        isometry_defect: result.diagnostics.isometry_defect,
        eigenvalue_drift: result.diagnostics.eigenvalue_drift,
        rank_margin: result.diagnostics.rank_margin,
        basis_image_residual: result.diagnostics.basis_image_residual,
        fixed_point_residual: result.diagnostics.fixed_point_residual,
    })
}

#[derive(FromPyObject)]
enum ReservoirArg<'py> {
    Linear(PyRef<'py, PyLinearReservoir>),
    Esn(PyRef<'py, PyEsnReservoir>),
}

/// Sampled synchronization map with its convergence record.
#[pyclass(name = "SyncOutcome", frozen)]
struct PySyncOutcome {
    #[pyo3(get)]
    points: Vec<Vec<f64>>,
    #[pyo3(get)]
    images: Vec<Vec<f64>>,
    #[pyo3(get)]
    gaps: Vec<f64>,
    #[pyo3(get)]
    converged: bool,
    #[pyo3(get)]
    final_gap: f64,
    #[pyo3(get)]
    fitted_rate: Option<f64>,
    state_dim: usize,
}

#[pymethods]
impl PySyncOutcome {
    /// Injectivity, immersion, per-sample isometry defect, and the
    /// dimension gate, judged on the sampled map.
    #[pyo3(signature = (metric, ratio_floor=1e-3, sep_floor_scale=1e-6, immersion_tol=1e-6, knn=None))]
    fn certify(
        &self,
        metric: PyRef<'_, PyMetricTensor>,
        ratio_floor: f64,
        sep_floor_scale: f64,
        immersion_tol: f64,
        knn: Option<usize>,
    ) -> PyResult<PyEmbeddingSummary> {
        let gs = SampledGs {
            points: self.points.iter().map(|p| vector(p)).collect(),
            images: self.images.iter().map(|x| vector(x)).collect(),
            jacobians: None,
        };
        let jac = diagnostics::estimate_jacobians(&gs, knn).map_err(err)?;
        let report = diagnostics::embedding_report(
            &gs,
            &jac.jacobians,
            &metric.inner,
            self.state_dim,
            ratio_floor,
            sep_floor_scale,
            immersion_tol,
        )
        .map_err(err)?;
        let q = gs.points.first().map_or(0, |p| p.len());
        Ok(PyEmbeddingSummary {
            min_image_gap: report.min_image_gap,
            worst_pair: report.worst_pair,
            min_singular_value: report.min_singular_value,
            rank_ok: report.rank_ok,
            isometry_defect_max: report.isometry_defect_max,
            gate_feasible: report.dimension_gate == diagnostics::DimensionGate::EmbeddingFeasible,
            statement: diagnostics::dimension_gate_statement(self.state_dim, q),
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "SyncOutcome(samples={}, converged={}, final_gap={:.3e})",
            self.points.len(),
            self.converged,
            self.final_gap
        )
    }
}

/// Certificates of the sampled map as an embedding.
#[pyclass(name = "EmbeddingSummary", frozen)]
struct PyEmbeddingSummary {
    #[pyo3(get)]
    min_image_gap: f64,
    #[pyo3(get)]
    worst_pair: (usize, usize),
    #[pyo3(get)]
    min_singular_value: f64,
    #[pyo3(get)]
    rank_ok: bool,
    #[pyo3(get)]
    isometry_defect_max: f64,
    #[pyo3(get)]
    gate_feasible: bool,
    #[pyo3(get)]
    statement: String,
}

#[pymethods]
impl PyEmbeddingSummary {
    fn __repr__(&self) -> String {
        format!(
            "EmbeddingSummary(rank_ok={}, min_image_gap={:.3e}, gate_feasible={})",
            self.rank_ok, self.min_image_gap, self.gate_feasible
        )
    }
}

/// Drives two reservoir copies from seeded initial states through the same
/// observations and returns the sampled map once the gap closes. Raises
/// `ValueError` when the trajectories never synchronize.
#[pyfunction]
#[pyo3(signature = (reservoir, source, observation, m0, washout=200, samples=500, seed=0, tol=1e-9, x0_radius=1.0))]
#[allow(clippy::too_many_arguments)]
fn estimate_gs(
    reservoir: ReservoirArg<'_>,
    source: PyRef<'_, PySource>,
    observation: PyRef<'_, PyObservation>,
    m0: Vec<f64>,
    washout: usize,
    samples: usize,
    seed: u64,
    tol: f64,
    x0_radius: f64,
) -> PyResult<PySyncOutcome> {
    use rand::Rng;
    let n = match &reservoir {
        ReservoirArg::Linear(r) => r.inner.dim(),
        ReservoirArg::Esn(r) => r.inner.dim(),
    };
    let draw = |index: u64| {
        let mut rng = substream(seed, "x0", index);
        DVector::from_fn(n, |_, _| rng.random_range(-x0_radius..=x0_radius))
    };
    let (x1, x2) = (draw(0), draw(1));
    let m0 = vector(&m0);
    let est = match &reservoir {
        ReservoirArg::Linear(r) => reservoir::estimate_gs(
            &r.inner, &source.inner, &observation.inner, &m0, washout, samples, (&x1, &x2), tol,
        ),
        ReservoirArg::Esn(r) => reservoir::estimate_gs(
            &r.inner, &source.inner, &observation.inner, &m0, washout, samples, (&x1, &x2), tol,
        ),
    }
    .map_err(err)?;
    let curve = diagnostics::sync_error_curve(&est.report);
    Ok(PySyncOutcome {
        points: est.gs.points.iter().map(|p| p.iter().copied().collect()).collect(),
        images: est.gs.images.iter().map(|x| x.iter().copied().collect()).collect(),
        gaps: est.report.gaps.clone(),
        converged: est.report.converged,
        final_gap: est.report.final_gap,
        fitted_rate: curve.fitted_rate,
        state_dim: n,
    })
}

/// True when `state_dim > 2 * source_dim`, the strict bound under which a
/// generic map of the source attractor is an embedding.
#[pyfunction]
fn dimension_gate(state_dim: usize, source_dim: usize) -> bool {
    diagnostics::dimension_gate(state_dim, source_dim)
        == diagnostics::DimensionGate::EmbeddingFeasible
}

/// Human-readable version of the gate decision.
#[pyfunction]
fn dimension_gate_statement(state_dim: usize, source_dim: usize) -> String {
    diagnostics::dimension_gate_statement(state_dim, source_dim)
}

#[pymodule]
fn resembed_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySource>()?;
    m.add_class::<PyObservation>()?;
    m.add_class::<PyLinearReservoir>()?;
    m.add_class::<PyEsnReservoir>()?;
    m.add_class::<PyMetricTensor>()?;
    m.add_class::<PyGateReport>()?;
    m.add_class::<PyGsProblem>()?;
    m.add_class::<PyIsometrizationOutcome>()?;
    m.add_class::<PySyncOutcome>()?;
    m.add_class::<PyEmbeddingSummary>()?;
    m.add_function(wrap_pyfunction!(isometrize_problem, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_gs, m)?)?;
    m.add_function(wrap_pyfunction!(dimension_gate, m)?)?;
    m.add_function(wrap_pyfunction!(dimension_gate_statement, m)?)?;
    Ok(())
}
