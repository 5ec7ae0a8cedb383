//! Invertible source dynamics and scalar observations.
//!
//! A source is an invertible map on R^q iterated forward in time; the
//! reservoir is driven by a scalar observation of its state. Linear sources
//! expose the eigenstructure of the inverse map, which the conjugation
//! pipeline needs; nonlinear sources carry exact inverses and inverse
//! Jacobians supplied at construction.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::linalg::{self, Eigenpairs};

const DET_TOL: f64 = 1e-12;

/// Linear source `m -> M m` with a precomputed inverse.
#[derive(Debug, Clone)]
pub struct LinearSource {
    m: DMatrix<f64>,
    m_inv: DMatrix<f64>,
}

impl LinearSource {
    /// Builds a linear source, rejecting singular or non-finite matrices.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                context: "LinearSource::new",
                expected: "square matrix".into(),
                got: format!("{}x{}", m.nrows(), m.ncols()),
            });
        }
        if !linalg::all_finite_mat(&m) {
            return Err(Error::Config("source matrix has non-finite entries".into()));
        }
        let det_abs = m.determinant().abs();
        if det_abs <= DET_TOL {
            return Err(Error::SingularMap { det_abs });
        }
        let m_inv = m
            .clone()
            .try_inverse()
            .ok_or(Error::SingularMap { det_abs })?;
        Ok(Self { m, m_inv })
    }

    /// Scalar source `m -> factor * m` on R^1.
    pub fn scaling(factor: f64) -> Result<Self> {
        Self::new(DMatrix::from_element(1, 1, factor))
    }

    /// Rotation of R^2 by `theta` radians.
    pub fn rotation(theta: f64) -> Result<Self> {
        let (s, c) = theta.sin_cos();
        Self::new(DMatrix::from_row_slice(2, 2, &[c, -s, s, c]))
    }

    /// Diagonal source with the given entries.
    pub fn diagonal(entries: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(entries)))
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn inverse_matrix(&self) -> &DMatrix<f64> {
        &self.m_inv
    }

    /// Eigenpairs of the inverse map, sorted and phase-fixed.
    ///
    /// `gap_tol` defaults to `1e-8 * max|lambda|`. Fails with
    /// `NonDistinctEigenvalues` when the spectrum is not simple.
    pub fn eigenpairs_inverse(&self, gap_tol: Option<f64>) -> Result<Eigenpairs> {
        linalg::eigenpairs(&self.m_inv, gap_tol)
    }
}

type PointMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type JacobianMap = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Nonlinear invertible source with caller-supplied inverse and inverse
/// Jacobian. Both closures must be exact to the documented tolerances; the
/// test suite checks the built-ins against finite differences.
#[derive(Clone)]
pub struct NonlinearSource {
    label: String,
    dim: usize,
    forward: PointMap,
    inverse: PointMap,
    inverse_jacobian: JacobianMap,
}

impl fmt::Debug for NonlinearSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearSource")
            .field("label", &self.label)
            .field("dim", &self.dim)
            .finish()
    }
}

impl NonlinearSource {
    pub fn new(
        label: impl Into<String>,
        dim: usize,
        forward: PointMap,
        inverse: PointMap,
        inverse_jacobian: JacobianMap,
    ) -> Self {
        Self {
            label: label.into(),
            dim,
            forward,
            inverse,
            inverse_jacobian,
        }
    }

    /// The quadratic planar map `(x, y) -> (1 + y - a x^2, b x)`, invertible
    /// whenever `b != 0`.
    pub fn henon(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::Config("henon parameters must be finite".into()));
        }
        if b.abs() <= DET_TOL {
            // det of the forward Jacobian is -b everywhere
            return Err(Error::SingularMap { det_abs: b.abs() });
        }
        let forward: PointMap = Arc::new(move |m: &DVector<f64>| {
            let (x, y) = (m[0], m[1]);
            DVector::from_vec(vec![1.0 + y - a * x * x, b * x])
        });
        let inverse: PointMap = Arc::new(move |m: &DVector<f64>| {
            let (xp, yp) = (m[0], m[1]);
            let x = yp / b;
            DVector::from_vec(vec![x, xp - 1.0 + a * x * x])
        });
        let inverse_jacobian: JacobianMap = Arc::new(move |m: &DVector<f64>| {
            let yp = m[1];
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0 / b, 1.0, 2.0 * a * yp / (b * b)])
        });
        Ok(Self::new(
            format!("henon(a={a}, b={b})"),
            2,
            forward,
            inverse,
            inverse_jacobian,
        ))
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// A source map, linear or nonlinear.
#[derive(Debug, Clone)]
pub enum Source {
    Linear(LinearSource),
    Nonlinear(NonlinearSource),
}

impl From<LinearSource> for Source {
    fn from(s: LinearSource) -> Self {
        Source::Linear(s)
    }
}

impl From<NonlinearSource> for Source {
    fn from(s: NonlinearSource) -> Self {
        Source::Nonlinear(s)
    }
}

impl Source {
    pub fn dim(&self) -> usize {
        match self {
            Source::Linear(s) => s.dim(),
            Source::Nonlinear(s) => s.dim,
        }
    }

    fn check_dim(&self, m: &DVector<f64>, context: &'static str) -> Result<()> {
        if m.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.dim().to_string(),
                got: m.len().to_string(),
            });
        }
        Ok(())
    }

    /// One forward step of the source map.
    pub fn step_forward(&self, m: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(m, "step_forward")?;
        let out = match self {
            Source::Linear(s) => &s.m * m,
            Source::Nonlinear(s) => (s.forward)(m),
        };
        if !linalg::all_finite_vec(&out) {
            return Err(Error::NonFiniteState { step: 0 });
        }
        Ok(out)
    }

    /// One step of the inverse map; `step_forward(step_inverse(m)) = m` up to
    /// rounding.
    pub fn step_inverse(&self, m: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(m, "step_inverse")?;
        let out = match self {
            Source::Linear(s) => &s.m_inv * m,
            Source::Nonlinear(s) => (s.inverse)(m),
        };
        if !linalg::all_finite_vec(&out) {
            return Err(Error::NonFiniteState { step: 0 });
        }
        Ok(out)
    }

    /// Jacobian of the inverse map at `m`; constant for linear sources.
    pub fn inverse_jacobian(&self, m: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(m, "inverse_jacobian")?;
        match self {
            Source::Linear(s) => Ok(s.m_inv.clone()),
            Source::Nonlinear(s) => {
                let j = (s.inverse_jacobian)(m);
                if !linalg::all_finite_mat(&j) {
                    return Err(Error::NonFiniteState { step: 0 });
                }
                Ok(j)
            }
        }
    }

    /// Iterates the source `burn_in` steps, then returns the next `n` points
    /// starting with the post-burn-in state itself.
    pub fn sample_trajectory(
        &self,
        m0: &DVector<f64>,
        burn_in: usize,
        n: usize,
    ) -> Result<Vec<DVector<f64>>> {
        if n == 0 {
            return Err(Error::InsufficientSamples {
                context: "sample_trajectory",
                got: 0,
                need: 1,
            });
        }
        self.check_dim(m0, "sample_trajectory")?;
        let mut m = m0.clone();
        for step in 0..burn_in {
            m = self
                .step_forward(&m)
                .map_err(|_| Error::NonFiniteState { step })?;
        }
        let mut out = Vec::with_capacity(n);
        out.push(m.clone());
        for k in 1..n {
            m = self
                .step_forward(&m)
                .map_err(|_| Error::NonFiniteState { step: burn_in + k })?;
            out.push(m.clone());
        }
        Ok(out)
    }
}

type ValueFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type GradientFn = Arc<dyn Fn(&DVector<f64>) -> RowDVector<f64> + Send + Sync>;

/// Scalar observation of the source state, with gradient access.
///
/// When the observation is linear, `linear_coefficients` exposes the row
/// vector `c` with `value(m) = c m`; the closed-form machinery requires it.
#[derive(Clone)]
pub struct Observation {
    label: String,
    value: ValueFn,
    gradient: GradientFn,
    linear: Option<RowDVector<f64>>,
}

impl fmt::Debug for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observation")
            .field("label", &self.label)
            .field("linear", &self.linear)
            .finish()
    }
}

impl Observation {
    pub fn new(label: impl Into<String>, value: ValueFn, gradient: GradientFn) -> Self {
        Self {
            label: label.into(),
            value,
            gradient,
            linear: None,
        }
    }

    /// Linear observation `m -> c m`.
    pub fn linear(c: RowDVector<f64>) -> Self {
        let cv = c.clone();
        let cg = c.clone();
        Self {
            label: "linear".into(),
            value: Arc::new(move |m| (&cv * m)[0]),
            gradient: Arc::new(move |_| cg.clone()),
            linear: Some(c),
        }
    }

    /// Reads out coordinate `index` of the source state.
    pub fn coordinate(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Config(format!(
                "observation coordinate index {index} out of range for dimension {dim}"
            )));
        }
        let mut c = RowDVector::zeros(dim);
        c[index] = 1.0;
        Ok(Self::linear(c))
    }

    pub fn value(&self, m: &DVector<f64>) -> f64 {
        (self.value)(m)
    }

    pub fn gradient(&self, m: &DVector<f64>) -> RowDVector<f64> {
        (self.gradient)(m)
    }

    pub fn linear_coefficients(&self) -> Option<&RowDVector<f64>> {
        self.linear.as_ref()
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}
