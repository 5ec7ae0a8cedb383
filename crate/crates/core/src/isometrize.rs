//! Conjugating a linear reservoir so its synchronization map becomes an
//! isometric embedding.
//!
//! Given the closed-form map `J`, a constant metric `G = L L^T`, and the
//! eigenbasis `V` of the inverse source map, the pipeline forms the
//! g-orthonormal basis `W = L^-T`, the change of basis `Q = V^-1 W`, and the
//! real product `PQ = J W`. Conjugating the reservoir by `H = (PQ R)^-1`
//! (for any rotation `R`) turns the map into `J* = H J` with
//! `(J*)^T J* = G` exactly in exact arithmetic: the map sends the chosen
//! basis to `J* W = R^-1`, an isometry of the metric onto Euclidean space.
//!
//! When the reservoir has more states than the source has dimensions, the
//! first q columns `PQ` of an invertible `S` are completed by an orthonormal
//! basis of the complement of their range, `R` becomes the block rotation
//! `blkdiag(R, R_perp)`, and the same conjugation applies with
//! `J* W = [R^-1; 0]`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::linear_gs::{GsLinearMap, LinearGsProblem, PBuild};

/// Orthogonality and determinant tolerance for rotation inputs.
pub const ROTATION_TOL: f64 = 1e-10;
/// Symmetry tolerance for metric tensors.
const SYMMETRY_TOL: f64 = 1e-12;

/// Constant symmetric positive-definite metric on the source space.
#[derive(Debug, Clone)]
pub struct MetricTensor {
    g: DMatrix<f64>,
    /// Lower Cholesky factor, `G = L L^T`.
    l: DMatrix<f64>,
}

impl MetricTensor {
    pub fn new(g: DMatrix<f64>) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::DimensionMismatch {
                context: "MetricTensor::new",
                expected: "square matrix".into(),
                got: format!("{}x{}", g.nrows(), g.ncols()),
            });
        }
        if !linalg::all_finite_mat(&g) {
            return Err(Error::NotPositiveDefinite {
                reason: "non-finite entries".into(),
            });
        }
        let asym = (&g - g.transpose()).norm();
        if asym > SYMMETRY_TOL {
            return Err(Error::NotPositiveDefinite {
                reason: format!("not symmetric: ||G - G^T|| = {asym:.3e}"),
            });
        }
        let l = nalgebra::Cholesky::new(g.clone())
            .ok_or_else(|| Error::NotPositiveDefinite {
                reason: "Cholesky factorization failed".into(),
            })?
            .l();
        Ok(Self { g, l })
    }

    /// The Euclidean metric on R^q.
    pub fn euclidean(q: usize) -> Self {
        Self {
            g: DMatrix::identity(q, q),
            l: DMatrix::identity(q, q),
        }
    }

    /// Random SPD matrix `B^T B + 0.25 I` with standard normal `B`; the
    /// ridge keeps the conditioning moderate.
    pub fn random_spd(q: usize, rng: &mut impl Rng) -> Self {
        let b = DMatrix::from_fn(q, q, |_, _| rng.sample(StandardNormal));
        let g = b.transpose() * &b + DMatrix::identity(q, q) * 0.25;
        Self::new(g).expect("B^T B + 0.25 I is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    /// Metric inner product `u^T G y`.
    pub fn inner(&self, u: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (u.transpose() * &self.g * y)[(0, 0)]
    }

    /// Metric norm `sqrt(u^T G u)`.
    pub fn norm(&self, u: &DVector<f64>) -> f64 {
        self.inner(u, u).max(0.0).sqrt()
    }
}

/// Basis of columns orthonormal for the metric: `W^T G W = I`.
///
/// The deterministic choice is `W = L^-T` from the Cholesky factor.
pub fn orthonormal_basis(g: &MetricTensor) -> DMatrix<f64> {
    let q = g.dim();
    g.l.transpose()
        .solve_upper_triangular(&DMatrix::identity(q, q))
        .expect("Cholesky factor is invertible")
}

/// Change of basis `Q = V^-1 W`, expressing the metric-orthonormal basis on
/// the eigenbasis.
pub fn compute_q(v: &DMatrix<Complex64>, w: &DMatrix<f64>) -> Result<DMatrix<Complex64>> {
    if !v.is_square() || v.nrows() != w.nrows() || !w.is_square() {
        return Err(Error::DimensionMismatch {
            context: "compute_q",
            expected: format!("{n}x{n} and {n}x{n}", n = v.nrows()),
            got: format!(
                "{}x{} and {}x{}",
                v.nrows(),
                v.ncols(),
                w.nrows(),
                w.ncols()
            ),
        });
    }
    let wc: DMatrix<Complex64> = w.map(|x| Complex64::new(x, 0.0));
    let (sv_min, sv_max) = linalg::singular_extremes_complex(v);
    let cond = if sv_min > 0.0 {
        sv_max / sv_min
    } else {
        f64::INFINITY
    };
    v.clone()
        .lu()
        .solve(&wc)
        .filter(|_| cond.is_finite())
        .ok_or(Error::SingularEigenbasis { cond })
}

/// The real product `P Q`, computed as `J W`.
///
/// `J V = P` columnwise, so `J W = J V Q = P Q`; going through `J` keeps the
/// arithmetic real even when the eigenpairs come in conjugate pairs. The
/// complex product is exercised only as a test oracle.
pub fn product_pq(j: &GsLinearMap, w: &DMatrix<f64>) -> DMatrix<f64> {
    j.matrix() * w
}

/// Checks orthogonality and `det = +1` within `tol`.
pub fn validate_rotation(r: &DMatrix<f64>, tol: f64) -> Result<()> {
    if !r.is_square() {
        return Err(Error::NotRotation {
            reason: format!("not square: {}x{}", r.nrows(), r.ncols()),
        });
    }
    let n = r.nrows();
    let ortho = (r.transpose() * r - DMatrix::identity(n, n)).norm();
    if ortho > tol {
        return Err(Error::NotRotation {
            reason: format!("||R^T R - I|| = {ortho:.3e} exceeds {tol:.1e}"),
        });
    }
    let det = r.determinant();
    if (det - 1.0).abs() > tol {
        return Err(Error::NotRotation {
            reason: format!("det = {det:.12} is not +1 within {tol:.1e}"),
        });
    }
    Ok(())
}

/// Haar-ish random rotation: QR of a standard normal matrix with the signs
/// fixed so the factor is unique, then a column flip to land in SO(n).
pub fn random_rotation(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    assert!(n >= 1, "rotation dimension must be positive");
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let r_diag = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r_diag[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    if q.determinant() < 0.0 {
        for i in 0..n {
            q[(i, n - 1)] = -q[(i, n - 1)];
        }
    }
    q
}

/// Numbers certifying one pipeline run.
#[derive(Debug, Clone)]
pub struct IsometrizationDiagnostics {
    /// `||(J*)^T J* - G||_F`.
    pub isometry_defect: f64,
    /// Largest distance between sorted spectra of A and A*.
    pub eigenvalue_drift: f64,
    /// sigma_min / sigma_max of PQ.
    pub rank_margin: f64,
    /// `||J* W - [R^-1; 0]||_F`; the image of the metric-orthonormal basis.
    pub basis_image_residual: f64,
    /// Residual of the fixed-point equation for J.
    pub fixed_point_residual: f64,
}

/// Everything the conjugation produces, kept for serialization and
/// re-verification.
#[derive(Debug, Clone)]
pub struct IsometrizationResult {
    pub h: DMatrix<f64>,
    pub a_star: DMatrix<f64>,
    pub c_star: DVector<f64>,
    /// Eigen-sliced columns (complex); diagnostic counterpart of `pq`.
    pub p: DMatrix<Complex64>,
    /// Change of basis from the eigenbasis (complex).
    pub q: DMatrix<Complex64>,
    /// The metric-orthonormal basis used.
    pub w: DMatrix<f64>,
    /// The real product `J W = P Q`.
    pub pq: DMatrix<f64>,
    /// Rectangular case only: `[PQ | completion]`.
    pub s: Option<DMatrix<f64>>,
    /// Standard-basis indices chosen while completing `S`, in order.
    pub completion_pivots: Vec<usize>,
    pub r: DMatrix<f64>,
    pub r_perp: Option<DMatrix<f64>>,
    pub j: DMatrix<f64>,
    pub j_star: DMatrix<f64>,
    pub eigenvalues: Vec<Complex64>,
    pub diagnostics: IsometrizationDiagnostics,
}

/// Square case `N = q`: conjugator `H = (PQ R)^-1`.
pub fn isometrize_square(
    problem: &LinearGsProblem,
    g: &MetricTensor,
    r: &DMatrix<f64>,
    rank_ratio_tol: Option<f64>,
) -> Result<IsometrizationResult> {
    let n = problem.state_dim();
    let q_dim = problem.source_dim();
    if n != q_dim {
        return Err(Error::DimensionMismatch {
            context: "isometrize_square",
            expected: format!("state dimension {q_dim}"),
            got: n.to_string(),
        });
    }
    isometrize_impl(problem, g, r, None, rank_ratio_tol)
}

/// Rectangular case `N > q`: completion columns and the block rotation
/// `blkdiag(R, R_perp)`.
pub fn isometrize_rect(
    problem: &LinearGsProblem,
    g: &MetricTensor,
    r: &DMatrix<f64>,
    r_perp: &DMatrix<f64>,
    rank_ratio_tol: Option<f64>,
) -> Result<IsometrizationResult> {
    let n = problem.state_dim();
    let q_dim = problem.source_dim();
    if n <= q_dim {
        return Err(Error::DimensionMismatch {
            context: "isometrize_rect",
            expected: format!("state dimension above {q_dim}"),
            got: n.to_string(),
        });
    }
    if r_perp.nrows() != n - q_dim {
        return Err(Error::DimensionMismatch {
            context: "isometrize_rect",
            expected: format!("{d}x{d} complement rotation", d = n - q_dim),
            got: format!("{}x{}", r_perp.nrows(), r_perp.ncols()),
        });
    }
    isometrize_impl(problem, g, r, Some(r_perp), rank_ratio_tol)
}

/// Dispatches on the reservoir/source dimensions. `r_perp` defaults to the
/// identity in the rectangular case.
pub fn isometrize(
    problem: &LinearGsProblem,
    g: &MetricTensor,
    r: &DMatrix<f64>,
    r_perp: Option<&DMatrix<f64>>,
    rank_ratio_tol: Option<f64>,
) -> Result<IsometrizationResult> {
    let n = problem.state_dim();
    let q_dim = problem.source_dim();
    if n == q_dim {
        isometrize_square(problem, g, r, rank_ratio_tol)
    } else if n > q_dim {
        let identity;
        let rp = match r_perp {
            Some(rp) => rp,
            None => {
                identity = DMatrix::identity(n - q_dim, n - q_dim);
                &identity
            }
        };
        isometrize_rect(problem, g, r, rp, rank_ratio_tol)
    } else {
        Err(Error::Config(format!(
            "reservoir dimension {n} below source dimension {q_dim}: no isometry can exist"
        )))
    }
}

fn isometrize_impl(
    problem: &LinearGsProblem,
    g: &MetricTensor,
    r: &DMatrix<f64>,
    r_perp: Option<&DMatrix<f64>>,
    rank_ratio_tol: Option<f64>,
) -> Result<IsometrizationResult> {
    let n = problem.state_dim();
    let q_dim = problem.source_dim();
    if g.dim() != q_dim {
        return Err(Error::DimensionMismatch {
            context: "isometrize",
            expected: q_dim.to_string(),
            got: g.dim().to_string(),
        });
    }
    if r.nrows() != q_dim || !r.is_square() {
        return Err(Error::DimensionMismatch {
            context: "isometrize rotation",
            expected: format!("{q_dim}x{q_dim}"),
            got: format!("{}x{}", r.nrows(), r.ncols()),
        });
    }
    validate_rotation(r, ROTATION_TOL)?;
    if let Some(rp) = r_perp {
        validate_rotation(rp, ROTATION_TOL)?;
    }

    let eig = problem.source().eigenpairs_inverse(None)?;
    let j = problem.gs_matrix()?;
    let built: PBuild = problem.build_p(&eig, rank_ratio_tol)?;
    let w = orthonormal_basis(g);
    let q_mat = compute_q(&eig.vectors, &w)?;
    let pq = product_pq(&j, &w);

    let (sv_min, sv_max) = linalg::singular_extremes(&pq);
    let rank_margin = if sv_max > 0.0 { sv_min / sv_max } else { 0.0 };
    let rank_tol = rank_ratio_tol.unwrap_or(1e-10);
    if rank_margin <= rank_tol {
        return Err(Error::RankDeficientP {
            ratio: rank_margin,
            tol: rank_tol,
        });
    }

    let (conjugand, s, completion_pivots) = match r_perp {
        None => (&pq * r, None, Vec::new()),
        Some(rp) => {
            let (completion, pivots) = complete_orthonormal(&pq)?;
            let mut s_mat = DMatrix::zeros(n, n);
            s_mat.view_mut((0, 0), (n, q_dim)).copy_from(&pq);
            s_mat
                .view_mut((0, q_dim), (n, n - q_dim))
                .copy_from(&completion);
            let mut r_bar = DMatrix::zeros(n, n);
            r_bar.view_mut((0, 0), (q_dim, q_dim)).copy_from(r);
            r_bar
                .view_mut((q_dim, q_dim), (n - q_dim, n - q_dim))
                .copy_from(rp);
            (&s_mat * r_bar, Some(s_mat), pivots)
        }
    };

    let h = conjugand
        .clone()
        .try_inverse()
        .ok_or(Error::SingularConjugation {
            context: "PQ R (or S R-bar) is not invertible".into(),
        })?;
    let conjugated = problem.reservoir().conjugate(&h)?;
    let j_star = &h * j.matrix();

    // J* W should be R^-1 stacked over zeros.
    let jw = &j_star * &w;
    let mut target = DMatrix::zeros(n, q_dim);
    target.view_mut((0, 0), (q_dim, q_dim)).copy_from(&r.transpose());
    let basis_image_residual = (jw - target).norm();

    let diagnostics = IsometrizationDiagnostics {
        isometry_defect: verify_isometry(&j_star, g),
        eigenvalue_drift: linalg::spectrum_drift(problem.reservoir().a(), conjugated.a()),
        rank_margin,
        basis_image_residual,
        fixed_point_residual: j.fixed_point_residual(problem),
    };

    Ok(IsometrizationResult {
        h,
        a_star: conjugated.a().clone(),
        c_star: conjugated.c().clone(),
        p: built.p,
        q: q_mat,
        w,
        pq,
        s,
        completion_pivots,
        r: r.clone(),
        r_perp: r_perp.cloned(),
        j: j.matrix().clone(),
        j_star,
        eigenvalues: eig.values,
        diagnostics,
    })
}

/// Deterministic orthonormal basis of the orthogonal complement of
/// `range(PQ)`, built by projecting standard basis vectors and always taking
/// the one with the largest residual (ties break to the smallest index).
/// Returns the completion columns and the chosen indices.
fn complete_orthonormal(pq: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let n = pq.nrows();
    let q_dim = pq.ncols();
    let extra = n - q_dim;

    // orthonormal basis of range(PQ)
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    let thin_q = pq.clone().qr().q();
    for j in 0..q_dim {
        basis.push(thin_q.column(j).into_owned());
    }

    let project_out = |v: &DVector<f64>, basis: &[DVector<f64>]| {
        let mut r = v.clone();
        for b in basis {
            let coeff = b.dot(&r);
            r -= b * coeff;
        }
        r
    };

    let mut pivots = Vec::with_capacity(extra);
    let mut used = vec![false; n];
    let mut completion = DMatrix::zeros(n, extra);
    for col in 0..extra {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if used[i] {
                continue;
            }
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            let norm = project_out(&e, &basis).norm();
            if best.map_or(true, |(_, bn)| norm > bn) {
                best = Some((i, norm));
            }
        }
        let (idx, norm) = best.expect("candidates remain while extra columns are needed");
        if norm <= 1e-8 {
            return Err(Error::SingularConjugation {
                context: "orthonormal completion found no independent direction".into(),
            });
        }
        let mut e = DVector::zeros(n);
        e[idx] = 1.0;
        // project twice for orthogonality at working precision
        let r1 = project_out(&e, &basis);
        let r2 = project_out(&r1, &basis);
        let unit = &r2 / r2.norm();
        completion.set_column(col, &unit);
        basis.push(unit);
        used[idx] = true;
        pivots.push(idx);
    }
    Ok((completion, pivots))
}

/// Frobenius defect `||J^T J - G||_F` of a candidate isometry.
pub fn verify_isometry(j_star: &DMatrix<f64>, g: &MetricTensor) -> f64 {
    (j_star.transpose() * j_star - g.matrix()).norm()
}
