//! Dense linear algebra helpers shared across modules.
//!
//! Everything here is deterministic: eigenvalues are sorted by (re, im),
//! eigenvector phases are pinned, and reductions run in a fixed order, so
//! repeated runs produce bit-identical results on the same platform.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Iteration budget per matrix dimension for the eigenvalue and singular
/// value iterations. The default nalgebra entry points iterate without a
/// bound and can cycle forever on structured matrices (a nilpotent shift
/// register is enough); everything here goes through capped calls instead.
const ITERS_PER_DIM: usize = 400;

/// Eigenvalues in no particular order.
///
/// Strictly triangular structure is read off exactly; otherwise a capped QR
/// iteration runs, retried under deterministic orthogonal similarity when
/// the special structure of the input makes the plain iteration cycle. The
/// retries preserve the spectrum exactly, so results stay reproducible.
pub fn eigenvalues_unsorted(a: &DMatrix<f64>) -> Vec<Complex64> {
    assert!(a.is_square(), "eigenvalues need a square matrix");
    if let Some(diag) = triangular_diagonal(a) {
        return diag;
    }
    let n = a.nrows();
    let cap = ITERS_PER_DIM * n.max(1);
    if let Some(s) = Schur::try_new(a.clone(), f64::EPSILON, cap) {
        return s.complex_eigenvalues().iter().copied().collect();
    }
    for attempt in 1..=6u64 {
        let q = fixed_orthogonal(n, attempt);
        let rotated = q.transpose() * a * &q;
        if let Some(s) = Schur::try_new(rotated, f64::EPSILON, cap) {
            return s.complex_eigenvalues().iter().copied().collect();
        }
    }
    panic!("eigenvalue iteration did not converge after orthogonal-similarity retries");
}

/// Diagonal of an exactly (upper or lower) triangular matrix, else None.
fn triangular_diagonal(a: &DMatrix<f64>) -> Option<Vec<Complex64>> {
    let n = a.nrows();
    let mut lower = true;
    let mut upper = true;
    for j in 0..n {
        for i in 0..n {
            let x = a[(i, j)];
            if i > j && x != 0.0 {
                upper = false;
            }
            if i < j && x != 0.0 {
                lower = false;
            }
        }
    }
    if upper || lower {
        Some((0..n).map(|i| Complex64::new(a[(i, i)], 0.0)).collect())
    } else {
        None
    }
}

/// Deterministic orthogonal matrix for the eigenvalue retries.
fn fixed_orthogonal(n: usize, attempt: u64) -> DMatrix<f64> {
    let mut rng = crate::harness::rng::substream(0x5EED_E16E, "eigenvalue-retry", attempt);
    let g = DMatrix::from_fn(n, n, |_, _| rand::Rng::sample(&mut rng, StandardNormal));
    g.qr().q()
}

/// Largest eigenvalue modulus of a square real matrix.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues_unsorted(a)
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

pub fn singular_values(a: &DMatrix<f64>) -> nalgebra::DVector<f64> {
    let cap = ITERS_PER_DIM * a.nrows().max(a.ncols()).max(1);
    a.clone()
        .try_svd(false, false, f64::EPSILON, cap)
        .expect("singular value iteration did not converge")
        .singular_values
}

/// Two-norm condition number from singular values; infinite when singular.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = singular_values(a);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for s in sv.iter() {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Smallest and largest singular values.
pub fn singular_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let sv = singular_values(a);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for s in sv.iter() {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    (lo, hi)
}

/// Smallest and largest singular values of a complex matrix.
pub fn singular_extremes_complex(a: &DMatrix<Complex64>) -> (f64, f64) {
    let cap = ITERS_PER_DIM * a.nrows().max(a.ncols()).max(1);
    let sv = a
        .clone()
        .try_svd(false, false, f64::EPSILON, cap)
        .expect("singular value iteration did not converge")
        .singular_values;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for s in sv.iter() {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    (lo, hi)
}

/// Eigenvalues of a real square matrix sorted by (re, im).
pub fn sorted_eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    let mut values = eigenvalues_unsorted(a);
    values.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    values
}

/// Largest distance between corresponding sorted eigenvalues of two matrices.
///
/// Both matrices must be square and of equal dimension. Used to certify that
/// a similarity transform preserved the spectrum.
pub fn spectrum_drift(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.nrows(), b.nrows(), "spectrum_drift dimension mismatch");
    let ea = sorted_eigenvalues(a);
    let eb = sorted_eigenvalues(b);
    ea.iter()
        .zip(eb.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Eigenvalues and eigenvectors of a real square matrix.
///
/// Values are sorted by (re, im). Each vector has unit 2-norm and its first
/// component above a small magnitude threshold is made real and positive, so
/// the decomposition is reproducible across runs and platforms.
#[derive(Debug, Clone)]
pub struct Eigenpairs {
    pub values: Vec<Complex64>,
    /// One column per eigenvalue, ordered like `values`.
    pub vectors: DMatrix<Complex64>,
    /// Smallest pairwise eigenvalue distance.
    pub min_gap: f64,
    /// Gap threshold the values were checked against.
    pub gap_tol: f64,
}

impl Eigenpairs {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Computes sorted, phase-fixed eigenpairs of a real square matrix.
///
/// `gap_tol` defaults to `1e-8 * max|lambda|`. Fails with
/// `NonDistinctEigenvalues` when any two eigenvalues are closer than the
/// tolerance; eigenvectors of clustered eigenvalues are not well posed and
/// every downstream construction assumes a simple spectrum.
pub fn eigenpairs(a: &DMatrix<f64>, gap_tol: Option<f64>) -> Result<Eigenpairs> {
    assert!(a.is_square(), "eigenpairs needs a square matrix");
    let q = a.nrows();
    let values = sorted_eigenvalues(a);
    let max_mod = values.iter().map(|l| l.norm()).fold(0.0, f64::max);
    let tol = gap_tol.unwrap_or(1e-8 * max_mod.max(f64::MIN_POSITIVE));

    let mut min_gap = f64::INFINITY;
    for i in 0..q {
        for j in (i + 1)..q {
            min_gap = min_gap.min((values[i] - values[j]).norm());
        }
    }
    if q > 1 && min_gap <= tol {
        return Err(Error::NonDistinctEigenvalues { min_gap, tol });
    }

    let ac = a.map(|x| Complex64::new(x, 0.0));
    let mut vectors = DMatrix::<Complex64>::zeros(q, q);
    for (j, lam) in values.iter().enumerate() {
        let shifted = &ac - DMatrix::<Complex64>::identity(q, q) * *lam;
        let mut v = smallest_right_singular_vector(&shifted);
        fix_phase(&mut v);
        vectors.set_column(j, &v);
    }

    Ok(Eigenpairs {
        values,
        vectors,
        min_gap: if q > 1 { min_gap } else { f64::INFINITY },
        gap_tol: tol,
    })
}

/// Residual `||A v - lambda v||` for one eigenpair; used by tests.
pub fn eigen_residual(a: &DMatrix<f64>, lambda: Complex64, v: &DVector<Complex64>) -> f64 {
    let ac = a.map(|x| Complex64::new(x, 0.0));
    (&ac * v - v * lambda).norm()
}

fn smallest_right_singular_vector(m: &DMatrix<Complex64>) -> DVector<Complex64> {
    let cap = ITERS_PER_DIM * m.nrows().max(1);
    let svd = m
        .clone()
        .try_svd(false, true, f64::EPSILON, cap)
        .expect("singular value iteration did not converge");
    let sv = &svd.singular_values;
    let mut idx = 0;
    for i in 1..sv.len() {
        if sv[i] < sv[idx] {
            idx = i;
        }
    }
    let v_t = svd.v_t.expect("right singular vectors were requested");
    v_t.row(idx).adjoint()
}

/// Scales to unit norm, then rotates the phase so the first component with
/// magnitude above 1e-8 is real and positive.
fn fix_phase(v: &mut DVector<Complex64>) {
    let n = v.norm();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= Complex64::from(n);
        }
    }
    let pivot = v.iter().find(|x| x.norm() > 1e-8).copied();
    if let Some(p) = pivot {
        let phase = p / Complex64::from(p.norm());
        let rot = phase.conj();
        for x in v.iter_mut() {
            *x *= rot;
        }
    }
}

/// True when every entry is finite.
pub fn all_finite_mat(a: &DMatrix<f64>) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// True when every component is finite.
pub fn all_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spectral_radius_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, -0.7]));
        assert_abs_diff_eq!(spectral_radius(&a), 0.7, epsilon = 1e-14);
    }

    #[test]
    fn spectral_radius_shift_is_zero() {
        let n = 4;
        let a = DMatrix::from_fn(n, n, |i, j| if i == j + 1 { 1.0 } else { 0.0 });
        assert!(spectral_radius(&a) < 1e-12);
    }

    #[test]
    fn eigenpairs_diagonal_sorted_with_unit_vectors() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0 / 3.0]));
        let eig = eigenpairs(&a, None).unwrap();
        assert_abs_diff_eq!(eig.values[0].re, 1.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(eig.values[1].re, 0.5, epsilon = 1e-14);
        for j in 0..2 {
            let v = eig.vectors.column(j).into_owned();
            assert_abs_diff_eq!(v.norm(), 1.0, epsilon = 1e-12);
            assert!(eigen_residual(&a, eig.values[j], &v) < 1e-10);
        }
        // diag(0.5, 1/3): the 1/3 eigenvector is e2, the 0.5 eigenvector e1.
        assert!(eig.vectors[(1, 0)].re > 0.99);
        assert!(eig.vectors[(0, 1)].re > 0.99);
    }

    #[test]
    fn eigenpairs_rotation_has_conjugate_unit_modulus_pair() {
        let th: f64 = std::f64::consts::PI / 3.0;
        let a = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let eig = eigenpairs(&a, None).unwrap();
        for l in &eig.values {
            assert_abs_diff_eq!(l.norm(), 1.0, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(eig.values[0].im, -eig.values[1].im, epsilon = 1e-12);
        for j in 0..2 {
            let v = eig.vectors.column(j).into_owned();
            assert!(eigen_residual(&a, eig.values[j], &v) < 1e-10);
        }
    }

    #[test]
    fn eigenpairs_identity_rejected() {
        let a = DMatrix::<f64>::identity(2, 2);
        match eigenpairs(&a, None) {
            Err(Error::NonDistinctEigenvalues { .. }) => {}
            other => panic!("expected NonDistinctEigenvalues, got {other:?}"),
        }
    }

    #[test]
    fn eigenvector_phase_is_deterministic() {
        let a = DMatrix::from_row_slice(3, 3, &[0.2, 0.7, 0.1, -0.4, 0.3, 0.9, 0.5, -0.6, 0.8]);
        let e1 = eigenpairs(&a, None).unwrap();
        let e2 = eigenpairs(&a, None).unwrap();
        assert_eq!(e1.vectors, e2.vectors);
        for j in 0..3 {
            let v = e1.vectors.column(j);
            let pivot = v.iter().find(|x| x.norm() > 1e-8).unwrap();
            assert!(pivot.re > 0.0);
            assert!(pivot.im.abs() < 1e-12);
        }
    }

    #[test]
    fn spectrum_drift_under_permutation_similarity() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.2]));
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let b = &p * &a * &p; // permutation is its own inverse
        assert!(spectrum_drift(&a, &b) < 1e-14);
    }

    #[test]
    fn condition_number_of_scaled_identity() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![10.0, 0.1]));
        assert_abs_diff_eq!(condition_number(&a), 100.0, epsilon = 1e-9);
    }
}
