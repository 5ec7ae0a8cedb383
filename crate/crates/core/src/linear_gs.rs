//! Closed-form synchronization for fully linear problems.
//!
//! With a linear source `m -> M m`, a linear observation `c`, and a linear
//! reservoir `(A, C)`, the synchronization map is itself linear, `f(m) = J m`
//! with
//!
//! ```text
//!   J = sum_{k>=0} A^k (C c) M^-k,
//! ```
//!
//! the unique solution of the fixed-point equation `J = C c + A J M^-1`
//! whenever `rho(A) * rho(M^-1) < 1`. J is computed by a dense solve of the
//! Kronecker-lifted system; the truncated series is kept in the tests as an
//! independent oracle.

use nalgebra::{DMatrix, DVector, RowDVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, Eigenpairs};
use crate::reservoir::LinearReservoir;
use crate::sources::LinearSource;

/// Condition-number ceiling for the lifted solve.
const COND_LIMIT: f64 = 1e12;
/// Residual ceiling for the fixed-point equation, scaled by the data norm.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Default full-rank threshold on the singular value ratio of P.
const RANK_RATIO_TOL: f64 = 1e-10;
/// Threshold on |c v_j| / ||c|| below which the observation misses an
/// eigendirection entirely.
const OBSERVABILITY_TOL: f64 = 1e-12;

/// A linear reservoir driven by a linear observation of a linear source.
#[derive(Debug, Clone)]
pub struct LinearGsProblem {
    reservoir: LinearReservoir,
    source: LinearSource,
    c_obs: RowDVector<f64>,
}

/// Convergence gate report: the series sums iff `product < 1`.
#[derive(Debug, Clone)]
pub struct GateReport {
    pub rho_a: f64,
    pub rho_m_inv: f64,
    pub product: f64,
    pub pass: bool,
    /// `1 - product`; how much room the gate has.
    pub margin: f64,
}

/// The synchronization map `f(m) = J m`.
#[derive(Debug, Clone)]
pub struct GsLinearMap {
    j: DMatrix<f64>,
}

impl GsLinearMap {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.j
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.j
    }

    pub fn apply(&self, m: &DVector<f64>) -> DVector<f64> {
        &self.j * m
    }

    /// Residual of the fixed-point equation for a given problem.
    pub fn fixed_point_residual(&self, problem: &LinearGsProblem) -> f64 {
        let b = problem.reservoir.c() * &problem.c_obs;
        (&self.j - problem.reservoir.a() * &self.j * problem.source.inverse_matrix() - b).norm()
    }
}

/// The eigen-sliced matrix whose columns span the image of the map on the
/// eigenbasis of the inverse source: column j is `(c v_j)(I - lambda_j A)^-1 C`.
#[derive(Debug, Clone)]
pub struct PBuild {
    pub p: DMatrix<Complex64>,
    pub min_singular_value: f64,
    /// sigma_min / sigma_max of P; the full-rank margin.
    pub sv_ratio: f64,
    /// Smallest |c v_j| / ||c|| over eigenvectors; how close the observation
    /// comes to missing an eigendirection.
    pub min_alignment: f64,
}

impl LinearGsProblem {
    pub fn new(
        reservoir: LinearReservoir,
        source: LinearSource,
        c_obs: RowDVector<f64>,
    ) -> Result<Self> {
        if c_obs.len() != source.dim() {
            return Err(Error::DimensionMismatch {
                context: "LinearGsProblem::new",
                expected: source.dim().to_string(),
                got: c_obs.len().to_string(),
            });
        }
        if c_obs.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(
                "observation coefficients must be finite".into(),
            ));
        }
        Ok(Self {
            reservoir,
            source,
            c_obs,
        })
    }

    pub fn reservoir(&self) -> &LinearReservoir {
        &self.reservoir
    }

    pub fn source(&self) -> &LinearSource {
        &self.source
    }

    pub fn obs_coefficients(&self) -> &RowDVector<f64> {
        &self.c_obs
    }

    pub fn state_dim(&self) -> usize {
        self.reservoir.dim()
    }

    pub fn source_dim(&self) -> usize {
        self.source.dim()
    }

    /// Evaluates the convergence gate without failing.
    pub fn check_convergence(&self) -> GateReport {
        let rho_a = self.reservoir.spectral_radius();
        let rho_m_inv = linalg::spectral_radius(self.source.inverse_matrix());
        let product = rho_a * rho_m_inv;
        GateReport {
            rho_a,
            rho_m_inv,
            product,
            pass: product < 1.0,
            margin: 1.0 - product,
        }
    }

    fn gated(&self) -> Result<GateReport> {
        let gate = self.check_convergence();
        if !gate.pass {
            return Err(Error::DivergentSeries {
                rho_a: gate.rho_a,
                rho_m_inv: gate.rho_m_inv,
                product: gate.product,
            });
        }
        Ok(gate)
    }

    /// Solves for J via the Kronecker lift
    /// `(I - (M^-1)^T (x) A) vec(J) = vec(C c)`.
    pub fn gs_matrix(&self) -> Result<GsLinearMap> {
        self.gated()?;
        let n = self.state_dim();
        let q = self.source_dim();
        let a = self.reservoir.a();
        let m_inv = self.source.inverse_matrix();
        let b = self.reservoir.c() * &self.c_obs;

        let lifted = DMatrix::identity(n * q, n * q) - m_inv.transpose().kronecker(a);
        let cond = linalg::condition_number(&lifted);
        if cond > COND_LIMIT {
            return Err(Error::IllConditioned {
                context: "synchronization solve",
                cond,
                limit: COND_LIMIT,
            });
        }
        let rhs = DVector::from_column_slice(b.as_slice());
        let sol = lifted
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or(Error::IllConditioned {
                context: "synchronization solve",
                cond: f64::INFINITY,
                limit: COND_LIMIT,
            })?;
        let j = DMatrix::from_column_slice(n, q, sol.as_slice());

        let map = GsLinearMap { j };
        let residual = map.fixed_point_residual(self);
        let scale = 1.0 + b.norm();
        if residual > RESIDUAL_TOL * scale {
            return Err(Error::IllConditioned {
                context: "synchronization residual",
                cond,
                limit: COND_LIMIT,
            });
        }
        Ok(map)
    }

    /// `f(m) = J m`. Recomputes J; hold a [`GsLinearMap`] for repeated use.
    pub fn gs_value(&self, m: &DVector<f64>) -> Result<DVector<f64>> {
        if m.len() != self.source_dim() {
            return Err(Error::DimensionMismatch {
                context: "gs_value",
                expected: self.source_dim().to_string(),
                got: m.len().to_string(),
            });
        }
        Ok(self.gs_matrix()?.apply(m))
    }

    /// Builds P on the provided eigenpairs of the inverse source map and
    /// reports its rank margins.
    ///
    /// `rank_ratio_tol` defaults to 1e-10 on `sigma_min / sigma_max`.
    pub fn build_p(&self, eig: &Eigenpairs, rank_ratio_tol: Option<f64>) -> Result<PBuild> {
        self.gated()?;
        let q = self.source_dim();
        let n = self.state_dim();
        if eig.dim() != q {
            return Err(Error::DimensionMismatch {
                context: "build_p",
                expected: q.to_string(),
                got: eig.dim().to_string(),
            });
        }
        let rank_tol = rank_ratio_tol.unwrap_or(RANK_RATIO_TOL);

        let a_c: DMatrix<Complex64> = self.reservoir.a().map(|x| Complex64::new(x, 0.0));
        let c_res: DVector<Complex64> = self.reservoir.c().map(|x| Complex64::new(x, 0.0));
        let c_norm = self.c_obs.norm().max(f64::MIN_POSITIVE);

        let mut p = DMatrix::<Complex64>::zeros(n, q);
        let mut min_alignment = f64::INFINITY;
        for (j, lambda) in eig.values.iter().enumerate() {
            let v = eig.vectors.column(j);
            // c v_j with real c and complex v_j
            let mut align = Complex64::new(0.0, 0.0);
            for (ck, vk) in self.c_obs.iter().zip(v.iter()) {
                align += Complex64::new(*ck, 0.0) * vk;
            }
            min_alignment = min_alignment.min(align.norm() / c_norm);
            if align.norm() / c_norm <= OBSERVABILITY_TOL {
                return Err(Error::ObservabilityFailure {
                    ratio: align.norm() / c_norm,
                    tol: OBSERVABILITY_TOL,
                });
            }
            // (I - lambda A) y = C; invertible because |lambda| rho(A) < 1
            let shifted = DMatrix::<Complex64>::identity(n, n) - &a_c * *lambda;
            let y = shifted.lu().solve(&c_res).ok_or(Error::IllConditioned {
                context: "eigen slice solve",
                cond: f64::INFINITY,
                limit: COND_LIMIT,
            })?;
            p.set_column(j, &(y * align));
        }

        let (sv_min, sv_max) = linalg::singular_extremes_complex(&p);
        let sv_ratio = if sv_max > 0.0 { sv_min / sv_max } else { 0.0 };
        if sv_ratio <= rank_tol {
            return Err(Error::RankDeficientP {
                ratio: sv_ratio,
                tol: rank_tol,
            });
        }
        Ok(PBuild {
            p,
            min_singular_value: sv_min,
            sv_ratio,
            min_alignment,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::rng::substream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn scalar_problem(a: f64, m: f64, c_res: f64, c_obs: f64) -> LinearGsProblem {
        LinearGsProblem::new(
            LinearReservoir::new(
                DMatrix::from_element(1, 1, a),
                DVector::from_element(1, c_res),
            )
            .unwrap(),
            LinearSource::scaling(m).unwrap(),
            RowDVector::from_element(1, c_obs),
        )
        .unwrap()
    }

    /// Series evaluation with a block tail bound: find p <= 64 with
    /// sigma = ||A^p|| ||M^-p|| < 1, then bound the tail of the partial sums
    /// by a geometric series over blocks of length p. Works for non-normal A
    /// where the single-step bound ||A|| ||M^-1|| may exceed 1.
    fn series_oracle(problem: &LinearGsProblem, tol: f64) -> DMatrix<f64> {
        let a = problem.reservoir().a();
        let m_inv = problem.source().inverse_matrix();
        let b = problem.reservoir().c() * problem.obs_coefficients();

        let mut block = 1usize;
        let mut a_pow = a.clone();
        let mut m_pow = m_inv.clone();
        let mut sigma = a_pow.norm() * m_pow.norm();
        while sigma >= 1.0 && block < 64 {
            block += 1;
            a_pow = &a_pow * a;
            m_pow = &m_pow * m_inv;
            sigma = a_pow.norm() * m_pow.norm();
        }
        assert!(sigma < 1.0, "no contracting block found");
        let mut prefix = 0.0;
        let mut ar = DMatrix::identity(a.nrows(), a.nrows());
        let mut mr = DMatrix::identity(m_inv.nrows(), m_inv.nrows());
        for _ in 0..block {
            prefix += ar.norm() * mr.norm();
            ar = &ar * a;
            mr = &mr * m_inv;
        }

        let mut sum = b.clone();
        let mut term = b.clone();
        for _ in 1..=10_000 {
            term = a * &term * m_inv;
            sum += &term;
            // tail after this term: sum over later blocks
            let tail = prefix * term.norm() * sigma / (1.0 - sigma);
            if tail <= tol {
                return sum;
            }
        }
        panic!("series did not reach the tail bound");
    }

    fn random_gated_problem(seed: u64) -> LinearGsProblem {
        let mut rng = substream(seed, "gs-random", 0);
        let q = rng.random_range(1..=3);
        let n = rng.random_range(1..=7);
        let reservoir =
            LinearReservoir::random(n, rng.random_range(0.2..0.8), &mut rng).unwrap();
        // random source rescaled so the gate product lands in (0.1, 0.9)
        let raw = DMatrix::from_fn(q, q, |_, _| rng.random_range(-1.0..=1.0))
            + DMatrix::identity(q, q) * 1.5;
        let rho_inv = linalg::spectral_radius(&raw.clone().try_inverse().unwrap());
        let target = rng.random_range(0.1..0.9) / reservoir.spectral_radius();
        // rho((sM)^-1) = rho(M^-1) / s
        let s = rho_inv / target;
        let source = LinearSource::new(raw * s).unwrap();
        let c_obs = RowDVector::from_fn(q, |_, j| 1.0 + 0.3 * (j as f64));
        LinearGsProblem::new(reservoir, source, c_obs).unwrap()
    }

    #[test]
    fn gate_report_scalar_cases() {
        let g = scalar_problem(1.0 / 3.0, 2.0, 1.0, 1.0).check_convergence();
        assert_abs_diff_eq!(g.product, 1.0 / 6.0, epsilon = 1e-14);
        assert!(g.pass);

        let g = scalar_problem(1.0 / 3.0, 0.5, 1.0, 1.0).check_convergence();
        assert_abs_diff_eq!(g.product, 2.0 / 3.0, epsilon = 1e-14);
        assert!(g.pass);

        let g = scalar_problem(0.9, 0.5, 1.0, 1.0).check_convergence();
        assert_abs_diff_eq!(g.product, 1.8, epsilon = 1e-14);
        assert!(!g.pass);
    }

    #[test]
    fn divergent_gate_fails_the_solve() {
        match scalar_problem(0.9, 0.5, 1.0, 1.0).gs_matrix() {
            Err(Error::DivergentSeries { product, .. }) => {
                assert_abs_diff_eq!(product, 1.8, epsilon = 1e-12)
            }
            other => panic!("expected DivergentSeries, got {other:?}"),
        }
    }

    #[test]
    fn scalar_golden_value() {
        // geometric series: sum (1/6)^k = 6/5
        let p = scalar_problem(1.0 / 3.0, 2.0, 1.0, 1.0);
        let j = p.gs_matrix().unwrap();
        assert_abs_diff_eq!(j.matrix()[(0, 0)], 6.0 / 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            p.gs_value(&DVector::from_element(1, 5.0)).unwrap()[0],
            6.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn memoryless_reservoir_keeps_only_the_leading_term() {
        // A = 0 kills every k >= 1 term, leaving J = C c.
        let mut rng = substream(17, "gs-a0", 0);
        let c_res = DVector::from_fn(3, |_, _| rng.random_range(-1.0..=1.0));
        let c_obs = RowDVector::from_vec(vec![2.0, -1.0]);
        let p = LinearGsProblem::new(
            LinearReservoir::new(DMatrix::zeros(3, 3), c_res.clone()).unwrap(),
            LinearSource::rotation(0.7).unwrap(),
            c_obs.clone(),
        )
        .unwrap();
        let j = p.gs_matrix().unwrap();
        assert!((j.matrix() - c_res * c_obs).norm() <= 1e-12);
    }

    #[test]
    fn zero_point_maps_to_zero() {
        let p = random_gated_problem(1);
        let out = p.gs_value(&DVector::zeros(p.source_dim())).unwrap();
        assert_eq!(out.norm(), 0.0);
    }

    #[test]
    fn solve_matches_series_on_random_instances() {
        for seed in 0..50 {
            let p = random_gated_problem(seed);
            let j = p.gs_matrix().unwrap();
            let series = series_oracle(&p, 1e-12);
            let gap = (j.matrix() - series).norm();
            assert!(gap <= 1e-9, "seed {seed}: {gap}");
        }
    }

    #[test]
    fn fixed_point_residual_is_tiny() {
        for seed in 0..50 {
            let p = random_gated_problem(seed);
            let j = p.gs_matrix().unwrap();
            assert!(j.fixed_point_residual(&p) <= 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn homogeneity_up_to_rounding() {
        let p = random_gated_problem(7);
        let j = p.gs_matrix().unwrap();
        let mut rng = substream(7, "gs-homog", 0);
        for _ in 0..20 {
            let m = DVector::from_fn(p.source_dim(), |_, _| rng.random_range(-1.0..=1.0));
            let alpha: f64 = rng.random_range(-3.0..3.0);
            let lhs = j.apply(&(&m * alpha));
            let rhs = j.apply(&m) * alpha;
            assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + alpha.abs()));
        }
    }

    #[test]
    fn eigen_action_matches_p_columns() {
        for seed in 0..20 {
            let p = random_gated_problem(seed);
            let eig = match p.source().eigenpairs_inverse(None) {
                Ok(e) => e,
                // random draws may produce clustered spectra; skip those
                Err(Error::NonDistinctEigenvalues { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            let built = match p.build_p(&eig, None) {
                Ok(b) => b,
                Err(Error::RankDeficientP { .. }) => continue,
                Err(e) => panic!("{e}"),
            };
            let j = p.gs_matrix().unwrap();
            let jc: DMatrix<Complex64> = j.matrix().map(|x| Complex64::new(x, 0.0));
            let residual = (&jc * &eig.vectors - &built.p).norm();
            assert!(residual <= 1e-9, "seed {seed}: residual {residual}");
        }
    }

    #[test]
    fn scalar_p_matches_hand_value() {
        let p = scalar_problem(1.0 / 3.0, 2.0, 1.0, 1.0);
        let eig = p.source().eigenpairs_inverse(None).unwrap();
        let built = p.build_p(&eig, None).unwrap();
        // (1 - (1/2)(1/3))^-1 = 6/5
        assert_abs_diff_eq!(built.p[(0, 0)].re, 6.0 / 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(built.p[(0, 0)].im, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn memoryless_reservoir_has_rank_one_p() {
        // A = 0 makes every column of P parallel to C.
        let p = LinearGsProblem::new(
            LinearReservoir::new(DMatrix::zeros(3, 3), DVector::from_vec(vec![1.0, 0.5, -0.25]))
                .unwrap(),
            LinearSource::diagonal(&[2.0, 4.0]).unwrap(),
            RowDVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let eig = p.source().eigenpairs_inverse(None).unwrap();
        match p.build_p(&eig, None) {
            Err(Error::RankDeficientP { .. }) => {}
            other => panic!("expected RankDeficientP, got {other:?}"),
        }
    }

    #[test]
    fn orthogonal_observation_fails_observability() {
        // c = e1 is orthogonal to the e2 eigendirection of a diagonal source.
        let p = LinearGsProblem::new(
            LinearReservoir::new(
                DMatrix::from_diagonal(&DVector::from_vec(vec![0.3, 0.1])),
                DVector::from_vec(vec![1.0, 1.0]),
            )
            .unwrap(),
            LinearSource::diagonal(&[2.0, 4.0]).unwrap(),
            RowDVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap();
        let eig = p.source().eigenpairs_inverse(None).unwrap();
        match p.build_p(&eig, None) {
            Err(Error::ObservabilityFailure { .. }) => {}
            other => panic!("expected ObservabilityFailure, got {other:?}"),
        }
    }

    #[test]
    fn sampled_gs_matches_closed_form() {
        // cross-module check against the driven estimate
        use crate::reservoir::estimate_gs;
        use crate::sources::{Observation, Source};

        let mut rng = substream(3, "gs-cross", 0);
        let reservoir = LinearReservoir::random(5, 0.5, &mut rng).unwrap();
        let source_lin = LinearSource::rotation(1.0).unwrap();
        let c_obs = RowDVector::from_vec(vec![1.0, 0.0]);
        let problem =
            LinearGsProblem::new(reservoir.clone(), source_lin.clone(), c_obs.clone()).unwrap();
        let j = problem.gs_matrix().unwrap();

        let source: Source = source_lin.into();
        let obs = Observation::linear(c_obs);
        let m0 = DVector::from_vec(vec![1.0, 0.0]);
        let x0a = DVector::from_fn(5, |_, _| rng.random_range(-1.0..=1.0));
        let x0b = DVector::zeros(5);
        let est = estimate_gs(
            &reservoir,
            &source,
            &obs,
            &m0,
            200,
            50,
            (&x0a, &x0b),
            1e-9,
        )
        .unwrap();
        for (m, x) in est.gs.points.iter().zip(est.gs.images.iter()) {
            assert!((x - j.apply(m)).norm() <= 1e-8);
        }
    }
}
