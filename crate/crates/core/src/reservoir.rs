//! Reservoir maps and driven trajectories.
//!
//! A reservoir is a state update `x' = F(x, z)` fed by the scalar input
//! `z_k = omega(m_k)`. Driving two copies from different initial states and
//! watching the gap close is the working surrogate for the existence of a
//! synchronization map; the post-washout states are its samples.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::sources::{Observation, Source};

/// State update driven by one scalar input per step.
pub trait ReservoirMap {
    fn state_dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>, z: f64) -> DVector<f64>;
}

/// Linear reservoir `x' = A x + C z`.
#[derive(Debug, Clone)]
pub struct LinearReservoir {
    a: DMatrix<f64>,
    c: DVector<f64>,
}

impl LinearReservoir {
    pub fn new(a: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != c.len() {
            return Err(Error::DimensionMismatch {
                context: "LinearReservoir::new",
                expected: format!("{n}x{n} matrix with {n}-vector", n = c.len()),
                got: format!("{}x{} with {}", a.nrows(), a.ncols(), c.len()),
            });
        }
        if !linalg::all_finite_mat(&a) || !linalg::all_finite_vec(&c) {
            return Err(Error::Config("reservoir entries must be finite".into()));
        }
        Ok(Self { a, c })
    }

    /// Delay-line reservoir: ones on the subdiagonal of `A`, `C = e1`.
    ///
    /// Driving it stacks the most recent inputs newest-first, and `A^N = 0`
    /// makes the two-trajectory gap exactly zero after `N` steps.
    pub fn takens(n: usize) -> Self {
        assert!(n >= 1, "delay reservoir needs at least one stage");
        let a = DMatrix::from_fn(n, n, |i, j| if i == j + 1 { 1.0 } else { 0.0 });
        let mut c = DVector::zeros(n);
        c[0] = 1.0;
        Self { a, c }
    }

    /// Random reservoir: entries i.i.d. uniform on [-1, 1], then `A` rescaled
    /// so its spectral radius hits `target_rho` exactly.
    pub fn random(n: usize, target_rho: f64, rng: &mut impl Rng) -> Result<Self> {
        let (a, c) = random_weights(n, target_rho, rng)?;
        Self::new(a, c)
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.a)
    }

    /// Similarity transform by `h`: `(A, C) -> (h A h^-1, h C)`.
    pub fn conjugate(&self, h: &DMatrix<f64>) -> Result<LinearReservoir> {
        let h_inv = invert_conjugator(h, self.dim())?;
        LinearReservoir::new(h * &self.a * h_inv, h * &self.c)
    }

    /// Conjugation by the affine change of coordinates `x -> h x + t`.
    ///
    /// For `t = 0` this is `conjugate`. Otherwise the update picks up the
    /// constant `(I - h A h^-1) t` and the result is affine, not linear.
    pub fn conjugate_affine(&self, h: &DMatrix<f64>, t: &DVector<f64>) -> Result<AffineReservoir> {
        if t.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "conjugate_affine",
                expected: self.dim().to_string(),
                got: t.len().to_string(),
            });
        }
        let linear = self.conjugate(h)?;
        let offset = t - linear.a() * t;
        Ok(AffineReservoir { linear, offset })
    }
}

fn invert_conjugator(h: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    if !h.is_square() || h.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "conjugate",
            expected: format!("{n}x{n}"),
            got: format!("{}x{}", h.nrows(), h.ncols()),
        });
    }
    h.clone().try_inverse().ok_or(Error::SingularConjugation {
        context: "conjugator is not invertible".into(),
    })
}

impl ReservoirMap for LinearReservoir {
    fn state_dim(&self) -> usize {
        self.dim()
    }

    fn apply(&self, x: &DVector<f64>, z: f64) -> DVector<f64> {
        &self.a * x + &self.c * z
    }
}

/// Affine reservoir `x' = A x + C z + offset`, produced by affine conjugation.
#[derive(Debug, Clone)]
pub struct AffineReservoir {
    pub linear: LinearReservoir,
    pub offset: DVector<f64>,
}

impl ReservoirMap for AffineReservoir {
    fn state_dim(&self) -> usize {
        self.linear.dim()
    }

    fn apply(&self, x: &DVector<f64>, z: f64) -> DVector<f64> {
        self.linear.apply(x, z) + &self.offset
    }
}

/// Saturating reservoir `x' = tanh(A x + C z + b)`, the usual echo-state
/// construction. A demo vehicle: nothing here is proved about it beyond what
/// the gap curve shows empirically.
#[derive(Debug, Clone)]
pub struct EsnReservoir {
    a: DMatrix<f64>,
    c: DVector<f64>,
    b: DVector<f64>,
}

impl EsnReservoir {
    pub fn new(a: DMatrix<f64>, c: DVector<f64>, b: DVector<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() != c.len() || b.len() != c.len() {
            return Err(Error::DimensionMismatch {
                context: "EsnReservoir::new",
                expected: format!("{n}x{n} matrix with two {n}-vectors", n = c.len()),
                got: format!(
                    "{}x{} with {} and {}",
                    a.nrows(),
                    a.ncols(),
                    c.len(),
                    b.len()
                ),
            });
        }
        if !linalg::all_finite_mat(&a) || !linalg::all_finite_vec(&c) || !linalg::all_finite_vec(&b)
        {
            return Err(Error::Config("reservoir entries must be finite".into()));
        }
        Ok(Self { a, c, b })
    }

    /// Random weights i.i.d. uniform on [-1, 1]; `A` rescaled to the target
    /// spectral radius. `rho < 1` is the usual contraction heuristic, not a
    /// guarantee; the gap curve is the certificate either way.
    pub fn random(n: usize, target_rho: f64, rng: &mut impl Rng) -> Result<Self> {
        let (a, c) = random_weights(n, target_rho, rng)?;
        let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        Self::new(a, c, b)
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn spectral_radius(&self) -> f64 {
        linalg::spectral_radius(&self.a)
    }
}

impl ReservoirMap for EsnReservoir {
    fn state_dim(&self) -> usize {
        self.dim()
    }

    fn apply(&self, x: &DVector<f64>, z: f64) -> DVector<f64> {
        let mut out = &self.a * x + &self.c * z + &self.b;
        for v in out.iter_mut() {
            *v = v.tanh();
        }
        out
    }
}

fn random_weights(
    n: usize,
    target_rho: f64,
    rng: &mut impl Rng,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if n == 0 {
        return Err(Error::Config("reservoir dimension must be positive".into()));
    }
    if !(target_rho.is_finite() && target_rho > 0.0) {
        return Err(Error::Config(
            "target spectral radius must be positive and finite".into(),
        ));
    }
    let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..=1.0));
    let rho = linalg::spectral_radius(&a);
    if rho <= f64::MIN_POSITIVE {
        return Err(Error::Config(
            "sampled reservoir matrix is nilpotent; cannot rescale to a spectral radius".into(),
        ));
    }
    a *= target_rho / rho;
    let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
    Ok((a, c))
}

/// Orbit of a driven reservoir. `states` has one more entry than `inputs`:
/// `states[k+1] = F(states[k], inputs[k])`. When the drive is co-recorded
/// with the source, `source_points[k]` is the point observed to produce
/// `inputs[k]`; otherwise it is empty.
#[derive(Debug, Clone)]
pub struct DrivenTrajectory {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<f64>,
    pub source_points: Vec<DVector<f64>>,
}

/// Drives the reservoir through the given inputs from `x0`.
pub fn drive<R: ReservoirMap>(
    reservoir: &R,
    x0: &DVector<f64>,
    inputs: &[f64],
) -> Result<DrivenTrajectory> {
    if inputs.is_empty() {
        return Err(Error::InsufficientSamples {
            context: "drive",
            got: 0,
            need: 1,
        });
    }
    if x0.len() != reservoir.state_dim() {
        return Err(Error::DimensionMismatch {
            context: "drive",
            expected: reservoir.state_dim().to_string(),
            got: x0.len().to_string(),
        });
    }
    let mut states = Vec::with_capacity(inputs.len() + 1);
    states.push(x0.clone());
    for (k, z) in inputs.iter().enumerate() {
        let next = reservoir.apply(states.last().unwrap(), *z);
        if !linalg::all_finite_vec(&next) {
            return Err(Error::NonFiniteState { step: k });
        }
        states.push(next);
    }
    Ok(DrivenTrajectory {
        states,
        inputs: inputs.to_vec(),
        source_points: Vec::new(),
    })
}

/// Drives the reservoir by observations of the source orbit starting at
/// `m0`, co-recording the source points.
pub fn drive_coupled<R: ReservoirMap>(
    reservoir: &R,
    source: &Source,
    obs: &Observation,
    m0: &DVector<f64>,
    x0: &DVector<f64>,
    steps: usize,
) -> Result<DrivenTrajectory> {
    let points = source.sample_trajectory(m0, 0, steps)?;
    let inputs: Vec<f64> = points.iter().map(|m| obs.value(m)).collect();
    let mut traj = drive(reservoir, x0, &inputs)?;
    traj.source_points = points;
    Ok(traj)
}

/// Samples of a synchronization map: `images[i]` is the reservoir state
/// recorded immediately after absorbing the observation of `points[i]`.
#[derive(Debug, Clone)]
pub struct SampledGs {
    pub points: Vec<DVector<f64>>,
    pub images: Vec<DVector<f64>>,
    pub jacobians: Option<Vec<DMatrix<f64>>>,
}

/// Two-trajectory gap record from an echo-state probe.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    /// `gaps[k] = ||x_k^(1) - x_k^(2)||`, starting at k = 0.
    pub gaps: Vec<f64>,
    pub tol: f64,
    pub final_gap: f64,
    pub converged: bool,
}

/// Everything an echo-state probe produces: the sampled map, the gap record,
/// and the primary trajectory it was read from.
#[derive(Debug, Clone)]
pub struct GsEstimation {
    pub gs: SampledGs,
    pub report: ConvergenceReport,
    pub trajectory: DrivenTrajectory,
}

/// Runs the two-trajectory probe without judging the outcome.
///
/// Both reservoir copies are driven by the same observation sequence from
/// the two initial states in `x0_pair`. After `washout` steps the primary
/// trajectory is sampled: the pair `(m_k, x_{k+1})` records the state right
/// after `omega(m_k)` was absorbed, which is the alignment under which the
/// samples converge to one map as the gap closes.
pub fn esp_probe<R: ReservoirMap>(
    reservoir: &R,
    source: &Source,
    obs: &Observation,
    m0: &DVector<f64>,
    washout: usize,
    n: usize,
    x0_pair: (&DVector<f64>, &DVector<f64>),
    tol: f64,
) -> Result<GsEstimation> {
    if washout == 0 {
        return Err(Error::Config("washout must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InsufficientSamples {
            context: "esp_probe",
            got: 0,
            need: 1,
        });
    }
    if x0_pair.0 == x0_pair.1 {
        return Err(Error::Config(
            "the two initial reservoir states must differ".into(),
        ));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Config(
            "synchronization tolerance must be positive".into(),
        ));
    }

    let steps = washout + n;
    let primary = drive_coupled(reservoir, source, obs, m0, x0_pair.0, steps)?;
    let secondary = drive(reservoir, x0_pair.1, &primary.inputs)?;

    let gaps: Vec<f64> = primary
        .states
        .iter()
        .zip(secondary.states.iter())
        .map(|(x, y)| (x - y).norm())
        .collect();
    let final_gap = *gaps.last().unwrap();
    let report = ConvergenceReport {
        converged: final_gap < tol,
        final_gap,
        tol,
        gaps,
    };

    let mut points = Vec::with_capacity(n);
    let mut images = Vec::with_capacity(n);
    for k in washout..steps {
        points.push(primary.source_points[k].clone());
        images.push(primary.states[k + 1].clone());
    }

    Ok(GsEstimation {
        gs: SampledGs {
            points,
            images,
            jacobians: None,
        },
        report,
        trajectory: primary,
    })
}

/// Like [`esp_probe`], but fails with `NoSynchronization` when the gap does
/// not close; the returned samples are then trustworthy as a sampled map.
pub fn estimate_gs<R: ReservoirMap>(
    reservoir: &R,
    source: &Source,
    obs: &Observation,
    m0: &DVector<f64>,
    washout: usize,
    n: usize,
    x0_pair: (&DVector<f64>, &DVector<f64>),
    tol: f64,
) -> Result<GsEstimation> {
    let est = esp_probe(reservoir, source, obs, m0, washout, n, x0_pair, tol)?;
    if !est.report.converged {
        return Err(Error::NoSynchronization {
            steps: est.report.gaps.len() - 1,
            final_gap: est.report.final_gap,
            tol,
        });
    }
    Ok(est)
}

/// Largest eigenvalue modulus; re-exported here because the convergence
/// gates are phrased in terms of it.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    linalg::spectral_radius(a)
}
