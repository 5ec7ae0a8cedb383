//! Numerical certification of synchronization maps: injectivity and
//! immersion surrogates, isometry defects over samples, synchronization
//! error curves, arc-length and angle preservation, and the dimension gate.
//!
//! Everything here works on sampled data, so the checks apply equally to
//! closed-form linear maps and to maps estimated from driven trajectories.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isometrize::MetricTensor;
use crate::linalg;
use crate::reservoir::{ConvergenceReport, SampledGs};

/// Outcome of comparing the reservoir dimension against the embedding
/// bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DimensionGate {
    InsufficientDimension,
    EmbeddingFeasible,
}

impl DimensionGate {
    pub fn feasible(self) -> bool {
        matches!(self, DimensionGate::EmbeddingFeasible)
    }
}

/// Whitney-style dimension gate: `N` states can embed a `q`-dimensional
/// source only when `N > 2q`; for integers this coincides with the minimal
/// isometric bound `N >= 2q + 1`.
pub fn dimension_gate(state_dim: usize, source_dim: usize) -> DimensionGate {
    assert!(state_dim >= 1 && source_dim >= 1, "dimensions must be positive");
    if state_dim > 2 * source_dim {
        DimensionGate::EmbeddingFeasible
    } else {
        DimensionGate::InsufficientDimension
    }
}

/// Human-readable statement of both named bounds for a given pair.
pub fn dimension_gate_statement(state_dim: usize, source_dim: usize) -> String {
    let gate = dimension_gate(state_dim, source_dim);
    let verdict = match gate {
        DimensionGate::EmbeddingFeasible => "feasible",
        DimensionGate::InsufficientDimension => "insufficient",
    };
    format!(
        "N = {state_dim}, q = {source_dim}: {verdict} (Whitney strict bound N > 2q = {w}; \
         minimal isometric bound N >= 2q + 1 = {n})",
        w = 2 * source_dim,
        n = 2 * source_dim + 1,
    )
}

/// Worst-case image-to-source gap ratio over separated sample pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InjectivityReport {
    /// min over separated pairs of `||f(m_i) - f(m_j)|| / ||m_i - m_j||`.
    pub min_ratio: f64,
    /// Image gap `||f(m_i) - f(m_j)||` at the worst pair.
    pub min_image_gap: f64,
    pub worst_pair: (usize, usize),
    /// Source-space separation floor actually used.
    pub separation_floor: f64,
    pub pairs_tested: usize,
    /// `min_ratio > ratio_tol`.
    pub pass: bool,
}

/// Scans all sample pairs at least `sep_floor_scale * diam` apart in source
/// space and reports the smallest image-gap ratio. Near-duplicate pairs are
/// excluded because trajectory samples on periodic orbits nearly repeat.
pub fn injectivity_check(
    gs: &SampledGs,
    ratio_tol: f64,
    sep_floor_scale: f64,
) -> Result<InjectivityReport> {
    let n = gs.points.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            context: "injectivity_check",
            got: n,
            need: 2,
        });
    }
    if gs.images.len() != n {
        return Err(Error::DimensionMismatch {
            context: "injectivity_check",
            expected: format!("{n} images"),
            got: gs.images.len().to_string(),
        });
    }

    let diam = (0..n - 1)
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0_f64;
            for j in i + 1..n {
                best = best.max((&gs.points[i] - &gs.points[j]).norm());
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    let floor = sep_floor_scale * diam;

    let best = (0..n - 1)
        .into_par_iter()
        .map(|i| {
            let mut local: Option<(f64, f64, (usize, usize))> = None;
            let mut tested = 0usize;
            for j in i + 1..n {
                let sep = (&gs.points[i] - &gs.points[j]).norm();
                if sep < floor || sep == 0.0 {
                    continue;
                }
                tested += 1;
                let gap = (&gs.images[i] - &gs.images[j]).norm();
                let ratio = gap / sep;
                if local.as_ref().is_none_or(|(r, _, _)| ratio < *r) {
                    local = Some((ratio, gap, (i, j)));
                }
            }
            (local, tested)
        })
        .reduce(
            || (None, 0),
            |(a, ta), (b, tb)| {
                let merged = match (a, b) {
                    (None, b) => b,
                    (a, None) => a,
                    (Some(x), Some(y)) => Some(if x.0 <= y.0 { x } else { y }),
                };
                (merged, ta + tb)
            },
        );

    let (Some((min_ratio, min_image_gap, worst_pair)), pairs_tested) = best else {
        return Err(Error::InsufficientSamples {
            context: "injectivity_check separated pairs",
            got: 0,
            need: 1,
        });
    };
    Ok(InjectivityReport {
        min_ratio,
        min_image_gap,
        worst_pair,
        separation_floor: floor,
        pairs_tested,
        pass: min_ratio > ratio_tol,
    })
}

/// Smallest q-th singular value over a set of sampled Jacobians.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImmersionReport {
    pub min_singular_value: f64,
    /// Index of the sample attaining the minimum.
    pub argmin: usize,
    /// `min_singular_value > tol`.
    pub rank_ok: bool,
}

pub fn immersion_check(jacobians: &[DMatrix<f64>], tol: f64) -> Result<ImmersionReport> {
    if jacobians.is_empty() {
        return Err(Error::InsufficientSamples {
            context: "immersion_check",
            got: 0,
            need: 1,
        });
    }
    let per_sample: Vec<f64> = jacobians
        .par_iter()
        .map(|d| {
            let sv = linalg::singular_values(d);
            sv[sv.len() - 1]
        })
        .collect();
    let (argmin, min_singular_value) = per_sample
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty");
    Ok(ImmersionReport {
        min_singular_value,
        argmin,
        rank_ok: min_singular_value > tol,
    })
}

/// Per-step gap sequence with a fitted exponential rate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyncCurve {
    /// `(k, gap_k)` for every probe step, starting at k = 0.
    pub samples: Vec<(usize, f64)>,
    /// Exponential rate from a log-linear fit over the tail half of the
    /// positive prefix; `None` when fewer than two positive gaps exist.
    pub fitted_rate: Option<f64>,
    /// Fitted rate exceeds 1: the gap is growing, not synchronizing.
    pub diverging: bool,
}

/// Fits `gap_k ~ C * rate^k` on the tail half of the positive prefix of the
/// gap sequence. Gaps collapse to exactly zero once trajectories meet at
/// machine precision, so the fit must stop at the first zero.
pub fn sync_error_curve(report: &ConvergenceReport) -> SyncCurve {
    let samples: Vec<(usize, f64)> = report.gaps.iter().copied().enumerate().collect();
    let prefix = report
        .gaps
        .iter()
        .position(|g| *g == 0.0)
        .unwrap_or(report.gaps.len());
    let start = prefix / 2;
    let window = &report.gaps[start..prefix];
    let fitted_rate = if window.len() >= 2 {
        let m = window.len() as f64;
        let mut sk = 0.0;
        let mut sl = 0.0;
        let mut skk = 0.0;
        let mut skl = 0.0;
        for (off, g) in window.iter().enumerate() {
            let k = (start + off) as f64;
            let l = g.ln();
            sk += k;
            sl += l;
            skk += k * k;
            skl += k * l;
        }
        let denom = m * skk - sk * sk;
        if denom.abs() > 0.0 {
            Some(((m * skl - sk * sl) / denom).exp())
        } else {
            None
        }
    } else {
        None
    };
    SyncCurve {
        samples,
        fitted_rate,
        diverging: fitted_rate.is_some_and(|r| r > 1.0),
    }
}

/// Relative error between the metric polygonal length of an ordered curve
/// and the Euclidean polygonal length of its image.
pub fn arc_length_compare<F>(
    points: &[DVector<f64>],
    map: F,
    g: &MetricTensor,
) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if points.len() < 3 {
        return Err(Error::InsufficientSamples {
            context: "arc_length_compare",
            got: points.len(),
            need: 3,
        });
    }
    let mut source_len = 0.0;
    let mut image_len = 0.0;
    let mut prev_image = map(&points[0]);
    for w in points.windows(2) {
        let dm = &w[1] - &w[0];
        source_len += g.norm(&dm);
        let next_image = map(&w[1]);
        image_len += (&next_image - &prev_image).norm();
        prev_image = next_image;
    }
    if source_len == 0.0 {
        return Err(Error::DegenerateTangent {
            reason: "curve has zero metric length".into(),
        });
    }
    Ok((image_len - source_len).abs() / source_len)
}

/// Absolute difference (radians) between the metric angle of `(u, y)` and
/// the Euclidean angle of `(J u, J y)`.
pub fn angle_compare(
    u: &DVector<f64>,
    y: &DVector<f64>,
    j: &DMatrix<f64>,
    g: &MetricTensor,
    tol: f64,
) -> Result<f64> {
    let nu = g.norm(u);
    let ny = g.norm(y);
    if nu <= tol || ny <= tol {
        return Err(Error::DegenerateTangent {
            reason: format!("tangent metric norms {nu:.3e}, {ny:.3e} at or below {tol:.1e}"),
        });
    }
    let ju = j * u;
    let jy = j * y;
    let nju = ju.norm();
    let njy = jy.norm();
    if nju <= tol || njy <= tol {
        return Err(Error::DegenerateTangent {
            reason: format!("image norms {nju:.3e}, {njy:.3e} at or below {tol:.1e}"),
        });
    }
    let cos_g = (g.inner(u, y) / (nu * ny)).clamp(-1.0, 1.0);
    let cos_e = (ju.dot(&jy) / (nju * njy)).clamp(-1.0, 1.0);
    Ok((cos_g.acos() - cos_e.acos()).abs())
}

/// Local linear fits of the sampled map.
#[derive(Debug, Clone)]
pub struct JacobianEstimates {
    pub jacobians: Vec<DMatrix<f64>>,
    /// Condition number of each local design matrix; distrust large values.
    pub conditions: Vec<f64>,
    pub neighbors: usize,
}

/// Estimates the Jacobian at every sample by Gaussian-weighted least squares
/// over the k nearest neighbors (default `k = 2q + 2`). The bandwidth is the
/// radius of the neighbor set.
pub fn estimate_jacobians(gs: &SampledGs, k: Option<usize>) -> Result<JacobianEstimates> {
    let n = gs.points.len();
    if n == 0 {
        return Err(Error::InsufficientSamples {
            context: "estimate_jacobians",
            got: 0,
            need: 1,
        });
    }
    let q = gs.points[0].len();
    let image_dim = gs.images[0].len();
    let k = k.unwrap_or(2 * q + 2);
    if k < q {
        return Err(Error::Config(format!(
            "jacobian estimation needs at least q = {q} neighbors, got k = {k}"
        )));
    }
    if n < k + 1 {
        return Err(Error::InsufficientSamples {
            context: "estimate_jacobians",
            got: n,
            need: k + 1,
        });
    }

    let fits: Vec<(DMatrix<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut dist: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, (&gs.points[j] - &gs.points[i]).norm()))
                .collect();
            dist.sort_by(|a, b| a.1.total_cmp(&b.1));
            dist.truncate(k);
            let bandwidth = dist
                .last()
                .map(|(_, d)| *d)
                .filter(|d| *d > 0.0)
                .unwrap_or(1.0);

            let mut x = DMatrix::zeros(k, q);
            let mut y = DMatrix::zeros(k, image_dim);
            for (row, (j, d)) in dist.iter().enumerate() {
                let w = (-(d / bandwidth).powi(2)).exp().sqrt();
                let dm = (&gs.points[*j] - &gs.points[i]) * w;
                let df = (&gs.images[*j] - &gs.images[i]) * w;
                x.set_row(row, &dm.transpose());
                y.set_row(row, &df.transpose());
            }

            let svd = x
                .clone()
                .try_svd(true, true, f64::EPSILON, 400 * k)
                .expect("SVD of a small design matrix converges");
            let sv = &svd.singular_values;
            let sv_max = sv[0];
            let sv_min = sv[sv.len() - 1];
            let cond = if sv_min > 0.0 {
                sv_max / sv_min
            } else {
                f64::INFINITY
            };
            let dt = svd
                .solve(&y, sv_max * 1e-12)
                .expect("pseudo-inverse solve with explicit cutoff");
            (dt.transpose(), cond)
        })
        .collect();

    let mut jacobians = Vec::with_capacity(n);
    let mut conditions = Vec::with_capacity(n);
    for (j, c) in fits {
        jacobians.push(j);
        conditions.push(c);
    }
    Ok(JacobianEstimates {
        jacobians,
        conditions,
        neighbors: k,
    })
}

/// Combined certification of one sampled map.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingReport {
    /// Smallest image-to-source gap ratio over separated pairs.
    pub min_image_gap: f64,
    pub worst_pair: (usize, usize),
    pub min_singular_value: f64,
    pub rank_ok: bool,
    pub isometry_defect_max: f64,
    pub dimension_gate: DimensionGate,
}

/// Runs injectivity, immersion, and per-sample isometry checks and combines
/// them with the dimension gate. `jacobians` must align with `gs` samples.
pub fn embedding_report(
    gs: &SampledGs,
    jacobians: &[DMatrix<f64>],
    g: &MetricTensor,
    state_dim: usize,
    ratio_tol: f64,
    sep_floor_scale: f64,
    rank_tol: f64,
) -> Result<EmbeddingReport> {
    let inj = injectivity_check(gs, ratio_tol, sep_floor_scale)?;
    let imm = immersion_check(jacobians, rank_tol)?;
    let isometry_defect_max = jacobians
        .par_iter()
        .map(|d| (d.transpose() * d - g.matrix()).norm())
        .reduce(|| 0.0, f64::max);
    let q = gs.points.first().map_or(0, |p| p.len());
    Ok(EmbeddingReport {
        min_image_gap: inj.min_ratio,
        worst_pair: inj.worst_pair,
        min_singular_value: imm.min_singular_value,
        rank_ok: imm.rank_ok,
        isometry_defect_max,
        dimension_gate: dimension_gate(state_dim, q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::rng::substream;
    use crate::reservoir::{esp_probe, LinearReservoir};
    use crate::sources::{LinearSource, Observation, Source};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use std::f64::consts::PI;

    fn random_points(seed: u64, n: usize, dim: usize) -> Vec<DVector<f64>> {
        let mut rng = substream(seed, "diag-points", 0);
        (0..n)
            .map(|_| DVector::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0)))
            .collect()
    }

    #[test]
    fn gate_matches_brute_inequality() {
        for q in 1..=10usize {
            for n in 1..=30usize {
                let expect = n > 2 * q;
                assert_eq!(
                    dimension_gate(n, q).feasible(),
                    expect,
                    "N = {n}, q = {q}"
                );
            }
        }
        assert_eq!(dimension_gate(5, 2), DimensionGate::EmbeddingFeasible);
        assert_eq!(dimension_gate(4, 2), DimensionGate::InsufficientDimension);
        assert_eq!(dimension_gate(3, 1), DimensionGate::EmbeddingFeasible);
    }

    #[test]
    fn gate_statement_names_both_bounds() {
        let s = dimension_gate_statement(5, 2);
        assert!(s.contains("N > 2q = 4"));
        assert!(s.contains("N >= 2q + 1 = 5"));
        assert!(s.contains("feasible"));
    }

    #[test]
    fn identity_map_has_unit_ratio() {
        let points = random_points(1, 50, 2);
        let gs = SampledGs {
            points: points.clone(),
            images: points,
            jacobians: None,
        };
        let rep = injectivity_check(&gs, 0.5, 1e-6).unwrap();
        assert_abs_diff_eq!(rep.min_ratio, 1.0, epsilon = 1e-12);
        assert!(rep.pass);
    }

    #[test]
    fn constant_map_collapses() {
        let points = random_points(2, 30, 2);
        let images = vec![DVector::zeros(3); 30];
        let gs = SampledGs {
            points,
            images,
            jacobians: None,
        };
        let rep = injectivity_check(&gs, 1e-3, 1e-6).unwrap();
        assert_eq!(rep.min_ratio, 0.0);
        assert!(!rep.pass);
    }

    #[test]
    fn linear_ratio_attains_min_singular_value() {
        // a pair aligned with the smallest right singular direction attains
        // the global lower bound sigma_q(J)
        let mut rng = substream(3, "diag-linear", 0);
        let j = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..=1.0));
        let svd = j.clone().try_svd(true, true, f64::EPSILON, 2000).unwrap();
        let sigma_min = svd.singular_values[1];
        let v_min = svd.v_t.as_ref().unwrap().row(1).transpose();

        let mut points = random_points(3, 40, 2);
        points.push(DVector::zeros(2));
        points.push(v_min.clone());
        let images: Vec<_> = points.iter().map(|m| &j * m).collect();
        let gs = SampledGs {
            points,
            images,
            jacobians: None,
        };
        let rep = injectivity_check(&gs, 1e-12, 1e-9).unwrap();
        assert_abs_diff_eq!(rep.min_ratio, sigma_min, epsilon = 1e-9);
    }

    #[test]
    fn duplicate_points_are_floored_out() {
        let mut points = random_points(4, 10, 2);
        points.push(points[0].clone());
        let images: Vec<_> = points.iter().map(|m| m.clone() * 2.0).collect();
        let gs = SampledGs {
            points,
            images,
            jacobians: None,
        };
        let rep = injectivity_check(&gs, 0.5, 1e-6).unwrap();
        assert_abs_diff_eq!(rep.min_ratio, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn too_few_samples_rejected() {
        let gs = SampledGs {
            points: vec![DVector::zeros(2)],
            images: vec![DVector::zeros(3)],
            jacobians: None,
        };
        assert!(matches!(
            injectivity_check(&gs, 0.5, 1e-6),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn circle_chord_arc_floor() {
        // exact antipodes are present for an even sample count, so the
        // worst chord/arc ratio over the circle is exactly 2/pi
        let n = 400;
        let points: Vec<DVector<f64>> = (0..n)
            .map(|i| {
                let t = 2.0 * PI * (i as f64) / (n as f64);
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect();
        let mut worst: f64 = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                let dtheta = 2.0 * PI * ((j - i) as f64) / (n as f64);
                let arc = dtheta.min(2.0 * PI - dtheta);
                if arc == 0.0 {
                    continue;
                }
                let chord = (&points[i] - &points[j]).norm();
                worst = worst.min(chord / arc);
            }
        }
        assert_abs_diff_eq!(worst, 2.0 / PI, epsilon = 1e-10);

        // an orthonormal-column map preserves chords, so the injectivity
        // ratio stays at 1, far above the chord/arc floor
        let j_star = DMatrix::<f64>::identity(5, 2);
        let images: Vec<_> = points.iter().map(|m| &j_star * m).collect();
        let gs = SampledGs {
            points,
            images,
            jacobians: None,
        };
        let rep = injectivity_check(&gs, 1e-3, 1e-6).unwrap();
        assert!(rep.min_ratio >= (2.0 / PI) * (1.0 - 1e-6));
        assert_abs_diff_eq!(rep.min_ratio, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn immersion_orthonormal_columns() {
        let j = DMatrix::<f64>::identity(5, 2);
        let rep = immersion_check(&[j], 1e-10).unwrap();
        assert_abs_diff_eq!(rep.min_singular_value, 1.0, epsilon = 1e-14);
        assert!(rep.rank_ok);
    }

    #[test]
    fn immersion_rank_deficient_jacobian() {
        // rank-1 outer product has sigma_2 = 0
        let j = DVector::from_vec(vec![1.0, 2.0, 3.0])
            * DVector::from_vec(vec![1.0, 1.0]).transpose();
        let rep = immersion_check(&[j], 1e-10).unwrap();
        assert!(rep.min_singular_value <= 1e-12);
        assert!(!rep.rank_ok);
    }

    #[test]
    fn immersion_sigma_matches_metric_floor() {
        // (J*)^T J* = G implies sigma_q(J*) = sqrt(lambda_min(G))
        for seed in 0..10 {
            let mut rng = substream(seed, "diag-metric", 0);
            let g = MetricTensor::random_spd(3, &mut rng);
            let l = nalgebra::Cholesky::new(g.matrix().clone()).unwrap().l();
            let mut j_star = DMatrix::zeros(7, 3);
            j_star.view_mut((0, 0), (3, 3)).copy_from(&l.transpose());
            let rep = immersion_check(&[j_star], 1e-12).unwrap();
            let lambda_min = linalg::sorted_eigenvalues(g.matrix())[0].re;
            assert!(
                (rep.min_singular_value - lambda_min.sqrt()).abs() <= 1e-8,
                "seed {seed}"
            );
        }
    }

    fn probe(reservoir: &LinearReservoir, steps: usize, seed: u64) -> ConvergenceReport {
        let source: Source = LinearSource::rotation(1.0).unwrap().into();
        let obs = Observation::coordinate(2, 0).unwrap();
        let m0 = DVector::from_vec(vec![1.0, 0.0]);
        let mut rng = substream(seed, "diag-probe", 0);
        let n = reservoir.dim();
        let x1 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        let x2 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
        esp_probe(reservoir, &source, &obs, &m0, 1, steps, (&x1, &x2), 1e-9)
            .unwrap()
            .report
    }

    #[test]
    fn takens_curve_is_exactly_zero_after_depth() {
        let reservoir = LinearReservoir::takens(3);
        let report = probe(&reservoir, 20, 7);
        let curve = sync_error_curve(&report);
        for (k, gap) in &curve.samples {
            if *k >= 3 {
                assert_eq!(*gap, 0.0, "step {k}");
            }
        }
        assert!(!curve.diverging);
    }

    #[test]
    fn contractive_rate_is_fitted_within_band() {
        let mut rng = substream(11, "diag-rate", 0);
        let reservoir = LinearReservoir::random(5, 0.5, &mut rng).unwrap();
        let report = probe(&reservoir, 200, 11);
        let curve = sync_error_curve(&report);
        let rate = curve.fitted_rate.expect("enough positive gaps");
        assert!((0.45..=0.55).contains(&rate), "rate {rate}");
        assert!(!curve.diverging);
    }

    #[test]
    fn expanding_reservoir_is_flagged_diverging() {
        let mut rng = substream(12, "diag-rate", 1);
        let reservoir = LinearReservoir::random(5, 1.5, &mut rng).unwrap();
        let report = probe(&reservoir, 60, 12);
        let curve = sync_error_curve(&report);
        let rate = curve.fitted_rate.expect("gap grows, never zero");
        assert!(rate > 1.0, "rate {rate}");
        assert!(curve.diverging);
    }

    #[test]
    fn sync_curve_with_all_zero_gaps_has_no_rate() {
        let report = ConvergenceReport {
            gaps: vec![0.0; 10],
            tol: 1e-9,
            final_gap: 0.0,
            converged: true,
        };
        let curve = sync_error_curve(&report);
        assert!(curve.fitted_rate.is_none());
        assert!(!curve.diverging);
    }

    #[test]
    fn arc_length_identity_and_scaling() {
        let points: Vec<DVector<f64>> = (0..100)
            .map(|i| {
                let t = 2.0 * PI * (i as f64) / 100.0;
                DVector::from_vec(vec![t.cos(), t.sin()])
            })
            .collect();
        let g = MetricTensor::euclidean(2);
        let id_err = arc_length_compare(&points, |m| m.clone(), &g).unwrap();
        assert_abs_diff_eq!(id_err, 0.0, epsilon = 1e-14);
        let double_err = arc_length_compare(&points, |m| m * 2.0, &g).unwrap();
        assert_abs_diff_eq!(double_err, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn arc_length_needs_three_points() {
        let g = MetricTensor::euclidean(2);
        let two = random_points(5, 2, 2);
        assert!(matches!(
            arc_length_compare(&two, |m| m.clone(), &g),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn angle_orthonormal_columns_is_exact() {
        let j = DMatrix::<f64>::identity(5, 2);
        let g = MetricTensor::euclidean(2);
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let y = DVector::from_vec(vec![0.0, 1.0]);
        let err = angle_compare(&u, &y, &j, &g, 1e-12).unwrap();
        assert_abs_diff_eq!(err, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn angle_diagonal_stretch_closed_form() {
        // J = diag(1,3), u = e1 + e2, y = e1 - e2: the metric angle is
        // pi/2 and the image angle is arccos(-8/10), so the error is
        // arccos(-4/5) - pi/2 = atan(4/3)
        let j = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let g = MetricTensor::euclidean(2);
        let u = DVector::from_vec(vec![1.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, -1.0]);
        let err = angle_compare(&u, &y, &j, &g, 1e-12).unwrap();
        assert_abs_diff_eq!(err, (4.0_f64 / 3.0).atan(), epsilon = 1e-12);
    }

    #[test]
    fn angle_rejects_collapsed_image() {
        let j = DMatrix::<f64>::zeros(3, 2);
        let g = MetricTensor::euclidean(2);
        let u = DVector::from_vec(vec![1.0, 0.0]);
        let y = DVector::from_vec(vec![0.0, 1.0]);
        assert!(matches!(
            angle_compare(&u, &y, &j, &g, 1e-12),
            Err(Error::DegenerateTangent { .. })
        ));
    }

    #[test]
    fn jacobian_estimates_recover_linear_map() {
        let mut rng = substream(9, "diag-jac", 0);
        let j = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..=1.0));
        let points = random_points(9, 200, 2);
        let images: Vec<_> = points.iter().map(|m| &j * m).collect();
        let gs = SampledGs {
            points,
            images,
            jacobians: None,
        };
        let est = estimate_jacobians(&gs, None).unwrap();
        assert_eq!(est.neighbors, 6);
        for (idx, d) in est.jacobians.iter().enumerate() {
            assert!(
                (d - &j).norm() <= 1e-7,
                "sample {idx}: error {}",
                (d - &j).norm()
            );
            assert!(est.conditions[idx].is_finite());
        }
    }

    #[test]
    fn embedding_report_composes_and_serializes() {
        let points = random_points(13, 60, 2);
        let j_star = DMatrix::<f64>::identity(5, 2);
        let images: Vec<_> = points.iter().map(|m| &j_star * m).collect();
        let jacobians = vec![j_star.clone(); 60];
        let gs = SampledGs {
            points,
            images,
            jacobians: None,
        };
        let g = MetricTensor::euclidean(2);
        let rep = embedding_report(&gs, &jacobians, &g, 5, 1e-3, 1e-6, 1e-10).unwrap();
        assert!(rep.rank_ok);
        assert!(rep.isometry_defect_max <= 1e-12);
        assert_eq!(rep.dimension_gate, DimensionGate::EmbeddingFeasible);

        let json = serde_json::to_string(&rep).unwrap();
        let back: EmbeddingReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.worst_pair, rep.worst_pair);
        assert_eq!(back.rank_ok, rep.rank_ok);
    }
}
