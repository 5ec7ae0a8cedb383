//! Command implementations behind the CLI: simulate, isometrize, sweep,
//! verify.
//!
//! Each run loads one config, folds in CLI overrides, executes, and writes
//! its record plus sidecar files into the output directory. Records carry
//! no timestamps; wall-clock timings land in `run_meta.json` beside them so
//! identical configs reproduce identical record bytes.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::diagnostics::{
    self, dimension_gate_statement, estimate_jacobians, immersion_check, injectivity_check,
    sync_error_curve,
};
use crate::error::{Error, Result};
use crate::harness::config::{
    load_config, BuiltReservoir, ExperimentConfig, ReservoirSpec,
};
use crate::harness::records::{
    config_hash, verify_checksum, write_atomic, write_json, write_sweep_summary_csv,
    write_sync_curve_csv, write_trajectory_csv, ComplexMatrixRecord, ComplexVectorRecord,
    ConvergenceRecord, GateRecord, IsometrizeOutputs, MatrixRecord, RunMeta, RunOutputs,
    RunRecord, SampledGsRecord, SimulateOutputs, SweepCell, SweepOutputs, SweepSummaryRow,
    ToleranceRecord,
};
use crate::harness::rng::substream;
use crate::isometrize::{self, IsometrizationResult, MetricTensor};
use crate::linalg;
use crate::linear_gs::{LinearGsProblem, RESIDUAL_TOL};
use crate::reservoir::{estimate_gs, GsEstimation, ReservoirMap};
use crate::sources::{Observation, Source};

/// Common CLI arguments shared by the run commands.
#[derive(Debug, Clone)]
pub struct RunArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub quiet: bool,
}

struct StageClock {
    started_unix_ms: u128,
    t0: Instant,
    last: Instant,
    stages: Vec<(String, u128)>,
}

impl StageClock {
    fn start() -> Self {
        let now = Instant::now();
        Self {
            started_unix_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis())
                .unwrap_or(0),
            t0: now,
            last: now,
            stages: Vec::new(),
        }
    }

    fn mark(&mut self, name: &str) {
        let now = Instant::now();
        self.stages
            .push((name.to_string(), (now - self.last).as_millis()));
        self.last = now;
    }

    fn meta(self, command: &str, config_hash: &str, written: Vec<String>) -> RunMeta {
        RunMeta {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            started_unix_ms: self.started_unix_ms,
            total_ms: (Instant::now() - self.t0).as_millis(),
            stages: self.stages,
            written_files: written,
        }
    }
}

fn say(quiet: bool, line: impl AsRef<str>) {
    if !quiet {
        println!("{}", line.as_ref());
    }
}

fn default_m0(config: &ExperimentConfig, q: usize) -> DVector<f64> {
    match config.run.m0.as_deref() {
        Some(values) => DVector::from_row_slice(values),
        None if config.source.kind == "henon" => DVector::zeros(q),
        None => {
            let mut m0 = DVector::zeros(q);
            m0[0] = 1.0;
            m0
        }
    }
}

fn initial_state_pair(seed: u64, n: usize, radius: f64) -> (DVector<f64>, DVector<f64>) {
    let draw = |index: u64| {
        let mut rng = substream(seed, "x0", index);
        DVector::from_fn(n, |_, _| rng.random_range(-radius..=radius))
    };
    (draw(0), draw(1))
}

fn load_effective(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut config = load_config(&args.config)?;
    config.apply_seed_override(args.seed);
    Ok(config)
}

/// Drives the configured system, certifies the sampled map, and writes
/// trajectory, sync curve, sampled map, embedding report, and run record.
pub fn cmd_simulate(args: &RunArgs) -> Result<PathBuf> {
    let mut clock = StageClock::start();
    let mut config = load_effective(args)?;
    if let Some(tol) = args.tol {
        config.run.sync_tol = tol;
    }
    config.validate()?;
    let hash = config_hash(&config)?;
    clock.mark("config");

    let source = config.source.build()?;
    let q = source.dim();
    let obs = config.observation.build(q)?;
    let seed = config.effective_seed();
    let reservoir = config
        .reservoir
        .build(&mut substream(seed, "reservoir", 0))?;
    let n = reservoir.dim();
    let m0 = default_m0(&config, q);
    if m0.len() != q {
        return Err(Error::Config(format!(
            "run.m0 has length {}, source dimension is {q}",
            m0.len()
        )));
    }
    let (x1, x2) = initial_state_pair(seed, n, config.run.x0_radius);
    clock.mark("build");

    let estimation = match &reservoir {
        BuiltReservoir::Linear(r) => run_probe(r, &source, &obs, &m0, &config, (&x1, &x2))?,
        BuiltReservoir::Esn(r) => run_probe(r, &source, &obs, &m0, &config, (&x1, &x2))?,
    };
    let report = &estimation.report;
    let curve = sync_error_curve(report);
    clock.mark("drive");

    let metric = config
        .metric
        .build(q, &mut substream(seed, "metric", 0))?;
    let jac = estimate_jacobians(&estimation.gs, config.run.knn)?;
    let immersion = immersion_check(&jac.jacobians, config.run.immersion_tol)?;
    let injectivity = injectivity_check(
        &estimation.gs,
        config.run.injectivity_floor,
        config.run.sep_floor_scale,
    )?;
    let embedding = diagnostics::embedding_report(
        &estimation.gs,
        &jac.jacobians,
        &metric,
        n,
        config.run.injectivity_floor,
        config.run.sep_floor_scale,
        config.run.immersion_tol,
    )?;
    clock.mark("certify");

    let outputs = SimulateOutputs {
        state_dim: n,
        source_dim: q,
        reservoir_kind: config.reservoir.kind.clone(),
        convergence: ConvergenceRecord {
            washout: config.run.washout,
            samples: config.run.samples,
            steps: report.gaps.len(),
            tol: report.tol,
            final_gap: report.final_gap,
            converged: report.converged,
            first_step_below_tol: report.gaps.iter().position(|g| *g < report.tol),
        },
        fitted_rate: curve.fitted_rate,
        diverging: curve.diverging,
        injectivity_min_ratio: injectivity.min_ratio,
        injectivity_floor: config.run.injectivity_floor,
        injectivity_pass: injectivity.pass,
        separation_floor: injectivity.separation_floor,
        pairs_tested: injectivity.pairs_tested,
        min_singular_value: immersion.min_singular_value,
        immersion_tol: config.run.immersion_tol,
        rank_ok: immersion.rank_ok,
        jacobian_neighbors: jac.neighbors,
        jacobian_condition_max: jac.conditions.iter().copied().fold(0.0, f64::max),
        isometry_defect_max: embedding.isometry_defect_max,
        embedding: embedding.clone(),
        gate_statement: dimension_gate_statement(n, q),
    };
    let record = RunRecord::new("simulate", config, RunOutputs::Simulate(outputs))?;

    std::fs::create_dir_all(&args.out)?;
    let result_path = args.out.join("result.json");
    write_atomic(&result_path, &record.to_json_bytes()?)?;
    write_trajectory_csv(&args.out.join("trajectory.csv"), &estimation.trajectory)?;
    write_sync_curve_csv(&args.out.join("sync_curve.csv"), &curve)?;
    write_json(
        &args.out.join("sampled_gs.json"),
        &SampledGsRecord::from_sampled(&estimation.gs),
    )?;
    write_json(&args.out.join("embedding_report.json"), &embedding)?;
    clock.mark("write");
    let meta = clock.meta(
        "simulate",
        &hash,
        vec![
            "result.json".into(),
            "trajectory.csv".into(),
            "sync_curve.csv".into(),
            "sampled_gs.json".into(),
            "embedding_report.json".into(),
        ],
    );
    write_json(&args.out.join("run_meta.json"), &meta)?;

    say(args.quiet, format!("simulate: config {hash}"));
    say(
        args.quiet,
        format!(
            "  converged = {} (final gap {:.3e}, tol {:.1e})",
            report.converged, report.final_gap, report.tol
        ),
    );
    say(
        args.quiet,
        format!(
            "  injectivity ratio {:.6e} (floor {:.1e}), sigma_q {:.6e}, rank_ok = {}",
            injectivity.min_ratio,
            record_injectivity_floor(&record),
            immersion.min_singular_value,
            immersion.rank_ok
        ),
    );
    say(args.quiet, format!("  wrote {}", result_path.display()));
    Ok(result_path)
}

fn record_injectivity_floor(record: &RunRecord) -> f64 {
    record.config.run.injectivity_floor
}

fn run_probe<R: ReservoirMap>(
    reservoir: &R,
    source: &Source,
    obs: &Observation,
    m0: &DVector<f64>,
    config: &ExperimentConfig,
    x0: (&DVector<f64>, &DVector<f64>),
) -> Result<GsEstimation> {
    estimate_gs(
        reservoir,
        source,
        obs,
        m0,
        config.run.washout,
        config.run.samples,
        x0,
        config.run.sync_tol,
    )
}

fn require_linear_problem(
    config: &ExperimentConfig,
    reservoir: BuiltReservoir,
    source: Source,
) -> Result<LinearGsProblem> {
    let linear_reservoir = match reservoir {
        BuiltReservoir::Linear(r) => r,
        BuiltReservoir::Esn(_) => {
            return Err(Error::Config(
                "isometrize requires a linear reservoir (kinds linear_random, linear_matrix, takens)"
                    .into(),
            ))
        }
    };
    let linear_source = match source {
        Source::Linear(s) => s,
        Source::Nonlinear(_) => {
            return Err(Error::Config(
                "isometrize requires a linear source (kinds rotation, scaling, diagonal, matrix)"
                    .into(),
            ))
        }
    };
    let obs = config.observation.build(linear_source.dim())?;
    let c_obs = obs
        .linear_coefficients()
        .ok_or_else(|| Error::Config("isometrize requires a linear observation".into()))?
        .clone();
    LinearGsProblem::new(linear_reservoir, linear_source, c_obs)
}

/// Builds the conjugation pipeline result for an already-validated config.
/// Shared by the isometrize command and the sweep cells.
fn isometrize_from_parts(
    problem: &LinearGsProblem,
    metric: &MetricTensor,
    r: &DMatrix<f64>,
    r_perp: Option<&DMatrix<f64>>,
    rank_tol: f64,
) -> Result<IsometrizationResult> {
    isometrize::isometrize(problem, metric, r, r_perp, Some(rank_tol))
}

fn isometrize_outputs(
    problem: &LinearGsProblem,
    metric: &MetricTensor,
    result: &IsometrizationResult,
    tolerances: ToleranceRecord,
) -> IsometrizeOutputs {
    let gate = problem.check_convergence();
    IsometrizeOutputs {
        state_dim: problem.state_dim(),
        source_dim: problem.source_dim(),
        gate: GateRecord {
            rho_a: gate.rho_a,
            rho_m_inv: gate.rho_m_inv,
            product: gate.product,
            pass: gate.pass,
            margin: gate.margin,
        },
        source_matrix: MatrixRecord::from_matrix(problem.source().matrix()),
        obs_coefficients: problem.obs_coefficients().iter().copied().collect(),
        a: MatrixRecord::from_matrix(problem.reservoir().a()),
        c: problem.reservoir().c().iter().copied().collect(),
        metric: MatrixRecord::from_matrix(metric.matrix()),
        eigenvalues: ComplexVectorRecord::from_values(&result.eigenvalues),
        j: MatrixRecord::from_matrix(&result.j),
        p: ComplexMatrixRecord::from_matrix(&result.p),
        q: ComplexMatrixRecord::from_matrix(&result.q),
        w: MatrixRecord::from_matrix(&result.w),
        pq: MatrixRecord::from_matrix(&result.pq),
        s: result.s.as_ref().map(MatrixRecord::from_matrix),
        completion_pivots: result.completion_pivots.clone(),
        r: MatrixRecord::from_matrix(&result.r),
        r_perp: result.r_perp.as_ref().map(MatrixRecord::from_matrix),
        h: MatrixRecord::from_matrix(&result.h),
        a_star: MatrixRecord::from_matrix(&result.a_star),
        c_star: result.c_star.iter().copied().collect(),
        j_star: MatrixRecord::from_matrix(&result.j_star),
        isometry_defect: result.diagnostics.isometry_defect,
        eigenvalue_drift: result.diagnostics.eigenvalue_drift,
        rank_margin: result.diagnostics.rank_margin,
        basis_image_residual: result.diagnostics.basis_image_residual,
        fixed_point_residual: result.diagnostics.fixed_point_residual,
        tolerances,
    }
}

/// Runs the conjugation pipeline and writes the record. Exits clean only
/// when the certified defect is within tolerance.
pub fn cmd_isometrize(args: &RunArgs) -> Result<PathBuf> {
    let mut clock = StageClock::start();
    let mut config = load_effective(args)?;
    if let Some(tol) = args.tol {
        config.run.defect_tol = tol;
    }
    config.validate()?;
    let hash = config_hash(&config)?;
    clock.mark("config");

    let seed = config.effective_seed();
    let source = config.source.build()?;
    let q = source.dim();
    let reservoir = config
        .reservoir
        .build(&mut substream(seed, "reservoir", 0))?;
    let n = reservoir.dim();
    let problem = require_linear_problem(&config, reservoir, source)?;
    let metric = config
        .metric
        .build(q, &mut substream(seed, "metric", 0))?;
    let r = config
        .rotation
        .build(q, &mut substream(seed, "rotation", 0))?;
    let r_perp = match (&config.rotation_perp, n > q) {
        (Some(spec), true) => Some(spec.build(n - q, &mut substream(seed, "rotation-perp", 0))?),
        (Some(_), false) => {
            return Err(Error::Config(
                "rotation_perp given but the reservoir is square (N = q)".into(),
            ))
        }
        (None, _) => None,
    };
    clock.mark("build");

    let result = isometrize_from_parts(&problem, &metric, &r, r_perp.as_ref(), config.run.rank_tol)?;
    clock.mark("pipeline");

    let tolerances = ToleranceRecord {
        defect_tol: config.run.defect_tol,
        drift_tol: config.run.drift_tol,
        rank_tol: config.run.rank_tol,
        residual_tol: RESIDUAL_TOL,
    };
    let outputs = isometrize_outputs(&problem, &metric, &result, tolerances);
    let defect = outputs.isometry_defect;
    let defect_tol = outputs.tolerances.defect_tol;
    let record = RunRecord::new("isometrize", config, RunOutputs::Isometrize(outputs))?;

    std::fs::create_dir_all(&args.out)?;
    let result_path = args.out.join("result.json");
    write_atomic(&result_path, &record.to_json_bytes()?)?;
    clock.mark("write");
    let meta = clock.meta("isometrize", &hash, vec!["result.json".into()]);
    write_json(&args.out.join("run_meta.json"), &meta)?;

    say(args.quiet, format!("isometrize: config {hash}"));
    say(
        args.quiet,
        format!(
            "  defect {:.3e} (tol {:.1e}), drift {:.3e}, rank margin {:.3e}",
            defect,
            defect_tol,
            result.diagnostics.eigenvalue_drift,
            result.diagnostics.rank_margin
        ),
    );
    say(args.quiet, format!("  wrote {}", result_path.display()));

    if defect > defect_tol {
        return Err(Error::VerificationFailed {
            context: "isometry defect".into(),
            value: defect,
            limit: defect_tol,
        });
    }
    Ok(result_path)
}

/// One sweep cell: a fresh reservoir draw through the full pipeline.
fn run_sweep_cell(
    config: &ExperimentConfig,
    n: usize,
    trial: usize,
    cell_index: u64,
) -> SweepCell {
    let seed = config.effective_seed();
    let q = match config.source.build() {
        Ok(s) => s.dim(),
        Err(e) => return failed_cell(n, trial, 0, e),
    };
    let gate_feasible = n > 2 * q;
    let outcome = (|| -> Result<(f64, f64, f64)> {
        let spec = ReservoirSpec {
            n: Some(n),
            ..config.reservoir.clone()
        };
        let reservoir = spec.build(&mut substream(seed, "sweep-reservoir", cell_index))?;
        let source = config.source.build()?;
        let problem = require_linear_problem(config, reservoir, source)?;
        let metric = config
            .metric
            .build(q, &mut substream(seed, "sweep-metric", cell_index))?;
        let r = config
            .rotation
            .build(q, &mut substream(seed, "sweep-rotation", cell_index))?;
        let r_perp = match &config.rotation_perp {
            Some(spec) if n > q => {
                Some(spec.build(n - q, &mut substream(seed, "sweep-rotation-perp", cell_index))?)
            }
            _ => None,
        };
        let result =
            isometrize_from_parts(&problem, &metric, &r, r_perp.as_ref(), config.run.rank_tol)?;
        Ok((
            result.diagnostics.rank_margin,
            result.diagnostics.isometry_defect,
            result.diagnostics.eigenvalue_drift,
        ))
    })();

    match outcome {
        Ok((rank_margin, defect, drift)) => SweepCell {
            n,
            trial,
            outcome: "ok".into(),
            gate_feasible,
            rank_margin: Some(rank_margin),
            isometry_defect: Some(defect),
            eigenvalue_drift: Some(drift),
            rank_ok: rank_margin > config.run.rank_tol,
            defect_ok: defect <= config.run.defect_tol,
            drift_ok: drift <= config.run.drift_tol,
        },
        Err(e) => failed_cell(n, trial, q, e),
    }
}

fn failed_cell(n: usize, trial: usize, q: usize, e: Error) -> SweepCell {
    SweepCell {
        n,
        trial,
        outcome: e.to_string(),
        gate_feasible: q > 0 && n > 2 * q,
        rank_margin: None,
        isometry_defect: None,
        eigenvalue_drift: None,
        rank_ok: false,
        defect_ok: false,
        drift_ok: false,
    }
}

/// Runs the seed-grid sweep, writes per-cell JSON, a CSV summary, and the
/// checksummed record.
pub fn cmd_sweep(args: &RunArgs) -> Result<PathBuf> {
    let mut clock = StageClock::start();
    let mut config = load_effective(args)?;
    if let Some(tol) = args.tol {
        config.run.defect_tol = tol;
    }
    config.validate()?;
    let sweep = config
        .sweep
        .clone()
        .ok_or_else(|| Error::Config("sweep requires a [sweep] section".into()))?;
    if config.reservoir.kind != "linear_random" {
        return Err(Error::Config(
            "sweep draws fresh reservoirs per cell, so reservoir.kind must be linear_random".into(),
        ));
    }
    let hash = config_hash(&config)?;
    clock.mark("config");

    let n_values = match &sweep.n_values {
        Some(values) => values.clone(),
        None => vec![config.reservoir.n.ok_or_else(|| {
            Error::Config("sweep needs reservoir.n or sweep.n_values".into())
        })?],
    };
    let grid: Vec<(usize, usize, u64)> = n_values
        .iter()
        .enumerate()
        .flat_map(|(ni, &n)| {
            (0..sweep.seed_count)
                .map(move |trial| (n, trial, (ni * sweep.seed_count + trial) as u64))
        })
        .collect();

    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(n, trial, cell_index)| run_sweep_cell(&config, n, trial, cell_index))
        .collect();
    clock.mark("cells");

    let summary: Vec<SweepSummaryRow> = n_values
        .iter()
        .map(|&n| {
            let group: Vec<&SweepCell> = cells.iter().filter(|c| c.n == n).collect();
            SweepSummaryRow {
                n,
                trials: group.len(),
                gate_feasible: group.first().is_some_and(|c| c.gate_feasible),
                rank_ok_count: group.iter().filter(|c| c.rank_ok).count(),
                defect_ok_count: group.iter().filter(|c| c.defect_ok).count(),
                drift_ok_count: group.iter().filter(|c| c.drift_ok).count(),
                all_ok_count: group
                    .iter()
                    .filter(|c| c.rank_ok && c.defect_ok && c.drift_ok)
                    .count(),
            }
        })
        .collect();

    let tolerances = ToleranceRecord {
        defect_tol: config.run.defect_tol,
        drift_tol: config.run.drift_tol,
        rank_tol: config.run.rank_tol,
        residual_tol: RESIDUAL_TOL,
    };
    let outputs = SweepOutputs {
        cells: cells.clone(),
        summary: summary.clone(),
        tolerances,
    };
    let record = RunRecord::new("sweep", config, RunOutputs::Sweep(outputs))?;

    std::fs::create_dir_all(&args.out)?;
    let result_path = args.out.join("result.json");
    write_atomic(&result_path, &record.to_json_bytes()?)?;
    write_sweep_summary_csv(&args.out.join("sweep_summary.csv"), &summary)?;
    let cell_dir = args.out.join("cells");
    std::fs::create_dir_all(&cell_dir)?;
    let mut written = vec!["result.json".into(), "sweep_summary.csv".into()];
    for cell in &cells {
        let name = format!("cells/n{}_t{}.json", cell.n, cell.trial);
        write_json(&args.out.join(&name), cell)?;
        written.push(name);
    }
    clock.mark("write");
    let meta = clock.meta("sweep", &hash, written);
    write_json(&args.out.join("run_meta.json"), &meta)?;

    say(args.quiet, format!("sweep: config {hash}"));
    for row in &summary {
        say(
            args.quiet,
            format!(
                "  n = {}: {}/{} rank ok, {}/{} defect ok, {}/{} drift ok (gate {})",
                row.n,
                row.rank_ok_count,
                row.trials,
                row.defect_ok_count,
                row.trials,
                row.drift_ok_count,
                row.trials,
                if row.gate_feasible { "feasible" } else { "insufficient" },
            ),
        );
    }
    say(args.quiet, format!("  wrote {}", result_path.display()));
    Ok(result_path)
}

fn schema_err(found: impl Into<String>) -> Error {
    Error::Schema {
        found: found.into(),
        supported: "schema 1 run records".into(),
    }
}

/// Re-checks a stored record: integrity first, then the stored matrices are
/// re-run through the math and judged against the stored tolerances. Needs
/// nothing but the file.
pub fn cmd_verify(path: &Path, quiet: bool) -> Result<()> {
    let bytes = std::fs::read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| schema_err(format!("unparseable JSON ({e})")))?;
    match value.get("schema").and_then(serde_json::Value::as_i64) {
        Some(1) => {}
        Some(v) => return Err(schema_err(format!("schema {v}"))),
        None => return Err(schema_err("record without integer 'schema'")),
    }
    verify_checksum(&value, path)?;

    let record: RunRecord = serde_json::from_value(value)
        .map_err(|e| schema_err(format!("record does not deserialize ({e})")))?;
    match &record.outputs {
        RunOutputs::Isometrize(out) => verify_isometrize_outputs(out)?,
        RunOutputs::Simulate(out) => verify_simulate_outputs(out)?,
        RunOutputs::Sweep(out) => verify_sweep_outputs(out)?,
    }
    if !quiet {
        println!(
            "verified {}: checksum and recomputed invariants hold",
            path.display()
        );
    }
    Ok(())
}

fn check(context: &str, value: f64, limit: f64) -> Result<()> {
    if value > limit || !value.is_finite() {
        return Err(Error::VerificationFailed {
            context: context.into(),
            value,
            limit,
        });
    }
    Ok(())
}

fn verify_isometrize_outputs(out: &IsometrizeOutputs) -> Result<()> {
    let a = out.a.to_matrix()?;
    let c = DVector::from_row_slice(&out.c);
    let m = out.source_matrix.to_matrix()?;
    let j = out.j.to_matrix()?;
    let j_star = out.j_star.to_matrix()?;
    let a_star = out.a_star.to_matrix()?;
    let c_star = DVector::from_row_slice(&out.c_star);
    let h = out.h.to_matrix()?;
    let g = out.metric.to_matrix()?;
    let c_obs = nalgebra::RowDVector::from_row_slice(&out.obs_coefficients);

    // the fixed-point equation J = A J M^-1 + C c, recomputed from scratch
    let m_inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| schema_err("stored source matrix is singular"))?;
    let residual = (&j - &a * &j * &m_inv - &c * &c_obs).norm();
    let b_norm = (&c * &c_obs).norm();
    check(
        "fixed-point residual",
        residual,
        out.tolerances.residual_tol * (1.0 + b_norm),
    )?;

    // the certified isometry defect, from the stored conjugated map
    let defect = (j_star.transpose() * &j_star - &g).norm();
    check("isometry defect", defect, out.tolerances.defect_tol)?;

    // spectrum preservation under the stored conjugation
    let drift = linalg::spectrum_drift(&a, &a_star);
    check("eigenvalue drift", drift, out.tolerances.drift_tol)?;

    // internal consistency of the conjugation triple
    let scale = 1.0 + a_star.norm();
    let h_inv = h
        .clone()
        .try_inverse()
        .ok_or_else(|| schema_err("stored conjugator is singular"))?;
    check(
        "conjugation residual for A*",
        (&h * &a * &h_inv - &a_star).norm(),
        1e-8 * scale,
    )?;
    check(
        "conjugation residual for C*",
        (&h * &c - &c_star).norm(),
        1e-8 * (1.0 + c_star.norm()),
    )?;
    check(
        "conjugation residual for J*",
        (&h * &j - &j_star).norm(),
        1e-8 * (1.0 + j_star.norm()),
    )?;
    Ok(())
}

fn verify_simulate_outputs(out: &SimulateOutputs) -> Result<()> {
    let conv = &out.convergence;
    if conv.converged != (conv.final_gap <= conv.tol) {
        return Err(Error::VerificationFailed {
            context: "stored convergence flag disagrees with final gap vs tol".into(),
            value: conv.final_gap,
            limit: conv.tol,
        });
    }
    if out.rank_ok != (out.min_singular_value > out.immersion_tol) {
        return Err(Error::VerificationFailed {
            context: "stored rank_ok disagrees with sigma_q vs immersion tol".into(),
            value: out.min_singular_value,
            limit: out.immersion_tol,
        });
    }
    if out.injectivity_pass != (out.injectivity_min_ratio > out.injectivity_floor) {
        return Err(Error::VerificationFailed {
            context: "stored injectivity flag disagrees with ratio vs floor".into(),
            value: out.injectivity_min_ratio,
            limit: out.injectivity_floor,
        });
    }
    let gate = diagnostics::dimension_gate(out.state_dim, out.source_dim);
    if gate != out.embedding.dimension_gate {
        return Err(Error::VerificationFailed {
            context: "stored dimension gate disagrees with N vs 2q".into(),
            value: out.state_dim as f64,
            limit: 2.0 * out.source_dim as f64,
        });
    }
    Ok(())
}

fn verify_sweep_outputs(out: &SweepOutputs) -> Result<()> {
    for row in &out.summary {
        let group: Vec<&SweepCell> = out.cells.iter().filter(|c| c.n == row.n).collect();
        let recount = SweepSummaryRow {
            n: row.n,
            trials: group.len(),
            gate_feasible: group.first().is_some_and(|c| c.gate_feasible),
            rank_ok_count: group.iter().filter(|c| c.rank_ok).count(),
            defect_ok_count: group.iter().filter(|c| c.defect_ok).count(),
            drift_ok_count: group.iter().filter(|c| c.drift_ok).count(),
            all_ok_count: group
                .iter()
                .filter(|c| c.rank_ok && c.defect_ok && c.drift_ok)
                .count(),
        };
        if recount != *row {
            return Err(Error::VerificationFailed {
                context: format!("sweep summary row for n = {} disagrees with cells", row.n),
                value: row.all_ok_count as f64,
                limit: recount.all_ok_count as f64,
            });
        }
    }
    for cell in &out.cells {
        if cell.outcome == "ok"
            && (cell.rank_margin.is_none()
                || cell.isometry_defect.is_none()
                || cell.eigenvalue_drift.is_none())
        {
            return Err(Error::VerificationFailed {
                context: format!(
                    "sweep cell n = {}, trial = {} is ok but missing diagnostics",
                    cell.n, cell.trial
                ),
                value: 0.0,
                limit: 0.0,
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::records::GateRecord;
    use crate::reservoir::LinearReservoir;
    use crate::sources::LinearSource;

    fn scalar_outputs() -> IsometrizeOutputs {
        // the scalar golden pipeline: M = 2, c = 1, A = 1/3, C = 1
        let a = DMatrix::from_element(1, 1, 1.0 / 3.0);
        let c = DVector::from_element(1, 1.0);
        let source = LinearSource::scaling(2.0).unwrap();
        let problem = LinearGsProblem::new(
            LinearReservoir::new(a, c).unwrap(),
            source,
            nalgebra::RowDVector::from_element(1, 1.0),
        )
        .unwrap();
        let metric = MetricTensor::euclidean(1);
        let r = DMatrix::identity(1, 1);
        let result = isometrize_from_parts(&problem, &metric, &r, None, 1e-10).unwrap();
        isometrize_outputs(
            &problem,
            &metric,
            &result,
            ToleranceRecord {
                defect_tol: 1e-10,
                drift_tol: 1e-10,
                rank_tol: 1e-10,
                residual_tol: RESIDUAL_TOL,
            },
        )
    }

    #[test]
    fn isometrize_outputs_verify_clean() {
        let out = scalar_outputs();
        assert!((out.h.data[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!((out.c_star[0] - 5.0 / 6.0).abs() < 1e-12);
        verify_isometrize_outputs(&out).unwrap();
    }

    #[test]
    fn perturbed_conjugation_fails_verification() {
        let mut out = scalar_outputs();
        out.a_star.data[0] += 1e-3;
        let err = verify_isometrize_outputs(&out).unwrap_err();
        assert!(matches!(err, Error::VerificationFailed { .. }));
    }

    #[test]
    fn perturbed_map_fails_the_defect_check() {
        let mut out = scalar_outputs();
        out.j_star.data[0] = 1.1;
        let err = verify_isometrize_outputs(&out).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("isometry defect"), "{msg}");
    }

    #[test]
    fn gate_record_fields_copy_through() {
        let out = scalar_outputs();
        let GateRecord { product, pass, .. } = out.gate;
        assert!((product - 1.0 / 6.0).abs() < 1e-12);
        assert!(pass);
    }

    #[test]
    fn simulate_consistency_checks_fire() {
        let base = SimulateOutputs {
            state_dim: 5,
            source_dim: 2,
            reservoir_kind: "linear_random".into(),
            convergence: ConvergenceRecord {
                washout: 10,
                samples: 10,
                steps: 20,
                tol: 1e-9,
                final_gap: 1e-12,
                converged: true,
                first_step_below_tol: Some(5),
            },
            fitted_rate: Some(0.5),
            diverging: false,
            injectivity_min_ratio: 0.9,
            injectivity_floor: 1e-3,
            injectivity_pass: true,
            separation_floor: 1e-6,
            pairs_tested: 45,
            min_singular_value: 0.8,
            immersion_tol: 1e-6,
            rank_ok: true,
            jacobian_neighbors: 6,
            jacobian_condition_max: 10.0,
            isometry_defect_max: 0.5,
            embedding: crate::diagnostics::EmbeddingReport {
                min_image_gap: 0.9,
                worst_pair: (0, 1),
                min_singular_value: 0.8,
                rank_ok: true,
                isometry_defect_max: 0.5,
                dimension_gate: crate::diagnostics::DimensionGate::EmbeddingFeasible,
            },
            gate_statement: String::new(),
        };
        verify_simulate_outputs(&base).unwrap();

        let mut bad = base.clone();
        bad.converged_flip();
        assert!(verify_simulate_outputs(&bad).is_err());

        let mut bad = base;
        bad.rank_ok = false;
        assert!(verify_simulate_outputs(&bad).is_err());
    }

    impl SimulateOutputs {
        fn converged_flip(&mut self) {
            self.convergence.converged = !self.convergence.converged;
        }
    }

    #[test]
    fn sweep_summary_recount_detects_drift() {
        let cells = vec![
            SweepCell {
                n: 5,
                trial: 0,
                outcome: "ok".into(),
                gate_feasible: true,
                rank_margin: Some(0.5),
                isometry_defect: Some(1e-12),
                eigenvalue_drift: Some(1e-13),
                rank_ok: true,
                defect_ok: true,
                drift_ok: true,
            },
            SweepCell {
                n: 5,
                trial: 1,
                outcome: "ok".into(),
                gate_feasible: true,
                rank_margin: Some(0.4),
                isometry_defect: Some(1e-12),
                eigenvalue_drift: Some(1e-13),
                rank_ok: true,
                defect_ok: true,
                drift_ok: true,
            },
        ];
        let good = SweepOutputs {
            cells: cells.clone(),
            summary: vec![SweepSummaryRow {
                n: 5,
                trials: 2,
                gate_feasible: true,
                rank_ok_count: 2,
                defect_ok_count: 2,
                drift_ok_count: 2,
                all_ok_count: 2,
            }],
            tolerances: ToleranceRecord {
                defect_tol: 1e-10,
                drift_tol: 1e-10,
                rank_tol: 1e-10,
                residual_tol: RESIDUAL_TOL,
            },
        };
        verify_sweep_outputs(&good).unwrap();

        let mut bad = good;
        bad.summary[0].rank_ok_count = 1;
        assert!(verify_sweep_outputs(&bad).is_err());
    }
}
