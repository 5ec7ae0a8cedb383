//! Persistent run records: JSON for structured results, CSV for time
//! series, sha256 checksums for integrity.
//!
//! A record embeds the effective config, every matrix the verification
//! needs, and the tolerances it was judged against, so `verify` can re-check
//! it with no other inputs. The `checksum` field is the sha256 of the
//! record's compact JSON serialization with `checksum` set to the empty
//! string; identical configs reproduce records byte for byte because every
//! number flows from the seed and fields serialize in declaration order.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{EmbeddingReport, SyncCurve};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::reservoir::DrivenTrajectory;

/// Row-major dense matrix with explicit shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                data.push(m[(i, j)]);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Schema {
                found: format!(
                    "matrix record {}x{} with {} entries",
                    self.rows,
                    self.cols,
                    self.data.len()
                ),
                supported: "rows*cols entries".into(),
            });
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

/// Row-major complex matrix split into real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexMatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexMatrixRecord {
    pub fn from_matrix(m: &DMatrix<Complex64>) -> Self {
        let mut re = Vec::with_capacity(m.nrows() * m.ncols());
        let mut im = Vec::with_capacity(m.nrows() * m.ncols());
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                re.push(m[(i, j)].re);
                im.push(m[(i, j)].im);
            }
        }
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            re,
            im,
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<Complex64>> {
        if self.re.len() != self.rows * self.cols || self.im.len() != self.re.len() {
            return Err(Error::Schema {
                found: format!(
                    "complex matrix record {}x{} with {}/{} entries",
                    self.rows,
                    self.cols,
                    self.re.len(),
                    self.im.len()
                ),
                supported: "rows*cols entries in re and im".into(),
            });
        }
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let k = i * self.cols + j;
                m[(i, j)] = Complex64::new(self.re[k], self.im[k]);
            }
        }
        Ok(m)
    }
}

/// Complex vector split into real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexVectorRecord {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVectorRecord {
    pub fn from_values(values: &[Complex64]) -> Self {
        Self {
            re: values.iter().map(|z| z.re).collect(),
            im: values.iter().map(|z| z.im).collect(),
        }
    }

    pub fn to_values(&self) -> Vec<Complex64> {
        self.re
            .iter()
            .zip(&self.im)
            .map(|(r, i)| Complex64::new(*r, *i))
            .collect()
    }
}

/// Series-convergence gate numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateRecord {
    pub rho_a: f64,
    pub rho_m_inv: f64,
    pub product: f64,
    pub pass: bool,
    pub margin: f64,
}

/// Tolerances a record was judged against; verify re-judges with these.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceRecord {
    pub defect_tol: f64,
    pub drift_tol: f64,
    pub rank_tol: f64,
    pub residual_tol: f64,
}

/// One isometrization run: inputs, conjugation outputs, and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsometrizeOutputs {
    pub state_dim: usize,
    pub source_dim: usize,
    pub gate: GateRecord,
    pub source_matrix: MatrixRecord,
    pub obs_coefficients: Vec<f64>,
    pub a: MatrixRecord,
    pub c: Vec<f64>,
    pub metric: MatrixRecord,
    pub eigenvalues: ComplexVectorRecord,
    pub j: MatrixRecord,
    pub p: ComplexMatrixRecord,
    pub q: ComplexMatrixRecord,
    pub w: MatrixRecord,
    pub pq: MatrixRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<MatrixRecord>,
    pub completion_pivots: Vec<usize>,
    pub r: MatrixRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_perp: Option<MatrixRecord>,
    pub h: MatrixRecord,
    pub a_star: MatrixRecord,
    pub c_star: Vec<f64>,
    pub j_star: MatrixRecord,
    pub isometry_defect: f64,
    pub eigenvalue_drift: f64,
    pub rank_margin: f64,
    pub basis_image_residual: f64,
    pub fixed_point_residual: f64,
    pub tolerances: ToleranceRecord,
}

/// Convergence summary of a simulate run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceRecord {
    pub washout: usize,
    pub samples: usize,
    pub steps: usize,
    pub tol: f64,
    pub final_gap: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_step_below_tol: Option<usize>,
}

/// One simulate run: convergence, fitted rate, and embedding certification.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOutputs {
    pub state_dim: usize,
    pub source_dim: usize,
    pub reservoir_kind: String,
    pub convergence: ConvergenceRecord,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitted_rate: Option<f64>,
    pub diverging: bool,
    pub injectivity_min_ratio: f64,
    pub injectivity_floor: f64,
    pub injectivity_pass: bool,
    pub separation_floor: f64,
    pub pairs_tested: usize,
    pub min_singular_value: f64,
    pub immersion_tol: f64,
    pub rank_ok: bool,
    pub jacobian_neighbors: usize,
    pub jacobian_condition_max: f64,
    pub isometry_defect_max: f64,
    pub embedding: EmbeddingReport,
    pub gate_statement: String,
}

/// One sweep cell: a seeded reservoir draw judged by the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCell {
    pub n: usize,
    pub trial: usize,
    /// "ok" or the error's display string.
    pub outcome: String,
    pub gate_feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isometry_defect: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eigenvalue_drift: Option<f64>,
    pub rank_ok: bool,
    pub defect_ok: bool,
    pub drift_ok: bool,
}

/// Per-n summary of sweep cells.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSummaryRow {
    pub n: usize,
    pub trials: usize,
    pub gate_feasible: bool,
    pub rank_ok_count: usize,
    pub defect_ok_count: usize,
    pub drift_ok_count: usize,
    pub all_ok_count: usize,
}

/// One sweep run: every cell plus the per-n summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOutputs {
    pub cells: Vec<SweepCell>,
    pub summary: Vec<SweepSummaryRow>,
    pub tolerances: ToleranceRecord,
}

/// Command-specific payload of a run record.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutputs {
    Simulate(SimulateOutputs),
    Isometrize(IsometrizeOutputs),
    Sweep(SweepOutputs),
}

/// The unit of persistence: everything one command run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub schema: i64,
    pub command: String,
    pub software_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub outputs: RunOutputs,
    pub checksum: String,
}

/// sha256 hex digest of the canonical JSON serialization of the effective
/// config; names the run everywhere else.
pub fn config_hash(config: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunRecord {
    pub fn new(
        command: &str,
        config: ExperimentConfig,
        outputs: RunOutputs,
    ) -> Result<Self> {
        let hash = config_hash(&config)?;
        let mut record = Self {
            schema: crate::harness::config::SCHEMA_VERSION,
            command: command.into(),
            software_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: hash,
            config,
            outputs,
            checksum: String::new(),
        };
        record.checksum = record.compute_checksum()?;
        Ok(record)
    }

    fn compute_checksum(&self) -> Result<String> {
        let mut unsealed = self.clone();
        unsealed.checksum = String::new();
        let bytes = serde_json::to_vec(&unsealed)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    /// Pretty JSON document, trailing newline included.
    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

/// Re-derives the checksum of a parsed record document and compares it with
/// the stored one. Operates on the raw JSON value so any record kind,
/// including ones written by other versions, can be integrity-checked; key
/// order is preserved from the file, which matches the declaration order
/// the checksum was computed under.
pub fn verify_checksum(value: &serde_json::Value, path: &Path) -> Result<()> {
    let stored = value
        .get("checksum")
        .and_then(serde_json::Value::as_str)
        .ok_or_else(|| Error::Schema {
            found: "record without string 'checksum'".into(),
            supported: "run records with a checksum field".into(),
        })?
        .to_string();
    let mut unsealed = value.clone();
    unsealed["checksum"] = serde_json::Value::String(String::new());
    let bytes = serde_json::to_vec(&unsealed)?;
    let computed = hex::encode(Sha256::digest(&bytes));
    if stored != computed {
        return Err(Error::ChecksumMismatch {
            path: path.display().to_string(),
            stored,
            computed,
        });
    }
    Ok(())
}

/// Writes via a temp file in the same directory plus an atomic rename, so a
/// crash never leaves a half-written record.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = match dir {
        Some(dir) => tempfile::NamedTempFile::new_in(dir)?,
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Trajectory CSV: row k holds the source point m_k, the observation z_k,
/// and the state x_{k+1} the reservoir reached after absorbing z_k, which is
/// the alignment under which samples converge to the synchronization map.
pub fn write_trajectory_csv(path: &Path, traj: &DrivenTrajectory) -> Result<()> {
    let q = traj.source_points.first().map_or(0, DVector::len);
    let n = traj.states.first().map_or(0, DVector::len);
    let mut out = String::new();
    out.push('k');
    for i in 0..q {
        out.push_str(&format!(",m{i}"));
    }
    out.push_str(",z");
    for i in 0..n {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for k in 0..traj.inputs.len() {
        out.push_str(&k.to_string());
        if let Some(m) = traj.source_points.get(k) {
            for v in m.iter() {
                out.push_str(&format!(",{v}"));
            }
        }
        out.push_str(&format!(",{}", traj.inputs[k]));
        for v in traj.states[k + 1].iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Sync-curve CSV: one `(k, gap)` row per probe step.
pub fn write_sync_curve_csv(path: &Path, curve: &SyncCurve) -> Result<()> {
    let mut out = String::from("k,gap\n");
    for (k, gap) in &curve.samples {
        out.push_str(&format!("{k},{gap}\n"));
    }
    write_atomic(path, out.as_bytes())
}

/// Sweep summary CSV, one row per reservoir size.
pub fn write_sweep_summary_csv(path: &Path, rows: &[SweepSummaryRow]) -> Result<()> {
    let mut out = String::from(
        "n,trials,gate_feasible,rank_ok_count,defect_ok_count,drift_ok_count,all_ok_count\n",
    );
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.n,
            row.trials,
            row.gate_feasible,
            row.rank_ok_count,
            row.defect_ok_count,
            row.drift_ok_count,
            row.all_ok_count
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Sampled synchronization map as plain JSON arrays for external tooling.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampledGsRecord {
    pub source_dim: usize,
    pub state_dim: usize,
    pub points: Vec<Vec<f64>>,
    pub images: Vec<Vec<f64>>,
}

impl SampledGsRecord {
    pub fn from_sampled(gs: &crate::reservoir::SampledGs) -> Self {
        Self {
            source_dim: gs.points.first().map_or(0, DVector::len),
            state_dim: gs.images.first().map_or(0, DVector::len),
            points: gs.points.iter().map(|p| p.iter().copied().collect()).collect(),
            images: gs.images.iter().map(|p| p.iter().copied().collect()).collect(),
        }
    }
}

/// Wall-clock metadata, written beside the record rather than inside it so
/// the record itself stays byte-identical across reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: String,
    pub config_hash: String,
    pub started_unix_ms: u128,
    pub total_ms: u128,
    pub stages: Vec<(String, u128)>,
    pub written_files: Vec<String>,
}
