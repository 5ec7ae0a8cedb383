//! Experiment configuration: a single TOML file per run, schema versioned,
//! unknown keys rejected.
//!
//! Each spec section is a `kind` string plus the parameters that kind needs;
//! parameters that do not belong to the declared kind are rejected rather
//! than ignored, so a config says exactly what runs. Whenever any section
//! draws random values the run seed must be given explicitly (in the file or
//! via `--seed`): replayability of the statistical claims depends on it.

use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::isometrize::{self, MetricTensor, ROTATION_TOL};
use crate::reservoir::{EsnReservoir, LinearReservoir};
use crate::sources::{LinearSource, NonlinearSource, Observation, Source};

pub const SCHEMA_VERSION: i64 = 1;

macro_rules! forbid {
    ($section:expr, $kind:expr, $($field:expr => $name:literal),+ $(,)?) => {
        $(
            if $field.is_some() {
                return Err(Error::Config(format!(
                    "{} kind '{}' does not take '{}'",
                    $section, $kind, $name
                )));
            }
        )+
    };
}

fn require<T: Clone>(field: &Option<T>, section: &str, kind: &str, name: &str) -> Result<T> {
    field.clone().ok_or_else(|| {
        Error::Config(format!("{section} kind '{kind}' requires '{name}'"))
    })
}

fn matrix_from_rows(rows: &[Vec<f64>], section: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Config(format!("{section}: 'rows' is empty")));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!(
            "{section}: 'rows' must be rectangular and nonempty"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

/// Invertible source system driving the reservoir.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// One of: rotation, scaling, diagonal, matrix, henon.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entries: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

impl SourceSpec {
    pub fn build(&self) -> Result<Source> {
        match self.kind.as_str() {
            "rotation" => {
                forbid!("source", "rotation",
                    self.factor => "factor", self.entries => "entries",
                    self.rows => "rows", self.a => "a", self.b => "b");
                let theta = require(&self.theta, "source", "rotation", "theta")?;
                Ok(LinearSource::rotation(theta)?.into())
            }
            "scaling" => {
                forbid!("source", "scaling",
                    self.theta => "theta", self.entries => "entries",
                    self.rows => "rows", self.a => "a", self.b => "b");
                let factor = require(&self.factor, "source", "scaling", "factor")?;
                Ok(LinearSource::scaling(factor)?.into())
            }
            "diagonal" => {
                forbid!("source", "diagonal",
                    self.theta => "theta", self.factor => "factor",
                    self.rows => "rows", self.a => "a", self.b => "b");
                let entries = require(&self.entries, "source", "diagonal", "entries")?;
                Ok(LinearSource::diagonal(&entries)?.into())
            }
            "matrix" => {
                forbid!("source", "matrix",
                    self.theta => "theta", self.factor => "factor",
                    self.entries => "entries", self.a => "a", self.b => "b");
                let rows = require(&self.rows, "source", "matrix", "rows")?;
                Ok(LinearSource::new(matrix_from_rows(&rows, "source")?)?.into())
            }
            "henon" => {
                forbid!("source", "henon",
                    self.theta => "theta", self.factor => "factor",
                    self.entries => "entries", self.rows => "rows");
                let a = self.a.unwrap_or(1.4);
                let b = self.b.unwrap_or(0.3);
                Ok(NonlinearSource::henon(a, b)?.into())
            }
            other => Err(Error::Config(format!("unknown source kind '{other}'"))),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind.as_str(), "rotation" | "scaling" | "diagonal" | "matrix")
    }
}

/// Scalar observation read from the source state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    /// One of: coordinate, linear.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
}

impl ObservationSpec {
    pub fn build(&self, source_dim: usize) -> Result<Observation> {
        match self.kind.as_str() {
            "coordinate" => {
                forbid!("observation", "coordinate", self.coefficients => "coefficients");
                let index = require(&self.index, "observation", "coordinate", "index")?;
                Observation::coordinate(source_dim, index)
            }
            "linear" => {
                forbid!("observation", "linear", self.index => "index");
                let coeffs =
                    require(&self.coefficients, "observation", "linear", "coefficients")?;
                if coeffs.len() != source_dim {
                    return Err(Error::Config(format!(
                        "observation coefficients have length {}, source dimension is {source_dim}",
                        coeffs.len()
                    )));
                }
                Ok(Observation::linear(RowDVector::from_vec(coeffs)))
            }
            other => Err(Error::Config(format!("unknown observation kind '{other}'"))),
        }
    }
}

/// Reservoir architecture.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirSpec {
    /// One of: linear_random, linear_matrix, takens, esn_random.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectral_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_rows: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<Vec<f64>>,
    /// esn_random only: multiplies the input weights after sampling.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_scale: Option<f64>,
}

/// A reservoir built from its spec; isometrization requires the linear arm.
#[derive(Debug, Clone)]
pub enum BuiltReservoir {
    Linear(LinearReservoir),
    Esn(EsnReservoir),
}

impl BuiltReservoir {
    pub fn dim(&self) -> usize {
        match self {
            BuiltReservoir::Linear(r) => r.dim(),
            BuiltReservoir::Esn(r) => r.dim(),
        }
    }
}

impl ReservoirSpec {
    pub fn uses_randomness(&self) -> bool {
        matches!(self.kind.as_str(), "linear_random" | "esn_random")
    }

    pub fn build(&self, rng: &mut ChaCha12Rng) -> Result<BuiltReservoir> {
        match self.kind.as_str() {
            "linear_random" => {
                forbid!("reservoir", "linear_random",
                    self.a_rows => "a_rows", self.c => "c", self.input_scale => "input_scale");
                let n = require(&self.n, "reservoir", "linear_random", "n")?;
                let rho = require(&self.spectral_radius, "reservoir", "linear_random", "spectral_radius")?;
                Ok(BuiltReservoir::Linear(LinearReservoir::random(n, rho, rng)?))
            }
            "linear_matrix" => {
                forbid!("reservoir", "linear_matrix",
                    self.n => "n", self.spectral_radius => "spectral_radius",
                    self.input_scale => "input_scale");
                let a_rows = require(&self.a_rows, "reservoir", "linear_matrix", "a_rows")?;
                let c = require(&self.c, "reservoir", "linear_matrix", "c")?;
                Ok(BuiltReservoir::Linear(LinearReservoir::new(
                    matrix_from_rows(&a_rows, "reservoir")?,
                    DVector::from_vec(c),
                )?))
            }
            "takens" => {
                forbid!("reservoir", "takens",
                    self.spectral_radius => "spectral_radius", self.a_rows => "a_rows",
                    self.c => "c", self.input_scale => "input_scale");
                let n = require(&self.n, "reservoir", "takens", "n")?;
                if n == 0 {
                    return Err(Error::Config("takens depth must be positive".into()));
                }
                Ok(BuiltReservoir::Linear(LinearReservoir::takens(n)))
            }
            "esn_random" => {
                forbid!("reservoir", "esn_random", self.a_rows => "a_rows", self.c => "c");
                let n = require(&self.n, "reservoir", "esn_random", "n")?;
                let rho = require(&self.spectral_radius, "reservoir", "esn_random", "spectral_radius")?;
                let esn = EsnReservoir::random(n, rho, rng)?;
                match self.input_scale {
                    None => Ok(BuiltReservoir::Esn(esn)),
                    Some(s) => {
                        if !(s.is_finite() && s > 0.0) {
                            return Err(Error::Config(
                                "input_scale must be positive and finite".into(),
                            ));
                        }
                        Ok(BuiltReservoir::Esn(EsnReservoir::new(
                            esn.a().clone(),
                            esn.c() * s,
                            esn.bias().clone(),
                        )?))
                    }
                }
            }
            other => Err(Error::Config(format!("unknown reservoir kind '{other}'"))),
        }
    }
}

/// Metric on the source space; defaults to Euclidean.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    /// One of: euclidean, matrix, random_spd.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<f64>>>,
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self {
            kind: "euclidean".into(),
            rows: None,
        }
    }
}

impl MetricSpec {
    pub fn uses_randomness(&self) -> bool {
        self.kind == "random_spd"
    }

    pub fn build(&self, source_dim: usize, rng: &mut ChaCha12Rng) -> Result<MetricTensor> {
        match self.kind.as_str() {
            "euclidean" => {
                forbid!("metric", "euclidean", self.rows => "rows");
                Ok(MetricTensor::euclidean(source_dim))
            }
            "matrix" => {
                let rows = require(&self.rows, "metric", "matrix", "rows")?;
                let g = matrix_from_rows(&rows, "metric")?;
                if g.nrows() != source_dim {
                    return Err(Error::Config(format!(
                        "metric is {}x{}, source dimension is {source_dim}",
                        g.nrows(),
                        g.ncols()
                    )));
                }
                MetricTensor::new(g)
            }
            "random_spd" => {
                forbid!("metric", "random_spd", self.rows => "rows");
                Ok(MetricTensor::random_spd(source_dim, rng))
            }
            other => Err(Error::Config(format!("unknown metric kind '{other}'"))),
        }
    }
}

/// Rotation applied inside the conjugator; defaults to the identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationSpec {
    /// One of: identity, matrix, random.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<f64>>>,
}

impl Default for RotationSpec {
    fn default() -> Self {
        Self {
            kind: "identity".into(),
            rows: None,
        }
    }
}

impl RotationSpec {
    pub fn uses_randomness(&self) -> bool {
        self.kind == "random"
    }

    pub fn build(&self, dim: usize, rng: &mut ChaCha12Rng) -> Result<DMatrix<f64>> {
        match self.kind.as_str() {
            "identity" => {
                forbid!("rotation", "identity", self.rows => "rows");
                Ok(DMatrix::identity(dim, dim))
            }
            "matrix" => {
                let rows = require(&self.rows, "rotation", "matrix", "rows")?;
                let r = matrix_from_rows(&rows, "rotation")?;
                if r.nrows() != dim {
                    return Err(Error::Config(format!(
                        "rotation is {}x{}, expected {dim}x{dim}",
                        r.nrows(),
                        r.ncols()
                    )));
                }
                isometrize::validate_rotation(&r, ROTATION_TOL)?;
                Ok(r)
            }
            "random" => {
                forbid!("rotation", "random", self.rows => "rows");
                Ok(isometrize::random_rotation(dim, rng))
            }
            other => Err(Error::Config(format!("unknown rotation kind '{other}'"))),
        }
    }
}

/// Run mechanics and tolerances shared by the commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunParams {
    /// Master seed; required whenever any spec draws random values.
    pub seed: Option<u64>,
    pub washout: usize,
    pub samples: usize,
    /// Initial reservoir states are drawn uniformly from this cube radius.
    pub x0_radius: f64,
    pub sync_tol: f64,
    pub defect_tol: f64,
    pub drift_tol: f64,
    pub rank_tol: f64,
    pub immersion_tol: f64,
    pub injectivity_floor: f64,
    pub sep_floor_scale: f64,
    /// Neighbor count for Jacobian estimation; default 2q + 2.
    pub knn: Option<usize>,
    /// Initial source point; defaults to e1 for linear sources and the
    /// origin for the Henon map.
    pub m0: Option<Vec<f64>>,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            seed: None,
            washout: 200,
            samples: 500,
            x0_radius: 1.0,
            sync_tol: 1e-9,
            defect_tol: 1e-10,
            drift_tol: 1e-10,
            rank_tol: 1e-10,
            immersion_tol: 1e-6,
            injectivity_floor: 1e-3,
            sep_floor_scale: 1e-6,
            knn: None,
            m0: None,
        }
    }
}

/// Seed-grid sweep over random reservoir draws.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub seed_count: usize,
    /// Reservoir sizes per cell; defaults to the configured reservoir n.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_values: Option<Vec<usize>>,
}

/// One experiment: what to run and how to judge it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: i64,
    pub source: SourceSpec,
    pub observation: ObservationSpec,
    pub reservoir: ReservoirSpec,
    #[serde(default)]
    pub metric: MetricSpec,
    #[serde(default)]
    pub rotation: RotationSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_perp: Option<RotationSpec>,
    #[serde(default)]
    pub run: RunParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    /// CLI overrides fold into the config before hashing, so the stored
    /// effective config is the one that actually ran. `tol` retargets the
    /// per-command acceptance tolerance, passed in by the command.
    pub fn apply_seed_override(&mut self, seed: Option<u64>) {
        if let Some(s) = seed {
            self.run.seed = Some(s);
        }
    }

    pub fn uses_randomness(&self) -> bool {
        self.reservoir.uses_randomness()
            || self.metric.uses_randomness()
            || self.rotation.uses_randomness()
            || self.rotation_perp.as_ref().is_some_and(|r| r.uses_randomness())
            || self.sweep.is_some()
    }

    /// Seed for substream derivation: the configured seed, or 0 for fully
    /// deterministic configs (where only initial reservoir states draw from
    /// it, and those are part of the reproducible record).
    pub fn effective_seed(&self) -> u64 {
        self.run.seed.unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Schema {
                found: self.schema.to_string(),
                supported: SCHEMA_VERSION.to_string(),
            });
        }
        let r = &self.run;
        for (name, value) in [
            ("sync_tol", r.sync_tol),
            ("defect_tol", r.defect_tol),
            ("drift_tol", r.drift_tol),
            ("rank_tol", r.rank_tol),
            ("immersion_tol", r.immersion_tol),
            ("injectivity_floor", r.injectivity_floor),
            ("sep_floor_scale", r.sep_floor_scale),
            ("x0_radius", r.x0_radius),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "run.{name} must be positive and finite, got {value}"
                )));
            }
        }
        if r.washout == 0 {
            return Err(Error::Config("run.washout must be at least 1".into()));
        }
        if r.samples == 0 {
            return Err(Error::Config("run.samples must be at least 1".into()));
        }
        if self.uses_randomness() && self.run.seed.is_none() {
            return Err(Error::Config(
                "run.seed is required when any spec draws random values (or pass --seed)".into(),
            ));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.seed_count == 0 {
                return Err(Error::Config("sweep.seed_count must be at least 1".into()));
            }
            if sweep.n_values.as_ref().is_some_and(|v| v.is_empty()) {
                return Err(Error::Config("sweep.n_values must be nonempty".into()));
            }
        }
        Ok(())
    }
}

/// Parses and schema-checks a config file. The schema version is read
/// before the typed parse so version mismatches are reported as such
/// rather than as unknown-key noise.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let table: toml::Table = text.parse().map_err(|e| {
        Error::Config(format!("cannot parse {}: {e}", path.display()))
    })?;
    match table.get("schema").and_then(toml::Value::as_integer) {
        Some(SCHEMA_VERSION) => {}
        Some(found) => {
            return Err(Error::Schema {
                found: found.to_string(),
                supported: SCHEMA_VERSION.to_string(),
            })
        }
        None => {
            return Err(Error::Schema {
                found: "no schema key".into(),
                supported: SCHEMA_VERSION.to_string(),
            })
        }
    }
    table.try_into().map_err(|e| {
        Error::Config(format!("invalid config {}: {e}", path.display()))
    })
}
