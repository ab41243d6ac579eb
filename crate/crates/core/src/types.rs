//! Shared domain types and the versioned JSON model format.
//!
//! Data is stored features-as-rows: a `D x N` matrix whose columns are the
//! examples. Each module is a decoder `A` (`D x P`) and encoder `B`
//! (`P x D`); its reconstruction map is the product `A B`.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MaeError, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
    labels: Option<Vec<i64>>,
    feature_means: Option<DVector<f64>>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>, labels: Option<Vec<i64>>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(MaeError::InvalidInput(format!(
                "data matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MaeError::NonFinite("data matrix".into()));
        }
        if let Some(l) = &labels {
            if l.len() != values.ncols() {
                return Err(MaeError::shape("labels", values.ncols(), l.len()));
            }
        }
        Ok(Self {
            values,
            labels,
            feature_means: None,
        })
    }

    /// Attach centering offsets. The rows of `values` must already sum to
    /// zero (within `1e-9 * N * max|row|`).
    pub fn with_feature_means(mut self, means: DVector<f64>) -> Result<Self> {
        if means.len() != self.dim() {
            return Err(MaeError::shape("feature_means", self.dim(), means.len()));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(MaeError::NonFinite("feature_means".into()));
        }
        let n = self.len() as f64;
        for (r, row) in self.values.row_iter().enumerate() {
            let sum: f64 = row.iter().sum();
            let max_abs = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if sum.abs() > 1e-9 * n * max_abs.max(f64::MIN_POSITIVE) {
                return Err(MaeError::InvalidInput(format!(
                    "feature {r} is not centred (row sum {sum:.3e})"
                )));
            }
        }
        self.feature_means = Some(means);
        Ok(self)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn feature_means(&self) -> Option<&DVector<f64>> {
        self.feature_means.as_ref()
    }

    /// Number of features `D`.
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Number of examples `N`.
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    /// Labels, or an error naming `context` when the data is unlabelled.
    pub fn require_labels(&self, context: &str) -> Result<&[i64]> {
        self.labels()
            .ok_or_else(|| MaeError::InvalidInput(format!("{context} requires labelled data")))
    }

    /// New matrix made of the given columns, in order. Labels follow their
    /// columns; centering metadata is dropped.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(MaeError::InvalidInput("empty column selection".into()));
        }
        let values = self.values.select_columns(indices.iter());
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(Self {
            values,
            labels,
            feature_means: None,
        })
    }
}

/// One linear encoder/decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct AEModule {
    decoder: DMatrix<f64>,
    encoder: DMatrix<f64>,
}

impl AEModule {
    pub fn new(decoder: DMatrix<f64>, encoder: DMatrix<f64>) -> Result<Self> {
        let (d, p) = decoder.shape();
        if encoder.shape() != (p, d) {
            return Err(MaeError::shape(
                "encoder",
                format!("{p}x{d}"),
                format!("{}x{}", encoder.nrows(), encoder.ncols()),
            ));
        }
        if p == 0 || p >= d {
            return Err(MaeError::InvalidInput(format!(
                "hidden width must satisfy 1 <= P < D, got P = {p}, D = {d}"
            )));
        }
        if decoder.iter().chain(encoder.iter()).any(|v| !v.is_finite()) {
            return Err(MaeError::NonFinite("module parameters".into()));
        }
        Ok(Self { decoder, encoder })
    }

    pub(crate) fn from_parts_unchecked(decoder: DMatrix<f64>, encoder: DMatrix<f64>) -> Self {
        debug_assert_eq!(decoder.ncols(), encoder.nrows());
        debug_assert_eq!(decoder.nrows(), encoder.ncols());
        Self { decoder, encoder }
    }

    /// Decoder `A`, `D x P`.
    pub fn decoder(&self) -> &DMatrix<f64> {
        &self.decoder
    }

    /// Encoder `B`, `P x D`.
    pub fn encoder(&self) -> &DMatrix<f64> {
        &self.encoder
    }

    pub fn dim(&self) -> usize {
        self.decoder.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.decoder.ncols()
    }

    /// Reconstruction map `A B`.
    pub fn product(&self) -> DMatrix<f64> {
        &self.decoder * &self.encoder
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.decoder, self.encoder)
    }
}

/// Upper end of the admissible training range for `lambda`, `M / (M - 1)`.
/// Infinite for a single module.
pub fn lambda_bound(num_modules: usize) -> f64 {
    if num_modules <= 1 {
        f64::INFINITY
    } else {
        num_modules as f64 / (num_modules as f64 - 1.0)
    }
}

/// Check `0 <= lambda < M/(M-1)`.
pub fn check_trainable_lambda(lambda: f64, num_modules: usize) -> Result<()> {
    let bound = lambda_bound(num_modules);
    if !lambda.is_finite() || lambda < 0.0 || lambda >= bound {
        return Err(MaeError::InvalidLambda {
            lambda,
            bound,
            modules: num_modules,
        });
    }
    Ok(())
}

/// An ensemble of `M` shape-consistent modules and its diversity parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ModularAE {
    modules: Vec<AEModule>,
    lambda: f64,
}

impl ModularAE {
    pub fn new(modules: Vec<AEModule>, lambda: f64) -> Result<Self> {
        let first = modules
            .first()
            .ok_or_else(|| MaeError::InvalidInput("an ensemble needs at least one module".into()))?;
        let (d, p) = (first.dim(), first.hidden());
        for (i, m) in modules.iter().enumerate() {
            if m.dim() != d || m.hidden() != p {
                return Err(MaeError::shape(
                    &format!("module {i}"),
                    format!("D={d}, P={p}"),
                    format!("D={}, P={}", m.dim(), m.hidden()),
                ));
            }
        }
        if !lambda.is_finite() {
            return Err(MaeError::NonFinite("lambda".into()));
        }
        Ok(Self { modules, lambda })
    }

    /// Gaussian initialisation: every entry of every `A_i` and `B_i` is an
    /// independent `N(0, 1/D)` draw. Modules are filled in order, decoder
    /// before encoder, each in column-major order.
    pub fn random(dim: usize, hidden: usize, num_modules: usize, lambda: f64, seed: u64) -> Result<Self> {
        let mut rng = SeededRng::new(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let mut modules = Vec::with_capacity(num_modules);
        for _ in 0..num_modules {
            let a = DMatrix::from_fn(dim, hidden, |_, _| rng.normal() * scale);
            let b = DMatrix::from_fn(hidden, dim, |_, _| rng.normal() * scale);
            modules.push(AEModule::new(a, b)?);
        }
        Self::new(modules, lambda)
    }

    pub fn modules(&self) -> &[AEModule] {
        &self.modules
    }

    pub fn module(&self, i: usize) -> &AEModule {
        &self.modules[i]
    }

    pub(crate) fn set_module(&mut self, i: usize, module: AEModule) {
        self.modules[i] = module;
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn num_modules(&self) -> usize {
        self.modules.len()
    }

    pub fn dim(&self) -> usize {
        self.modules[0].dim()
    }

    pub fn hidden(&self) -> usize {
        self.modules[0].hidden()
    }

    pub fn products(&self) -> Vec<DMatrix<f64>> {
        self.modules.iter().map(AEModule::product).collect()
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(MaeError::NonFinite("lambda".into()));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn into_modules(self) -> Vec<AEModule> {
        self.modules
    }
}

/// Solver hyperparameters shared by the backfitting and gradient solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub num_modules: usize,
    pub hidden_dim: usize,
    pub max_epochs: usize,
    /// Stop once the per-epoch decrease of the loss falls below this.
    pub tolerance: f64,
    pub seed: u64,
    /// Gradient solver only; `None` selects a data-scaled default.
    pub learning_rate: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            num_modules: 10,
            hidden_dim: 10,
            max_epochs: 1000,
            tolerance: 1e-5,
            seed: 0,
            learning_rate: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.num_modules == 0 {
            return Err(MaeError::InvalidInput("num_modules must be >= 1".into()));
        }
        if self.hidden_dim == 0 || self.hidden_dim >= dim {
            return Err(MaeError::InvalidInput(format!(
                "hidden_dim must satisfy 1 <= P < D = {dim}, got {}",
                self.hidden_dim
            )));
        }
        if self.max_epochs == 0 {
            return Err(MaeError::InvalidInput("max_epochs must be >= 1".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(MaeError::InvalidInput("tolerance must be positive".into()));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(MaeError::InvalidInput("learning_rate must be positive".into()));
            }
        }
        check_trainable_lambda(self.lambda, self.num_modules)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss at the random initialisation, before the first epoch.
    pub initial_error: f64,
    /// Loss after each epoch.
    pub error_trace: Vec<f64>,
    pub epochs_run: usize,
    pub wall_time_seconds: f64,
    /// True when the tolerance rule stopped training before `max_epochs`.
    pub converged: bool,
}

impl TrainReport {
    pub fn final_error(&self) -> f64 {
        self.error_trace.last().copied().unwrap_or(self.initial_error)
    }
}

pub const MODEL_FORMAT: &str = "modular-ae";
pub const MODEL_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format: String,
    version: u64,
    dim: usize,
    hidden: usize,
    num_modules: usize,
    lambda: f64,
    modules: Vec<ModuleDocument>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModuleDocument {
    #[serde(rename = "A")]
    decoder: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    encoder: Vec<Vec<f64>>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        let found_cols = rows.first().map_or(0, Vec::len);
        return Err(MaeError::shape(
            what,
            format!("{nrows}x{ncols}"),
            format!("{}x{}", rows.len(), found_cols),
        ));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |r, c| rows[r][c]))
}

/// Write `model` as a version-1 JSON document. Floats are written in their
/// shortest round-trip form, so [`load_model`] restores every entry exactly.
pub fn save_model<W: Write>(model: &ModularAE, mut sink: W) -> Result<()> {
    let check = ModularAE::new(model.modules.clone(), model.lambda)?;
    for m in check.modules() {
        AEModule::new(m.decoder.clone(), m.encoder.clone())?;
    }
    let doc = ModelDocument {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        dim: model.dim(),
        hidden: model.hidden(),
        num_modules: model.num_modules(),
        lambda: model.lambda,
        modules: model
            .modules
            .iter()
            .map(|m| ModuleDocument {
                decoder: to_rows(&m.decoder),
                encoder: to_rows(&m.encoder),
            })
            .collect(),
    };
    serde_json::to_writer(&mut sink, &doc)?;
    sink.write_all(b"\n")?;
    Ok(())
}

pub fn load_model<R: Read>(source: R) -> Result<ModularAE> {
    let raw: serde_json::Value =
        serde_json::from_reader(source).map_err(|e| MaeError::Malformed(e.to_string()))?;
    let version = raw
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| MaeError::Malformed("missing or non-integer \"version\"".into()))?;
    if version != MODEL_VERSION {
        return Err(MaeError::UnsupportedVersion(version));
    }
    let doc: ModelDocument =
        serde_json::from_value(raw).map_err(|e| MaeError::Malformed(e.to_string()))?;
    if doc.format != MODEL_FORMAT {
        return Err(MaeError::Malformed(format!("unknown format {:?}", doc.format)));
    }
    if doc.modules.len() != doc.num_modules {
        return Err(MaeError::shape("modules", doc.num_modules, doc.modules.len()));
    }
    let modules = doc
        .modules
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let a = from_rows(&m.decoder, doc.dim, doc.hidden, &format!("module {i} A"))?;
            let b = from_rows(&m.encoder, doc.hidden, doc.dim, &format!("module {i} B"))?;
            AEModule::new(a, b)
        })
        .collect::<Result<Vec<_>>>()?;
    ModularAE::new(modules, doc.lambda)
}
