//! Explicit ensembles that exhibit the two `λ` thresholds.
//!
//! For `λ > 1` the loss is unbounded below over the whole ensemble: two
//! modules with reconstruction maps `(q² + q) d dᵀ` and `-q² d dᵀ` nearly
//! cancel in the ensemble mean (which is `(q/M) d dᵀ`) while each is huge on
//! its own, so the loss falls like `-q⁴`. For a single module with the rest
//! fixed, the quadratic coefficient of the loss in that module's scale is
//! proportional to `1 - λ (M-1)/M`, which changes sign at `λ = M/(M-1)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MaeError, Result};
use crate::linalg::top_eigenvectors;
use crate::loss::evaluate_loss;
use crate::rng::{derive_seed, SeededRng};
use crate::types::{AEModule, DataMatrix, ModularAE};

/// Build the two-module witness at scale `q` along unit `direction`. Modules
/// beyond the second are zero.
pub fn build_divergent_ensemble(
    dim: usize,
    hidden: usize,
    num_modules: usize,
    q: f64,
    direction: &DVector<f64>,
    lambda: f64,
) -> Result<ModularAE> {
    if num_modules < 2 {
        return Err(MaeError::InvalidInput("the witness needs at least two modules".into()));
    }
    if !(q >= 1.0 && q.is_finite()) {
        return Err(MaeError::InvalidInput(format!("witness scale q must be >= 1, got {q}")));
    }
    if direction.len() != dim {
        return Err(MaeError::shape("witness direction", dim, direction.len()));
    }
    let norm = direction.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(MaeError::InvalidInput("witness direction must be a nonzero finite vector".into()));
    }
    let d = direction / norm;

    let module_with = |weight: f64| -> Result<AEModule> {
        let mut a = DMatrix::zeros(dim, hidden);
        let mut b = DMatrix::zeros(hidden, dim);
        if weight != 0.0 {
            a.column_mut(0).copy_from(&(&d * weight));
            b.row_mut(0).copy_from(&d.transpose());
        }
        AEModule::new(a, b)
    };

    let mut modules = Vec::with_capacity(num_modules);
    modules.push(module_with(q * q + q)?);
    modules.push(module_with(-q * q)?);
    for _ in 2..num_modules {
        modules.push(module_with(0.0)?);
    }
    ModularAE::new(modules, lambda)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessPoint {
    pub q: f64,
    pub loss: f64,
    pub ensemble_error: f64,
    pub avg_individual_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DichotomyEvidence {
    /// `λ > 1`: the witness sequence along `direction`.
    Divergent {
        direction: Vec<f64>,
        points: Vec<WitnessPoint>,
    },
    /// `λ ≤ 1`: the smallest loss over randomly drawn ensembles.
    Bounded { samples: usize, min_loss: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub lambda: f64,
    pub evidence: DichotomyEvidence,
    /// For `λ > 1`: loss strictly decreasing, ensemble and average individual
    /// errors strictly increasing along the schedule. For `λ ≤ 1`: no sampled
    /// loss below `-1e-9`.
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DichotomyOptions {
    pub num_modules: usize,
    pub hidden: usize,
    /// Random ensembles drawn when `λ ≤ 1`.
    pub samples: usize,
    pub seed: u64,
    /// Witness direction; defaults to the top principal direction of the data.
    pub direction: Option<DVector<f64>>,
}

impl Default for DichotomyOptions {
    fn default() -> Self {
        Self {
            num_modules: 2,
            hidden: 1,
            samples: 1000,
            seed: 0,
            direction: None,
        }
    }
}

fn strictly_monotone(values: impl Iterator<Item = f64>, increasing: bool) -> bool {
    let v: Vec<f64> = values.collect();
    v.windows(2).all(|w| if increasing { w[1] > w[0] } else { w[1] < w[0] })
}

pub fn verify_dichotomy(
    data: &DataMatrix,
    lambda: f64,
    q_schedule: &[f64],
    options: &DichotomyOptions,
) -> Result<DichotomyReport> {
    if data.values().iter().all(|&v| v == 0.0) {
        return Err(MaeError::InvalidInput("data matrix is identically zero".into()));
    }
    if !lambda.is_finite() {
        return Err(MaeError::NonFinite("lambda".into()));
    }
    let dim = data.dim();

    if lambda > 1.0 {
        if q_schedule.is_empty() {
            return Err(MaeError::InvalidInput("empty witness schedule".into()));
        }
        let direction = match &options.direction {
            Some(d) => d.clone(),
            None => {
                let x = data.values();
                top_eigenvectors(&(x * x.transpose()), 1)?.vectors.column(0).into_owned()
            }
        };
        if direction.len() != dim {
            return Err(MaeError::shape("witness direction", dim, direction.len()));
        }
        let unit = &direction / direction.norm();
        let activation = (unit.transpose() * data.values()).norm();
        if !(activation > 1e-12 * data.values().norm()) {
            return Err(MaeError::InconclusiveWitness(
                "the witness direction is orthogonal to every example".into(),
            ));
        }
        let points = q_schedule
            .iter()
            .map(|&q| {
                let model = build_divergent_ensemble(dim, options.hidden, options.num_modules, q, &unit, lambda)?;
                let b = evaluate_loss(&model, data)?;
                Ok(WitnessPoint {
                    q,
                    loss: b.total,
                    ensemble_error: b.ensemble_error,
                    avg_individual_error: b.avg_individual_error,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let certified = strictly_monotone(points.iter().map(|p| p.loss), false)
            && strictly_monotone(points.iter().map(|p| p.ensemble_error), true)
            && strictly_monotone(points.iter().map(|p| p.avg_individual_error), true);
        Ok(DichotomyReport {
            lambda,
            evidence: DichotomyEvidence::Divergent {
                direction: unit.iter().copied().collect(),
                points,
            },
            certified,
        })
    } else {
        if options.samples == 0 {
            return Err(MaeError::InvalidInput("need at least one random sample".into()));
        }
        let mut rng = SeededRng::new(derive_seed(options.seed, "dichotomy-samples"));
        let mut min_loss = f64::INFINITY;
        for _ in 0..options.samples {
            // scales log-uniform over four decades
            let scale = 10f64.powf(4.0 * rng.uniform() - 2.0);
            let model = ModularAE::random(dim, options.hidden, options.num_modules, lambda, rng.next_u64())?;
            let modules = model
                .into_modules()
                .into_iter()
                .map(|m| {
                    let (a, b) = m.into_parts();
                    AEModule::new(a * scale, b)
                })
                .collect::<Result<Vec<_>>>()?;
            let model = ModularAE::new(modules, lambda)?;
            min_loss = min_loss.min(evaluate_loss(&model, data)?.total);
        }
        Ok(DichotomyReport {
            lambda,
            evidence: DichotomyEvidence::Bounded {
                samples: options.samples,
                min_loss,
            },
            certified: min_loss >= -1e-9,
        })
    }
}

/// `1 - λ (M-1)/M`: the coefficient of the quadratic growth of the loss in
/// any single module's output.
pub fn single_module_coefficient(lambda: f64, num_modules: usize) -> f64 {
    1.0 - lambda * (num_modules as f64 - 1.0) / num_modules as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryEntry {
    pub lambda: f64,
    pub coefficient: f64,
    pub start_loss: f64,
    /// `(s, loss)` after scaling module 0's encoder and decoder by `s`.
    pub scaled: Vec<(f64, f64)>,
    /// Every scaled loss exceeds the start and the sequence increases.
    pub grows: bool,
    /// Start and scaled losses strictly decrease.
    pub decreases: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub num_modules: usize,
    pub bound: f64,
    pub entries: Vec<BoundaryEntry>,
}

/// Fix a random ensemble, then scale both factors of module 0 by each `s` in
/// `scales` (its reconstruction map by `s²`) and record the loss, for every
/// `λ` in `lambdas`.
pub fn per_module_boundary_check(
    data: &DataMatrix,
    num_modules: usize,
    hidden: usize,
    lambdas: &[f64],
    scales: &[f64],
    seed: u64,
) -> Result<BoundaryReport> {
    if num_modules < 2 {
        return Err(MaeError::InvalidInput("boundary check needs at least two modules".into()));
    }
    let base = ModularAE::random(data.dim(), hidden, num_modules, 0.0, seed)?;
    let scaled_model = |s: f64, lambda: f64| -> Result<ModularAE> {
        let mut modules = base.modules().to_vec();
        let (a, b) = modules[0].clone().into_parts();
        modules[0] = AEModule::new(a * s, b * s)?;
        ModularAE::new(modules, lambda)
    };
    let entries = lambdas
        .iter()
        .map(|&lambda| {
            let start_loss = evaluate_loss(&base.clone().with_lambda(lambda)?, data)?.total;
            let scaled = scales
                .iter()
                .map(|&s| Ok((s, evaluate_loss(&scaled_model(s, lambda)?, data)?.total)))
                .collect::<Result<Vec<_>>>()?;
            let grows = scaled.iter().all(|&(_, l)| l > start_loss)
                && strictly_monotone(scaled.iter().map(|p| p.1), true);
            let decreases =
                strictly_monotone(std::iter::once(start_loss).chain(scaled.iter().map(|p| p.1)), false);
            Ok(BoundaryEntry {
                lambda,
                coefficient: single_module_coefficient(lambda, num_modules),
                start_loss,
                scaled,
                grows,
                decreases,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BoundaryReport {
        num_modules,
        bound: crate::types::lambda_bound(num_modules),
        entries,
    })
}
