//! Full-batch gradient descent on the modular loss, and the solver benchmark.
//!
//! Per example the derivative of the loss with respect to module `i`'s
//! output is `(2/M) ((F_i - x) - λ (F_i - F̄))`. Stacking examples as
//! `G_i = (C_i X - X) - λ (C_i X - C̄ X)` and applying the chain rule through
//! `F_i = A_i B_i x`:
//!
//! ```text
//! ∂E/∂A_i = 2/(N M) · G_i Xᵀ B_iᵀ
//! ∂E/∂B_i = 2/(N M) · A_iᵀ G_i Xᵀ
//! ```
//!
//! Since `G_i Xᵀ = ((1-λ) C_i + λ C̄ - I) Σ`, the training loop never touches
//! the `D x N` data after forming `Σ`.

use std::time::Instant;

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::backfit::fit_backfit;
use crate::dataset::{center_features, gaussian_mixture, MixtureSpec};
use crate::error::{MaeError, Result};
use crate::loss::{mean_product, Gram};
use crate::rng::derive_seed;
use crate::types::{AEModule, DataMatrix, ModularAE, TrainConfig, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    /// `∂E/∂A_i`, each `D x P`.
    pub d_decoder: Vec<DMatrix<f64>>,
    /// `∂E/∂B_i`, each `P x D`.
    pub d_encoder: Vec<DMatrix<f64>>,
}

impl GradientPair {
    pub fn norm_squared(&self) -> f64 {
        self.d_decoder
            .iter()
            .chain(self.d_encoder.iter())
            .map(DMatrix::norm_squared)
            .sum()
    }
}

/// Residual maps `(1-λ) C_i + λ C̄ - I`, one per module.
fn residual_maps(products: &[DMatrix<f64>], lambda: f64) -> Vec<DMatrix<f64>> {
    let d = products[0].nrows();
    let mean = mean_product(products);
    let shared = &mean * lambda - DMatrix::<f64>::identity(d, d);
    products.iter().map(|c| c * (1.0 - lambda) + &shared).collect()
}

/// Analytic gradient of the loss with respect to every `A_i` and `B_i`,
/// evaluated directly on the data matrix.
pub fn gradient(model: &ModularAE, data: &DataMatrix) -> Result<GradientPair> {
    if model.dim() != data.dim() {
        return Err(MaeError::shape("data features", model.dim(), data.dim()));
    }
    let x = data.values();
    let scale = 2.0 / (data.len() as f64 * model.num_modules() as f64);
    let maps = residual_maps(&model.products(), model.lambda());
    let mut d_decoder = Vec::with_capacity(model.num_modules());
    let mut d_encoder = Vec::with_capacity(model.num_modules());
    for (module, h) in model.modules().iter().zip(&maps) {
        let g = h * x;
        let gxt = &g * x.transpose();
        d_decoder.push(&gxt * module.encoder().transpose() * scale);
        d_encoder.push(module.decoder().transpose() * &gxt * scale);
    }
    Ok(GradientPair {
        d_decoder,
        d_encoder,
    })
}

/// Same gradient computed from `Σ = X Xᵀ`.
pub fn gram_gradient(model: &ModularAE, gram: &Gram) -> Result<GradientPair> {
    if model.dim() != gram.dim() {
        return Err(MaeError::shape("gram dimension", model.dim(), gram.dim()));
    }
    let scale = 2.0 / (gram.num_examples() as f64 * model.num_modules() as f64);
    let maps = residual_maps(&model.products(), model.lambda());
    let mut d_decoder = Vec::with_capacity(model.num_modules());
    let mut d_encoder = Vec::with_capacity(model.num_modules());
    for (module, h) in model.modules().iter().zip(&maps) {
        let hs = h * gram.sigma();
        d_decoder.push(&hs * module.encoder().transpose() * scale);
        d_encoder.push(module.decoder().transpose() * &hs * scale);
    }
    Ok(GradientPair {
        d_decoder,
        d_encoder,
    })
}

/// One simultaneous step `θ ← θ - α ∇E` for every module.
pub fn gradient_step(model: &ModularAE, grad: &GradientPair, alpha: f64) -> Result<ModularAE> {
    let modules = model
        .modules()
        .iter()
        .zip(grad.d_decoder.iter().zip(&grad.d_encoder))
        .map(|(m, (da, db))| {
            AEModule::from_parts_unchecked(m.decoder() - da * alpha, m.encoder() - db * alpha)
        })
        .collect();
    ModularAE::new(modules, model.lambda())
}

/// Default step size: `0.2 · N M / λ_max(Σ)`.
///
/// The curvature of the loss along a decoder or encoder block is of order
/// `2 λ_max(Σ) / (N M)`, so this is a fixed fraction of the stable step
/// whatever the data scale.
pub fn default_learning_rate(gram: &Gram, num_modules: usize, largest_eigenvalue: f64) -> f64 {
    0.2 * gram.num_examples() as f64 * num_modules as f64 / largest_eigenvalue
}

const MAX_BACKOFFS: usize = 4;
const DIVERGENCE_PATIENCE: usize = 10;

enum GdOutcome {
    Done(ModularAE, TrainReport),
    Diverged(String),
}

fn run_gd(init: &ModularAE, gram: &Gram, alpha: f64, config: &TrainConfig) -> Result<GdOutcome> {
    let start = Instant::now();
    let mut model = init.clone();
    let initial = gram.model_loss(&model)?;
    let mut previous = initial;
    let mut increases = 0usize;
    let mut trace = Vec::new();
    let mut converged = false;
    for epoch in 0..config.max_epochs {
        let grad = gram_gradient(&model, gram)?;
        model = gradient_step(&model, &grad, alpha)?;
        let current = gram.model_loss(&model)?;
        if !current.is_finite() {
            return Ok(GdOutcome::Diverged(format!(
                "loss became non-finite at epoch {epoch} with step {alpha:.3e}"
            )));
        }
        trace.push(current);
        if current > previous {
            increases += 1;
            if increases >= DIVERGENCE_PATIENCE {
                return Ok(GdOutcome::Diverged(format!(
                    "loss increased for {DIVERGENCE_PATIENCE} consecutive epochs \
                     (epoch {epoch}, step {alpha:.3e}, loss {current:.6e})"
                )));
            }
        } else {
            increases = 0;
            if previous - current < config.tolerance {
                converged = true;
                break;
            }
        }
        previous = current;
    }
    Ok(GdOutcome::Done(
        model,
        TrainReport {
            initial_error: initial,
            epochs_run: trace.len(),
            error_trace: trace,
            wall_time_seconds: start.elapsed().as_secs_f64(),
            converged,
        },
    ))
}

/// Train by full-batch gradient descent from the same seeded initialisation
/// as [`fit_backfit`]. Without an explicit learning rate the default step is
/// cut tenfold after each detected divergence.
pub fn fit_gd(data: &DataMatrix, config: &TrainConfig) -> Result<(ModularAE, TrainReport)> {
    config.validate(data.dim())?;
    let start = Instant::now();
    let gram = Gram::from_data(data);
    let largest = gram.check_full_rank()?;
    let init = ModularAE::random(
        data.dim(),
        config.hidden_dim,
        config.num_modules,
        config.lambda,
        config.seed,
    )?;
    let (mut alpha, backoffs) = match config.learning_rate {
        Some(lr) => (lr, 0),
        None => (default_learning_rate(&gram, config.num_modules, largest), MAX_BACKOFFS),
    };
    let mut attempt = 0;
    loop {
        match run_gd(&init, &gram, alpha, config)? {
            GdOutcome::Done(model, mut report) => {
                report.wall_time_seconds = start.elapsed().as_secs_f64();
                info!(
                    "gd: step {alpha:.3e}, {} epochs, final loss {:.6e}, converged {}",
                    report.epochs_run,
                    report.final_error(),
                    report.converged
                );
                return Ok((model, report));
            }
            GdOutcome::Diverged(msg) if attempt < backoffs => {
                warn!("{msg}; retrying with step {:.3e}", alpha / 10.0);
                alpha /= 10.0;
                attempt += 1;
            }
            GdOutcome::Diverged(msg) => return Err(MaeError::Divergence(msg)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub backfit_seconds: f64,
    pub gd_seconds: f64,
    pub backfit_cost: f64,
    pub gd_cost: f64,
    pub backfit_epochs: usize,
    pub gd_epochs: usize,
    pub gd_converged: bool,
}

impl BenchRun {
    pub fn speedup(&self) -> f64 {
        self.gd_seconds / self.backfit_seconds
    }
}

/// One row of the min/mean/max table. `speedup` is `gd_seconds /
/// backfit_seconds` of that row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStat {
    pub stat: String,
    pub backfit_seconds: f64,
    pub gd_seconds: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub runs: Vec<BenchRun>,
    pub table: Vec<BenchStat>,
    /// Min, mean and max of the per-repeat speedups.
    pub per_run_speedup: [f64; 3],
}

fn min_mean_max(values: impl Iterator<Item = f64> + Clone) -> [f64; 3] {
    let n = values.clone().count() as f64;
    let min = values.clone().fold(f64::INFINITY, f64::min);
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.sum::<f64>() / n;
    [min, mean, max]
}

/// Time both solvers on freshly generated mixtures. Repeat `r` uses data
/// seed `derive_seed(spec.seed, "bench-data/r")` and initialisation seed
/// `derive_seed(config.seed, "bench-init/r")`, shared by both solvers.
pub fn benchmark_solvers(spec: &MixtureSpec, config: &TrainConfig, repeats: usize) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(MaeError::InvalidInput("repeats must be >= 1".into()));
    }
    let mut runs = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let data_spec = MixtureSpec {
            seed: derive_seed(spec.seed, &format!("bench-data/{r}")),
            ..spec.clone()
        };
        let data = center_features(&gaussian_mixture(&data_spec)?)?;
        let run_config = TrainConfig {
            seed: derive_seed(config.seed, &format!("bench-init/{r}")),
            ..config.clone()
        };
        let (_, bf) = fit_backfit(&data, &run_config)?;
        let (_, gd) = fit_gd(&data, &run_config)?;
        let run = BenchRun {
            backfit_seconds: bf.wall_time_seconds,
            gd_seconds: gd.wall_time_seconds,
            backfit_cost: bf.final_error(),
            gd_cost: gd.final_error(),
            backfit_epochs: bf.epochs_run,
            gd_epochs: gd.epochs_run,
            gd_converged: gd.converged,
        };
        info!(
            "bench repeat {r}: backfit {:.4}s ({} epochs), gd {:.4}s ({} epochs), speedup {:.1}x",
            run.backfit_seconds,
            run.backfit_epochs,
            run.gd_seconds,
            run.gd_epochs,
            run.speedup()
        );
        runs.push(run);
    }
    let bf = min_mean_max(runs.iter().map(|r| r.backfit_seconds));
    let gd = min_mean_max(runs.iter().map(|r| r.gd_seconds));
    let table = ["min", "mean", "max"]
        .iter()
        .enumerate()
        .map(|(k, name)| BenchStat {
            stat: name.to_string(),
            backfit_seconds: bf[k],
            gd_seconds: gd[k],
            speedup: gd[k] / bf[k],
        })
        .collect();
    let per_run_speedup = min_mean_max(runs.iter().map(BenchRun::speedup));
    Ok(BenchReport {
        runs,
        table,
        per_run_speedup,
    })
}
