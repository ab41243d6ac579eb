//! The reconstruction-minus-diversity objective.
//!
//! For an ensemble with reconstruction maps `C_i = A_i B_i` and ensemble mean
//! `C̄ = (1/M) Σ C_i`, the per-example loss is
//!
//! ```text
//! L = (1/M) Σ_i ||C_i x - x||² - λ (1/M) Σ_i ||C_i x - C̄ x||²
//!   = (1 - λ) (1/M) Σ_i ||C_i x - x||² + λ ||C̄ x - x||²
//! ```
//!
//! and `E` is its average over the data. The second line is the ambiguity
//! decomposition; release builds compute only that form.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{MaeError, Result};
use crate::linalg::{quadratic_trace, symmetric_eigen_sorted};
use crate::types::{AEModule, DataMatrix, ModularAE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `E_λ`.
    pub total: f64,
    /// Mean over modules of the mean squared reconstruction error.
    pub avg_individual_error: f64,
    /// Mean over modules of the squared deviation from the ensemble mean.
    pub diversity: f64,
    /// Mean squared error of the averaged reconstruction.
    pub ensemble_error: f64,
}

fn check_dim(model_dim: usize, data: &DataMatrix) -> Result<()> {
    if model_dim != data.dim() {
        return Err(MaeError::shape("data features", model_dim, data.dim()));
    }
    Ok(())
}

/// `A B X`.
pub fn module_reconstruction(module: &AEModule, data: &DataMatrix) -> Result<DMatrix<f64>> {
    check_dim(module.dim(), data)?;
    Ok(module.decoder() * (module.encoder() * data.values()))
}

/// `(1/M) Σ_i A_i B_i X`.
pub fn ensemble_reconstruction(model: &ModularAE, data: &DataMatrix) -> Result<DMatrix<f64>> {
    check_dim(model.dim(), data)?;
    let mut sum = DMatrix::zeros(data.dim(), data.len());
    for m in model.modules() {
        sum += m.decoder() * (m.encoder() * data.values());
    }
    Ok(sum / model.num_modules() as f64)
}

pub fn evaluate_loss(model: &ModularAE, data: &DataMatrix) -> Result<LossBreakdown> {
    check_dim(model.dim(), data)?;
    let x = data.values();
    let n = data.len() as f64;
    let m = model.num_modules() as f64;
    let lambda = model.lambda();

    let recons: Vec<DMatrix<f64>> = model
        .modules()
        .iter()
        .map(|md| md.decoder() * (md.encoder() * x))
        .collect();
    let mut mean = DMatrix::zeros(x.nrows(), x.ncols());
    for r in &recons {
        mean += r;
    }
    mean /= m;

    let individual: f64 = recons.iter().map(|r| (r - x).norm_squared()).sum::<f64>() / (n * m);
    let diversity: f64 = recons.iter().map(|r| (r - &mean).norm_squared()).sum::<f64>() / (n * m);
    let ensemble = (&mean - x).norm_squared() / n;
    let total = (1.0 - lambda) * individual + lambda * ensemble;

    debug_assert!({
        let direct = individual - lambda * diversity;
        let scale = 1.0 + individual.abs() + (lambda * diversity).abs() + ensemble.abs();
        (direct - total).abs() <= 1e-9 * scale
    });

    Ok(LossBreakdown {
        total,
        avg_individual_error: individual,
        diversity,
        ensemble_error: ensemble,
    })
}

/// A single autoencoder with an `M·P`-wide hidden layer, equivalent to the
/// ensemble mean: `B` stacks the encoders and `A` concatenates the decoders
/// scaled by `1/M`. Not an [`AEModule`], since `M·P` may reach `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonolithicPair {
    /// `D x M·P`.
    pub decoder: DMatrix<f64>,
    /// `M·P x D`.
    pub encoder: DMatrix<f64>,
}

impl MonolithicPair {
    pub fn product(&self) -> DMatrix<f64> {
        &self.decoder * &self.encoder
    }

    /// Mean squared reconstruction error over the columns of `data`.
    pub fn reconstruction_error(&self, data: &DataMatrix) -> Result<f64> {
        check_dim(self.decoder.nrows(), data)?;
        let x = data.values();
        Ok((&self.decoder * (&self.encoder * x) - x).norm_squared() / data.len() as f64)
    }
}

pub fn monolithic_equivalent(model: &ModularAE) -> MonolithicPair {
    let (d, p, m) = (model.dim(), model.hidden(), model.num_modules());
    let mut decoder = DMatrix::zeros(d, m * p);
    let mut encoder = DMatrix::zeros(m * p, d);
    for (i, md) in model.modules().iter().enumerate() {
        decoder
            .columns_mut(i * p, p)
            .copy_from(&(md.decoder() / m as f64));
        encoder.rows_mut(i * p, p).copy_from(md.encoder());
    }
    MonolithicPair { decoder, encoder }
}

/// The objective expressed through the Gram matrix `Σ = X Xᵀ`, so that every
/// evaluation costs `O(M D³)` independent of `N`. Both solvers use this.
#[derive(Debug, Clone)]
pub struct Gram {
    sigma: DMatrix<f64>,
    n: usize,
}

impl Gram {
    pub fn from_data(data: &DataMatrix) -> Self {
        let x = data.values();
        Self {
            sigma: x * x.transpose(),
            n: data.len(),
        }
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn num_examples(&self) -> usize {
        self.n
    }

    /// Largest eigenvalue of `Σ`; errors unless `Σ` has full rank
    /// (smallest/largest eigenvalue above `1e-12`).
    pub fn check_full_rank(&self) -> Result<f64> {
        let eig = symmetric_eigen_sorted(&self.sigma)?;
        let largest = eig.values[0];
        let smallest = eig.values[eig.values.len() - 1];
        let ratio = if largest > 0.0 { smallest / largest } else { 0.0 };
        if !(ratio > 1e-12) {
            return Err(MaeError::RankDeficient { ratio });
        }
        Ok(largest)
    }

    fn residual_trace(&self, c: &DMatrix<f64>) -> f64 {
        let r = DMatrix::identity(c.nrows(), c.ncols()) - c;
        quadratic_trace(&r, &self.sigma)
    }

    fn check_products(&self, products: &[DMatrix<f64>]) -> Result<()> {
        let d = self.dim();
        if products.is_empty() {
            return Err(MaeError::InvalidInput("no module products".into()));
        }
        for c in products {
            if c.shape() != (d, d) {
                return Err(MaeError::shape(
                    "module product",
                    format!("{d}x{d}"),
                    format!("{}x{}", c.nrows(), c.ncols()),
                ));
            }
        }
        Ok(())
    }

    /// `E_λ` from the module products `C_i`.
    pub fn total(&self, products: &[DMatrix<f64>], lambda: f64) -> Result<f64> {
        self.check_products(products)?;
        let m = products.len() as f64;
        let n = self.n as f64;
        let individual: f64 = products.iter().map(|c| self.residual_trace(c)).sum::<f64>() / (n * m);
        let mean = mean_product(products);
        let ensemble = self.residual_trace(&mean) / n;
        Ok((1.0 - lambda) * individual + lambda * ensemble)
    }

    pub fn breakdown(&self, products: &[DMatrix<f64>], lambda: f64) -> Result<LossBreakdown> {
        self.check_products(products)?;
        let m = products.len() as f64;
        let n = self.n as f64;
        let mean = mean_product(products);
        let individual: f64 = products.iter().map(|c| self.residual_trace(c)).sum::<f64>() / (n * m);
        let diversity: f64 = products
            .iter()
            .map(|c| quadratic_trace(&(c - &mean), &self.sigma))
            .sum::<f64>()
            / (n * m);
        let ensemble = self.residual_trace(&mean) / n;
        Ok(LossBreakdown {
            total: (1.0 - lambda) * individual + lambda * ensemble,
            avg_individual_error: individual,
            diversity,
            ensemble_error: ensemble,
        })
    }

    pub fn model_loss(&self, model: &ModularAE) -> Result<f64> {
        self.total(&model.products(), model.lambda())
    }
}

pub(crate) fn mean_product(products: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut mean = products[0].clone();
    for c in &products[1..] {
        mean += c;
    }
    mean / products.len() as f64
}
