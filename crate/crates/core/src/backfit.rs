//! Backfitting: Gauss–Seidel sweeps over the modules, each update solved in
//! closed form.
//!
//! With every other module fixed, put `Z_i = (1/M) Σ_{j≠i} A_j B_j`,
//! `R_i = I - λ Z_i` and `c = 1 - λ (M-1)/M`. Minimising the loss over
//! `(A_i, B_i)` is a reduced-rank regression of the target
//! `Y = c⁻¹ R_i X` on `X`, whose solution is
//!
//! ```text
//! A_i = top-P unit eigenvectors of  Φ = R_i Σ R_iᵀ
//! B_i = c⁻¹ A_iᵀ R_i
//! ```
//!
//! `c > 0` exactly when `λ < M/(M-1)`, which is why training is restricted to
//! that range.

use std::time::Instant;

use log::{debug, info};
use nalgebra::DMatrix;

use crate::error::{MaeError, Result};
use crate::linalg::{symmetric_eigen_sorted, top_eigenvectors};
use crate::loss::Gram;
use crate::types::{check_trainable_lambda, AEModule, DataMatrix, ModularAE, TrainConfig, TrainReport};

pub use crate::linalg::EigenResult;

/// Minimise `||Y - A B X||²` over `A` (`D_y x P`) and `B` (`P x D_x`).
///
/// `A` holds the top-`P` unit eigenvectors of `(Y Xᵀ)(X Xᵀ)⁻¹(X Yᵀ)` and
/// `B = Aᵀ (Y Xᵀ)(X Xᵀ)⁻¹`.
pub fn reduced_rank_regression(
    y: &DMatrix<f64>,
    x: &DMatrix<f64>,
    p: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if y.ncols() != x.ncols() {
        return Err(MaeError::shape("regression examples", x.ncols(), y.ncols()));
    }
    if p == 0 || p > y.nrows() {
        return Err(MaeError::InvalidInput(format!(
            "rank {p} out of range for {} targets",
            y.nrows()
        )));
    }
    let xxt = x * x.transpose();
    let spectrum = symmetric_eigen_sorted(&xxt)?.values;
    let largest = spectrum[0];
    let smallest = spectrum[spectrum.len() - 1];
    if !(largest > 0.0 && smallest > 1e-12 * largest) {
        return Err(MaeError::Singular(format!(
            "X Xᵀ has eigenvalue ratio {:.3e}",
            if largest > 0.0 { smallest / largest } else { 0.0 }
        )));
    }
    let chol = xxt
        .cholesky()
        .ok_or_else(|| MaeError::Singular("Cholesky factorisation of X Xᵀ failed".into()))?;
    let xyt = x * y.transpose();
    // coef = (X Xᵀ)⁻¹ X Yᵀ, so Y Xᵀ (X Xᵀ)⁻¹ = coefᵀ
    let coef = chol.solve(&xyt);
    let target = coef.transpose() * &xyt;
    let u = top_eigenvectors(&target, p)?.vectors;
    let b = u.transpose() * coef.transpose();
    Ok((u, b))
}

fn shrink_factor(lambda: f64, m: usize) -> f64 {
    1.0 - lambda * (m as f64 - 1.0) / m as f64
}

/// Closed-form optimum for module `i` given the products of the others.
pub(crate) fn solve_module(
    products: &[DMatrix<f64>],
    i: usize,
    sigma: &DMatrix<f64>,
    lambda: f64,
    hidden: usize,
) -> Result<AEModule> {
    let m = products.len();
    let d = sigma.nrows();
    let c = shrink_factor(lambda, m);
    if !(c > 0.0) {
        return Err(MaeError::InvalidLambda {
            lambda,
            bound: crate::types::lambda_bound(m),
            modules: m,
        });
    }
    let mut others = DMatrix::zeros(d, d);
    for (j, cj) in products.iter().enumerate() {
        if j != i {
            others += cj;
        }
    }
    let residual_map = DMatrix::identity(d, d) - others * (lambda / m as f64);
    let phi = &residual_map * sigma * residual_map.transpose();
    let decoder = top_eigenvectors(&phi, hidden)?.vectors;
    let encoder = decoder.transpose() * &residual_map / c;
    Ok(AEModule::from_parts_unchecked(decoder, encoder))
}

/// Replace module `i` of `model` by its optimum with the others held fixed.
/// `sigma` is `X Xᵀ`; the model's own `lambda` is used.
pub fn update_module(model: &ModularAE, i: usize, sigma: &DMatrix<f64>) -> Result<AEModule> {
    if i >= model.num_modules() {
        return Err(MaeError::InvalidInput(format!(
            "module index {i} out of range for {} modules",
            model.num_modules()
        )));
    }
    if sigma.shape() != (model.dim(), model.dim()) {
        return Err(MaeError::shape(
            "sigma",
            format!("{0}x{0}", model.dim()),
            format!("{}x{}", sigma.nrows(), sigma.ncols()),
        ));
    }
    check_trainable_lambda(model.lambda(), model.num_modules())?;
    solve_module(&model.products(), i, sigma, model.lambda(), model.hidden())
}

/// One epoch: update modules `0..M` in order, each seeing the latest
/// versions of the others.
pub fn backfit_epoch(model: &mut ModularAE, gram: &Gram) -> Result<()> {
    check_trainable_lambda(model.lambda(), model.num_modules())?;
    let mut products = model.products();
    for i in 0..model.num_modules() {
        let updated = solve_module(&products, i, gram.sigma(), model.lambda(), model.hidden())?;
        products[i] = updated.product();
        model.set_module(i, updated);
    }
    Ok(())
}

/// Run epochs from `model` until the per-epoch decrease drops below
/// `tolerance` or `max_epochs` is reached.
pub fn backfit_from(
    mut model: ModularAE,
    gram: &Gram,
    max_epochs: usize,
    tolerance: f64,
) -> Result<(ModularAE, TrainReport)> {
    let start = Instant::now();
    let initial = gram.model_loss(&model)?;
    let mut trace = Vec::new();
    let mut previous = initial;
    let mut converged = false;
    for epoch in 0..max_epochs {
        backfit_epoch(&mut model, gram)?;
        let current = gram.model_loss(&model)?;
        trace.push(current);
        debug!("backfit epoch {epoch}: loss {current:.12e}");
        if previous - current < tolerance {
            converged = true;
            break;
        }
        previous = current;
    }
    let report = TrainReport {
        initial_error: initial,
        epochs_run: trace.len(),
        error_trace: trace,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        converged,
    };
    info!(
        "backfit: {} epochs, final loss {:.6e}, converged {}",
        report.epochs_run,
        report.final_error(),
        report.converged
    );
    Ok((model, report))
}

/// Train a modular autoencoder on `data` (features as rows) by backfitting
/// from a seeded Gaussian initialisation.
pub fn fit_backfit(data: &DataMatrix, config: &TrainConfig) -> Result<(ModularAE, TrainReport)> {
    config.validate(data.dim())?;
    let start = Instant::now();
    let gram = Gram::from_data(data);
    gram.check_full_rank()?;
    let init = ModularAE::random(
        data.dim(),
        config.hidden_dim,
        config.num_modules,
        config.lambda,
        config.seed,
    )?;
    let (model, mut report) = backfit_from(init, &gram, config.max_epochs, config.tolerance)?;
    report.wall_time_seconds = start.elapsed().as_secs_f64();
    Ok((model, report))
}
