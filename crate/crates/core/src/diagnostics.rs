//! Distance-correlation diagnostics of learned feature maps.
//!
//! Fidelity compares the geometry of each module's codes with the geometry
//! of the data; pairwise diversity compares the codes of two modules.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::subsample_columns;
use crate::error::{MaeError, Result};
use crate::types::{DataMatrix, ModularAE};

/// Paper's subsample size for the diagnostics.
pub const DEFAULT_SUBSAMPLE: usize = 1000;

/// Double-centred Euclidean distance matrix of the columns of `x`.
fn centred_distances(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (x.column(i) - x.column(j)).norm();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    let row_means = d.column_mean();
    let grand = row_means.mean();
    for i in 0..n {
        for j in 0..n {
            d[(i, j)] += grand - row_means[i] - row_means[j];
        }
    }
    d
}

/// Sample distance correlation between paired columns of `u` and `v`
/// (biased V-statistic). Zero when either distance variance vanishes.
pub fn distance_correlation(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    let n = u.ncols();
    if v.ncols() != n {
        return Err(MaeError::shape("dCor pairing", n, v.ncols()));
    }
    if n < 2 {
        return Err(MaeError::InvalidInput(format!("dCor needs at least 2 points, got {n}")));
    }
    if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(MaeError::NonFinite("dCor input".into()));
    }
    let a = centred_distances(u);
    let b = centred_distances(v);
    let n2 = (n * n) as f64;
    let dcov2 = a.dot(&b) / n2;
    let dvar_u = (a.norm_squared() / n2).sqrt();
    let dvar_v = (b.norm_squared() / n2).sqrt();
    if dvar_u < 1e-14 || dvar_v < 1e-14 {
        return Ok(0.0);
    }
    Ok((dcov2.max(0.0).sqrt() / (dvar_u * dvar_v).sqrt()).min(1.0))
}

fn check_dims(models: &[ModularAE], data: &DataMatrix) -> Result<()> {
    if let Some(m) = models.iter().find(|m| m.dim() != data.dim()) {
        return Err(MaeError::shape("diagnostic model dimension", data.dim(), m.dim()));
    }
    Ok(())
}

/// Mean over modules of `dCor(B_i X_s, X_s)` for every model, on the seeded
/// subsample `X_s` of `min(subsample, N)` columns.
pub fn fidelity_series(models: &[ModularAE], data: &DataMatrix, subsample: usize, seed: u64) -> Result<Vec<f64>> {
    check_dims(models, data)?;
    let xs = subsample_columns(data, subsample, seed)?;
    models
        .iter()
        .map(|model| {
            let mut total = 0.0;
            for m in model.modules() {
                total += distance_correlation(&(m.encoder() * xs.values()), xs.values())?;
            }
            Ok(total / model.num_modules() as f64)
        })
        .collect()
}

/// Mean over unordered module pairs of `dCor(B_i X_s, B_j X_s)`.
pub fn pairwise_diversity_series(models: &[ModularAE], data: &DataMatrix, subsample: usize, seed: u64) -> Result<Vec<f64>> {
    check_dims(models, data)?;
    let xs = subsample_columns(data, subsample, seed)?;
    models
        .iter()
        .map(|model| {
            let m = model.num_modules();
            if m < 2 {
                return Err(MaeError::InvalidInput("pairwise diversity needs at least two modules".into()));
            }
            let codes: Vec<_> = model.modules().iter().map(|md| md.encoder() * xs.values()).collect();
            let mut total = 0.0;
            for i in 0..m {
                for j in (i + 1)..m {
                    total += distance_correlation(&codes[i], &codes[j])?;
                }
            }
            Ok(total / (m * (m - 1) / 2) as f64)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DCorReport {
    pub lambdas: Vec<f64>,
    pub avg_fidelity: Vec<f64>,
    pub avg_pairwise: Vec<f64>,
    pub subsample: usize,
}

impl DCorReport {
    /// Both series for `models`, whose `λ` values label the rows.
    pub fn compute(models: &[ModularAE], data: &DataMatrix, subsample: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            lambdas: models.iter().map(ModularAE::lambda).collect(),
            avg_fidelity: fidelity_series(models, data, subsample, seed)?,
            avg_pairwise: pairwise_diversity_series(models, data, subsample, seed)?,
            subsample: subsample.min(data.len()),
        })
    }

    /// `lambda,avg_fidelity,avg_pairwise` rows.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let io = |e: csv::Error| MaeError::Io(std::io::Error::other(e.to_string()));
        w.write_record(["lambda", "avg_fidelity", "avg_pairwise"]).map_err(io)?;
        for ((l, f), p) in self.lambdas.iter().zip(&self.avg_fidelity).zip(&self.avg_pairwise) {
            w.write_record([l.to_string(), f.to_string(), p.to_string()]).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}
