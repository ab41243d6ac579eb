//! Data ingestion, centering, synthetic mixtures and resampling.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MaeError, Result};
use crate::rng::SeededRng;
use crate::types::DataMatrix;

/// Read comma-separated examples, one per row. A first row that does not
/// parse as numbers is treated as a header. With `has_labels`, the last
/// column is an integer class label.
pub fn load_csv<R: Read>(source: R, has_labels: bool) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let mut width: Option<usize> = None;
    let mut columns: Vec<f64> = Vec::new();
    let mut labels: Vec<i64> = Vec::new();
    let mut n = 0usize;

    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| MaeError::Csv {
            row,
            message: e.to_string(),
        })?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if n == 0 && width.is_none() => {
                // header
                width = Some(record.len());
                continue;
            }
            Err(e) => {
                return Err(MaeError::Csv {
                    row,
                    message: format!("non-numeric cell: {e}"),
                })
            }
        };
        match width {
            Some(w) if w != values.len() => {
                return Err(MaeError::Csv {
                    row,
                    message: format!("expected {w} fields, found {}", values.len()),
                })
            }
            _ => width = Some(values.len()),
        }
        let features = if has_labels {
            let (&label, rest) = values.split_last().unwrap();
            if rest.is_empty() {
                return Err(MaeError::Csv {
                    row,
                    message: "labelled row has no feature columns".into(),
                });
            }
            if label.fract() != 0.0 || !label.is_finite() {
                return Err(MaeError::Csv {
                    row,
                    message: format!("label {label} is not an integer"),
                });
            }
            labels.push(label as i64);
            rest
        } else {
            &values[..]
        };
        if features.iter().any(|v| !v.is_finite()) {
            return Err(MaeError::Csv {
                row,
                message: "non-finite value".into(),
            });
        }
        columns.extend_from_slice(features);
        n += 1;
    }

    if n == 0 {
        return Err(MaeError::InvalidInput("csv contains no data rows".into()));
    }
    let d = columns.len() / n;
    let values = DMatrix::from_column_slice(d, n, &columns);
    DataMatrix::new(values, has_labels.then_some(labels))
}

/// Write examples as rows with a `x1..xD[,label]` header.
pub fn write_csv<W: Write>(data: &DataMatrix, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    let mut header: Vec<String> = (1..=data.dim()).map(|i| format!("x{i}")).collect();
    if data.labels().is_some() {
        header.push("label".into());
    }
    writer.write_record(&header).map_err(csv_io)?;
    for (n, col) in data.values().column_iter().enumerate() {
        let mut record: Vec<String> = col.iter().map(|v| v.to_string()).collect();
        if let Some(l) = data.labels() {
            record.push(l[n].to_string());
        }
        writer.write_record(&record).map_err(csv_io)?;
    }
    writer.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> MaeError {
    MaeError::Io(std::io::Error::other(e.to_string()))
}

/// Subtract each feature's mean. Offsets accumulate into `feature_means`,
/// so applying this twice leaves both values and metadata unchanged.
pub fn center_features(data: &DataMatrix) -> Result<DataMatrix> {
    let means = data.values().column_mean();
    let centred = subtract_means(data.values(), &means);
    let total = match data.feature_means() {
        Some(prev) => prev + &means,
        None => means,
    };
    DataMatrix::new(centred, data.labels().map(<[i64]>::to_vec))?.with_feature_means(total)
}

/// Centre `data` with externally supplied offsets (e.g. the training fold's
/// means applied to a test fold). The result carries no centering metadata.
pub fn apply_centering(data: &DataMatrix, means: &DVector<f64>) -> Result<DataMatrix> {
    if means.len() != data.dim() {
        return Err(MaeError::shape("centering offsets", data.dim(), means.len()));
    }
    DataMatrix::new(
        subtract_means(data.values(), means),
        data.labels().map(<[i64]>::to_vec),
    )
}

fn subtract_means(values: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    let mut out = values.clone();
    for mut col in out.column_iter_mut() {
        col -= means;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub num_clusters: usize,
    pub dim: usize,
    pub num_points: usize,
    pub cluster_std: f64,
    /// Standard deviation of the normal the cluster means are drawn from.
    pub mean_scale: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clusters == 0 || self.dim == 0 {
            return Err(MaeError::InvalidInput("clusters and dim must be >= 1".into()));
        }
        if self.num_points < self.num_clusters {
            return Err(MaeError::InvalidInput(format!(
                "need at least as many points ({}) as clusters ({})",
                self.num_points, self.num_clusters
            )));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(MaeError::InvalidInput("cluster_std must be positive".into()));
        }
        if !(self.mean_scale >= 0.0 && self.mean_scale.is_finite()) {
            return Err(MaeError::InvalidInput("mean_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Equally weighted spherical Gaussian mixture.
///
/// Draw order: the `K x D` cluster means (cluster by cluster), then for each
/// point its cluster index followed by its `D` noise coordinates.
pub fn gaussian_mixture(spec: &MixtureSpec) -> Result<DataMatrix> {
    spec.validate()?;
    let mut rng = SeededRng::new(spec.seed);
    let (k, d, n) = (spec.num_clusters, spec.dim, spec.num_points);
    let means = DMatrix::from_fn(d, k, |_, _| rng.normal() * spec.mean_scale);
    let mut values = DMatrix::zeros(d, n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let c = rng.below(k);
        labels.push(c as i64);
        for r in 0..d {
            values[(r, j)] = means[(r, c)] + spec.cluster_std * rng.normal();
        }
    }
    DataMatrix::new(values, Some(labels))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub num_folds: usize,
    /// Fold index of every example.
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }
}

/// Shuffle `0..n` and deal the positions round-robin into `k` folds, so fold
/// sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(MaeError::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(MaeError::InvalidInput(format!(
            "cannot split {n} examples into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let mut assignments = vec![0; n];
    for (pos, &idx) in order.iter().enumerate() {
        assignments[idx] = pos % k;
    }
    Ok(FoldPlan {
        num_folds: k,
        assignments,
        seed,
    })
}

/// `(train, test)` for one fold; columns keep their original order.
pub fn split(data: &DataMatrix, plan: &FoldPlan, fold: usize) -> Result<(DataMatrix, DataMatrix)> {
    if plan.assignments.len() != data.len() {
        return Err(MaeError::shape("fold plan", data.len(), plan.assignments.len()));
    }
    if fold >= plan.num_folds {
        return Err(MaeError::InvalidInput(format!(
            "fold {fold} out of range for {} folds",
            plan.num_folds
        )));
    }
    let train = data.select_columns(&plan.train_indices(fold))?;
    let test = data.select_columns(&plan.test_indices(fold))?;
    Ok((train, test))
}

/// `N` columns drawn uniformly with replacement.
pub fn bootstrap_sample(data: &DataMatrix, seed: u64) -> Result<DataMatrix> {
    let mut rng = SeededRng::new(seed);
    let n = data.len();
    let idx: Vec<usize> = (0..n).map(|_| rng.below(n)).collect();
    data.select_columns(&idx)
}

/// `min(size, N)` distinct columns chosen without replacement, kept in their
/// original order.
pub fn subsample_columns(data: &DataMatrix, size: usize, seed: u64) -> Result<DataMatrix> {
    let n = data.len();
    if size >= n {
        return data.select_columns(&(0..n).collect::<Vec<_>>());
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let mut chosen = order[..size].to_vec();
    chosen.sort_unstable();
    data.select_columns(&chosen)
}
