//! Downstream classification with the learned codes.
//!
//! Every module's encoder produces its own feature set; a classifier is
//! trained per module and the module predictions are combined, either by
//! modal vote (1-NN) or by averaging class probabilities (softmax).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backfit::fit_backfit;
use crate::dataset::{apply_centering, bootstrap_sample, center_features, make_folds, split, FoldPlan};
use crate::error::{MaeError, Result};
use crate::rng::derive_seed;
use crate::softmax::{argmax_rows, combine_mean_proba, SoftmaxClassifier, SoftmaxOptions};
use crate::types::{check_trainable_lambda, DataMatrix, ModularAE, TrainConfig};

/// Per-module codes `B_i X` with the examples' labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub codes: Vec<DMatrix<f64>>,
    pub labels: Option<Vec<i64>>,
}

impl EncodedDataset {
    pub fn num_modules(&self) -> usize {
        self.codes.len()
    }

    pub fn len(&self) -> usize {
        self.codes.first().map_or(0, |c| c.ncols())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn encode(model: &ModularAE, data: &DataMatrix) -> Result<EncodedDataset> {
    if model.dim() != data.dim() {
        return Err(MaeError::shape("encoder input", model.dim(), data.dim()));
    }
    Ok(EncodedDataset {
        codes: model.modules().iter().map(|m| m.encoder() * data.values()).collect(),
        labels: data.labels().map(<[i64]>::to_vec),
    })
}

/// Label of the nearest training code for every test code. Among equally
/// distant training codes the one with the lowest index wins.
pub fn knn1_predict(train_codes: &DMatrix<f64>, train_labels: &[i64], test_codes: &DMatrix<f64>) -> Result<Vec<i64>> {
    if train_codes.ncols() == 0 {
        return Err(MaeError::InvalidInput("1-NN needs at least one training point".into()));
    }
    if train_labels.len() != train_codes.ncols() {
        return Err(MaeError::shape("1-NN labels", train_codes.ncols(), train_labels.len()));
    }
    if test_codes.nrows() != train_codes.nrows() {
        return Err(MaeError::shape("1-NN code dimension", train_codes.nrows(), test_codes.nrows()));
    }
    Ok(test_codes
        .column_iter()
        .map(|t| {
            let mut best = (f64::INFINITY, 0);
            for (j, x) in train_codes.column_iter().enumerate() {
                let d = (x - t).norm_squared();
                if d < best.0 {
                    best = (d, j);
                }
            }
            train_labels[best.1]
        })
        .collect())
}

/// Most frequent label per example across the module predictions; ties go
/// to the smallest label.
pub fn modal_vote(predictions: &[Vec<i64>]) -> Result<Vec<i64>> {
    let first = predictions
        .first()
        .ok_or_else(|| MaeError::InvalidInput("no predictions to vote over".into()))?;
    let n = first.len();
    if let Some(bad) = predictions.iter().find(|p| p.len() != n) {
        return Err(MaeError::shape("vote length", n, bad.len()));
    }
    Ok((0..n)
        .map(|j| {
            let mut votes: Vec<i64> = predictions.iter().map(|p| p[j]).collect();
            votes.sort_unstable();
            let (mut best, mut best_count) = (votes[0], 0);
            let mut i = 0;
            while i < votes.len() {
                let run = votes[i..].iter().take_while(|&&v| v == votes[i]).count();
                if run > best_count {
                    best = votes[i];
                    best_count = run;
                }
                i += run;
            }
            best
        })
        .collect())
}

pub fn error_rate(predicted: &[i64], truth: &[i64]) -> f64 {
    let wrong = predicted.iter().zip(truth).filter(|(p, t)| p != t).count();
    wrong as f64 / truth.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Classifier {
    Knn1,
    Softmax,
}

impl std::str::FromStr for Classifier {
    type Err = MaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn1" => Ok(Self::Knn1),
            "softmax" => Ok(Self::Softmax),
            other => Err(MaeError::InvalidInput(format!("unknown classifier {other:?}"))),
        }
    }
}

/// Test error of the combined ensemble and the mean error of its members.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationErrors {
    pub ensemble: f64,
    pub individual: f64,
}

/// Train one classifier per module on `train` codes and score `test`.
pub fn classify_ensemble(classifier: Classifier, train: &EncodedDataset, test: &EncodedDataset) -> Result<ClassificationErrors> {
    let train_labels = train
        .labels
        .as_deref()
        .ok_or_else(|| MaeError::InvalidInput("training codes carry no labels".into()))?;
    let test_labels = test
        .labels
        .as_deref()
        .ok_or_else(|| MaeError::InvalidInput("test codes carry no labels".into()))?;
    if train.num_modules() != test.num_modules() || train.num_modules() == 0 {
        return Err(MaeError::shape("module count", train.num_modules(), test.num_modules()));
    }

    let (ensemble, members) = match classifier {
        Classifier::Knn1 => {
            let preds = train
                .codes
                .iter()
                .zip(&test.codes)
                .map(|(tr, te)| knn1_predict(tr, train_labels, te))
                .collect::<Result<Vec<_>>>()?;
            (modal_vote(&preds)?, preds)
        }
        Classifier::Softmax => {
            let options = SoftmaxOptions::default();
            let mut probas = Vec::with_capacity(train.num_modules());
            let mut preds = Vec::with_capacity(train.num_modules());
            let mut classes = Vec::new();
            for (tr, te) in train.codes.iter().zip(&test.codes) {
                let clf = SoftmaxClassifier::fit(tr, train_labels, &options)?;
                let p = clf.predict_proba(te)?;
                preds.push(argmax_rows(&p).into_iter().map(|j| clf.classes()[j]).collect());
                probas.push(p);
                classes = clf.classes().to_vec();
            }
            (combine_mean_proba(&probas, &classes)?, preds)
        }
    };
    let individual =
        members.iter().map(|p| error_rate(p, test_labels)).sum::<f64>() / members.len() as f64;
    Ok(ClassificationErrors {
        ensemble: error_rate(&ensemble, test_labels),
        individual,
    })
}

/// One cross-validation fold, centred with statistics of its training part.
#[derive(Debug, Clone)]
pub struct PreparedFold {
    pub train: DataMatrix,
    pub test: DataMatrix,
    /// Feature means of the uncentred training part, applied to both parts.
    pub means: DVector<f64>,
}

pub fn prepare_fold(data: &DataMatrix, plan: &FoldPlan, fold: usize) -> Result<PreparedFold> {
    let (train, test) = split(data, plan, fold)?;
    let train = center_features(&train)?;
    let means = train
        .feature_means()
        .cloned()
        .expect("center_features records the offsets");
    let test = apply_centering(&test, &means)?;
    Ok(PreparedFold { train, test, means })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub num_modules: usize,
    pub hidden_dim: usize,
    pub max_epochs: usize,
    pub tolerance: f64,
    pub num_folds: usize,
    pub classifier: Classifier,
    pub seed: u64,
    /// Worker threads across (fold, λ) tasks.
    pub jobs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            num_modules: 10,
            hidden_dim: 10,
            max_epochs: 1000,
            tolerance: 1e-5,
            num_folds: 5,
            classifier: Classifier::Knn1,
            seed: 0,
            jobs: 1,
        }
    }
}

impl SweepConfig {
    fn train_config(&self, lambda: f64, num_modules: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda,
            num_modules,
            hidden_dim: self.hidden_dim,
            max_epochs: self.max_epochs,
            tolerance: self.tolerance,
            seed,
            learning_rate: None,
        }
    }

    fn fold_plan(&self, n: usize) -> Result<FoldPlan> {
        make_folds(n, self.num_folds, derive_seed(self.seed, "folds"))
    }

    fn run<T: Send>(&self, tasks: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
        if self.jobs <= 1 {
            return (0..tasks).map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| MaeError::InvalidInput(format!("cannot start worker pool: {e}")))?;
        pool.install(|| (0..tasks).into_par_iter().map(&f).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (zero for a single value).
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub lambda: f64,
    pub fold: usize,
    pub ensemble_error: f64,
    pub individual_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaeReport {
    pub ensemble_error: MeanStd,
    pub individual_error: f64,
    /// One record per fold; `lambda` is always zero.
    pub folds: Vec<FoldRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lambda_grid: Vec<f64>,
    pub ensemble_error: Vec<MeanStd>,
    pub individual_error: Vec<f64>,
    pub baseline: Option<BaeReport>,
    /// Ordered by λ, then fold.
    pub folds: Vec<FoldRecord>,
}

fn validate_grid(grid: &[f64], num_modules: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(MaeError::InvalidInput("empty lambda grid".into()));
    }
    for &l in grid {
        check_trainable_lambda(l, num_modules)?;
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(MaeError::InvalidInput("lambda grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Cross-validated classification error of the modular autoencoder at every
/// `λ` of `grid`. Fold `f` initialises training from
/// `derive_seed(seed, "init/f")` at every `λ`.
pub fn evaluate_sweep(data: &DataMatrix, grid: &[f64], config: &SweepConfig) -> Result<EvalReport> {
    data.require_labels("evaluate_sweep")?;
    validate_grid(grid, config.num_modules)?;
    let plan = config.fold_plan(data.len())?;
    let folds = (0..config.num_folds)
        .map(|f| prepare_fold(data, &plan, f))
        .collect::<Result<Vec<_>>>()?;

    let tasks = grid.len() * config.num_folds;
    let records = config.run(tasks, |t| {
        let (li, f) = (t / config.num_folds, t % config.num_folds);
        let lambda = grid[li];
        let fold = &folds[f];
        let tc = config.train_config(lambda, config.num_modules, derive_seed(config.seed, &format!("init/{f}")));
        let (model, _) = fit_backfit(&fold.train, &tc)?;
        let errors = classify_ensemble(config.classifier, &encode(&model, &fold.train)?, &encode(&model, &fold.test)?)?;
        log::debug!("lambda {lambda} fold {f}: ensemble {:.4}, individual {:.4}", errors.ensemble, errors.individual);
        Ok(FoldRecord {
            lambda,
            fold: f,
            ensemble_error: errors.ensemble,
            individual_error: errors.individual,
        })
    })?;

    let per_lambda = |li: usize| &records[li * config.num_folds..(li + 1) * config.num_folds];
    let ensemble_error = (0..grid.len())
        .map(|li| MeanStd::of(&per_lambda(li).iter().map(|r| r.ensemble_error).collect::<Vec<_>>()))
        .collect();
    let individual_error = (0..grid.len())
        .map(|li| per_lambda(li).iter().map(|r| r.individual_error).sum::<f64>() / config.num_folds as f64)
        .collect();
    Ok(EvalReport {
        lambda_grid: grid.to_vec(),
        ensemble_error,
        individual_error,
        baseline: None,
        folds: records,
    })
}

/// Bagging-autoencoder baseline on the same folds as [`evaluate_sweep`]:
/// module `i` of fold `f` is a single PCA-like autoencoder fit to bootstrap
/// sample `derive_seed(seed, "bae/f/i")` of the centred training fold. The
/// classifiers then see the whole training fold.
pub fn evaluate_bae(data: &DataMatrix, config: &SweepConfig) -> Result<BaeReport> {
    data.require_labels("evaluate_bae")?;
    let plan = config.fold_plan(data.len())?;
    let records = config.run(config.num_folds, |f| {
        let fold = prepare_fold(data, &plan, f)?;
        let modules = (0..config.num_modules)
            .map(|i| {
                let sample = bootstrap_sample(&fold.train, derive_seed(config.seed, &format!("bae/{f}/{i}")))?;
                let tc = config.train_config(0.0, 1, derive_seed(config.seed, &format!("bae-init/{f}/{i}")));
                let (model, _) = fit_backfit(&sample, &tc)?;
                Ok(model.into_modules().remove(0))
            })
            .collect::<Result<Vec<_>>>()?;
        let model = ModularAE::new(modules, 0.0)?;
        let errors = classify_ensemble(config.classifier, &encode(&model, &fold.train)?, &encode(&model, &fold.test)?)?;
        Ok(FoldRecord {
            lambda: 0.0,
            fold: f,
            ensemble_error: errors.ensemble,
            individual_error: errors.individual,
        })
    })?;
    Ok(BaeReport {
        ensemble_error: MeanStd::of(&records.iter().map(|r| r.ensemble_error).collect::<Vec<_>>()),
        individual_error: records.iter().map(|r| r.individual_error).sum::<f64>() / records.len() as f64,
        folds: records,
    })
}
