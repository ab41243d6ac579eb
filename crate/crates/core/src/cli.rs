//! The `mae` command line.
//!
//! Every command is deterministic given `--seed`; wall-clock measurements
//! live under a separate `timing` key of the JSON reports (and in
//! `bench.csv`, which is timing only).

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::backfit::fit_backfit;
use crate::dataset::{apply_centering, center_features, gaussian_mixture, load_csv, make_folds, split, write_csv, MixtureSpec};
use crate::diagnostics::{DCorReport, DEFAULT_SUBSAMPLE};
use crate::error::{MaeError, Result};
use crate::eval::{evaluate_bae, evaluate_sweep, Classifier, SweepConfig};
use crate::gradient::{benchmark_solvers, fit_gd};
use crate::loss::evaluate_loss;
use crate::rng::derive_seed;
use crate::types::{save_model, DataMatrix, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "mae", version, about = "Linear modular autoencoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a labelled Gaussian-mixture dataset as CSV.
    Synth(SynthArgs),
    /// Fit a modular autoencoder to a CSV dataset.
    Train(TrainArgs),
    /// Time backfitting against gradient descent on synthetic mixtures.
    Bench(BenchArgs),
    /// Cross-validated classification error over a grid of lambda values.
    Sweep(SweepArgs),
    /// Distance-correlation fidelity and diversity over a grid of lambda values.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub clusters: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.25)]
    pub std: f64,
    /// Standard deviation of the normal the cluster means are drawn from.
    #[arg(long, default_value_t = 1.0)]
    pub mean_scale: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Backfit,
    Gd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassifierArg {
    Knn1,
    Softmax,
}

impl From<ClassifierArg> for Classifier {
    fn from(c: ClassifierArg) -> Self {
        match c {
            ClassifierArg::Knn1 => Classifier::Knn1,
            ClassifierArg::Softmax => Classifier::Softmax,
        }
    }
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 10)]
    pub modules: usize,
    #[arg(long, default_value_t = 10)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// The CSV has no trailing label column.
    #[arg(long)]
    pub no_labels: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long, value_enum, default_value_t = Solver::Backfit)]
    pub solver: Solver,
    /// Gradient-descent step size (default scales with the data).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Report path; defaults to `<out>` with extension `report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub clusters: usize,
    #[arg(long, default_value_t = 20)]
    pub dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.25)]
    pub std: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mean_scale: f64,
    #[arg(long, default_value_t = 10)]
    pub modules: usize,
    #[arg(long, default_value_t = 10)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub epochs: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// `start:stop:step` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "0:1:0.125")]
    pub lambdas: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = ClassifierArg::Knn1)]
    pub classifier: ClassifierArg,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Test,
    Train,
    All,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub no_labels: bool,
    #[arg(long, default_value = "0:1:0.125")]
    pub lambdas: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = DEFAULT_SUBSAMPLE)]
    pub subsample: usize,
    /// Examples the diagnostics are computed on. Models always train on the
    /// training part of a `--folds` split (fold 0 held out).
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

/// Parse `start:stop:step` (stop included up to rounding) or `a,b,c`.
pub fn parse_lambda_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |why: &str| MaeError::InvalidInput(format!("bad lambda grid {spec:?}: {why}"));
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("not a number"));
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:step"));
        }
        let (start, stop, step) = (number(parts[0])?, number(parts[1])?, number(parts[2])?);
        if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
            return Err(bad("need finite start <= stop and step > 0"));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..count).map(|i| start + i as f64 * step).collect())
    } else {
        spec.split(',').map(number).collect()
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| MaeError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| MaeError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(e: csv::Error) -> MaeError {
    MaeError::Io(std::io::Error::other(e.to_string()))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Bench(a) => bench(a),
        Command::Sweep(a) => sweep(a),
        Command::Diagnose(a) => diagnose(a),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = MixtureSpec {
        num_clusters: a.clusters,
        dim: a.dim,
        num_points: a.n,
        cluster_std: a.std,
        mean_scale: a.mean_scale,
        seed: a.seed,
    };
    let data = gaussian_mixture(&spec)?;
    let mut w = create(&a.out)?;
    write_csv(&data, &mut w)?;
    w.flush()?;
    println!("wrote {}: D={} N={} K={}", a.out.display(), data.dim(), data.len(), a.clusters);
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let raw = load_csv(open(&a.data)?, !a.no_labels)?;
    let data = center_features(&raw)?;
    let config = TrainConfig {
        lambda: a.lambda,
        num_modules: a.model.modules,
        hidden_dim: a.model.hidden,
        max_epochs: a.model.epochs,
        tolerance: a.model.tol,
        seed: a.model.seed,
        learning_rate: a.lr,
    };
    let (model, report) = match a.solver {
        Solver::Backfit => fit_backfit(&data, &config)?,
        Solver::Gd => fit_gd(&data, &config)?,
    };
    let loss = evaluate_loss(&model, &data)?;

    let mut w = create(&a.out)?;
    save_model(&model, &mut w)?;
    w.flush()?;
    let report_path = a.report.unwrap_or_else(|| a.out.with_extension("report.json"));
    write_json(
        &report_path,
        &json!({
            "solver": a.solver,
            "config": config,
            "num_examples": data.len(),
            "feature_means": data.feature_means().map(|m| m.iter().copied().collect::<Vec<_>>()),
            "initial_error": report.initial_error,
            "error_trace": report.error_trace,
            "epochs_run": report.epochs_run,
            "converged": report.converged,
            "final_loss": loss,
            "timing": { "wall_time_seconds": report.wall_time_seconds },
        }),
    )?;
    println!(
        "trained {} modules in {} epochs: loss {:.6e} (converged: {})",
        model.num_modules(),
        report.epochs_run,
        report.final_error(),
        report.converged
    );
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let spec = MixtureSpec {
        num_clusters: a.clusters,
        dim: a.dim,
        num_points: a.n,
        cluster_std: a.std,
        mean_scale: a.mean_scale,
        seed: derive_seed(a.seed, "bench-data"),
    };
    let config = TrainConfig {
        lambda: a.lambda,
        num_modules: a.modules,
        hidden_dim: a.hidden,
        max_epochs: a.epochs,
        tolerance: a.tol,
        seed: derive_seed(a.seed, "bench-init"),
        learning_rate: None,
    };
    let report = benchmark_solvers(&spec, &config, a.repeats)?;

    let mut w = csv_writer(&a.out_dir.join("bench.csv"))?;
    w.write_record(["stat", "backfit_s", "gd_s", "speedup"]).map_err(csv_err)?;
    for row in &report.table {
        w.write_record([
            row.stat.clone(),
            row.backfit_seconds.to_string(),
            row.gd_seconds.to_string(),
            row.speedup.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let runs: Vec<_> = report
        .runs
        .iter()
        .map(|r| {
            json!({
                "backfit_cost": r.backfit_cost,
                "gd_cost": r.gd_cost,
                "backfit_epochs": r.backfit_epochs,
                "gd_epochs": r.gd_epochs,
                "gd_converged": r.gd_converged,
            })
        })
        .collect();
    let timed: Vec<_> = report
        .runs
        .iter()
        .map(|r| json!({ "backfit_seconds": r.backfit_seconds, "gd_seconds": r.gd_seconds }))
        .collect();
    write_json(
        &a.out_dir.join("bench.json"),
        &json!({
            "spec": spec,
            "config": config,
            "repeats": a.repeats,
            "runs": runs,
            "timing": {
                "runs": timed,
                "table": report.table,
                "per_run_speedup": { "min": report.per_run_speedup[0], "mean": report.per_run_speedup[1], "max": report.per_run_speedup[2] },
            },
        }),
    )?;

    println!("{:<6} {:>12} {:>12} {:>10}", "stat", "backfit_s", "gd_s", "speedup");
    for row in &report.table {
        println!(
            "{:<6} {:>12.6} {:>12.6} {:>9.1}x",
            row.stat, row.backfit_seconds, row.gd_seconds, row.speedup
        );
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let data = load_csv(open(&a.data)?, true)?;
    let grid = parse_lambda_grid(&a.lambdas)?;
    let config = SweepConfig {
        num_modules: a.model.modules,
        hidden_dim: a.model.hidden,
        max_epochs: a.model.epochs,
        tolerance: a.model.tol,
        num_folds: a.folds,
        classifier: a.classifier.into(),
        seed: a.model.seed,
        jobs: a.jobs.max(1),
    };
    let mut report = evaluate_sweep(&data, &grid, &config)?;
    let bae = evaluate_bae(&data, &config)?;

    let mut w = csv_writer(&a.out_dir.join("sweep.csv"))?;
    w.write_record(["lambda", "fold", "ensemble_error", "individual_error"]).map_err(csv_err)?;
    for r in &report.folds {
        w.write_record([
            r.lambda.to_string(),
            r.fold.to_string(),
            r.ensemble_error.to_string(),
            r.individual_error.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv_writer(&a.out_dir.join("bae.csv"))?;
    w.write_record(["fold", "ensemble_error", "individual_error"]).map_err(csv_err)?;
    for r in &bae.folds {
        w.write_record([r.fold.to_string(), r.ensemble_error.to_string(), r.individual_error.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;

    report.baseline = Some(bae);
    write_json(
        &a.out_dir.join("report.json"),
        &json!({ "config": config, "report": report }),
    )?;

    println!("{:>8} {:>16} {:>12}", "lambda", "ensemble", "individual");
    for (i, l) in report.lambda_grid.iter().enumerate() {
        let e = report.ensemble_error[i];
        println!(
            "{:>8.4} {:>8.4} ± {:<6.4} {:>10.4}",
            l, e.mean, e.std, report.individual_error[i]
        );
    }
    if let Some(b) = &report.baseline {
        println!("BAE baseline: {:.4} ± {:.4}", b.ensemble_error.mean, b.ensemble_error.std);
    }
    Ok(())
}

fn diagnose(a: DiagnoseArgs) -> Result<()> {
    let raw = load_csv(open(&a.data)?, !a.no_labels)?;
    let grid = parse_lambda_grid(&a.lambdas)?;
    let plan = make_folds(raw.len(), a.folds, derive_seed(a.model.seed, "folds"))?;
    let (train_raw, test_raw) = split(&raw, &plan, 0)?;
    let train = center_features(&train_raw)?;
    let means = train.feature_means().cloned().expect("centred above");
    let target: DataMatrix = match a.split {
        SplitArg::Train => train.clone(),
        SplitArg::Test => apply_centering(&test_raw, &means)?,
        SplitArg::All => apply_centering(&raw, &means)?,
    };
    let models = grid
        .iter()
        .map(|&lambda| {
            let config = TrainConfig {
                lambda,
                num_modules: a.model.modules,
                hidden_dim: a.model.hidden,
                max_epochs: a.model.epochs,
                tolerance: a.model.tol,
                seed: derive_seed(a.model.seed, "init"),
                learning_rate: None,
            };
            fit_backfit(&train, &config).map(|(m, _)| m)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = DCorReport::compute(&models, &target, a.subsample, derive_seed(a.model.seed, "subsample"))?;

    let mut w = create(&a.out_dir.join("dcor.csv"))?;
    report.write_csv(&mut w)?;
    w.flush()?;
    write_json(
        &a.out_dir.join("dcor.json"),
        &json!({ "split": a.split, "report": report }),
    )?;

    println!("{:>8} {:>14} {:>14}", "lambda", "avg_fidelity", "avg_pairwise");
    for i in 0..report.lambdas.len() {
        println!(
            "{:>8.4} {:>14.6} {:>14.6}",
            report.lambdas[i], report.avg_fidelity[i], report.avg_pairwise[i]
        );
    }
    Ok(())
}
