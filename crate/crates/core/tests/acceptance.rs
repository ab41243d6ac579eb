//! Acceptance suite: one PASS/FAIL line per criterion, written straight to
//! stderr so it shows up even when the harness captures output.

mod common;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::*;
use modular_ae::backfit::{fit_backfit, reduced_rank_regression, update_module};
use modular_ae::dataset::{center_features, gaussian_mixture, MixtureSpec};
use modular_ae::diagnostics::{distance_correlation, DCorReport};
use modular_ae::divergence::{per_module_boundary_check, verify_dichotomy, DichotomyEvidence, DichotomyOptions};
use modular_ae::eval::{evaluate_sweep, Classifier, SweepConfig};
use modular_ae::gradient::{benchmark_solvers, gradient, gram_gradient};
use modular_ae::loss::{evaluate_loss, Gram};
use modular_ae::rng::SeededRng;
use modular_ae::types::lambda_bound;
use modular_ae::{DataMatrix, ModularAE, TrainConfig};
use nalgebra::DMatrix;

type Verdict = Result<String, String>;

fn check(cond: bool, detail: String) -> Verdict {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn line(text: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{text}");
}

fn mixture_spec(k: usize, d: usize, n: usize, std: f64, mean_scale: f64, seed: u64) -> MixtureSpec {
    MixtureSpec {
        num_clusters: k,
        dim: d,
        num_points: n,
        cluster_std: std,
        mean_scale,
        seed,
    }
}

fn centred(spec: &MixtureSpec) -> DataMatrix {
    center_features(&gaussian_mixture(spec).unwrap()).unwrap()
}

fn config(lambda: f64, m: usize, p: usize, epochs: usize, tol: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        lambda,
        num_modules: m,
        hidden_dim: p,
        max_epochs: epochs,
        tolerance: tol,
        seed,
        learning_rate: None,
    }
}

fn monotone_descent() -> Verdict {
    let start = Instant::now();
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..5 {
        let data = centred(&mixture_spec(5, 20, 500, 0.25, 1.0, seed));
        for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let (_, report) = fit_backfit(&data, &config(lambda, 5, 3, 1000, 1e-5, seed)).unwrap();
            let mut prev = report.initial_error;
            for &e in &report.error_trace {
                worst = worst.max(e - prev);
                prev = e;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-10 && secs < 30.0,
        format!("largest per-epoch increase {worst:.3e} (<= 1e-10), {secs:.2}s (< 30s)"),
    )
}

/// Largest principal angle between the column spaces of `a` and the
/// orthonormal columns `u`, from a Gram-Schmidt basis and the oracle
/// eigensolver.
fn oracle_angle(a: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    let mut q = a.clone();
    for j in 0..q.ncols() {
        for k in 0..j {
            let proj = q.column(k).dot(&q.column(j));
            let qk = q.column(k).into_owned();
            q.column_mut(j).axpy(-proj, &qk, 1.0);
        }
        let norm = q.column(j).norm();
        q.column_mut(j).unscale_mut(norm);
    }
    let residual = &q - u * (u.transpose() * &q);
    let (values, _) = jacobi_eigen(&(residual.transpose() * &residual));
    values[0].max(0.0).sqrt().min(1.0).asin()
}

fn lambda_zero_is_pca() -> Verdict {
    let data = centred(&mixture_spec(5, 20, 500, 0.25, 1.0, 0));
    let x = data.values();
    let (p, m) = (3, 5);
    let (model, _) = fit_backfit(&data, &config(0.0, m, p, 100, 1e-13, 0)).unwrap();
    let target = pca_error(x, p);
    let (_, vectors) = jacobi_eigen(&second_moment(x));
    let top = vectors.columns(0, p).into_owned();
    let mut worst_rel: f64 = 0.0;
    let mut worst_angle: f64 = 0.0;
    for module in model.modules() {
        let err = (x - module.product() * x).norm_squared() / x.ncols() as f64;
        worst_rel = worst_rel.max((err - target).abs() / target);
        worst_angle = worst_angle.max(oracle_angle(module.decoder(), &top));
    }
    check(
        worst_rel <= 1e-8 && worst_angle < 1e-6,
        format!("max relative error gap {worst_rel:.3e} (<= 1e-8), max principal angle {worst_angle:.3e} rad (< 1e-6)"),
    )
}

fn lambda_one_is_monolithic() -> Verdict {
    let data = centred(&mixture_spec(5, 20, 500, 0.25, 1.0, 0));
    let (m, p) = (4, 3);
    let floor = pca_error(data.values(), m * p);
    let finals: Vec<f64> = (0..5)
        .map(|r| fit_backfit(&data, &config(1.0, m, p, 20_000, 1e-10, r)).unwrap().1.final_error())
        .collect();
    let lowest = finals.iter().copied().fold(f64::INFINITY, f64::min);
    let above = finals.iter().all(|&e| e >= floor * (1.0 - 1e-9));
    let rel = lowest / floor - 1.0;
    check(
        above && rel <= 0.01,
        format!("rank-12 PCA error {floor:.8}; all restarts above it: {above}; best restart relative gap {rel:.3e} (<= 1e-2)"),
    )
}

fn ambiguity_identity() -> Verdict {
    let mut rng = SeededRng::new(4);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let d = 2 + rng.below(7);
        let n = 5 + rng.below(26);
        let m = 1 + rng.below(5);
        let p = 1 + rng.below(d - 1);
        let lambda = rng.uniform() * lambda_bound(m).min(2.0) * 0.999;
        let model = ModularAE::random(d, p, m, lambda, 1000 + i).unwrap();
        let data = DataMatrix::new(gaussian_matrix(d, n, 2000 + i), None).unwrap();
        let defining = naive_loss(&model.products(), data.values(), lambda);
        let decomposed = evaluate_loss(&model, &data).unwrap().total;
        let gram = Gram::from_data(&data).total(&model.products(), lambda).unwrap();
        let gap = (defining - decomposed).abs().max((defining - gram).abs()) / (1.0 + defining.abs());
        worst = worst.max(gap);
    }
    check(worst <= 1e-10, format!("max scaled gap {worst:.3e} over 100 instances (<= 1e-10)"))
}

fn gradient_correctness() -> Verdict {
    let instances = [(6, 20, 4, 2, 0.0), (5, 12, 3, 2, 0.5), (4, 18, 2, 1, 0.9), (6, 15, 4, 3, 0.5), (3, 10, 3, 1, 0.9)];
    let mut worst: f64 = 0.0;
    for (k, &(d, n, m, p, lambda)) in instances.iter().enumerate() {
        let x = gaussian_matrix(d, n, 300 + k as u64);
        let data = DataMatrix::new(x.clone(), None).unwrap();
        let model = ModularAE::random(d, p, m, lambda, 400 + k as u64).unwrap();
        let pairs: Vec<_> = model.modules().iter().map(|md| (md.decoder().clone(), md.encoder().clone())).collect();
        let f = |t: &[f64]| {
            let products: Vec<_> = unpack(t, d, p, m).iter().map(|(a, b)| a * b).collect();
            naive_loss(&products, &x, lambda)
        };
        let fd = central_difference(&f, &pack(&pairs), 1e-6);
        let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for g in [gradient(&model, &data).unwrap(), gram_gradient(&model, &Gram::from_data(&data)).unwrap()] {
            let analytic = pack(&g.d_decoder.into_iter().zip(g.d_encoder).collect::<Vec<_>>());
            let err = analytic.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            worst = worst.max(err / scale);
        }
    }
    check(worst < 1e-5, format!("max relative error {worst:.3e} on 5 instances (< 1e-5)"))
}

fn per_module_optimality() -> Verdict {
    let (d, n, m, p, lambda) = (5, 40, 3, 2, 0.5);
    let x = gaussian_matrix(d, n, 500);
    let data = DataMatrix::new(x.clone(), None).unwrap();
    let model = ModularAE::random(d, p, m, lambda, 501).unwrap();
    let sigma = Gram::from_data(&data).sigma().clone();
    let mut worst: f64 = 0.0;
    for i in 0..m {
        let mut products = model.products();
        products[i] = update_module(&model, i, &sigma).unwrap().product();
        let closed = naive_loss(&products, &x, lambda);
        let others = model.products();
        let f = |t: &[f64]| {
            let (a, b) = &unpack(t, d, p, 1)[0];
            let mut prods = others.clone();
            prods[i] = a * b;
            naive_loss(&prods, &x, lambda)
        };
        let oracle = multistart(&f, 2 * d * p, 20, 600 + i as u64);
        worst = worst.max((closed - oracle).abs() / oracle.abs());
    }
    let mut worst_rrr: f64 = 0.0;
    for k in 0..3u64 {
        let (dx, dy, n, p) = (5, 4, 40, 2);
        let xr = gaussian_matrix(dx, n, 700 + k);
        let y = gaussian_matrix(dy, dx, 710 + k) * &xr + gaussian_matrix(dy, n, 720 + k) * 0.5;
        let (a, b) = reduced_rank_regression(&y, &xr, p).unwrap();
        let closed = (&y - &a * &b * &xr).norm_squared();
        let f = |t: &[f64]| {
            let a = DMatrix::from_column_slice(dy, p, &t[..dy * p]);
            let b = DMatrix::from_column_slice(p, dx, &t[dy * p..]);
            (&y - a * b * &xr).norm_squared()
        };
        let oracle = multistart(&f, dy * p + p * dx, 20, 730 + k);
        worst_rrr = worst_rrr.max((closed - oracle).abs() / oracle);
    }
    check(
        worst <= 1e-6 && worst_rrr <= 1e-6,
        format!("update_module vs 20-restart BFGS: {worst:.3e}; reduced-rank regression: {worst_rrr:.3e} (<= 1e-6)"),
    )
}

fn speedup() -> Verdict {
    let spec = mixture_spec(5, 20, 1000, 0.25, 1.0, 11);
    let cfg = config(0.5, 10, 10, 100_000, 1e-5, 12);
    let report = benchmark_solvers(&spec, &cfg, 10).unwrap();
    let cost_ok = report.runs.iter().all(|r| r.backfit_cost <= r.gd_cost * (1.0 + 1e-3));
    let worst_cost = report
        .runs
        .iter()
        .map(|r| r.backfit_cost / r.gd_cost - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let min_run = report.per_run_speedup[0];
    let min_row = report.table.iter().map(|s| s.speedup).fold(f64::INFINITY, f64::min);
    check(
        cost_ok && min_run >= 10.0 && min_row >= 10.0,
        format!(
            "backfit/GD cost - 1 at most {worst_cost:.3e} (<= 1e-3); min per-repeat speedup {min_run:.1}x, min table speedup {min_row:.1}x (>= 10x)"
        ),
    )
}

fn dichotomy() -> Verdict {
    let data = centred(&mixture_spec(5, 20, 500, 0.25, 1.0, 0));
    let options = DichotomyOptions {
        num_modules: 3,
        hidden: 2,
        samples: 1000,
        seed: 8,
        direction: None,
    };
    let report = verify_dichotomy(&data, 1.1, &[10.0, 100.0, 1000.0], &options).unwrap();
    let DichotomyEvidence::Divergent { points, .. } = report.evidence else {
        return Err("no witness sequence for lambda = 1.1".into());
    };
    let loss_ratios: Vec<f64> = points.windows(2).map(|w| w[1].loss / w[0].loss).collect();
    let ens_ratios: Vec<f64> = points.windows(2).map(|w| w[1].ensemble_error / w[0].ensemble_error).collect();
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>().join(", ");
    let decreasing = points.windows(2).all(|w| w[1].loss < w[0].loss) && points[0].loss < 0.0;
    let bounded = verify_dichotomy(&data, 1.0, &[], &options).unwrap();
    let DichotomyEvidence::Bounded { min_loss, samples } = bounded.evidence else {
        return Err("no random sample for lambda = 1.0".into());
    };
    check(
        decreasing
            && loss_ratios.iter().all(|&r| r >= 1e3)
            && ens_ratios.iter().all(|&r| r >= 10f64.powf(1.5))
            && min_loss >= 0.0,
        format!(
            "lambda=1.1 loss ratios [{}] (>= 1e3), ensemble-error ratios [{}] (>= 10^1.5); lambda=1.0 min over {samples} models {min_loss:.3e} (>= 0)",
            fmt(&loss_ratios),
            fmt(&ens_ratios)
        ),
    )
}

fn boundary() -> Verdict {
    let data = centred(&mixture_spec(5, 20, 500, 0.25, 1.0, 0));
    let mut ok = true;
    let mut notes = Vec::new();
    for seed in 0..5 {
        let report = per_module_boundary_check(&data, 2, 3, &[1.9, 2.1], &[10.0, 100.0, 1000.0], seed).unwrap();
        let (below, above) = (&report.entries[0], &report.entries[1]);
        ok &= below.grows && above.decreases;
        notes.push(format!("{}/{}", below.grows, above.decreases));
    }
    check(ok, format!("grows at 1.9 / decreases at 2.1 for 5 random ensembles: {}", notes.join(" ")))
}

const SEEDS_10: std::ops::Range<u64> = 0..10;

fn section_51() -> Verdict {
    let (mut e0, mut e5, mut i0, mut i5) = (0.0, 0.0, 0.0, 0.0);
    for seed in SEEDS_10 {
        let data = gaussian_mixture(&mixture_spec(3, 2, 3000, 0.35, 1.5, seed)).unwrap();
        let cfg = SweepConfig {
            num_modules: 2,
            hidden_dim: 1,
            max_epochs: 1000,
            tolerance: 1e-5,
            num_folds: 5,
            classifier: Classifier::Softmax,
            seed,
            jobs: 1,
        };
        let r = evaluate_sweep(&data, &[0.0, 0.5], &cfg).unwrap();
        e0 += r.ensemble_error[0].mean / 10.0;
        e5 += r.ensemble_error[1].mean / 10.0;
        i0 += r.individual_error[0] / 10.0;
        i5 += r.individual_error[1] / 10.0;
    }
    check(
        e0 - e5 >= 0.03 && i5 >= i0,
        format!(
            "ensemble error {:.2}% -> {:.2}% (drop {:.2}pp, need >= 3pp); individual error {:.2}% -> {:.2}% (need nondecreasing)",
            100.0 * e0,
            100.0 * e5,
            100.0 * (e0 - e5),
            100.0 * i0,
            100.0 * i5
        ),
    )
}

fn diagnostics_trends() -> Verdict {
    let lambdas = [0.0, 0.5, 0.9];
    let mut fid = [0.0; 3];
    let mut pair = [0.0; 3];
    for seed in SEEDS_10 {
        let data = centred(&mixture_spec(3, 2, 3000, 0.35, 1.5, seed));
        let models: Vec<_> = lambdas
            .iter()
            .map(|&l| fit_backfit(&data, &config(l, 4, 1, 1000, 1e-5, seed)).unwrap().0)
            .collect();
        let r = DCorReport::compute(&models, &data, 1000, seed).unwrap();
        for k in 0..3 {
            fid[k] += r.avg_fidelity[k] / 10.0;
            pair[k] += r.avg_pairwise[k] / 10.0;
        }
    }

    let u = gaussian_matrix(3, 200, 90);
    let self_dcor = distance_correlation(&u, &u).unwrap();
    let (c, s) = (0.7f64.cos(), 0.7f64.sin());
    let rot = DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]);
    let iso = distance_correlation(&u, &(rot * &u).map(|v| v - 3.0)).unwrap();
    let indep = SEEDS_10
        .map(|seed| distance_correlation(&gaussian_matrix(3, 2000, 100 + 2 * seed), &gaussian_matrix(3, 2000, 101 + 2 * seed)).unwrap())
        .fold(0.0, f64::max);

    let trends = fid[1] <= fid[0] && fid[2] <= fid[1] && pair[0] > 0.99 && pair[2] < 0.9 && pair[1] < pair[0] && pair[2] < pair[1];
    let units = (self_dcor - 1.0).abs() < 1e-9 && (iso - 1.0).abs() < 1e-9 && indep < 0.1;
    check(
        trends && units,
        format!(
            "fidelity {fid:.4?} (nonincreasing), pairwise {pair:.4?} (> 0.99 at 0, decreasing, < 0.9 at 0.9); dCor self {self_dcor:.12}, isometry {iso:.12}, independent max {indep:.4} (< 0.1)"
        ),
    )
}

fn run_mae(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mae")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn without_timing(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    if let Some(obj) = v.as_object_mut() {
        obj.remove("timing");
    }
    v
}

fn cli_determinism() -> Verdict {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |tag: &str| -> Result<std::path::PathBuf, String> {
        let dir = root.path().join(tag);
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
        let data = p("mix.csv");
        run_mae(&["synth", "--clusters", "3", "--dim", "4", "--n", "400", "--std", "0.3", "--seed", "7", "--out", &data])?;
        run_mae(&["train", "--data", &data, "--modules", "3", "--hidden", "2", "--lambda", "0.5", "--seed", "4", "--out", &p("bf.json")])?;
        run_mae(&[
            "train", "--data", &data, "--modules", "3", "--hidden", "2", "--lambda", "0.5", "--seed", "4", "--solver", "gd",
            "--epochs", "3000", "--out", &p("gd.json"),
        ])?;
        run_mae(&["bench", "--repeats", "2", "--n", "200", "--dim", "8", "--modules", "3", "--hidden", "2", "--seed", "5", "--out-dir", &p("bench")])?;
        run_mae(&[
            "sweep", "--data", &data, "--lambdas", "0:1:0.5", "--modules", "2", "--hidden", "1", "--classifier", "softmax",
            "--folds", "3", "--seed", "6", "--jobs", "2", "--out-dir", &p("sweep"),
        ])?;
        run_mae(&["diagnose", "--data", &data, "--lambdas", "0,0.5", "--modules", "3", "--hidden", "1", "--seed", "6", "--out-dir", &p("diag")])?;
        Ok(dir)
    };
    let a = run("a")?;
    let b = run("b")?;
    let exact = [
        "mix.csv",
        "bf.json",
        "gd.json",
        "sweep/sweep.csv",
        "sweep/bae.csv",
        "sweep/report.json",
        "diag/dcor.csv",
        "diag/dcor.json",
    ];
    let mut mismatched: Vec<&str> = exact
        .iter()
        .copied()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok())
        .collect();
    for f in ["bf.report.json", "gd.report.json", "bench/bench.json"] {
        if without_timing(&a.join(f)) != without_timing(&b.join(f)) {
            mismatched.push(f);
        }
    }
    check(
        mismatched.is_empty(),
        format!(
            "{} byte-compared files, 3 JSON reports compared without their timing object; mismatches: {mismatched:?}",
            exact.len()
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 12] = [
        ("monotone descent", monotone_descent),
        ("lambda=0 equals PCA", lambda_zero_is_pca),
        ("lambda=1 equals monolithic rank-MP PCA", lambda_one_is_monolithic),
        ("ambiguity identity", ambiguity_identity),
        ("gradient correctness", gradient_correctness),
        ("per-module optimality", per_module_optimality),
        ("backfit vs gradient descent speedup", speedup),
        ("lambda dichotomy", dichotomy),
        ("per-module boundary", boundary),
        ("2-D mixture classification trend", section_51),
        ("distance-correlation trends", diagnostics_trends),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => line(&format!("[PASS] {:>2} {name}: {detail} [{secs:.1}s]", i + 1)),
            Err(detail) => {
                line(&format!("[FAIL] {:>2} {name}: {detail} [{secs:.1}s]", i + 1));
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed acceptance criteria: {failed:?}");
}
