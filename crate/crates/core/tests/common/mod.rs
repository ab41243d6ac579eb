//! Independent oracles shared by the integration tests. Nothing here calls
//! the library's linear algebra or loss code.

#![allow(dead_code)]

use modular_ae::dataset::{center_features, gaussian_mixture, MixtureSpec};
use modular_ae::rng::SeededRng;
use modular_ae::DataMatrix;
use nalgebra::DMatrix;

pub fn mixture(k: usize, d: usize, n: usize, std: f64, seed: u64) -> DataMatrix {
    let spec = MixtureSpec {
        num_clusters: k,
        dim: d,
        num_points: n,
        cluster_std: std,
        mean_scale: 1.0,
        seed,
    };
    center_features(&gaussian_mixture(&spec).unwrap()).unwrap()
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = SeededRng::new(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.normal())
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenvalues are
/// returned in descending order with matching eigenvector columns.
pub fn jacobi_eigen(s: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = s.nrows();
    let mut a = s.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() < 1e-15 * a.norm() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    (values, vectors)
}

/// Second-moment matrix `X Xᵀ`, summed example by example.
pub fn second_moment(x: &DMatrix<f64>) -> DMatrix<f64> {
    let d = x.nrows();
    let mut s = DMatrix::zeros(d, d);
    for col in x.column_iter() {
        for i in 0..d {
            for j in 0..d {
                s[(i, j)] += col[i] * col[j];
            }
        }
    }
    s
}

/// Rank-`r` PCA reconstruction error per example, `Σ_{k>r} σ_k / N`.
pub fn pca_error(x: &DMatrix<f64>, r: usize) -> f64 {
    let (values, _) = jacobi_eigen(&second_moment(x));
    values[r..].iter().sum::<f64>() / x.ncols() as f64
}

/// The loss in its defining form: per example, per module squared error
/// minus `λ` times the squared distance to the ensemble mean, averaged over
/// examples and modules.
pub fn naive_loss(products: &[DMatrix<f64>], x: &DMatrix<f64>, lambda: f64) -> f64 {
    let m = products.len();
    let n = x.ncols();
    let mut total = 0.0;
    for xn in x.column_iter() {
        let recon: Vec<_> = products.iter().map(|c| c * xn).collect();
        let mut mean = recon[0].clone() * 0.0;
        for r in &recon {
            mean += r;
        }
        mean /= m as f64;
        for r in &recon {
            total += (xn - r).norm_squared() - lambda * (r - &mean).norm_squared();
        }
    }
    total / (n * m) as f64
}

/// Pack `(A_i, B_i)` column-major, modules in order, `A` before `B`.
pub fn pack(pairs: &[(DMatrix<f64>, DMatrix<f64>)]) -> Vec<f64> {
    pairs
        .iter()
        .flat_map(|(a, b)| a.iter().chain(b.iter()).copied().collect::<Vec<_>>())
        .collect()
}

pub fn unpack(theta: &[f64], d: usize, p: usize, m: usize) -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
    let block = 2 * d * p;
    (0..m)
        .map(|i| {
            let s = &theta[i * block..(i + 1) * block];
            (
                DMatrix::from_column_slice(d, p, &s[..d * p]),
                DMatrix::from_column_slice(p, d, &s[d * p..]),
            )
        })
        .collect()
}

pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let step = h * (1.0 + x[k].abs());
            probe[k] = x[k] + step;
            let up = f(&probe);
            probe[k] = x[k] - step;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS with finite-difference gradients and a backtracking Armijo line
/// search. Returns the best point and value found.
pub fn bfgs(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], max_iter: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let grad = |x: &[f64]| central_difference(f, x, 1e-6);
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut g = grad(&x);
    let mut h = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iter {
        if g.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-10 {
            break;
        }
        let gv = nalgebra::DVector::from_column_slice(&g);
        let mut dir: Vec<f64> = (-(&h * &gv)).iter().copied().collect();
        if dot(&dir, &g) >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = g.iter().map(|v| -v).collect();
        }
        let slope = dot(&dir, &g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            let ft = f(&trial);
            if ft <= fx + 1e-4 * t * slope {
                accepted = Some((trial, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fxn)) = accepted else { break };
        let gn = grad(&xn);
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 {
            let sv = nalgebra::DVector::from_column_slice(&s);
            let yv = nalgebra::DVector::from_column_slice(&y);
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - &sv * yv.transpose() * rho;
            let right = &i - &yv * sv.transpose() * rho;
            h = &left * &h * &right + &sv * sv.transpose() * rho;
        }
        let done = (fx - fxn).abs() <= 1e-15 * fx.abs().max(1e-300);
        x = xn;
        fx = fxn;
        g = gn;
        if done {
            break;
        }
    }
    (x, fx)
}

/// Best of `restarts` BFGS runs from Gaussian starting points.
pub fn multistart(f: &dyn Fn(&[f64]) -> f64, dim: usize, restarts: usize, seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    (0..restarts)
        .map(|_| {
            let x0: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            bfgs(f, &x0, 2000).1
        })
        .fold(f64::INFINITY, f64::min)
}

/// Nearest training column by exhaustive search; ties keep the lower index.
pub fn brute_force_knn1(train: &DMatrix<f64>, labels: &[i64], test: &DMatrix<f64>) -> Vec<i64> {
    test.column_iter()
        .map(|t| {
            let dists: Vec<f64> = train
                .column_iter()
                .map(|c| c.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let mut idx: Vec<usize> = (0..dists.len()).collect();
            idx.sort_by(|&i, &j| dists[i].partial_cmp(&dists[j]).unwrap().then(i.cmp(&j)));
            labels[idx[0]]
        })
        .collect()
}

/// Distance correlation through the three-sum form of the squared distance
/// covariance, `S1 + S2 - 2 S3`.
pub fn dcor_three_sum(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let n = u.ncols();
    let dist = |m: &DMatrix<f64>| DMatrix::from_fn(n, n, |i, j| (m.column(i) - m.column(j)).norm());
    let a = dist(u);
    let b = dist(v);
    let dcov2 = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
        let nf = n as f64;
        let s1 = a.component_mul(b).sum() / (nf * nf);
        let s2 = a.sum() / (nf * nf) * b.sum() / (nf * nf);
        let ra = a.column_sum();
        let rb = b.column_sum();
        let s3 = ra.dot(&rb) / (nf * nf * nf);
        s1 + s2 - 2.0 * s3
    };
    let vu = dcov2(&a, &a);
    let vv = dcov2(&b, &b);
    (dcov2(&a, &b) / (vu * vv).sqrt()).sqrt()
}
