//! Multinomial logistic regression on module codes.
//!
//! Features are standardised, an intercept is appended, and the
//! L2-regularised cross-entropy is minimised by full-batch gradient descent
//! with step `1/L` (`L` bounds the Hessian's largest eigenvalue) and
//! Nesterov momentum.

use nalgebra::{DMatrix, DVector};

use crate::error::{MaeError, Result};
use crate::linalg::symmetric_eigen_sorted;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftmaxOptions {
    pub max_iterations: usize,
    /// Stop once the largest gradient entry falls below this.
    pub tolerance: f64,
    /// Weight of the L2 penalty on non-intercept weights.
    pub l2: f64,
}

impl Default for SoftmaxOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            tolerance: 1e-6,
            l2: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    classes: Vec<i64>,
    /// K × (P + 1); last column is the intercept.
    weights: DMatrix<f64>,
    offset: DVector<f64>,
    scale: DVector<f64>,
    iterations: usize,
}

/// Distinct labels in ascending order.
pub fn sorted_classes(labels: &[i64]) -> Vec<i64> {
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// Row-wise softmax of an N × K score matrix.
pub fn softmax_rows(scores: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = scores.transpose();
    for mut col in out.column_iter_mut() {
        let max = col.max();
        col.apply(|v| *v = (*v - max).exp());
        let total = col.sum();
        col /= total;
    }
    out.transpose()
}

/// Index of the largest entry per row, first index on ties.
pub fn argmax_rows(m: &DMatrix<f64>) -> Vec<usize> {
    m.row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

impl SoftmaxClassifier {
    /// Fit on `codes` (P × N) with one label per column.
    pub fn fit(codes: &DMatrix<f64>, labels: &[i64], options: &SoftmaxOptions) -> Result<Self> {
        let (p, n) = codes.shape();
        if labels.len() != n {
            return Err(MaeError::shape("softmax labels", n, labels.len()));
        }
        if n == 0 || p == 0 {
            return Err(MaeError::InvalidInput("softmax needs at least one feature and example".into()));
        }
        if codes.iter().any(|v| !v.is_finite()) {
            return Err(MaeError::NonFinite("softmax training codes".into()));
        }
        let classes = sorted_classes(labels);
        if classes.len() < 2 {
            return Err(MaeError::SingleClass(classes[0]));
        }
        let k = classes.len();

        let offset = codes.column_mean();
        let scale = DVector::from_fn(p, |r, _| {
            let var = codes.row(r).iter().map(|v| (v - offset[r]).powi(2)).sum::<f64>() / n as f64;
            if var > 0.0 { var.sqrt() } else { 1.0 }
        });
        let z = standardise(codes, &offset, &scale);

        let targets: Vec<usize> = labels
            .iter()
            .map(|l| classes.binary_search(l).expect("label drawn from classes"))
            .collect();

        let gram = (&z * z.transpose()) / n as f64;
        let lipschitz = 0.5 * symmetric_eigen_sorted(&gram)?.values[0] + options.l2;
        let step = 1.0 / lipschitz;

        // row-major K × (P + 1) buffers for the hot loop
        let width = p + 1;
        let zs = z.as_slice();
        let mut prob = vec![0.0; k];
        // gradient of the penalised cross-entropy at `w`; returns its largest entry
        let mut gradient_at = |w: &[f64], grad: &mut [f64]| -> f64 {
            grad.fill(0.0);
            for (i, zi) in zs.chunks_exact(width).enumerate() {
                for (pj, wj) in prob.iter_mut().zip(w.chunks_exact(width)) {
                    *pj = wj.iter().zip(zi).map(|(a, b)| a * b).sum();
                }
                let max = prob.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for pj in prob.iter_mut() {
                    *pj = (*pj - max).exp();
                    total += *pj;
                }
                for (j, gj) in grad.chunks_exact_mut(width).enumerate() {
                    let r = prob[j] / total - if j == targets[i] { 1.0 } else { 0.0 };
                    for (g, zc) in gj.iter_mut().zip(zi) {
                        *g += r * zc;
                    }
                }
            }
            let mut largest = 0.0f64;
            for (idx, g) in grad.iter_mut().enumerate() {
                *g /= n as f64;
                if idx % width != p {
                    *g += options.l2 * w[idx];
                }
                largest = largest.max(g.abs());
            }
            largest
        };

        // Nesterov-accelerated steps of size 1/L, evaluated at the look-ahead point
        let mut w = vec![0.0; k * width];
        let mut look = w.clone();
        let mut grad = vec![0.0; k * width];
        let mut iterations = 0;
        while iterations < options.max_iterations {
            if gradient_at(&look, &mut grad) < options.tolerance {
                w.copy_from_slice(&look);
                break;
            }
            let momentum = iterations as f64 / (iterations as f64 + 3.0);
            for ((wi, li), g) in w.iter_mut().zip(look.iter_mut()).zip(&grad) {
                let next = *li - step * g;
                *li = next + momentum * (next - *wi);
                *wi = next;
            }
            iterations += 1;
        }
        let weights = DMatrix::from_row_slice(k, width, &w);
        log::debug!("softmax fit: {iterations} iterations, {k} classes");

        Ok(Self {
            classes,
            weights,
            offset,
            scale,
            iterations,
        })
    }

    pub fn classes(&self) -> &[i64] {
        &self.classes
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Class scores, N × K.
    pub fn scores(&self, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if codes.nrows() != self.offset.len() {
            return Err(MaeError::shape("softmax input rows", self.offset.len(), codes.nrows()));
        }
        let z = standardise(codes, &self.offset, &self.scale);
        Ok(z.transpose() * self.weights.transpose())
    }

    /// Class probabilities, N × K, columns ordered as [`classes`](Self::classes).
    pub fn predict_proba(&self, codes: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(softmax_rows(&self.scores(codes)?))
    }

    pub fn predict(&self, codes: &DMatrix<f64>) -> Result<Vec<i64>> {
        let proba = self.predict_proba(codes)?;
        Ok(argmax_rows(&proba).into_iter().map(|j| self.classes[j]).collect())
    }
}

/// Standardised features with a trailing row of ones, (P + 1) × N.
fn standardise(codes: &DMatrix<f64>, offset: &DVector<f64>, scale: &DVector<f64>) -> DMatrix<f64> {
    let (p, n) = codes.shape();
    DMatrix::from_fn(p + 1, n, |r, c| if r == p { 1.0 } else { (codes[(r, c)] - offset[r]) / scale[r] })
}

/// Average the probability matrices and take the most probable class
/// (smallest label on ties). All matrices share the column order `classes`.
pub fn combine_mean_proba(probas: &[DMatrix<f64>], classes: &[i64]) -> Result<Vec<i64>> {
    let first = probas
        .first()
        .ok_or_else(|| MaeError::InvalidInput("no probability matrices to combine".into()))?;
    if first.ncols() != classes.len() {
        return Err(MaeError::shape("probability columns", classes.len(), first.ncols()));
    }
    let mut sum = DMatrix::zeros(first.nrows(), first.ncols());
    for p in probas {
        if p.shape() != first.shape() {
            return Err(MaeError::shape(
                "probability matrix",
                format!("{:?}", first.shape()),
                format!("{:?}", p.shape()),
            ));
        }
        sum += p;
    }
    sum /= probas.len() as f64;
    Ok(argmax_rows(&sum).into_iter().map(|j| classes[j]).collect())
}
