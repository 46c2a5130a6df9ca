use serde::{Deserialize, Serialize};

use crate::error::{invalid, DpganError, Result};
use crate::tensor::{predict, Activation, Matrix, NetworkSpec, ParameterSet};
use crate::Scalar;

/// Tolerance on the full gradient norm at which fitting stops early.
pub const LOGREG_GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    /// Ridge penalty `(l2/2)‖w‖²` on the weights; the intercept is free.
    pub l2: f64,
    pub max_iters: usize,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_iters: 500,
        }
    }
}

/// A fitted classifier, stored as a one-layer sigmoid network.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel<T> {
    pub spec: NetworkSpec,
    pub params: ParameterSet<T>,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl<T: Scalar> LogisticModel<T> {
    pub fn converged(&self) -> bool {
        self.grad_norm < LOGREG_GRAD_TOL
    }

    pub fn weights(&self) -> &[T] {
        self.params.weights[0].as_slice()
    }

    pub fn intercept(&self) -> T {
        self.params.biases[0][0]
    }

    /// `P(y = 1 | x)`.
    pub fn predict_proba(&self, x: &[T]) -> Result<T> {
        Ok(predict(&self.spec, &self.params, x)?[0])
    }

    pub fn predict_many<'a, I>(&self, rows: I) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = &'a [T]>,
    {
        rows.into_iter()
            .map(|r| self.predict_proba(r).map(Scalar::to_f64_lossy))
            .collect()
    }
}

/// Largest eigenvalue of `XᵀX / n` by power iteration from the all-ones vector.
fn top_eigenvalue<T: Scalar>(x: &Matrix<T>) -> f64 {
    let n = x.rows().max(1) as f64;
    let mut v = vec![T::one(); x.cols()];
    let mut lambda = 0.0;
    let mut xv = vec![T::zero(); x.rows()];
    for _ in 0..50 {
        let norm = v
            .iter()
            .map(|a| a.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for a in &mut v {
            *a = *a / T::of(norm);
        }
        x.matvec_into(&v, &mut xv);
        let w = x.transpose_matvec(&xv);
        let next = w
            .iter()
            .zip(&v)
            .map(|(a, b)| a.to_f64_lossy() * b.to_f64_lossy())
            .sum::<f64>()
            / n;
        v = w;
        if (next - lambda).abs() <= 1e-9 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Fits logistic regression by full-batch gradient descent from zero with
/// step `1/L`, `L = λ_max(X̃ᵀX̃/n)/4 + l2` (`X̃` has a trailing ones column).
/// Stops when the gradient norm drops below [`LOGREG_GRAD_TOL`] or after
/// `max_iters` steps.
pub fn train_logreg<T: Scalar>(
    features: &Matrix<T>,
    labels: &[bool],
    config: LogRegConfig,
) -> Result<LogisticModel<T>> {
    let n = features.rows();
    let d = features.cols();
    if labels.len() != n {
        return Err(DpganError::DimensionMismatch {
            context: "logistic regression labels",
            expected: n,
            actual: labels.len(),
        });
    }
    if n == 0 {
        return Err(DpganError::EmptyBatch);
    }
    if !(config.l2 >= 0.0 && config.l2.is_finite()) {
        return Err(invalid("l2", "must be finite and non-negative"));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == n {
        return Err(DpganError::UniLabel);
    }

    let mut aug = Vec::with_capacity(n * (d + 1));
    for r in 0..n {
        aug.extend_from_slice(features.row(r));
        aug.push(T::one());
    }
    let x = Matrix::from_vec(n, d + 1, aug)?;
    let y: Vec<T> = labels
        .iter()
        .map(|&b| if b { T::one() } else { T::zero() })
        .collect();
    let lipschitz = 0.25 * top_eigenvalue(&x) + config.l2;
    let step = T::of(1.0 / lipschitz);
    let inv_n = T::of(1.0 / n as f64);
    let l2 = T::of(config.l2);

    let mut theta = vec![T::zero(); d + 1];
    let mut z = vec![T::zero(); n];
    let mut iterations = 0;
    let mut grad_norm;
    loop {
        x.matvec_into(&theta, &mut z);
        let resid: Vec<T> = z
            .iter()
            .zip(&y)
            .map(|(&zi, &yi)| crate::tensor::sigmoid(zi) - yi)
            .collect();
        let mut g = x.transpose_matvec(&resid);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = *gj * inv_n;
            if j < d {
                *gj = *gj + l2 * theta[j];
            }
        }
        grad_norm = g
            .iter()
            .map(|v| v.to_f64_lossy().powi(2))
            .sum::<f64>()
            .sqrt();
        if grad_norm < LOGREG_GRAD_TOL || iterations >= config.max_iters {
            break;
        }
        for (t, gj) in theta.iter_mut().zip(&g) {
            *t = *t - step * *gj;
        }
        iterations += 1;
    }

    let spec = NetworkSpec::new(vec![d, 1], vec![Activation::Sigmoid], true)?;
    let mut params = ParameterSet::zeros(&spec);
    params.weights[0] = Matrix::from_vec(1, d, theta[..d].to_vec())?;
    params.biases[0][0] = theta[d];
    Ok(LogisticModel {
        spec,
        params,
        iterations,
        grad_norm,
    })
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Computed from mid-ranks; the numerator is an exact
/// half-integer so the result equals the pairwise count.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(DpganError::DimensionMismatch {
            context: "auc",
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid("scores", "contain NaN"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(DpganError::UniLabel);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the mid-rank sum of positives keeps everything integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let twice_mid = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] {
                twice_rank_sum += twice_mid;
            }
        }
        i = j + 1;
    }
    let p = pos as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / 2.0 / (pos as f64 * neg as f64))
}
