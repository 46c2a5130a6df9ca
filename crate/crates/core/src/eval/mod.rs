//! Utility and privacy measurements on generated records.

mod logreg;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::trainer::wasserstein_estimate;
pub use logreg::{auc, train_logreg, LogRegConfig, LogisticModel, LOGREG_GRAD_TOL};

use crate::data::{RecordKind, RecordMatrix};
use crate::error::{invalid, DpganError, Result};
use crate::tensor::Matrix;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// Exact `k` nearest training rows of every generated row under Euclidean
/// distance, closest first, ties going to the lower training index.
pub fn nearest_neighbors<T: Scalar>(
    generated: &RecordMatrix<T>,
    training: &RecordMatrix<T>,
    k: usize,
) -> Result<Vec<Vec<Neighbor>>> {
    if generated.cols() != training.cols() {
        return Err(DpganError::DimensionMismatch {
            context: "nearest_neighbors columns",
            expected: training.cols(),
            actual: generated.cols(),
        });
    }
    if k > training.rows() {
        return Err(invalid(
            "k",
            format!("{k} exceeds the {} training rows", training.rows()),
        ));
    }
    let rows: Vec<usize> = (0..generated.rows()).collect();
    Ok(rows
        .par_iter()
        .map(|&g| {
            let q = generated.row(g);
            let mut d2: Vec<(f64, usize)> = training
                .iter_rows()
                .enumerate()
                .map(|(i, t)| (squared_distance(q, t), i))
                .collect();
            d2.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            d2.truncate(k);
            d2.into_iter()
                .map(|(s, index)| Neighbor {
                    index,
                    distance: s.sqrt(),
                })
                .collect()
        })
        .collect())
}

pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum()
}

/// `1` where the entry is at least `threshold`, else `0`.
pub fn binarize<T: Scalar>(data: &RecordMatrix<T>, threshold: f64) -> Result<RecordMatrix<T>> {
    let t = T::of(threshold);
    let values = data
        .as_slice()
        .iter()
        .map(|&v| if v >= t { T::one() } else { T::zero() })
        .collect();
    RecordMatrix::new(data.rows(), data.cols(), values, RecordKind::Binary)
}

fn require_binary<T: Scalar>(m: &RecordMatrix<T>) -> Result<()> {
    let cols = m.cols().max(1);
    for (k, v) in m.as_slice().iter().enumerate() {
        if *v != T::zero() && *v != T::one() {
            return Err(DpganError::NonBinary {
                row: k / cols,
                col: k % cols,
                value: v.to_f64_lossy(),
            });
        }
    }
    Ok(())
}

fn require_same_cols<T: Scalar>(
    context: &'static str,
    a: &RecordMatrix<T>,
    b: &RecordMatrix<T>,
) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(DpganError::DimensionMismatch {
            context,
            expected: a.cols(),
            actual: b.cols(),
        });
    }
    Ok(())
}

/// Per-dimension Bernoulli success probabilities of a real and a generated
/// binary matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwpPair {
    pub dim_index: usize,
    pub p_real: f64,
    pub p_gen: f64,
}

fn column_means<T: Scalar>(m: &RecordMatrix<T>) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for r in m.iter_rows() {
        for (s, v) in sums.iter_mut().zip(r) {
            *s += v.to_f64_lossy();
        }
    }
    let n = m.rows() as f64;
    sums.into_iter()
        .map(|s| if n > 0.0 { s / n } else { 0.0 })
        .collect()
}

pub fn dwp<T: Scalar>(real: &RecordMatrix<T>, generated: &RecordMatrix<T>) -> Result<Vec<DwpPair>> {
    require_same_cols("dwp columns", real, generated)?;
    require_binary(real)?;
    require_binary(generated)?;
    if real.rows() == 0 || generated.rows() == 0 {
        return Err(DpganError::EmptyBatch);
    }
    Ok(column_means(real)
        .into_iter()
        .zip(column_means(generated))
        .enumerate()
        .map(|(dim_index, (p_real, p_gen))| DwpPair {
            dim_index,
            p_real,
            p_gen,
        })
        .collect())
}

pub fn mean_abs_deviation(pairs: &[DwpPair]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs
        .iter()
        .map(|p| (p.p_gen - p.p_real).abs())
        .sum::<f64>()
        / pairs.len() as f64
}

/// Sample Pearson correlation; `NaN` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipReason {
    None,
    UniLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwpreResult {
    pub dim_index: usize,
    pub auc_real: Option<f64>,
    pub auc_gen: Option<f64>,
    pub skip_reason: SkipReason,
}

impl DwpreResult {
    pub fn skipped(&self) -> bool {
        self.skip_reason != SkipReason::None
    }
}

/// Rows with column `d` removed, and column `d` as labels.
fn predict_one_from_rest<T: Scalar>(
    m: &RecordMatrix<T>,
    d: usize,
) -> Result<(Matrix<T>, Vec<bool>)> {
    let cols = m.cols();
    let mut feats = Vec::with_capacity(m.rows() * (cols - 1));
    let mut labels = Vec::with_capacity(m.rows());
    for r in m.iter_rows() {
        feats.extend(
            r.iter()
                .enumerate()
                .filter(|(j, _)| *j != d)
                .map(|(_, v)| *v),
        );
        labels.push(r[d] == T::one());
    }
    Ok((Matrix::from_vec(m.rows(), cols - 1, feats)?, labels))
}

/// Held-out AUC of a predict-one-from-rest classifier for column `d`;
/// `None` when the column is single-valued in `train` or in `test`.
pub fn column_auc<T: Scalar>(
    train: &RecordMatrix<T>,
    test: &RecordMatrix<T>,
    d: usize,
    config: LogRegConfig,
) -> Result<Option<f64>> {
    let (x, y) = predict_one_from_rest(train, d)?;
    let model = match train_logreg(&x, &y, config) {
        Ok(m) => m,
        Err(DpganError::UniLabel) => return Ok(None),
        Err(e) => return Err(e),
    };
    let (tx, ty) = predict_one_from_rest(test, d)?;
    let scores = model.predict_many((0..tx.rows()).map(|r| tx.row(r)))?;
    match auc(&scores, &ty) {
        Ok(a) => Ok(Some(a)),
        Err(DpganError::UniLabel) => Ok(None),
        Err(e) => Err(e),
    }
}

/// [`column_auc`] for every column, in column order.
pub fn column_aucs<T: Scalar>(
    train: &RecordMatrix<T>,
    test: &RecordMatrix<T>,
    config: LogRegConfig,
) -> Result<Vec<Option<f64>>> {
    require_same_cols("dwpre columns", train, test)?;
    require_binary(train)?;
    require_binary(test)?;
    if train.cols() < 2 {
        return Err(invalid("columns", "need at least two"));
    }
    (0..train.cols())
        .into_par_iter()
        .map(|d| column_auc(train, test, d, config))
        .collect()
}

/// Pairs per-column AUCs from a real-trained and a generated-trained pass.
pub fn combine_dwpre(real: &[Option<f64>], gen: &[Option<f64>]) -> Vec<DwpreResult> {
    real.iter()
        .zip(gen)
        .enumerate()
        .map(|(dim_index, (&r, &g))| {
            let skip = r.is_none() || g.is_none();
            DwpreResult {
                dim_index,
                auc_real: if skip { None } else { r },
                auc_gen: if skip { None } else { g },
                skip_reason: if skip {
                    SkipReason::UniLabel
                } else {
                    SkipReason::None
                },
            }
        })
        .collect()
}

/// Dimension-wise prediction: for each column, classifiers trained on the
/// real and on the generated records predict it from the others and are
/// scored by AUC on `test`. Single-valued columns are skipped, not fatal.
pub fn dwpre<T: Scalar>(
    real: &RecordMatrix<T>,
    generated: &RecordMatrix<T>,
    test: &RecordMatrix<T>,
    config: LogRegConfig,
) -> Result<Vec<DwpreResult>> {
    require_same_cols("dwpre columns", real, generated)?;
    let r = column_aucs(real, test, config)?;
    let g = column_aucs(generated, test, config)?;
    Ok(combine_dwpre(&r, &g))
}

/// Seeded 80/20 train/test split used for DWpre.
pub fn dwpre_split<T: Scalar>(
    data: &RecordMatrix<T>,
    seed: u64,
) -> (RecordMatrix<T>, RecordMatrix<T>) {
    data.split(0.8, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwpreSummary {
    pub columns: usize,
    pub skipped: usize,
    /// Means over all columns with skipped ones scored as chance, `0.5`.
    pub mean_auc_real: f64,
    pub mean_auc_gen: f64,
}

pub fn summarize_dwpre(results: &[DwpreResult]) -> DwpreSummary {
    let n = results.len().max(1) as f64;
    DwpreSummary {
        columns: results.len(),
        skipped: results.iter().filter(|r| r.skipped()).count(),
        mean_auc_real: results
            .iter()
            .map(|r| r.auc_real.unwrap_or(0.5))
            .sum::<f64>()
            / n,
        mean_auc_gen: results
            .iter()
            .map(|r| r.auc_gen.unwrap_or(0.5))
            .sum::<f64>()
            / n,
    }
}

fn labelled<T: Scalar>(
    a: &RecordMatrix<T>,
    b: &RecordMatrix<T>,
    ia: &[usize],
    ib: &[usize],
) -> Result<(Matrix<T>, Vec<bool>)> {
    let mut data = Vec::with_capacity((ia.len() + ib.len()) * a.cols());
    let mut labels = Vec::with_capacity(ia.len() + ib.len());
    for &i in ia {
        data.extend_from_slice(a.row(i));
        labels.push(true);
    }
    for &i in ib {
        data.extend_from_slice(b.row(i));
        labels.push(false);
    }
    Ok((Matrix::from_vec(labels.len(), a.cols(), data)?, labels))
}

/// Trains a two-class classifier on generated records and scores it on real
/// held-out records, `repeats` times with fresh subsamples of `n_samples / 2`
/// per class. Returns one test accuracy per repeat.
#[allow(clippy::too_many_arguments)]
pub fn downstream_classify<T: Scalar>(
    gen_class_a: &RecordMatrix<T>,
    gen_class_b: &RecordMatrix<T>,
    test_a: &RecordMatrix<T>,
    test_b: &RecordMatrix<T>,
    n_samples: usize,
    repeats: usize,
    seed: u64,
    config: LogRegConfig,
) -> Result<Vec<f64>> {
    require_same_cols("downstream class b", gen_class_a, gen_class_b)?;
    require_same_cols("downstream test a", gen_class_a, test_a)?;
    require_same_cols("downstream test b", gen_class_a, test_b)?;
    let half = n_samples / 2;
    if half == 0 {
        return Err(invalid("n_samples", "must be at least 2"));
    }
    if half > gen_class_a.rows() || half > gen_class_b.rows() {
        return Err(invalid(
            "n_samples",
            format!(
                "needs {half} generated rows per class, have {} and {}",
                gen_class_a.rows(),
                gen_class_b.rows()
            ),
        ));
    }
    let all_a: Vec<usize> = (0..test_a.rows()).collect();
    let all_b: Vec<usize> = (0..test_b.rows()).collect();
    let (tx, ty) = labelled(test_a, test_b, &all_a, &all_b)?;
    if ty.is_empty() {
        return Err(DpganError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let ia = sample(&mut rng, gen_class_a.rows(), half).into_vec();
        let ib = sample(&mut rng, gen_class_b.rows(), half).into_vec();
        let (x, y) = labelled(gen_class_a, gen_class_b, &ia, &ib)?;
        let model = train_logreg(&x, &y, config)?;
        let mut correct = 0usize;
        for (r, &label) in ty.iter().enumerate() {
            let p = model.predict_proba(tx.row(r))?.to_f64_lossy();
            if (p >= 0.5) == label {
                correct += 1;
            }
        }
        out.push(correct as f64 / ty.len() as f64);
    }
    Ok(out)
}

pub fn dwp_csv(pairs: &[DwpPair]) -> String {
    let mut s = String::from("dim_index,p_real,p_gen\n");
    for p in pairs {
        s.push_str(&format!("{},{},{}\n", p.dim_index, p.p_real, p.p_gen));
    }
    s
}

pub fn dwpre_csv(results: &[DwpreResult]) -> String {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |a| a.to_string());
    let mut s = String::from("dim_index,auc_real,auc_gen,skip_reason\n");
    for r in results {
        let reason = match r.skip_reason {
            SkipReason::None => "none",
            SkipReason::UniLabel => "uni-label",
        };
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.dim_index,
            opt(r.auc_real),
            opt(r.auc_gen),
            reason
        ));
    }
    s
}

pub fn neighbors_csv(neighbors: &[Vec<Neighbor>]) -> String {
    let mut s = String::from("generated_index,rank,training_index,distance\n");
    for (g, list) in neighbors.iter().enumerate() {
        for (rank, n) in list.iter().enumerate() {
            s.push_str(&format!("{g},{rank},{},{}\n", n.index, n.distance));
        }
    }
    s
}

pub fn accuracies_csv(acc: &[f64]) -> String {
    let mut s = String::from("repeat,accuracy\n");
    for (i, a) in acc.iter().enumerate() {
        s.push_str(&format!("{i},{a}\n"));
    }
    s
}
