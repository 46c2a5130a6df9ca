//! Record matrices, CSV ingestion and synthetic datasets.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, DpganError, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecordKind {
    Continuous,
    Binary,
}

/// `M` records of equal width, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
    kind: RecordKind,
    norm_bound: Option<f64>,
}

impl<T: Scalar> RecordMatrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>, kind: RecordKind) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DpganError::DimensionMismatch {
                context: "RecordMatrix::new",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(
                "records",
                format!("non-finite value at row {}", i / cols.max(1)),
            ));
        }
        if kind == RecordKind::Binary {
            if let Some(i) = data.iter().position(|v| *v != T::zero() && *v != T::one()) {
                return Err(DpganError::NonBinary {
                    row: i / cols,
                    col: i % cols,
                    value: data[i].to_f64_lossy(),
                });
            }
        }
        Ok(Self {
            rows,
            cols,
            data,
            kind,
            norm_bound: None,
        })
    }

    pub fn from_rows(rows: &[Vec<T>], kind: RecordKind) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return Err(DpganError::DimensionMismatch {
                context: "RecordMatrix::from_rows",
                expected: cols,
                actual: rows[i].len(),
            });
        }
        Self::new(rows.len(), cols, rows.concat(), kind)
    }

    pub fn empty(cols: usize, kind: RecordKind) -> Self {
        Self {
            rows: 0,
            cols,
            data: Vec::new(),
            kind,
            norm_bound: None,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn kind(&self) -> RecordKind {
        self.kind
    }

    /// Bound `B_x` enforced by [`enforce_norm_bound`], if any.
    pub fn norm_bound(&self) -> Option<f64> {
        self.norm_bound
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows)
            .map(|i| self.data[i * self.cols + j])
            .collect()
    }

    pub fn row_norm(&self, i: usize) -> f64 {
        self.row(i)
            .iter()
            .map(|v| {
                let f = v.to_f64_lossy();
                f * f
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.rows).map(|i| self.row_norm(i)).fold(0.0, f64::max)
    }

    /// Rows picked by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: indices.len(),
            cols: self.cols,
            data,
            kind: self.kind,
            norm_bound: self.norm_bound,
        }
    }

    /// Seeded shuffle, then the first `round(frac · M)` rows go to the first part.
    pub fn split(&self, frac: f64, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.rows).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.rows as f64) * frac).round() as usize;
        let cut = cut.min(self.rows);
        (self.select(&idx[..cut]), self.select(&idx[cut..]))
    }

    pub fn convert<U: Scalar>(&self) -> RecordMatrix<U> {
        RecordMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
            kind: self.kind,
            norm_bound: self.norm_bound,
        }
    }

    /// Writes comma-separated rows; binary matrices use integer `0`/`1`.
    pub fn write_csv<W: Write>(&self, mut out: W, header: Option<&[String]>) -> Result<()> {
        if let Some(h) = header {
            writeln!(out, "{}", h.join(","))?;
        }
        let mut line = String::new();
        for r in self.iter_rows() {
            line.clear();
            for (j, v) in r.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                match self.kind {
                    RecordKind::Binary => line.push(if *v == T::zero() { '0' } else { '1' }),
                    RecordKind::Continuous => line.push_str(&v.to_f64_lossy().to_string()),
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path, header: Option<&[String]>) -> Result<()> {
        let file = fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w, header)?;
        w.flush()?;
        Ok(())
    }
}

/// Default `x0,x1,…` column names.
pub fn default_header(cols: usize) -> Vec<String> {
    (0..cols).map(|j| format!("x{j}")).collect()
}

/// What ingestion had to discard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

/// Parses comma-separated numeric text. Rows with an empty, non-numeric or
/// NaN cell are dropped and counted; a row with a different number of fields
/// than the first data row is fatal.
pub fn parse_csv(text: &str, has_header: bool) -> Result<(Vec<Vec<f64>>, LoadReport)> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    if has_header {
        lines.next();
    }
    let mut rows = Vec::new();
    let mut report = LoadReport::default();
    let mut width = None;
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(DpganError::Csv {
                    line: lineno + 1,
                    reason: format!("ragged row: {} fields, expected {w}", fields.len()),
                })
            }
            _ => {}
        }
        report.rows_read += 1;
        let parsed: Option<Vec<f64>> = fields
            .iter()
            .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        match parsed {
            Some(r) => rows.push(r),
            None => report.rows_dropped += 1,
        }
    }
    if report.rows_read == 0 {
        return Err(DpganError::Csv {
            line: 0,
            reason: "no data rows".into(),
        });
    }
    Ok((rows, report))
}

fn rows_to_matrix<T: Scalar>(
    rows: Vec<Vec<f64>>,
    width: usize,
    kind: RecordKind,
) -> Result<RecordMatrix<T>> {
    let n = rows.len();
    let data: Vec<T> = rows.into_iter().flatten().map(T::of).collect();
    RecordMatrix::new(n, width, data, kind)
}

fn csv_width(text: &str, has_header: bool) -> usize {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .nth(usize::from(has_header))
        .map_or(0, |l| l.split(',').count())
}

/// Loads a CSV and binarises it: nonzero cells become 1, zero stays 0.
pub fn load_binary_csv<T: Scalar>(
    path: &Path,
    has_header: bool,
) -> Result<(RecordMatrix<T>, LoadReport)> {
    let text = fs::read_to_string(path)?;
    let (rows, report) = parse_csv(&text, has_header)?;
    let rows = rows
        .into_iter()
        .map(|r| {
            r.into_iter()
                .map(|v| if v != 0.0 { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    if report.rows_dropped > 0 {
        log::warn!(
            "{}: dropped {} rows with missing cells",
            path.display(),
            report.rows_dropped
        );
    }
    Ok((
        rows_to_matrix(rows, csv_width(&text, has_header), RecordKind::Binary)?,
        report,
    ))
}

/// Loads a CSV of real-valued records.
pub fn load_continuous_csv<T: Scalar>(
    path: &Path,
    has_header: bool,
) -> Result<(RecordMatrix<T>, LoadReport)> {
    let text = fs::read_to_string(path)?;
    let (rows, report) = parse_csv(&text, has_header)?;
    if report.rows_dropped > 0 {
        log::warn!(
            "{}: dropped {} rows with missing cells",
            path.display(),
            report.rows_dropped
        );
    }
    Ok((
        rows_to_matrix(rows, csv_width(&text, has_header), RecordKind::Continuous)?,
        report,
    ))
}

/// Rescales every row with norm above `b_x` onto the sphere of radius `b_x`.
/// Scaled rows are nudged so their computed norm never exceeds `b_x`, which
/// makes the operation idempotent bit for bit.
pub fn enforce_norm_bound<T: Scalar>(data: &RecordMatrix<T>, b_x: f64) -> Result<RecordMatrix<T>> {
    if !(b_x > 0.0 && b_x.is_finite()) {
        return Err(invalid("b_x", format!("{b_x} must be positive and finite")));
    }
    let mut out = data.clone();
    let mut scaled_any = false;
    for i in 0..out.rows {
        let norm = out.row_norm(i);
        if norm <= b_x {
            continue;
        }
        scaled_any = true;
        let original = data.row(i).to_vec();
        let mut factor = b_x / norm;
        loop {
            let cols = out.cols;
            for (dst, src) in out.data[i * cols..(i + 1) * cols].iter_mut().zip(&original) {
                *dst = *src * T::of(factor);
            }
            if out.row_norm(i) <= b_x {
                break;
            }
            factor *= 1.0 - f64::EPSILON;
        }
    }
    if scaled_any && out.kind == RecordKind::Binary {
        out.kind = RecordKind::Continuous;
    }
    out.norm_bound = Some(b_x);
    Ok(out)
}

fn row_rng(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

/// `n` points from an equal-weight isotropic Gaussian mixture. Row `i` only
/// depends on `(seed, i)`.
pub fn gen_gaussian_mixture<T: Scalar>(
    n: usize,
    centers: &[Vec<f64>],
    std: f64,
    seed: u64,
) -> Result<RecordMatrix<T>> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let dim = centers
        .first()
        .map(Vec::len)
        .ok_or_else(|| invalid("centers", "need at least one"))?;
    if dim == 0 || centers.iter().any(|c| c.len() != dim) {
        return Err(invalid(
            "centers",
            "all centers need the same positive dimension",
        ));
    }
    if !(std >= 0.0 && std.is_finite()) {
        return Err(invalid(
            "std",
            format!("{std} must be finite and non-negative"),
        ));
    }
    let mut data = Vec::with_capacity(n * dim);
    for i in 0..n {
        let mut rng = row_rng(seed, i);
        let c = &centers[rng.random_range(0..centers.len())];
        for &cj in c {
            let e: f64 = StandardNormal.sample(&mut rng);
            data.push(T::of(cj + std * e));
        }
    }
    RecordMatrix::new(n, dim, data, RecordKind::Continuous)
}

/// Pairwise latent correlation between two columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub i: usize,
    pub j: usize,
    pub strength: f64,
}

/// Binary records from a thresholded correlated Gaussian.
///
/// The latent vector has unit variances and `corr(i, j) = strength` for each
/// coupling; column `i` is 1 when its latent falls below `Φ⁻¹(base_probs[i])`,
/// so its marginal is exactly `base_probs[i]`.
pub fn gen_correlated_binary<T: Scalar>(
    n: usize,
    dims: usize,
    base_probs: &[f64],
    couplings: &[Coupling],
    seed: u64,
) -> Result<RecordMatrix<T>> {
    if base_probs.len() != dims {
        return Err(DpganError::DimensionMismatch {
            context: "base_probs",
            expected: dims,
            actual: base_probs.len(),
        });
    }
    if let Some(p) = base_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(invalid("base_probs", format!("{p} not in [0, 1]")));
    }
    let mut cov = vec![vec![0.0; dims]; dims];
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut chol = cholesky(&cov).expect("identity is positive definite");
    for c in couplings {
        if c.i >= dims || c.j >= dims || c.i == c.j {
            return Err(invalid("couplings", format!("bad pair ({}, {})", c.i, c.j)));
        }
        cov[c.i][c.j] = c.strength;
        cov[c.j][c.i] = c.strength;
        chol = cholesky(&cov).ok_or(DpganError::NotPositiveDefinite { i: c.i, j: c.j })?;
    }
    let normal = Normal::standard();
    let thresholds: Vec<f64> = base_probs
        .iter()
        .map(|&p| match p {
            p if p <= 0.0 => f64::NEG_INFINITY,
            p if p >= 1.0 => f64::INFINITY,
            p => normal.inverse_cdf(p),
        })
        .collect();
    let mut data = Vec::with_capacity(n * dims);
    let mut e = vec![0.0; dims];
    for r in 0..n {
        let mut rng = row_rng(seed, r);
        for v in &mut e {
            *v = StandardNormal.sample(&mut rng);
        }
        for i in 0..dims {
            let latent: f64 = chol[i][..=i].iter().zip(&e).map(|(l, v)| l * v).sum();
            data.push(if latent < thresholds[i] {
                T::one()
            } else {
                T::zero()
            });
        }
    }
    RecordMatrix::new(n, dims, data, RecordKind::Binary)
}

/// Lower-triangular Cholesky factor, or `None` if not positive definite.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 1e-12 {
                    return None;
                }
                l[i][j] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// Desk-scale stand-in for a sparse binary health-record matrix: `dims`
/// columns with marginals spread over `[0.05, 0.6]` and positive latent
/// couplings between consecutive column pairs `(2k, 2k+1)`.
pub fn binary_benchmark<T: Scalar>(n: usize, dims: usize, seed: u64) -> Result<RecordMatrix<T>> {
    let (probs, couplings) = binary_benchmark_structure(dims);
    gen_correlated_binary(n, dims, &probs, &couplings, seed)
}

pub fn binary_benchmark_structure(dims: usize) -> (Vec<f64>, Vec<Coupling>) {
    let probs = (0..dims)
        .map(|i| {
            if dims == 1 {
                0.3
            } else {
                0.05 + 0.55 * ((i * 37) % dims) as f64 / (dims - 1) as f64
            }
        })
        .collect();
    let couplings = (0..dims / 2)
        .map(|k| Coupling {
            i: 2 * k,
            j: 2 * k + 1,
            strength: 0.8,
        })
        .collect();
    (probs, couplings)
}
