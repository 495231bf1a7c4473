//! Dense vector and matrix primitives for embeddings and proxies.
//!
//! Everything here works in `f64`. Proxies are stored raw and normalized on
//! read, so the gradients of cosine similarity are taken with respect to the
//! raw (pre-normalization) coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero.
pub const MIN_NORM: f64 = 1e-12;

/// Tolerance on the unit-norm check of batch rows.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} entries for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows. An empty slice gives a 0x0 matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch { expected: cols, found: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        (0..self.rows).map(move |i| self.row(i))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] += value;
    }

    /// Selects rows by index, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if !(n >= MIN_NORM) || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Backpropagates through `x -> x / |x|`.
///
/// Given the gradient with respect to the unit vector, returns the gradient
/// with respect to the raw vector: `(I - x̂ x̂ᵀ) g / |x|`.
pub fn normalize_backward(raw: &[f64], grad_unit: &[f64]) -> Result<Vec<f64>> {
    if raw.len() != grad_unit.len() {
        return Err(Error::DimensionMismatch { expected: raw.len(), found: grad_unit.len() });
    }
    let n = norm(raw);
    if !(n >= MIN_NORM) {
        return Err(Error::ZeroNorm);
    }
    let radial: f64 = raw.iter().zip(grad_unit).map(|(x, g)| x * g).sum::<f64>() / n;
    Ok(raw.iter().zip(grad_unit).map(|(x, g)| (g - radial * x / n) / n).collect())
}

/// Gradients of `upstream * cos(u, v)` with respect to both raw vectors.
pub fn cosine_backward(u_raw: &[f64], v_raw: &[f64], upstream: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if u_raw.len() != v_raw.len() {
        return Err(Error::DimensionMismatch { expected: u_raw.len(), found: v_raw.len() });
    }
    let u_hat = l2_normalize(u_raw)?;
    let v_hat = l2_normalize(v_raw)?;
    let gu: Vec<f64> = v_hat.iter().map(|x| upstream * x).collect();
    let gv: Vec<f64> = u_hat.iter().map(|x| upstream * x).collect();
    Ok((normalize_backward(u_raw, &gu)?, normalize_backward(v_raw, &gv)?))
}

/// Numerically stable `ln(1 + Σ exp(t_k))`.
pub fn log1p_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if terms.is_empty() || max == f64::NEG_INFINITY {
        return 0.0;
    }
    if max <= 0.0 {
        let sum: f64 = terms.iter().map(|t| t.exp()).sum();
        return sum.ln_1p();
    }
    let shifted: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    max + ((-max).exp() + shifted).ln()
}

/// One trainable raw vector per class, consumed in unit-normalized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxySet {
    raw: Matrix,
}

impl ProxySet {
    pub fn new(raw: Matrix) -> Result<Self> {
        for c in 0..raw.rows() {
            if !(norm(raw.row(c)) >= MIN_NORM) {
                return Err(Error::ZeroNorm);
            }
        }
        Ok(Self { raw })
    }

    pub fn num_classes(&self) -> usize {
        self.raw.rows()
    }

    pub fn dim(&self) -> usize {
        self.raw.cols()
    }

    pub fn raw(&self) -> &Matrix {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut Matrix {
        &mut self.raw
    }

    pub fn unit(&self, class: usize) -> Result<Vec<f64>> {
        l2_normalize(self.raw.row(class))
    }

    /// All proxies normalized, one row per class.
    pub fn unit_matrix(&self) -> Result<Matrix> {
        let mut out = self.raw.clone();
        for c in 0..out.rows() {
            let u = l2_normalize(self.raw.row(c))?;
            out.row_mut(c).copy_from_slice(&u);
        }
        Ok(out)
    }
}

/// Unit-norm embeddings with their class indices (0-based, `< num_classes`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    embeddings: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl EmbeddingBatch {
    pub fn new(embeddings: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if embeddings.rows() != labels.len() {
            return Err(Error::DimensionMismatch { expected: embeddings.rows(), found: labels.len() });
        }
        for row in embeddings.iter_rows() {
            let n = norm(row);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::ShapeMismatch(format!("embedding row has norm {n}, expected 1")));
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidLabel { label, num_classes });
        }
        Ok(Self { embeddings, labels, num_classes })
    }

    /// Normalizes each raw row before building the batch.
    pub fn from_raw(raw: &Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let mut emb = raw.clone();
        for i in 0..raw.rows() {
            let u = l2_normalize(raw.row(i))?;
            emb.row_mut(i).copy_from_slice(&u);
        }
        Self::new(emb, labels, num_classes)
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }
}

/// Cosine similarity of every batch row against every proxy, clamped to [-1, 1].
pub fn similarity_matrix(batch: &EmbeddingBatch, proxies: &ProxySet) -> Result<Matrix> {
    if batch.dim() != proxies.dim() {
        return Err(Error::DimensionMismatch { expected: proxies.dim(), found: batch.dim() });
    }
    let units = proxies.unit_matrix()?;
    let m = batch.len();
    let c = proxies.num_classes();
    let mut s = Matrix::zeros(m, c);
    for i in 0..m {
        let e = batch.embeddings().row(i);
        for j in 0..c {
            s.set(i, j, dot(e, units.row(j)).clamp(-1.0, 1.0));
        }
    }
    Ok(s)
}

/// Back-propagates `grad_s` through `S = Ê P̂ᵀ` to the unit embeddings and
/// unit proxies (clamping is treated as the identity).
pub fn similarity_backward(unit_emb: &Matrix, unit_proxies: &Matrix, grad_s: &Matrix) -> Result<(Matrix, Matrix)> {
    let (m, c, d) = (unit_emb.rows(), unit_proxies.rows(), unit_emb.cols());
    if unit_proxies.cols() != d {
        return Err(Error::DimensionMismatch { expected: d, found: unit_proxies.cols() });
    }
    if grad_s.rows() != m || grad_s.cols() != c {
        return Err(Error::ShapeMismatch(format!("grad_s is {}x{}, expected {m}x{c}", grad_s.rows(), grad_s.cols())));
    }
    let mut grad_emb = Matrix::zeros(m, d);
    let mut grad_proxy = Matrix::zeros(c, d);
    for i in 0..m {
        let e = unit_emb.row(i);
        for k in 0..c {
            let g = grad_s.get(i, k);
            if g == 0.0 {
                continue;
            }
            let p = unit_proxies.row(k);
            for j in 0..d {
                grad_emb.add_at(i, j, g * p[j]);
                grad_proxy.add_at(k, j, g * e[j]);
            }
        }
    }
    Ok((grad_emb, grad_proxy))
}
