use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, l2_normalize, normalize_backward, Matrix};

/// Stand-in for the embedding network: `normalize(W x)` or a free table of
/// per-sample embeddings, `normalize(table[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingModel {
    /// `weights` is `d_out × d_in`.
    Linear { weights: Matrix },
    /// One row per training sample.
    Free { table: Matrix },
}

/// Raw (pre-normalization) and unit embeddings of one batch.
#[derive(Debug, Clone)]
pub struct Forward {
    pub raw: Matrix,
    pub unit: Matrix,
}

impl EmbeddingModel {
    /// Gaussian weights scaled by `1/√d_in`.
    pub fn linear<R: Rng>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let scale = 1.0 / (d_in as f64).sqrt();
        let data = (0..d_in * d_out).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        EmbeddingModel::Linear { weights: Matrix::from_vec(d_out, d_in, data).expect("sized") }
    }

    /// Table initialized from the (normalized) training features.
    pub fn free(features: &Matrix) -> Result<Self> {
        let mut table = features.clone();
        for i in 0..table.rows() {
            let u = l2_normalize(features.row(i))?;
            table.row_mut(i).copy_from_slice(&u);
        }
        Ok(EmbeddingModel::Free { table })
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EmbeddingModel::Linear { weights } => weights.rows(),
            EmbeddingModel::Free { table } => table.cols(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            EmbeddingModel::Linear { weights } => weights.as_slice(),
            EmbeddingModel::Free { table } => table.as_slice(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            EmbeddingModel::Linear { weights } => weights.as_mut_slice(),
            EmbeddingModel::Free { table } => table.as_mut_slice(),
        }
    }

    fn raw_row(&self, features: &Matrix, rows: &[usize], k: usize) -> Result<Vec<f64>> {
        match self {
            EmbeddingModel::Linear { weights } => {
                let x = features.row(k);
                if x.len() != weights.cols() {
                    return Err(Error::DimensionMismatch { expected: weights.cols(), found: x.len() });
                }
                Ok(weights.iter_rows().map(|w| dot(w, x)).collect())
            }
            EmbeddingModel::Free { table } => {
                let r = rows[k];
                if r >= table.rows() {
                    return Err(Error::ShapeMismatch(format!("table row {r} out of range")));
                }
                Ok(table.row(r).to_vec())
            }
        }
    }

    /// Embeds a batch. `features` holds one input row per sample; `rows`
    /// gives each sample's table row (only used by the free table).
    pub fn forward(&self, features: &Matrix, rows: &[usize]) -> Result<Forward> {
        let n = features.rows();
        let d = self.output_dim();
        let mut raw = Matrix::zeros(n, d);
        let mut unit = Matrix::zeros(n, d);
        for k in 0..n {
            let z = self.raw_row(features, rows, k)?;
            let u = l2_normalize(&z)?;
            raw.row_mut(k).copy_from_slice(&z);
            unit.row_mut(k).copy_from_slice(&u);
        }
        Ok(Forward { raw, unit })
    }

    /// Gradient of the loss with respect to the parameters, given the
    /// gradient with respect to the unit embeddings of a batch.
    pub fn backward(&self, features: &Matrix, rows: &[usize], fwd: &Forward, grad_unit: &Matrix) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.params().len()];
        for k in 0..fwd.raw.rows() {
            let g = normalize_backward(fwd.raw.row(k), grad_unit.row(k))?;
            match self {
                EmbeddingModel::Linear { weights } => {
                    let x = features.row(k);
                    let cols = weights.cols();
                    for (o, go) in g.iter().enumerate() {
                        for (j, xj) in x.iter().enumerate() {
                            grad[o * cols + j] += go * xj;
                        }
                    }
                }
                EmbeddingModel::Free { table } => {
                    let base = rows[k] * table.cols();
                    for (j, gj) in g.iter().enumerate() {
                        grad[base + j] += gj;
                    }
                }
            }
        }
        Ok(grad)
    }
}
