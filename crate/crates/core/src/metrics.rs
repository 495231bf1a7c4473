//! Retrieval metrics over cosine similarity: Recall@K and MAP@R.
//!
//! Every sample is used as a query against all the others (self excluded).
//! Neighbors are ranked by descending similarity with ties broken by the
//! lower sample index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::parallel::map_indexed;

/// Indices of all samples except `query`, best match first.
pub fn ranked_neighbors(embeddings: &Matrix, query: usize) -> Vec<usize> {
    let q = embeddings.row(query);
    let mut scored: Vec<(f64, usize)> =
        (0..embeddings.rows()).filter(|&j| j != query).map(|j| (dot(q, embeddings.row(j)), j)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, j)| j).collect()
}

fn check(embeddings: &Matrix, labels: &[usize]) -> Result<()> {
    if embeddings.rows() != labels.len() {
        return Err(Error::DimensionMismatch { expected: embeddings.rows(), found: labels.len() });
    }
    if labels.len() < 2 {
        return Err(Error::InsufficientData(format!("need at least 2 samples, got {}", labels.len())));
    }
    Ok(())
}

fn class_sizes(labels: &[usize]) -> std::collections::BTreeMap<usize, usize> {
    let mut sizes = std::collections::BTreeMap::new();
    for &y in labels {
        *sizes.entry(y).or_insert(0) += 1;
    }
    sizes
}

/// Average precision at cutoff `r` for one ranked relevance list.
fn average_precision_at_r(relevant: impl Iterator<Item = bool>, r: usize) -> f64 {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, rel) in relevant.take(r).enumerate() {
        if rel {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    total / r as f64
}

/// Fraction of queries with a same-class sample among their `k` nearest neighbors.
pub fn recall_at_k(embeddings: &Matrix, labels: &[usize], k: usize) -> Result<f64> {
    Ok(evaluate(embeddings, labels, &[k], false)?.recall[0].1)
}

/// Mean over queries of AP@R, with `R` the number of other samples sharing
/// the query's class.
pub fn map_at_r(embeddings: &Matrix, labels: &[usize]) -> Result<f64> {
    Ok(evaluate(embeddings, labels, &[], true)?.map_at_r.unwrap_or(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    /// `(k, Recall@k)` pairs.
    pub recall: Vec<(usize, f64)>,
    pub map_at_r: Option<f64>,
}

impl RetrievalMetrics {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }
}

/// Computes Recall@k for each of `ks` and, when `with_map` is set, MAP@R,
/// ranking every query once.
pub fn evaluate(embeddings: &Matrix, labels: &[usize], ks: &[usize], with_map: bool) -> Result<RetrievalMetrics> {
    check(embeddings, labels)?;
    if let Some(&bad) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::InsufficientData(format!("k must be >= 1, got {bad}")));
    }
    let sizes = class_sizes(labels);
    if with_map {
        if let Some((class, _)) = sizes.iter().find(|(_, &n)| n < 2) {
            return Err(Error::InsufficientData(format!("class {class} has a single sample; MAP@R needs R >= 1")));
        }
    }
    let max_k = ks.iter().copied().max().unwrap_or(0);

    let per_query: Vec<(Vec<bool>, f64)> = map_indexed(labels.len(), |q| {
        let ranked = ranked_neighbors(embeddings, q);
        let relevant = |j: &usize| labels[*j] == labels[q];
        let first_hit = ranked.iter().take(max_k).position(relevant);
        let hits: Vec<bool> = ks.iter().map(|&k| first_hit.is_some_and(|p| p < k)).collect();
        let ap = if with_map {
            let r = sizes[&labels[q]] - 1;
            average_precision_at_r(ranked.iter().map(relevant), r)
        } else {
            0.0
        };
        (hits, ap)
    });

    let n = labels.len() as f64;
    let recall = ks
        .iter()
        .enumerate()
        .map(|(idx, &k)| (k, per_query.iter().filter(|(h, _)| h[idx]).count() as f64 / n))
        .collect();
    let map_at_r = with_map.then(|| per_query.iter().map(|(_, ap)| ap).sum::<f64>() / n);
    Ok(RetrievalMetrics { recall, map_at_r })
}
