//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the library's numerical code: losses, gradients
//! and metrics are recomputed from their definitions with plain loops.

#![allow(dead_code)]

use std::collections::BTreeMap;

use proxy_isa::config::ExperimentConfig;
use proxy_isa::linalg::{EmbeddingBatch, Matrix, ProxySet};
use proxy_isa::memory::MemoryQueue;
use proxy_isa::metrics::{map_at_r, recall_at_k};
use proxy_isa::LossKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let ua = unit(a);
    let ub = unit(b);
    ua.iter().zip(&ub).map(|(x, y)| x * y).sum()
}

/// Proxy-Anchor straight from its definition, with optional weights inside
/// the exponents and the weighted normalizers. `w_pos[i][c]`, `w_neg[i][c]`.
pub fn anchor_reference(
    s: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    alpha: f64,
    delta: f64,
    w_pos: Option<&[Vec<f64>]>,
    w_neg: Option<&[Vec<f64>]>,
) -> f64 {
    let wp = |i: usize, c: usize| w_pos.map_or(1.0, |w| w[i][c]);
    let wn = |i: usize, c: usize| w_neg.map_or(1.0, |w| w[i][c]);
    let mut pos_sum = 0.0;
    let mut pos_norm = 0.0;
    let mut neg_sum = 0.0;
    let mut neg_norm = 0.0;
    for c in 0..classes {
        let members: Vec<usize> = (0..s.len()).filter(|&i| labels[i] == c).collect();
        let others: Vec<usize> = (0..s.len()).filter(|&i| labels[i] != c).collect();
        if !members.is_empty() {
            let total: f64 = members.iter().map(|&i| (wp(i, c) * alpha * (delta - s[i][c])).exp()).sum();
            pos_sum += (1.0 + total).ln();
            pos_norm += members.iter().map(|&i| wp(i, c)).sum::<f64>() / members.len() as f64;
        }
        let total: f64 = others.iter().map(|&i| (wn(i, c) * alpha * (delta + s[i][c])).exp()).sum();
        neg_sum += (1.0 + total).ln();
        neg_norm +=
            if others.is_empty() { 1.0 } else { others.iter().map(|&i| wn(i, c)).sum::<f64>() / others.len() as f64 };
    }
    pos_sum / pos_norm + neg_sum / neg_norm
}

/// Softmax cross-entropy over scaled cosine similarities.
pub fn softmax_reference(s: &[Vec<f64>], labels: &[usize], temperature: f64) -> f64 {
    let mut total = 0.0;
    for (row, &y) in s.iter().zip(labels) {
        let z: f64 = row.iter().map(|v| (v / temperature).exp()).sum();
        total += z.ln() - row[y] / temperature;
    }
    total / s.len() as f64
}

/// Central difference of `f` along every coordinate of `x`.
pub fn numeric_gradient(x: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        probe[j] = x[j] + h;
        let plus = f(&probe);
        probe[j] = x[j] - h;
        let minus = f(&probe);
        probe[j] = x[j];
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// `max|a - b| / max(max|a|, max|b|)`.
pub fn normwise_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-12)
}

pub fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize, range: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-range..range)).collect()).collect()
}

/// Neighbors of `q` by descending cosine similarity, ties by index.
pub fn brute_force_ranking(emb: &[Vec<f64>], q: usize) -> Vec<usize> {
    let mut others: Vec<(usize, f64)> =
        (0..emb.len()).filter(|&j| j != q).map(|j| (j, cos(&emb[q], &emb[j]))).collect();
    others.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    others.into_iter().map(|(j, _)| j).collect()
}

pub fn recall_oracle(emb: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let hits =
        (0..emb.len()).filter(|&q| brute_force_ranking(emb, q).iter().take(k).any(|&j| labels[j] == labels[q])).count();
    hits as f64 / emb.len() as f64
}

/// Average precision at R for query `q`, R being its same-class count.
pub fn ap_at_r_oracle(emb: &[Vec<f64>], labels: &[usize], q: usize) -> f64 {
    let r = labels.iter().enumerate().filter(|&(j, &y)| j != q && y == labels[q]).count();
    let ranking = brute_force_ranking(emb, q);
    let mut correct = 0;
    let mut ap = 0.0;
    for (pos, &j) in ranking.iter().take(r).enumerate() {
        if labels[j] == labels[q] {
            correct += 1;
            ap += correct as f64 / (pos + 1) as f64;
        }
    }
    ap / r as f64
}

pub fn map_at_r_oracle(emb: &[Vec<f64>], labels: &[usize]) -> f64 {
    (0..emb.len()).map(|q| ap_at_r_oracle(emb, labels, q)).sum::<f64>() / emb.len() as f64
}

pub fn unit_rows(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|r| unit(r)).collect::<Vec<_>>()).unwrap()
}

/// Replays random enqueue operations against a plain `Vec` FIFO and compares
/// per-class counts and mean proxy similarities after every operation.
pub fn replay_memory(seed: u64, operations: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (classes, dim, capacity) = (5, 4, 37);
    let proxies_raw = random_rows(&mut rng, classes, dim, 1.0);
    let proxies = ProxySet::new(Matrix::from_rows(&proxies_raw).unwrap()).unwrap();
    let mut queue = MemoryQueue::new(capacity);
    let mut reference: Vec<(Vec<f64>, usize)> = Vec::new();
    let mut worst: f64 = 0.0;
    for _ in 0..operations {
        let m = rng.random_range(1..9);
        let rows: Vec<Vec<f64>> = (0..m).map(|_| unit(&random_rows(&mut rng, 1, dim, 1.0)[0])).collect();
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..classes)).collect();
        let mask: Vec<bool> = (0..m).map(|_| rng.random_bool(0.2)).collect();
        let batch = EmbeddingBatch::new(Matrix::from_rows(&rows).unwrap(), labels.clone(), classes).unwrap();
        let added = queue.enqueue_clean(&batch, &mask).unwrap();

        let mut expected_added: BTreeMap<usize, u64> = BTreeMap::new();
        for i in 0..m {
            if !mask[i] {
                reference.push((rows[i].clone(), labels[i]));
                *expected_added.entry(labels[i]).or_default() += 1;
            }
        }
        if reference.len() > capacity {
            reference.drain(..reference.len() - capacity);
        }
        assert_eq!(added, expected_added);
        assert_eq!(queue.len(), reference.len());
        for c in 0..classes {
            let members: Vec<&Vec<f64>> = reference.iter().filter(|(_, y)| *y == c).map(|(e, _)| e).collect();
            assert_eq!(queue.class_count(c), members.len());
            let got = queue.class_mean_similarity(&proxies, c).unwrap();
            if members.is_empty() {
                assert!(got.is_none());
            } else {
                let want = members.iter().map(|e| cos(e, &proxies_raw[c])).sum::<f64>() / members.len() as f64;
                worst = worst.max((got.unwrap() - want).abs());
            }
        }
    }
    worst
}

/// Largest deviation of the library metrics from the exhaustive oracles.
pub fn metric_oracle_gap(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let emb = random_rows(&mut rng, 30, 3, 1.0);
        // every class has at least two members so R is never zero
        let labels: Vec<usize> = (0..30).map(|i| if i < 10 { i % 5 } else { rng.random_range(0..5) }).collect();
        let m = unit_rows(&emb);
        for k in [1, 2, 4, 8] {
            worst = worst.max((recall_at_k(&m, &labels, k).unwrap() - recall_oracle(&emb, &labels, k)).abs());
        }
        worst = worst.max((map_at_r(&m, &labels).unwrap() - map_at_r_oracle(&emb, &labels)).abs());
    }
    worst
}

/// The shared synthetic suite for the directional and ablation experiments:
/// 20 training and 20 held-out classes in 32 dimensions, spreads drawn from
/// [0.3, 0.9] radians, 10% outliers at four times the spread.
pub fn synthetic_suite(loss: LossKind, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(loss, 30, seed);
    c.syn_classes = 40;
    c.train_classes = 20;
    c.syn_dim = 32;
    c.embedding_dim = 32;
    c.syn_samples_per_class = 50;
    c.syn_spread_min = 0.3;
    c.syn_spread_max = 0.9;
    c.syn_outlier_fraction = 0.1;
    c.syn_outlier_multiplier = 4.0;
    c.batch_size = 64;
    c.instances_per_class = 8;
    c.lr_model = 1e-3;
    c.lr_proxy = 1e-2;
    c
}

/// A configuration small enough to train in well under a second.
pub fn tiny_config(loss: LossKind, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(loss, 4, seed);
    c.syn_classes = 8;
    c.train_classes = 4;
    c.syn_dim = 8;
    c.embedding_dim = 6;
    c.syn_samples_per_class = 12;
    c.batch_size = 8;
    c.instances_per_class = 2;
    c.memory_size = 40;
    c.lr_model = 1e-2;
    c.lr_proxy = 1e-2;
    c
}
