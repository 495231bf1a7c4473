//! Proxy-based objectives and their gradients with respect to the similarity
//! matrix `S` (rows are samples, columns are class proxies).
//!
//! Gradient sign convention: `∂L/∂S` is non-positive on positive pairs and
//! non-negative on negative pairs, so the per-pair gradient weight is its
//! absolute value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log1p_sum_exp, Matrix};

/// Scale `alpha` and margin `delta` of the proxy-anchor family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossHyper {
    pub alpha: f64,
    pub delta: f64,
}

impl Default for LossHyper {
    fn default() -> Self {
        Self { alpha: 32.0, delta: 0.1 }
    }
}

impl LossHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.delta >= 0.0) || !self.delta.is_finite() {
            return Err(Error::Config(format!("delta must be >= 0, got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad_s: Matrix,
}

/// Per-pair multipliers applied inside the exponents of the ISA objective.
///
/// `omega_pos` is meaningful where the sample's label equals the column,
/// `omega_neg` everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWeights {
    pub omega_pos: Matrix,
    pub omega_neg: Matrix,
}

impl PairWeights {
    pub fn ones(rows: usize, classes: usize) -> Self {
        Self { omega_pos: Matrix::filled(rows, classes, 1.0), omega_neg: Matrix::filled(rows, classes, 1.0) }
    }

    /// Weight of pair `(i, c)` given the sample's label.
    #[inline]
    pub fn get(&self, i: usize, c: usize, label: usize) -> f64 {
        if label == c {
            self.omega_pos.get(i, c)
        } else {
            self.omega_neg.get(i, c)
        }
    }

    /// Mean positive weight of each class over its samples; 1 when a class has none.
    pub fn class_means_pos(&self, labels: &[usize]) -> Vec<f64> {
        let classes = self.omega_pos.cols();
        let mut sum = vec![0.0; classes];
        let mut count = vec![0usize; classes];
        for (i, &y) in labels.iter().enumerate() {
            sum[y] += self.omega_pos.get(i, y);
            count[y] += 1;
        }
        sum.iter().zip(&count).map(|(s, &n)| if n == 0 { 1.0 } else { s / n as f64 }).collect()
    }

    /// Mean negative weight of each class over the samples that are negatives
    /// for it; 1 when every sample belongs to the class.
    pub fn class_means_neg(&self, labels: &[usize]) -> Vec<f64> {
        let classes = self.omega_neg.cols();
        (0..classes)
            .map(|c| {
                let (sum, n) = labels
                    .iter()
                    .enumerate()
                    .filter(|&(_, &y)| y != c)
                    .fold((0.0, 0usize), |(s, n), (i, _)| (s + self.omega_neg.get(i, c), n + 1));
                if n == 0 {
                    1.0
                } else {
                    sum / n as f64
                }
            })
            .collect()
    }

    fn validate(&self, labels: &[usize]) -> Result<()> {
        for (i, &y) in labels.iter().enumerate() {
            for c in 0..self.omega_pos.cols() {
                let w = self.get(i, c, y);
                if !(w > 0.0) || !w.is_finite() {
                    return Err(Error::InvalidWeights { row: i, col: c, value: w });
                }
            }
        }
        Ok(())
    }
}

/// Which classes occur among `labels`.
pub fn present_classes(labels: &[usize], num_classes: usize) -> Vec<bool> {
    let mut present = vec![false; num_classes];
    for &y in labels {
        present[y] = true;
    }
    present
}

fn check_inputs(s: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.is_empty() || s.rows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if s.rows() != labels.len() {
        return Err(Error::DimensionMismatch { expected: s.rows(), found: labels.len() });
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= s.cols()) {
        return Err(Error::InvalidLabel { label, num_classes: s.cols() });
    }
    Ok(())
}

/// Shared evaluation of the weighted proxy-anchor family.
///
/// Each class contributes `ln(1 + Σ exp(ω α (δ ∓ S)))` per side; the sides
/// are divided by `pos_norm` and `neg_norm`. The per-pair gradient is the
/// softmax share of the term times `ω α / norm`.
fn weighted_anchor(
    s: &Matrix,
    labels: &[usize],
    weights: Option<&PairWeights>,
    pos_norm: f64,
    neg_norm: f64,
    hyper: &LossHyper,
) -> LossOutput {
    let (m, classes) = (s.rows(), s.cols());
    let LossHyper { alpha, delta } = *hyper;
    let omega = |i: usize, c: usize| weights.map_or(1.0, |w| w.get(i, c, labels[i]));

    let mut grad = Matrix::zeros(m, classes);
    let mut pos_total = 0.0;
    let mut neg_total = 0.0;
    let mut exps: Vec<f64> = Vec::with_capacity(m);
    let mut rows: Vec<usize> = Vec::with_capacity(m);

    for c in 0..classes {
        for positive in [true, false] {
            exps.clear();
            rows.clear();
            for i in 0..m {
                if (labels[i] == c) != positive {
                    continue;
                }
                let sim = s.get(i, c);
                let base = if positive { delta - sim } else { delta + sim };
                exps.push(omega(i, c) * alpha * base);
                rows.push(i);
            }
            if rows.is_empty() {
                continue;
            }
            let term = log1p_sum_exp(&exps);
            let (norm, sign) = if positive {
                pos_total += term;
                (pos_norm, -1.0)
            } else {
                neg_total += term;
                (neg_norm, 1.0)
            };
            // share_k = exp(t_k) / (1 + Σ exp(t_j)) = exp(t_k - term)
            for (&i, &t) in rows.iter().zip(&exps) {
                let share = (t - term).exp();
                grad.set(i, c, sign * omega(i, c) * alpha * share / norm);
            }
        }
    }

    LossOutput { value: pos_total / pos_norm + neg_total / neg_norm, grad_s: grad }
}

/// Proxy-anchor loss: positives averaged over the classes present in the
/// batch, negatives averaged over all classes.
pub fn proxy_anchor(s: &Matrix, labels: &[usize], hyper: &LossHyper) -> Result<LossOutput> {
    check_inputs(s, labels)?;
    let present = present_classes(labels, s.cols()).iter().filter(|&&p| p).count();
    Ok(weighted_anchor(s, labels, None, present as f64, s.cols() as f64, hyper))
}

/// Gradient weights `w_{i,c} = |∂L/∂S_{i,c}|` of the proxy-anchor loss, in
/// closed form.
pub fn proxy_anchor_weights(s: &Matrix, labels: &[usize], hyper: &LossHyper) -> Result<Matrix> {
    check_inputs(s, labels)?;
    let (m, classes) = (s.rows(), s.cols());
    let present = present_classes(labels, classes).iter().filter(|&&p| p).count() as f64;
    let LossHyper { alpha, delta } = *hyper;
    let mut w = Matrix::zeros(m, classes);
    for c in 0..classes {
        let pos: Vec<f64> = (0..m).filter(|&i| labels[i] == c).map(|i| alpha * (delta - s.get(i, c))).collect();
        let neg: Vec<f64> = (0..m).filter(|&i| labels[i] != c).map(|i| alpha * (delta + s.get(i, c))).collect();
        let lse_pos = log1p_sum_exp(&pos);
        let lse_neg = log1p_sum_exp(&neg);
        for i in 0..m {
            let value = if labels[i] == c {
                alpha * (alpha * (delta - s.get(i, c)) - lse_pos).exp() / present
            } else {
                alpha * (alpha * (delta + s.get(i, c)) - lse_neg).exp() / classes as f64
            };
            w.set(i, c, value);
        }
    }
    Ok(w)
}

/// Normalized softmax: cross-entropy over temperature-scaled cosine rows.
pub fn normalized_softmax(s: &Matrix, labels: &[usize], temperature: f64) -> Result<LossOutput> {
    check_inputs(s, labels)?;
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Config(format!("temperature must be > 0, got {temperature}")));
    }
    let (m, classes) = (s.rows(), s.cols());
    let mut grad = Matrix::zeros(m, classes);
    let mut total = 0.0;
    for i in 0..m {
        let logits: Vec<f64> = s.row(i).iter().map(|x| x / temperature).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lse - logits[labels[i]];
        for c in 0..classes {
            let p = (logits[c] - lse).exp();
            let target = if c == labels[i] { 1.0 } else { 0.0 };
            grad.set(i, c, (p - target) / (temperature * m as f64));
        }
    }
    Ok(LossOutput { value: total / m as f64, grad_s: grad })
}

/// Proxy-ISA loss: the proxy-anchor form with `ω` inside each exponent and
/// each side normalized by the sum of per-class mean weights.
///
/// `ω` and the normalizers are treated as constants for the gradient.
pub fn proxy_isa(s: &Matrix, labels: &[usize], weights: &PairWeights, hyper: &LossHyper) -> Result<LossOutput> {
    check_inputs(s, labels)?;
    let shape = (s.rows(), s.cols());
    if (weights.omega_pos.rows(), weights.omega_pos.cols()) != shape
        || (weights.omega_neg.rows(), weights.omega_neg.cols()) != shape
    {
        return Err(Error::ShapeMismatch("pair weights do not match the similarity matrix".into()));
    }
    weights.validate(labels)?;
    let present = present_classes(labels, s.cols());
    let pos_norm: f64 = weights.class_means_pos(labels).iter().zip(&present).filter(|(_, &p)| p).map(|(w, _)| w).sum();
    let neg_norm: f64 = weights.class_means_neg(labels).iter().sum();
    Ok(weighted_anchor(s, labels, Some(weights), pos_norm, neg_norm, hyper))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSide {
    Positive,
    Negative,
}

/// Evaluates both sides of the variational identity behind the proxy-anchor
/// terms: the log-sum-exp term equals the maximum over distributions `P` of
/// `α Σ P(i) x_i + H(P)`, attained by the softmax distribution with an extra
/// slot of mass `1 / (1 + Σ exp(α x_j))`. Here `x_i = δ - S_i` for positives
/// and `S_i + δ` for negatives.
///
/// Returns `(lhs, rhs)`.
pub fn verify_proposition1(s_column: &[f64], hyper: &LossHyper, side: PairSide) -> (f64, f64) {
    let LossHyper { alpha, delta } = *hyper;
    let margins: Vec<f64> = s_column
        .iter()
        .map(|&sim| match side {
            PairSide::Positive => delta - sim,
            PairSide::Negative => sim + delta,
        })
        .collect();
    let exponents: Vec<f64> = margins.iter().map(|x| alpha * x).collect();
    let lhs = log1p_sum_exp(&exponents);

    // closed-form maximizer, computed directly from the exponentials
    let shift = exponents.iter().copied().fold(0.0f64, f64::max);
    let slot = (-shift).exp();
    let scaled: Vec<f64> = exponents.iter().map(|t| (t - shift).exp()).collect();
    let denom = slot + scaled.iter().sum::<f64>();
    let probs: Vec<f64> = scaled.iter().map(|e| e / denom).collect();
    let p_slot = slot / denom;

    let plogp = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
    let entropy = -(probs.iter().map(|&p| plogp(p)).sum::<f64>() + plogp(p_slot));
    let expected: f64 = probs.iter().zip(&margins).map(|(p, x)| p * x).sum();
    (lhs, alpha * expected + entropy)
}
