//! Per-class learning state: effective number, learned-subspace threshold,
//! informative band width and the dynamic pair weights derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::PairWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardnessHyper {
    /// Upper bound `V` of the effective number.
    pub volume_bound: f64,
    /// Scale applied to the mean clean similarity.
    pub h: f64,
    /// Sensitivity of the band width to class hardness.
    pub k: f64,
    /// Additive margin of the band width.
    pub lambda: f64,
    /// Timing of the positive-weight decay.
    pub tau: f64,
}

impl Default for HardnessHyper {
    fn default() -> Self {
        Self { volume_bound: 100.0, h: 0.15, k: 0.9, lambda: 0.1, tau: 1.5 }
    }
}

impl HardnessHyper {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.volume_bound > 1.0, "volume_bound must be > 1"),
            (self.h > 0.0, "h must be > 0"),
            (self.k > 0.0, "k must be > 0"),
            ((0.0..=1.0).contains(&self.lambda), "lambda must lie in [0, 1]"),
            (self.tau > 0.0, "tau must be > 0"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }

    /// `β = (V - 1) / V`.
    pub fn beta(&self) -> f64 {
        (self.volume_bound - 1.0) / self.volume_bound
    }
}

/// `(1 - βⁿ) / (1 - β)`, which saturates at `V`.
pub fn effective_number(n: u64, hyper: &HardnessHyper) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let beta = hyper.beta();
    // -expm1(n ln β) keeps precision for small n
    let covered = -((n as f64) * beta.ln()).exp_m1();
    covered / (1.0 - beta)
}

/// Lower bound on positive weights, `1 / (1 + ln(1 + E))`.
pub fn nu(e_n: f64) -> f64 {
    1.0 / (1.0 + e_n.ln_1p())
}

/// Decay of out-of-band positive weights: 1 early on, sliding to `ν(V)` as
/// the effective number reaches `V`.
///
/// Evaluated as `1 - r (1 - ν)` with `r = (1 + e^{-τ}) / (1 + e^{V - E - τ})`,
/// which is the same expression rearranged so that it stays monotone in
/// floating point; `r = 1` at `E = V` returns `ν` exactly.
pub fn sigma(e_n: f64, hyper: &HardnessHyper) -> f64 {
    let nu = nu(e_n);
    let ratio = (1.0 + (-hyper.tau).exp()) / (1.0 + (hyper.volume_bound - e_n - hyper.tau).exp());
    if ratio >= 1.0 {
        return nu;
    }
    (1.0 - ratio * (1.0 - nu)).clamp(nu, 1.0)
}

/// Width of the informative band, `(1 + k (1 - h S_avg)) ν + λ`.
pub fn eta(s_avg: Option<f64>, nu_val: f64, hyper: &HardnessHyper, class: usize) -> Result<f64> {
    let s_avg = s_avg.ok_or(Error::InactiveState { class })?;
    Ok((1.0 + hyper.k * (1.0 - hyper.h * s_avg)) * nu_val + hyper.lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassState {
    pub class_id: usize,
    /// Clean samples of this class enqueued to memory so far.
    pub n: u64,
    pub e_n: f64,
    /// Mean similarity of stored clean members to the proxy; `None` until the
    /// memory holds a sample of the class.
    pub s_avg: Option<f64>,
    pub s_learned: Option<f64>,
    pub eta: Option<f64>,
    pub nu: f64,
    pub sigma: f64,
}

impl ClassState {
    pub fn new(class_id: usize, hyper: &HardnessHyper) -> Self {
        Self { class_id, n: 0, e_n: 0.0, s_avg: None, s_learned: None, eta: None, nu: 1.0, sigma: sigma(0.0, hyper) }
    }

    pub fn is_active(&self) -> bool {
        self.s_learned.is_some() && self.eta.is_some()
    }

    /// `S_learned - η`, below which a positive counts as an outlier.
    pub fn outlier_boundary(&self) -> Option<f64> {
        Some(self.s_learned? - self.eta?)
    }
}

/// Recomputes a class state from its new sample count and mean similarity.
pub fn refresh_state(
    state: &ClassState,
    n_new: u64,
    s_avg_new: Option<f64>,
    hyper: &HardnessHyper,
) -> Result<ClassState> {
    if n_new < state.n {
        return Err(Error::NonMonotoneCount { class: state.class_id, old: state.n, new: n_new });
    }
    let e_n = effective_number(n_new, hyper);
    let nu_val = nu(e_n);
    let (s_learned, eta_val) = match s_avg_new {
        Some(avg) => (Some(hyper.h * avg), Some(eta(Some(avg), nu_val, hyper, state.class_id)?)),
        None => (None, None),
    };
    Ok(ClassState {
        class_id: state.class_id,
        n: n_new,
        e_n,
        s_avg: s_avg_new,
        s_learned,
        eta: eta_val,
        nu: nu_val,
        sigma: sigma(e_n, hyper),
    })
}

/// Strict test `S < S_learned - η`.
pub fn is_outlier(s_ic: f64, state: &ClassState) -> Result<bool> {
    let boundary = state.outlier_boundary().ok_or(Error::InactiveState { class: state.class_id })?;
    Ok(s_ic < boundary)
}

/// Penalty applied to positive pairs outside the informative band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivePenalty {
    /// `ω⁺ = 1` everywhere.
    None,
    /// `1 / max(1, E_n)`, the same penalty as the negatives.
    InverseEffective,
    Nu,
    #[default]
    Sigma,
}

/// Penalty applied to negative pairs below the outlier boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativePenalty {
    None,
    #[default]
    InverseEffective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WeightingScheme {
    pub positive: PositivePenalty,
    pub negative: NegativePenalty,
}

fn inverse_effective(state: &ClassState) -> f64 {
    1.0 / state.e_n.max(1.0)
}

/// Dynamic pair weights with the default scheme (σ on positives, `1/E_n` on
/// negatives).
pub fn pair_weights(s: &Matrix, labels: &[usize], states: &[ClassState]) -> Result<PairWeights> {
    pair_weights_with(s, labels, states, WeightingScheme::default())
}

/// Dynamic pair weights.
///
/// Positives inside `[S_learned - η, S_learned]` (inclusive) get `1 + p`,
/// others `p`, where `p` is the positive penalty. Negatives strictly below
/// `S_learned - η` get the negative penalty, others 1. Inactive classes get 1.
pub fn pair_weights_with(
    s: &Matrix,
    labels: &[usize],
    states: &[ClassState],
    scheme: WeightingScheme,
) -> Result<PairWeights> {
    let (m, classes) = (s.rows(), s.cols());
    if labels.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: labels.len() });
    }
    if states.len() != classes {
        return Err(Error::DimensionMismatch { expected: classes, found: states.len() });
    }
    let mut weights = PairWeights::ones(m, classes);
    for (c, state) in states.iter().enumerate() {
        let (Some(upper), Some(lower)) = (state.s_learned, state.outlier_boundary()) else {
            continue;
        };
        let penalty = match scheme.positive {
            PositivePenalty::None => None,
            PositivePenalty::InverseEffective => Some(inverse_effective(state)),
            PositivePenalty::Nu => Some(state.nu),
            PositivePenalty::Sigma => Some(state.sigma),
        };
        for (i, &y) in labels.iter().enumerate() {
            let sim = s.get(i, c);
            if y == c {
                if let Some(p) = penalty {
                    let in_band = lower <= sim && sim <= upper;
                    weights.omega_pos.set(i, c, if in_band { 1.0 + p } else { p });
                }
            } else if scheme.negative == NegativePenalty::InverseEffective && sim < lower {
                weights.omega_neg.set(i, c, inverse_effective(state));
            }
        }
    }
    Ok(weights)
}
