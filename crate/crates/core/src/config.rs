//! Experiment configuration: a flat JSON object. Unknown keys are rejected.
//!
//! `loss`, `epochs` and `seed` are required; every other key has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::hardness::{HardnessHyper, NegativePenalty, PositivePenalty, WeightingScheme};
use crate::losses::LossHyper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ProxyIsa,
    ProxyAnchor,
    NormalizedSoftmax,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::ProxyIsa => "proxy_isa",
            LossKind::ProxyAnchor => "proxy_anchor",
            LossKind::NormalizedSoftmax => "normalized_softmax",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Linear projection of the input features.
    #[default]
    Linear,
    /// One free embedding per training sample.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub loss: LossKind,
    pub epochs: usize,
    pub seed: u64,

    #[serde(default = "d::alpha")]
    pub alpha: f64,
    #[serde(default = "d::delta")]
    pub delta: f64,
    /// Temperature of the normalized softmax baseline.
    #[serde(default = "d::temperature")]
    pub temperature: f64,

    #[serde(default = "d::volume_bound")]
    pub volume_bound: f64,
    #[serde(default = "d::h")]
    pub h: f64,
    #[serde(default = "d::k")]
    pub k: f64,
    #[serde(default = "d::lambda")]
    pub lambda: f64,
    #[serde(default = "d::tau")]
    pub tau: f64,
    #[serde(default)]
    pub positive_penalty: PositivePenalty,
    #[serde(default)]
    pub negative_penalty: NegativePenalty,

    /// Capacity `T` of the memory queue.
    #[serde(default = "d::memory_size")]
    pub memory_size: usize,
    /// First epoch (1-based) with the memory queue on.
    #[serde(default = "d::memory_on_epoch")]
    pub memory_on_epoch: usize,
    /// First epoch (1-based) with the outlier filter on.
    #[serde(default = "d::filter_on_epoch")]
    pub filter_on_epoch: usize,
    /// Global-step alternative to `memory_on_epoch`; overrides it when set.
    #[serde(default)]
    pub memory_on_step: Option<u64>,
    /// Global-step alternative to `filter_on_epoch`; overrides it when set.
    #[serde(default)]
    pub filter_on_step: Option<u64>,

    #[serde(default = "d::batch_size")]
    pub batch_size: usize,
    #[serde(default = "d::instances_per_class")]
    pub instances_per_class: usize,

    #[serde(default)]
    pub model: ModelKind,
    #[serde(default = "d::embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default = "d::lr")]
    pub lr_model: f64,
    #[serde(default = "d::lr")]
    pub lr_proxy: f64,
    #[serde(default = "d::beta1")]
    pub beta1: f64,
    #[serde(default = "d::beta2")]
    pub beta2: f64,
    #[serde(default = "d::eps")]
    pub eps: f64,
    /// Epochs at the start during which the model is frozen and only the
    /// proxies train.
    #[serde(default)]
    pub warmup_epochs: usize,

    /// Embedding file to train on; synthetic data is generated when absent.
    #[serde(default)]
    pub data_file: Option<String>,
    /// Separate evaluation file; otherwise classes of `data_file` are split.
    #[serde(default)]
    pub eval_file: Option<String>,
    /// Number of classes (smallest ids first) used for training.
    #[serde(default = "d::train_classes")]
    pub train_classes: usize,

    #[serde(default = "d::syn_classes")]
    pub syn_classes: usize,
    #[serde(default = "d::syn_dim")]
    pub syn_dim: usize,
    #[serde(default = "d::syn_samples_per_class")]
    pub syn_samples_per_class: usize,
    #[serde(default = "d::syn_spread_min")]
    pub syn_spread_min: f64,
    #[serde(default = "d::syn_spread_max")]
    pub syn_spread_max: f64,
    #[serde(default = "d::syn_outlier_fraction")]
    pub syn_outlier_fraction: f64,
    #[serde(default = "d::syn_outlier_multiplier")]
    pub syn_outlier_multiplier: f64,

    /// Record wall-clock timings in the report (makes reports non-reproducible).
    #[serde(default)]
    pub record_timings: bool,
}

mod d {
    pub fn alpha() -> f64 {
        32.0
    }
    pub fn delta() -> f64 {
        0.1
    }
    pub fn temperature() -> f64 {
        0.1
    }
    pub fn volume_bound() -> f64 {
        100.0
    }
    pub fn h() -> f64 {
        0.15
    }
    pub fn k() -> f64 {
        0.9
    }
    pub fn lambda() -> f64 {
        0.1
    }
    pub fn tau() -> f64 {
        1.5
    }
    pub fn memory_size() -> usize {
        1000
    }
    pub fn memory_on_epoch() -> usize {
        2
    }
    pub fn filter_on_epoch() -> usize {
        3
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn instances_per_class() -> usize {
        8
    }
    pub fn embedding_dim() -> usize {
        64
    }
    pub fn lr() -> f64 {
        1e-4
    }
    pub fn beta1() -> f64 {
        0.9
    }
    pub fn beta2() -> f64 {
        0.999
    }
    pub fn eps() -> f64 {
        1e-8
    }
    pub fn train_classes() -> usize {
        20
    }
    pub fn syn_classes() -> usize {
        40
    }
    pub fn syn_dim() -> usize {
        32
    }
    pub fn syn_samples_per_class() -> usize {
        50
    }
    pub fn syn_spread_min() -> f64 {
        0.3
    }
    pub fn syn_spread_max() -> f64 {
        0.9
    }
    pub fn syn_outlier_fraction() -> f64 {
        0.1
    }
    pub fn syn_outlier_multiplier() -> f64 {
        4.0
    }
}

impl ExperimentConfig {
    /// A config with every optional key at its default.
    pub fn new(loss: LossKind, epochs: usize, seed: u64) -> Self {
        let json = serde_json::json!({ "loss": loss, "epochs": epochs, "seed": seed });
        serde_json::from_value(json).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn loss_hyper(&self) -> LossHyper {
        LossHyper { alpha: self.alpha, delta: self.delta }
    }

    pub fn hardness_hyper(&self) -> HardnessHyper {
        HardnessHyper { volume_bound: self.volume_bound, h: self.h, k: self.k, lambda: self.lambda, tau: self.tau }
    }

    pub fn weighting(&self) -> WeightingScheme {
        WeightingScheme { positive: self.positive_penalty, negative: self.negative_penalty }
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec::with_spread_range(
            self.syn_classes,
            self.train_classes,
            self.syn_dim,
            self.syn_samples_per_class,
            (self.syn_spread_min, self.syn_spread_max),
            self.syn_outlier_fraction,
            self.syn_outlier_multiplier,
            self.seed,
        )
    }

    pub fn memory_active(&self, epoch: usize, step: u64) -> bool {
        match self.memory_on_step {
            Some(s) => step >= s,
            None => epoch >= self.memory_on_epoch,
        }
    }

    pub fn filter_active(&self, epoch: usize, step: u64) -> bool {
        match self.filter_on_step {
            Some(s) => step >= s,
            None => epoch >= self.filter_on_epoch,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_hyper().validate()?;
        self.hardness_hyper().validate()?;
        let fail = |msg: String| Err(Error::Config(msg));
        if self.memory_on_epoch < 1 || self.filter_on_epoch < 1 {
            return fail("schedule epochs must be >= 1".into());
        }
        if self.filter_on_epoch < self.memory_on_epoch {
            return fail("filter_on_epoch must be >= memory_on_epoch".into());
        }
        if let (Some(m), Some(f)) = (self.memory_on_step, self.filter_on_step) {
            if f < m {
                return fail("filter_on_step must be >= memory_on_step".into());
            }
        }
        if self.memory_size == 0 {
            return fail("memory_size must be >= 1".into());
        }
        if self.batch_size == 0
            || self.instances_per_class == 0
            || !self.batch_size.is_multiple_of(self.instances_per_class)
        {
            return fail(format!(
                "batch_size ({}) must be a positive multiple of instances_per_class ({})",
                self.batch_size, self.instances_per_class
            ));
        }
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be >= 1".into());
        }
        if !(self.temperature > 0.0) {
            return fail("temperature must be > 0".into());
        }
        for (name, lr) in [("lr_model", self.lr_model), ("lr_proxy", self.lr_proxy)] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return fail(format!("{name} must be a finite value >= 0"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return fail("beta1, beta2 must lie in [0, 1) and eps must be > 0".into());
        }
        if self.eval_file.is_some() && self.data_file.is_none() {
            return fail("eval_file requires data_file".into());
        }
        if self.data_file.is_none() {
            if !(self.syn_spread_min > 0.0) || self.syn_spread_max < self.syn_spread_min {
                return fail("syn_spread_min must be > 0 and <= syn_spread_max".into());
            }
            self.synthetic_spec().validate()?;
        }
        Ok(())
    }
}

/// Config of `compare`: a base experiment, the loss selectors to compare and
/// the seeds to run each of them with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub base: ExperimentConfig,
    pub losses: Vec<LossKind>,
    pub seeds: Vec<u64>,
}

impl CompareConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if config.losses.len() < 2 {
            return Err(Error::Config("compare needs at least 2 losses".into()));
        }
        if config.seeds.is_empty() {
            return Err(Error::Config("compare needs at least 1 seed".into()));
        }
        config.base.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
