//! Training loop.
//!
//! One iteration: embed the batch, compute similarities to the proxies,
//! derive pair weights from the class states of the previous iteration,
//! evaluate the loss, backpropagate into the model and the raw proxies, take
//! an optimizer step, and finally (once the memory is on) enqueue the clean
//! samples and refresh the states of the classes present in the batch.

mod model;
mod optim;
mod sampler;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use model::{EmbeddingModel, Forward};
pub use optim::{optimizer_step, MomentState, OptimizerHyper};
pub use sampler::balanced_sampler;

use crate::config::{ExperimentConfig, LossKind, ModelKind};
use crate::data::{load_embeddings, Dataset, Split};
use crate::error::{Error, Result};
use crate::hardness::{is_outlier, pair_weights_with, refresh_state, ClassState};
use crate::linalg::{dot, l2_normalize, normalize_backward, EmbeddingBatch, Matrix, ProxySet};
use crate::losses::{normalized_softmax, proxy_anchor, proxy_isa, LossOutput};
use crate::memory::MemoryQueue;
use crate::metrics::evaluate;
use crate::rng::{stream_rng, Stream};

/// Recall cutoffs recorded every epoch.
pub const RECALL_KS: [usize; 4] = [1, 2, 4, 8];

/// Proxies drawn i.i.d. standard normal and scaled to unit norm.
pub fn init_proxies(classes: usize, dim: usize, seed: u64) -> Result<ProxySet> {
    let mut rng = stream_rng(seed, Stream::Init, 1);
    init_proxies_with(classes, dim, &mut rng)
}

fn init_proxies_with<R: Rng>(classes: usize, dim: usize, rng: &mut R) -> Result<ProxySet> {
    if classes == 0 || dim == 0 {
        return Err(Error::Config("proxy set needs C >= 1 and d >= 1".into()));
    }
    let mut raw = Matrix::zeros(classes, dim);
    for c in 0..classes {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        raw.row_mut(c).copy_from_slice(&l2_normalize(&v)?);
    }
    ProxySet::new(raw)
}

/// Training inputs with class ids remapped to `0..C`.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub features: Matrix,
    pub labels: Vec<usize>,
    /// Original id of each dense class index.
    pub class_ids: Vec<usize>,
}

impl TrainData {
    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        let (features, labels) = ds.subset(Split::Train);
        if labels.is_empty() {
            return Err(Error::InsufficientData("training split is empty".into()));
        }
        let class_ids = ds.classes(Split::Train);
        let dense: BTreeMap<usize, usize> = class_ids.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let labels = labels.iter().map(|y| dense[y]).collect();
        Ok(Self { features, labels, class_ids })
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }
}

/// Everything that changes during training; serialized into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: EmbeddingModel,
    pub proxies: ProxySet,
    pub states: Vec<ClassState>,
    pub queue: MemoryQueue,
    pub model_moments: MomentState,
    pub proxy_moments: MomentState,
    /// Number of completed epochs.
    pub epoch: usize,
    /// Number of completed iterations.
    pub step: u64,
}

impl TrainState {
    pub fn init(config: &ExperimentConfig, data: &TrainData) -> Result<Self> {
        let mut rng = stream_rng(config.seed, Stream::Init, 0);
        let model = match config.model {
            ModelKind::Linear => EmbeddingModel::linear(data.features.cols(), config.embedding_dim, &mut rng),
            ModelKind::Free => {
                if config.embedding_dim != data.features.cols() {
                    return Err(Error::Config(format!(
                        "free embeddings need embedding_dim == input dim ({})",
                        data.features.cols()
                    )));
                }
                EmbeddingModel::free(&data.features)?
            }
        };
        let proxies = init_proxies(data.num_classes(), config.embedding_dim, config.seed)?;
        let hyper = config.hardness_hyper();
        let states = data.class_ids.iter().map(|&c| ClassState::new(c, &hyper)).collect();
        Ok(Self {
            model_moments: MomentState::new(model.params().len()),
            proxy_moments: MomentState::new(proxies.raw().as_slice().len()),
            model,
            proxies,
            states,
            queue: MemoryQueue::new(config.memory_size),
            epoch: 0,
            step: 0,
        })
    }
}

/// Result of one training iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub loss: f64,
    /// Batch positions flagged as outliers (never enqueued).
    pub filtered: Vec<bool>,
    /// Samples appended to the memory queue, per dense class.
    pub enqueued: BTreeMap<usize, u64>,
}

fn optimizer_hyper(config: &ExperimentConfig) -> OptimizerHyper {
    OptimizerHyper { kind: config.optimizer, beta1: config.beta1, beta2: config.beta2, eps: config.eps }
}

/// Loss and `∂L/∂S` for the configured objective, plus the outlier mask.
fn loss_for(
    config: &ExperimentConfig,
    state: &TrainState,
    s: &Matrix,
    labels: &[usize],
    epoch: usize,
) -> Result<(LossOutput, Vec<bool>)> {
    let hyper = config.loss_hyper();
    let mut filtered = vec![false; labels.len()];
    let out = match config.loss {
        LossKind::ProxyAnchor => proxy_anchor(s, labels, &hyper)?,
        LossKind::NormalizedSoftmax => normalized_softmax(s, labels, config.temperature)?,
        LossKind::ProxyIsa => {
            let mut weights = pair_weights_with(s, labels, &state.states, config.weighting())?;
            if config.filter_active(epoch, state.step) {
                for (i, &y) in labels.iter().enumerate() {
                    let class_state = &state.states[y];
                    if class_state.is_active() {
                        filtered[i] = is_outlier(s.get(i, y), class_state)?;
                    }
                }
            } else {
                weights.omega_pos = Matrix::filled(s.rows(), s.cols(), 1.0);
            }
            proxy_isa(s, labels, &weights, &hyper)?
        }
    };
    Ok((out, filtered))
}

/// Runs one iteration on the training samples `batch` (indices into `data`).
pub fn train_iteration(
    state: &mut TrainState,
    data: &TrainData,
    batch: &[usize],
    config: &ExperimentConfig,
    epoch: usize,
) -> Result<IterationOutcome> {
    let diverged = |detail: String| Error::NumericalDivergence { epoch, step: state.step, detail };
    let features = data.features.select_rows(batch);
    let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
    let classes = data.num_classes();

    let fwd = state.model.forward(&features, batch)?;
    let emb = EmbeddingBatch::new(fwd.unit.clone(), labels.clone(), classes)?;
    let units = state.proxies.unit_matrix()?;
    let s = crate::linalg::similarity_matrix(&emb, &state.proxies)?;

    let (out, filtered) = loss_for(config, state, &s, &labels, epoch)?;
    if !out.value.is_finite() {
        return Err(diverged(format!("loss is {}", out.value)));
    }

    let (grad_emb, grad_proxy_unit) = crate::linalg::similarity_backward(&fwd.unit, &units, &out.grad_s)?;
    let model_grad = state.model.backward(&features, batch, &fwd, &grad_emb)?;
    let mut proxy_grad = Vec::with_capacity(classes * units.cols());
    for c in 0..classes {
        proxy_grad.extend(normalize_backward(state.proxies.raw().row(c), grad_proxy_unit.row(c))?);
    }
    if model_grad.iter().chain(&proxy_grad).any(|g| !g.is_finite()) {
        return Err(diverged("non-finite gradient".into()));
    }

    let opt = optimizer_hyper(config);
    if epoch > config.warmup_epochs {
        optimizer_step(state.model.params_mut(), &model_grad, &mut state.model_moments, &opt, config.lr_model)?;
    }
    optimizer_step(
        state.proxies.raw_mut().as_mut_slice(),
        &proxy_grad,
        &mut state.proxy_moments,
        &opt,
        config.lr_proxy,
    )?;
    if state.model.params().iter().chain(state.proxies.raw().as_slice()).any(|p| !p.is_finite()) {
        return Err(diverged("non-finite parameters after update".into()));
    }
    for c in 0..classes {
        if !(crate::linalg::norm(state.proxies.raw().row(c)) >= crate::linalg::MIN_NORM) {
            return Err(diverged(format!("proxy {c} collapsed to zero")));
        }
    }

    let mut enqueued = BTreeMap::new();
    if config.loss == LossKind::ProxyIsa && config.memory_active(epoch, state.step) {
        enqueued = state.queue.enqueue_clean(&emb, &filtered)?;
        let hyper = config.hardness_hyper();
        let mut present: Vec<usize> = labels.clone();
        present.sort_unstable();
        present.dedup();
        for c in present {
            let n_new = state.states[c].n + enqueued.get(&c).copied().unwrap_or(0);
            let s_avg = state.queue.class_mean_similarity(&state.proxies, c)?;
            state.states[c] = refresh_state(&state.states[c], n_new, s_avg, &hyper)?;
        }
    }
    state.step += 1;
    Ok(IterationOutcome { loss: out.value, filtered, enqueued })
}

/// Metrics of one epoch; epoch 0 is the untrained evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: Option<f64>,
    pub recall_at_1: f64,
    pub recall_at_2: f64,
    pub recall_at_4: f64,
    pub recall_at_8: f64,
    pub map_at_r: f64,
    /// Samples flagged as outliers during the epoch.
    pub filtered: usize,
    pub queue_len: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub steps: u64,
    /// Per-epoch wall-clock seconds, only when `record_timings` is set.
    pub epoch_secs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub epochs: Vec<EpochRecord>,
    pub final_states: Vec<ClassState>,
    pub seed: u64,
    pub timings: Timings,
}

impl RunReport {
    pub fn last(&self) -> &EpochRecord {
        self.epochs.last().expect("report always holds the initial evaluation")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Loads or generates the dataset described by `config`.
pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match (&config.data_file, &config.eval_file) {
        (None, _) => crate::data::generate_synthetic(&config.synthetic_spec()),
        (Some(train), None) => load_embeddings(train)?.split_by_class(config.train_classes),
        (Some(train), Some(eval)) => {
            let train = load_embeddings(train)?;
            let eval = load_embeddings(eval)?;
            let n = train.len() + eval.len();
            let mut data = train.features.as_slice().to_vec();
            data.extend_from_slice(eval.features.as_slice());
            if train.dim() != eval.dim() {
                return Err(Error::DimensionMismatch { expected: train.dim(), found: eval.dim() });
            }
            let features = Matrix::from_vec(n, train.dim(), data)?;
            let labels = train.labels.iter().chain(&eval.labels).copied().collect();
            let splits = std::iter::repeat_n(Split::Train, train.len())
                .chain(std::iter::repeat_n(Split::Eval, eval.len()))
                .collect();
            Dataset::new(features, labels, splits)
        }
    }
}

/// A training run: config, data and mutable state.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub data: TrainData,
    pub state: TrainState,
    pub records: Vec<EpochRecord>,
    epoch_secs: Vec<f64>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        let data = TrainData::from_dataset(&dataset)?;
        let state = TrainState::init(&config, &data)?;
        Ok(Self { config, dataset, data, state, records: Vec::new(), epoch_secs: Vec::new() })
    }

    /// Restores a run from a checkpoint taken with the same dataset.
    pub fn resume(checkpoint: Checkpoint, dataset: Dataset) -> Result<Self> {
        checkpoint.check_version()?;
        let data = TrainData::from_dataset(&dataset)?;
        if data.num_classes() != checkpoint.state.proxies.num_classes() {
            return Err(Error::Config("checkpoint does not match the dataset's training classes".into()));
        }
        Ok(Self {
            config: checkpoint.config,
            dataset,
            data,
            state: checkpoint.state,
            records: checkpoint.records,
            epoch_secs: Vec::new(),
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            state: self.state.clone(),
            records: self.records.clone(),
        }
    }

    pub fn batches_for_epoch(&self, epoch: usize) -> Result<Vec<Vec<usize>>> {
        balanced_sampler(
            &self.data.labels,
            self.config.batch_size,
            self.config.instances_per_class,
            self.config.seed,
            epoch,
        )
    }

    /// Embeddings and labels of the evaluation set under the current model.
    ///
    /// The free table only has training rows, so it is evaluated on the
    /// training split.
    pub fn eval_embeddings(&self) -> Result<(Matrix, Vec<usize>)> {
        match &self.state.model {
            EmbeddingModel::Linear { .. } => {
                let (features, labels) = self.dataset.subset(Split::Eval);
                let fwd = self.state.model.forward(&features, &[])?;
                Ok((fwd.unit, labels))
            }
            EmbeddingModel::Free { .. } => {
                let rows: Vec<usize> = (0..self.data.labels.len()).collect();
                let fwd = self.state.model.forward(&self.data.features, &rows)?;
                Ok((fwd.unit, self.data.labels.iter().map(|&y| self.data.class_ids[y]).collect()))
            }
        }
    }

    fn evaluate(&self, epoch: usize, mean_loss: Option<f64>, filtered: usize) -> Result<EpochRecord> {
        let (emb, labels) = self.eval_embeddings()?;
        let m = evaluate(&emb, &labels, &RECALL_KS, true)?;
        let r = |k| m.recall_at(k).unwrap_or(0.0);
        Ok(EpochRecord {
            epoch,
            mean_loss,
            recall_at_1: r(1),
            recall_at_2: r(2),
            recall_at_4: r(4),
            recall_at_8: r(8),
            map_at_r: m.map_at_r.unwrap_or(0.0),
            filtered,
            queue_len: self.state.queue.len(),
        })
    }

    /// Trains one epoch (1-based) and records its evaluation.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.state.epoch + 1;
        let started = Instant::now();
        let mut total = 0.0;
        let mut filtered = 0;
        let batches = self.batches_for_epoch(epoch)?;
        for batch in &batches {
            let out = train_iteration(&mut self.state, &self.data, batch, &self.config, epoch)?;
            total += out.loss;
            filtered += out.filtered.iter().filter(|&&f| f).count();
        }
        self.state.epoch = epoch;
        let record = self.evaluate(epoch, Some(total / batches.len() as f64), filtered)?;
        self.epoch_secs.push(started.elapsed().as_secs_f64());
        self.records.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining epochs and builds the report.
    pub fn run(&mut self) -> Result<RunReport> {
        if self.records.is_empty() {
            let initial = self.evaluate(0, None, 0)?;
            self.records.push(initial);
        }
        while self.state.epoch < self.config.epochs {
            self.run_epoch()?;
        }
        Ok(self.report())
    }

    pub fn report(&self) -> RunReport {
        RunReport {
            config: self.config.clone(),
            epochs: self.records.clone(),
            final_states: self.state.states.clone(),
            seed: self.config.seed,
            timings: Timings {
                steps: self.state.step,
                epoch_secs: self.config.record_timings.then(|| self.epoch_secs.clone()),
            },
        }
    }
}

/// Trains for the configured number of epochs.
pub fn run_experiment(config: &ExperimentConfig, dataset: &Dataset) -> Result<RunReport> {
    Experiment::new(config.clone(), dataset.clone())?.run()
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Full training state. The sampler and initializer streams are derived
/// from `config.seed` and the epoch counter, so no generator state needs to
/// be stored for an exact resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ExperimentConfig,
    pub state: TrainState,
    pub records: Vec<EpochRecord>,
}

impl Checkpoint {
    fn check_version(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", self.version)));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        ckpt.check_version()?;
        Ok(ckpt)
    }
}

/// Unit proxies with their original class ids, for dumps.
pub fn labeled_unit_proxies(state: &TrainState, data: &TrainData) -> Result<Vec<(usize, Vec<f64>)>> {
    (0..data.num_classes()).map(|c| Ok((data.class_ids[c], state.proxies.unit(c)?))).collect()
}

/// Mean absolute cosine between matching rows of two proxy sets.
pub fn mean_abs_row_dot(a: &ProxySet, b: &ProxySet) -> Result<f64> {
    let (ua, ub) = (a.unit_matrix()?, b.unit_matrix()?);
    let n = ua.rows().min(ub.rows());
    Ok((0..n).map(|c| dot(ua.row(c), ub.row(c)).abs()).sum::<f64>() / n as f64)
}
