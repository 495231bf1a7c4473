//! Datasets: synthetic class clusters on the sphere and the text embedding
//! file format.
//!
//! File format: UTF-8, first non-comment line `dim=<d>`, then one sample per
//! line as `<label>,<v1>,...,<vd>`. Lines starting with `#` are comments.
//! Proxy rows use the label `proxy:<class>`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, l2_normalize, Matrix};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub splits: Vec<Split>,
    /// Ground-truth outlier flags for synthetic data; all false otherwise.
    pub outliers: Vec<bool>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, splits: Vec<Split>) -> Result<Self> {
        let n = features.rows();
        if labels.len() != n || splits.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: labels.len().min(splits.len()) });
        }
        let ds = Self { features, labels, splits, outliers: vec![false; n] };
        ds.check_disjoint()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    /// Sorted distinct class ids of a split.
    pub fn classes(&self, split: Split) -> Vec<usize> {
        let mut classes: Vec<usize> = self.indices(split).iter().map(|&i| self.labels[i]).collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    /// Features and labels of one split, in dataset order.
    pub fn subset(&self, split: Split) -> (Matrix, Vec<usize>) {
        let idx = self.indices(split);
        (self.features.select_rows(&idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    /// Re-tags samples so the `train_classes` smallest class ids form the
    /// training split and the rest the evaluation split.
    pub fn split_by_class(mut self, train_classes: usize) -> Result<Self> {
        let mut classes = self.labels.clone();
        classes.sort_unstable();
        classes.dedup();
        if train_classes == 0 || train_classes >= classes.len() {
            return Err(Error::Config(format!("train_classes must be in 1..{}, got {train_classes}", classes.len())));
        }
        let cutoff = classes[train_classes - 1];
        self.splits = self.labels.iter().map(|&y| if y <= cutoff { Split::Train } else { Split::Eval }).collect();
        Ok(self)
    }

    fn check_disjoint(&self) -> Result<()> {
        let train = self.classes(Split::Train);
        let eval = self.classes(Split::Eval);
        if let Some(c) = train.iter().find(|c| eval.binary_search(c).is_ok()) {
            return Err(Error::Config(format!("class {c} appears in both train and eval splits")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    /// Classes `0..train_classes` are used for training, the rest for evaluation.
    pub train_classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Angular spread (radians) of each class, one entry per class.
    pub spreads: Vec<f64>,
    pub outlier_fraction: f64,
    pub outlier_multiplier: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Spreads drawn uniformly from `[min, max]` with the data stream of `seed`.
    #[allow(clippy::too_many_arguments)]
    pub fn with_spread_range(
        num_classes: usize,
        train_classes: usize,
        dim: usize,
        samples_per_class: usize,
        spread: (f64, f64),
        outlier_fraction: f64,
        outlier_multiplier: f64,
        seed: u64,
    ) -> Self {
        let mut rng = stream_rng(seed, Stream::Data, 1);
        let spreads = (0..num_classes)
            .map(|_| if spread.1 > spread.0 { rng.random_range(spread.0..=spread.1) } else { spread.0 })
            .collect();
        Self { num_classes, train_classes, dim, samples_per_class, spreads, outlier_fraction, outlier_multiplier, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.dim < 1 || self.samples_per_class < 1 {
            return Err(Error::Config("synthetic data needs >= 2 classes, dim >= 1, samples >= 1".into()));
        }
        if self.train_classes == 0 || self.train_classes >= self.num_classes {
            return Err(Error::Config(format!("train_classes must be in 1..{}", self.num_classes)));
        }
        if self.spreads.len() != self.num_classes {
            return Err(Error::Config(format!("expected {} spreads, got {}", self.num_classes, self.spreads.len())));
        }
        if self.spreads.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Config("every spread must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::Config("outlier_fraction must lie in [0, 1)".into()));
        }
        if !(self.outlier_multiplier > 0.0) {
            return Err(Error::Config("outlier_multiplier must be > 0".into()));
        }
        Ok(())
    }

    pub fn outliers_per_class(&self) -> usize {
        (self.outlier_fraction * self.samples_per_class as f64).round() as usize
    }
}

const MAX_MEAN_ATTEMPTS: usize = 1000;

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = l2_normalize(&v) {
            return u;
        }
    }
}

/// Gaussian clusters around random unit means, one per class.
///
/// Inliers are `normalize(mean + spread/√d · g)`; outliers use the spread
/// times `outlier_multiplier`. Means are rejection-sampled so that every pair
/// is at least the largest spread apart in angle.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.dim;
    let max_spread = spec.spreads.iter().copied().fold(0.0, f64::max);
    let mut mean_rng = stream_rng(spec.seed, Stream::Data, 2);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    for _ in 0..spec.num_classes {
        let accepted = (0..MAX_MEAN_ATTEMPTS).find_map(|_| {
            let cand = random_unit(&mut mean_rng, d);
            means.iter().all(|m| dot(m, &cand).clamp(-1.0, 1.0).acos() >= max_spread).then_some(cand)
        });
        match accepted {
            Some(m) => means.push(m),
            None => return Err(Error::InfeasibleSeparation { classes: spec.num_classes, dim: d }),
        }
    }

    let n_out = spec.outliers_per_class();
    let mut noise_rng = stream_rng(spec.seed, Stream::Data, 3);
    let total = spec.num_classes * spec.samples_per_class;
    let mut data = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    let mut splits = Vec::with_capacity(total);
    let mut outliers = Vec::with_capacity(total);
    let scale = 1.0 / (d as f64).sqrt();
    for (c, mean) in means.iter().enumerate() {
        for s in 0..spec.samples_per_class {
            let is_outlier = s < n_out;
            let spread = spec.spreads[c] * if is_outlier { spec.outlier_multiplier } else { 1.0 };
            let raw: Vec<f64> = mean
                .iter()
                .map(|m| {
                    let g: f64 = noise_rng.sample(StandardNormal);
                    m + spread * scale * g
                })
                .collect();
            let x = l2_normalize(&raw).unwrap_or_else(|_| mean.clone());
            data.extend_from_slice(&x);
            labels.push(c);
            splits.push(if c < spec.train_classes { Split::Train } else { Split::Eval });
            outliers.push(is_outlier);
        }
    }
    let mut ds = Dataset::new(Matrix::from_vec(total, d, data)?, labels, splits)?;
    ds.outliers = outliers;
    Ok(ds)
}

/// Parsed embedding file: sample rows plus any `proxy:<class>` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub dataset: Dataset,
    pub proxies: Vec<(usize, Vec<f64>)>,
}

/// Parses the text embedding format. All samples are tagged [`Split::Eval`].
pub fn parse_embeddings(text: &str) -> Result<EmbeddingFile> {
    let mut dim: Option<usize> = None;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut proxies = Vec::new();
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |message: String| Error::Parse { line: lineno, message };
        let Some(d) = dim else {
            let value =
                line.strip_prefix("dim=").ok_or_else(|| perr(format!("expected `dim=<d>` header, found `{line}`")))?;
            let d: usize = value.trim().parse().map_err(|_| perr(format!("invalid dimension `{value}`")))?;
            if d == 0 {
                return Err(perr("dimension must be >= 1".into()));
            }
            dim = Some(d);
            continue;
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 1 {
            return Err(perr(format!("expected {} columns, found {}", d + 1, fields.len())));
        }
        let values = fields[1..]
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(perr(format!("invalid value `{f}`"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(class) = fields[0].strip_prefix("proxy:") {
            let class = class.parse().map_err(|_| perr(format!("invalid proxy label `{}`", fields[0])))?;
            proxies.push((class, values));
        } else {
            let label = fields[0].parse().map_err(|_| perr(format!("invalid label `{}`", fields[0])))?;
            labels.push(label);
            data.extend(values);
        }
    }
    let d = dim.ok_or(Error::Parse { line: 1, message: "missing `dim=<d>` header".into() })?;
    let n = labels.len();
    let dataset = Dataset::new(Matrix::from_vec(n, d, data)?, labels, vec![Split::Eval; n])?;
    Ok(EmbeddingFile { dataset, proxies })
}

pub fn load_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingFile> {
    parse_embeddings(&fs::read_to_string(path)?)
}

/// Loads sample rows only; proxy rows are skipped.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Dataset> {
    Ok(load_embedding_file(path)?.dataset)
}

pub fn format_embeddings(features: &Matrix, labels: &[usize], proxies: &[(usize, Vec<f64>)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "dim={}", features.cols());
    let mut row = |label: &dyn std::fmt::Display, values: &[f64]| {
        let _ = write!(out, "{label}");
        for v in values {
            // shortest representation that parses back to the same value
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    };
    for (i, y) in labels.iter().enumerate() {
        row(y, features.row(i));
    }
    for (c, p) in proxies {
        row(&format!("proxy:{c}"), p);
    }
    out
}

pub fn write_embeddings(
    path: impl AsRef<Path>,
    features: &Matrix,
    labels: &[usize],
    proxies: &[(usize, Vec<f64>)],
) -> Result<()> {
    fs::write(path, format_embeddings(features, labels, proxies))?;
    Ok(())
}
