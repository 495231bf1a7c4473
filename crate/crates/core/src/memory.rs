//! Bounded FIFO of clean embeddings used to estimate per-class statistics.
//!
//! The queue never contributes loss terms. Similarities to proxies are
//! recomputed at read time, so the estimates track the current proxies.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, EmbeddingBatch, ProxySet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub embedding: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryQueue {
    capacity: usize,
    entries: VecDeque<MemoryEntry>,
    per_class: BTreeMap<usize, usize>,
}

impl MemoryQueue {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: VecDeque::with_capacity(capacity), per_class: BTreeMap::new() }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.iter()
    }

    /// Number of stored members of `class` (`T_c`).
    pub fn class_count(&self, class: usize) -> usize {
        self.per_class.get(&class).copied().unwrap_or(0)
    }

    pub fn class_counts(&self) -> &BTreeMap<usize, usize> {
        &self.per_class
    }

    /// Appends every sample whose mask entry is `false`, in batch order, then
    /// evicts the oldest entries down to capacity.
    ///
    /// Returns how many samples of each class were appended.
    pub fn enqueue_clean(&mut self, batch: &EmbeddingBatch, outlier_mask: &[bool]) -> Result<BTreeMap<usize, u64>> {
        if outlier_mask.len() != batch.len() {
            return Err(Error::DimensionMismatch { expected: batch.len(), found: outlier_mask.len() });
        }
        let mut added = BTreeMap::new();
        for (i, (&label, &masked)) in batch.labels().iter().zip(outlier_mask).enumerate() {
            if masked {
                continue;
            }
            self.entries.push_back(MemoryEntry { embedding: batch.embeddings().row(i).to_vec(), label });
            *self.per_class.entry(label).or_insert(0) += 1;
            *added.entry(label).or_insert(0) += 1;
        }
        while self.entries.len() > self.capacity {
            let Some(old) = self.entries.pop_front() else { break };
            if let Some(count) = self.per_class.get_mut(&old.label) {
                *count -= 1;
                if *count == 0 {
                    self.per_class.remove(&old.label);
                }
            }
        }
        Ok(added)
    }

    /// Mean cosine similarity between stored members of `class` and the
    /// class proxy; `None` when the class has no stored members.
    pub fn class_mean_similarity(&self, proxies: &ProxySet, class: usize) -> Result<Option<f64>> {
        let count = self.class_count(class);
        if count == 0 {
            return Ok(None);
        }
        let proxy = proxies.unit(class)?;
        let sum: f64 =
            self.entries.iter().filter(|e| e.label == class).map(|e| dot(&e.embedding, &proxy).clamp(-1.0, 1.0)).sum();
        Ok(Some((sum / count as f64).clamp(-1.0, 1.0)))
    }
}
