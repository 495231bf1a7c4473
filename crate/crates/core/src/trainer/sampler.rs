//! Class-balanced batch sampling.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Batches of `batch_size / instances_per_class` distinct classes with
/// `instances_per_class` samples each.
///
/// Classes are visited in successive random permutations, so over an epoch
/// every class is drawn the same number of times up to one. Samples within a
/// class are drawn without replacement from a reshuffled pool, recycling the
/// pool when it runs out. An epoch has `ceil(N / batch_size)` batches.
pub fn balanced_sampler(
    labels: &[usize],
    batch_size: usize,
    instances_per_class: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if instances_per_class == 0 || batch_size == 0 || !batch_size.is_multiple_of(instances_per_class) {
        return Err(Error::Config(format!(
            "batch_size ({batch_size}) must be a positive multiple of instances_per_class ({instances_per_class})"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let classes: Vec<usize> = by_class.keys().copied().collect();
    let per_batch = batch_size / instances_per_class;
    if per_batch > classes.len() {
        return Err(Error::Config(format!(
            "batch needs {per_batch} distinct classes but only {} are available",
            classes.len()
        )));
    }

    let mut rng = stream_rng(seed, Stream::Sampler, epoch as u32);
    let mut pools: BTreeMap<usize, Pool> = by_class.into_iter().map(|(c, idx)| (c, Pool::new(idx))).collect();
    let mut order: Vec<usize> = Vec::new();
    let num_batches = labels.len().div_ceil(batch_size);
    let mut batches = Vec::with_capacity(num_batches);

    for _ in 0..num_batches {
        let mut picked: Vec<usize> = Vec::with_capacity(per_batch);
        while picked.len() < per_batch {
            if order.is_empty() {
                order = classes.clone();
                order.shuffle(&mut rng);
                order.reverse();
            }
            // take the next class of the permutation not already in the batch
            let pos = order.iter().rposition(|c| !picked.contains(c));
            match pos {
                Some(p) => picked.push(order.remove(p)),
                None => {
                    // the rest of this permutation is already in the batch;
                    // start the next one early and keep the leftovers in front
                    let mut next = classes.clone();
                    next.shuffle(&mut rng);
                    next.reverse();
                    next.append(&mut order);
                    order = next;
                }
            }
        }
        let mut batch = Vec::with_capacity(batch_size);
        for c in picked {
            let pool = pools.get_mut(&c).expect("class pool");
            for _ in 0..instances_per_class {
                batch.push(pool.draw(&mut rng));
            }
        }
        batches.push(batch);
    }
    Ok(batches)
}

struct Pool {
    items: Vec<usize>,
    cursor: usize,
}

impl Pool {
    fn new(items: Vec<usize>) -> Self {
        Self { cursor: items.len(), items }
    }

    fn draw(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.cursor == self.items.len() {
            self.items.shuffle(rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.items[self.cursor - 1]
    }
}
