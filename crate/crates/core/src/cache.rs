//! Per-class, capacity-bounded, entropy-prioritized key-value cache and the
//! retrieval kernels that turn it into class logits.
//!
//! Keys are unit-norm embeddings, values are one-hot pseudo-labels. Each class
//! holds at most `capacity` entries; once a class is full a newcomer evicts the
//! highest-entropy incumbent only if its own entropy is strictly lower.
//!
//! Retrieval sums `A(key . query)` into the entry's class, visiting entries in
//! ascending `seq` order so the floating-point result does not depend on the
//! order entries were inserted in.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::{Affinity, Embedding};

/// Where a cached sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    /// A previous test sample from the stream; persists across predictions.
    Historical,
    /// A filtered augmented view of the sample being predicted.
    Boosting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub embedding: Embedding,
    pub pseudo_label: usize,
    /// Entropy of the zero-shot prediction for `embedding`, in nats.
    pub entropy: f64,
    pub provenance: Provenance,
    pub seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum InsertOutcome {
    Inserted,
    Replaced { evicted_seq: u64 },
    Rejected,
}

/// Cache entry as written to a report dump.
#[derive(Debug, Clone, Serialize)]
pub struct CacheDumpEntry {
    pub class: usize,
    pub entropy: f64,
    pub provenance: Provenance,
    pub seq: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostCache {
    dim: usize,
    capacity: usize,
    classes: Vec<Vec<CacheEntry>>,
    historical: usize,
    boosting: usize,
    clock: u64,
}

impl BoostCache {
    pub fn new(n_classes: usize, dim: usize, capacity: usize) -> Result<Self> {
        if n_classes == 0 || dim == 0 {
            return Err(Error::config(
                "cache needs at least one class and one dimension",
            ));
        }
        if capacity == 0 {
            return Err(Error::config("shot capacity must be at least 1"));
        }
        Ok(BoostCache {
            dim,
            capacity,
            classes: vec![Vec::new(); n_classes],
            historical: 0,
            boosting: 0,
            clock: 0,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Number of stored historical entries (`k_t`).
    pub fn historical_count(&self) -> usize {
        self.historical
    }

    /// Number of stored boosting entries (`k_b`).
    pub fn boosting_count(&self) -> usize {
        self.boosting
    }

    pub fn len(&self) -> usize {
        self.historical + self.boosting
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the next sequence number and advances the internal clock.
    pub fn next_seq(&mut self) -> u64 {
        let s = self.clock;
        self.clock += 1;
        s
    }

    /// Entries of one class in ascending `seq` order.
    pub fn class_entries(&self, class: usize) -> &[CacheEntry] {
        &self.classes[class]
    }

    /// All entries, class by class, each class in ascending `seq` order.
    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.classes.iter().flatten()
    }

    pub fn insert(&mut self, entry: CacheEntry) -> Result<InsertOutcome> {
        let n = self.n_classes();
        if entry.pseudo_label >= n {
            return Err(Error::Label {
                label: entry.pseudo_label,
                n_classes: n,
            });
        }
        if entry.embedding.dim() != self.dim {
            return Err(Error::Dim {
                expected: self.dim,
                found: entry.embedding.dim(),
            });
        }
        let max_h = (n as f64).ln() + 1e-9;
        if !(entry.entropy >= 0.0 && entry.entropy <= max_h) {
            return Err(Error::InvalidEntry(format!(
                "entropy {} outside [0, ln {n}]",
                entry.entropy
            )));
        }
        self.clock = self.clock.max(entry.seq.saturating_add(1));

        let list = &mut self.classes[entry.pseudo_label];
        if list.len() < self.capacity {
            bump(
                &mut self.historical,
                &mut self.boosting,
                entry.provenance,
                true,
            );
            insert_by_seq(list, entry);
            return Ok(InsertOutcome::Inserted);
        }

        // Highest entropy loses; among equal entropies the most recent one goes.
        let worst = list
            .iter()
            .enumerate()
            .max_by(|(_, a), (_, b)| a.entropy.total_cmp(&b.entropy).then(a.seq.cmp(&b.seq)))
            .map(|(i, _)| i)
            .expect("full class list is non-empty");
        if entry.entropy < list[worst].entropy {
            let evicted = list.remove(worst);
            bump(
                &mut self.historical,
                &mut self.boosting,
                evicted.provenance,
                false,
            );
            bump(
                &mut self.historical,
                &mut self.boosting,
                entry.provenance,
                true,
            );
            insert_by_seq(list, entry);
            Ok(InsertOutcome::Replaced {
                evicted_seq: evicted.seq,
            })
        } else {
            Ok(InsertOutcome::Rejected)
        }
    }

    /// Deep, independent copy.
    pub fn snapshot(&self) -> BoostCache {
        self.clone()
    }

    /// Cache-classifier logits `A(query . G^T) Y` over every stored entry.
    pub fn logits(&self, query: &Embedding, affinity: &Affinity) -> Result<Vec<f64>> {
        if query.dim() != self.dim {
            return Err(Error::Dim {
                expected: self.dim,
                found: query.dim(),
            });
        }
        Ok(self
            .classes
            .iter()
            .map(|list| {
                list.iter()
                    .map(|e| affinity.apply(e.embedding.dot(query)))
                    .fold(0.0, |acc, a| acc + a)
            })
            .collect())
    }

    pub fn dump(&self, include_embeddings: bool) -> Vec<CacheDumpEntry> {
        self.entries()
            .map(|e| CacheDumpEntry {
                class: e.pseudo_label,
                entropy: e.entropy,
                provenance: e.provenance,
                seq: e.seq,
                embedding: include_embeddings.then(|| e.embedding.as_slice().to_vec()),
            })
            .collect()
    }
}

fn bump(historical: &mut usize, boosting: &mut usize, p: Provenance, up: bool) {
    let c = match p {
        Provenance::Historical => historical,
        Provenance::Boosting => boosting,
    };
    if up {
        *c += 1;
    } else {
        *c -= 1;
    }
}

fn insert_by_seq(list: &mut Vec<CacheEntry>, entry: CacheEntry) {
    let at = list.partition_point(|e| e.seq <= entry.seq);
    list.insert(at, entry);
}

/// Free-function form of [`BoostCache::logits`].
pub fn cache_logits(
    cache: &BoostCache,
    query: &Embedding,
    alpha: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    cache.logits(query, &Affinity::new(alpha, beta)?)
}

/// Per-entry weights for the instance-wise cache classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `1 / n_y`, where `n_y` counts entries sharing the entry's label.
    ClassBalance,
    /// `1 / sum_j (key_j . query)`.
    Normalized,
}

/// Instance-wise cache classifier without the affinity scaling:
/// `sum_i weight_i * (key_i . query) * onehot(y_i)`.
pub fn weighted_cache_logits(
    entries: &[CacheEntry],
    n_classes: usize,
    query: &Embedding,
    weighting: Weighting,
) -> Result<Vec<f64>> {
    if entries.is_empty() {
        return Err(Error::EmptyCache);
    }
    let mut counts = vec![0usize; n_classes];
    let mut sims = Vec::with_capacity(entries.len());
    for e in entries {
        if e.pseudo_label >= n_classes {
            return Err(Error::Label {
                label: e.pseudo_label,
                n_classes,
            });
        }
        if e.embedding.dim() != query.dim() {
            return Err(Error::Dim {
                expected: query.dim(),
                found: e.embedding.dim(),
            });
        }
        counts[e.pseudo_label] += 1;
        sims.push(e.embedding.dot(query));
    }
    let total: f64 = sims.iter().sum();
    if weighting == Weighting::Normalized && total == 0.0 {
        return Err(Error::InvalidVector(
            "similarities sum to zero, normalized weights undefined".into(),
        ));
    }
    let mut out = vec![0.0; n_classes];
    for (e, s) in entries.iter().zip(&sims) {
        let w = match weighting {
            Weighting::ClassBalance => 1.0 / counts[e.pseudo_label] as f64,
            Weighting::Normalized => 1.0 / total,
        };
        out[e.pseudo_label] += w * s;
    }
    Ok(out)
}
