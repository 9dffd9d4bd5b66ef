//! Capacity-bounded memory of labeled reference patches.
//!
//! The bank starts from the object patches of the first frame and grows with
//! cycle-pair endpoints that land inside their object's predicted mask. When
//! full, entries are evicted by `(utilization, frame_of_origin, insertion)`
//! ascending. First-frame entries are never evicted, and entries added for the
//! frame being inserted are protected for the duration of that insertion.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cycle_prop::{CyclePair, ReferenceSet};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor_io::{EmbeddingGrid, LabelMask};

/// Default bank size in frames' worth of patches.
pub const DEFAULT_CAPACITY_FRAMES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub embedding: Vec<f32>,
    pub object_id: u16,
    pub frame_of_origin: u32,
    pub utilization: u64,
    /// Monotone insertion counter, the final eviction tie-break.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    entries: Vec<MemoryEntry>,
    capacity: usize,
    dim: usize,
    initial_frame: u32,
    latest_frame: u32,
    next_seq: u64,
}

impl MemoryBank {
    /// One entry per non-background patch of the first frame, in row-major order.
    pub fn init(first_frame: &EmbeddingGrid, labels: &LabelMask, capacity: usize) -> Result<Self> {
        Self::init_at(0, first_frame, labels, capacity)
    }

    pub fn init_at(frame: u32, grid: &EmbeddingGrid, labels: &LabelMask, capacity: usize) -> Result<Self> {
        if !labels.matches_grid(grid) {
            return Err(Error::DimensionMismatch("labels do not match the first frame".into()));
        }
        let required = labels.labels().iter().filter(|&&l| l != 0).count();
        if required > capacity {
            return Err(Error::CapacityTooSmall { capacity, required });
        }
        let mut bank = Self {
            entries: Vec::with_capacity(capacity.min(1 << 20)),
            capacity,
            dim: grid.dim(),
            initial_frame: frame,
            latest_frame: frame,
            next_seq: 0,
        };
        for (index, &id) in labels.labels().iter().enumerate() {
            if id != 0 {
                bank.push(grid.patch(index).to_vec(), id, frame);
            }
        }
        Ok(bank)
    }

    fn push(&mut self, embedding: Vec<f32>, object_id: u16, frame: u32) {
        self.entries.push(MemoryEntry {
            embedding,
            object_id,
            frame_of_origin: frame,
            utilization: 0,
            seq: self.next_seq,
        });
        self.next_seq += 1;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn initial_frame(&self) -> u32 {
        self.initial_frame
    }

    pub fn latest_frame(&self) -> u32 {
        self.latest_frame
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    /// Adds one use per listed index; an index may appear several times.
    pub fn record_utilization(&mut self, used: &[usize]) -> Result<()> {
        if let Some(&index) = used.iter().find(|&&i| i >= self.entries.len()) {
            return Err(Error::IndexOutOfRange {
                index,
                len: self.entries.len(),
            });
        }
        for &i in used {
            self.entries[i].utilization += 1;
        }
        Ok(())
    }

    fn is_evictable(&self, entry: &MemoryEntry, protected_frame: u32) -> bool {
        entry.frame_of_origin != self.initial_frame && entry.frame_of_origin != protected_frame
    }

    /// Eviction candidates in eviction order.
    fn eviction_order(&self, protected_frame: u32) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.entries.len())
            .filter(|&i| self.is_evictable(&self.entries[i], protected_frame))
            .collect();
        order.sort_by_key(|&i| {
            let e = &self.entries[i];
            (e.utilization, e.frame_of_origin, e.seq)
        });
        order
    }

    fn evict_protecting(&mut self, needed: usize, protected_frame: u32) -> Result<Vec<MemoryEntry>> {
        if needed == 0 {
            return Ok(Vec::new());
        }
        let order = self.eviction_order(protected_frame);
        if order.len() < needed {
            return Err(Error::NothingEvictable {
                needed,
                evictable: order.len(),
            });
        }
        let victims: BTreeSet<usize> = order[..needed].iter().copied().collect();
        let mut evicted = Vec::with_capacity(needed);
        let mut kept = Vec::with_capacity(self.entries.len() - needed);
        for (i, e) in std::mem::take(&mut self.entries).into_iter().enumerate() {
            if victims.contains(&i) {
                evicted.push(e);
            } else {
                kept.push(e);
            }
        }
        self.entries = kept;
        // Report in eviction order.
        evicted.sort_by_key(|e| (e.utilization, e.frame_of_origin, e.seq));
        Ok(evicted)
    }

    /// Removes `needed` entries, least used first, never touching the
    /// initial or latest frame.
    pub fn evict(&mut self, needed: usize) -> Result<Vec<MemoryEntry>> {
        self.evict_protecting(needed, self.latest_frame)
    }

    fn check_frame(&self, frame: u32, strictly_after: bool) -> Result<()> {
        let ok = if strictly_after {
            frame > self.latest_frame
        } else {
            frame >= self.latest_frame
        };
        if !ok {
            return Err(Error::FrameOrder {
                frame,
                latest: self.latest_frame,
            });
        }
        Ok(())
    }

    /// Appends `candidates`, evicting first if needed. Fails without
    /// modifying the bank if protected entries alone would overflow.
    fn insert_candidates(&mut self, frame: u32, candidates: Vec<(Vec<f32>, u16)>) -> Result<usize> {
        let count = candidates.len();
        let overflow = (self.entries.len() + count).saturating_sub(self.capacity);
        if overflow > 0 {
            let evictable = self.eviction_order(frame).len();
            if evictable < overflow {
                return Err(Error::InsertionOverflow {
                    capacity: self.capacity,
                    required: self.entries.len() - evictable + count,
                });
            }
            self.evict_protecting(overflow, frame)?;
        }
        for (embedding, id) in candidates {
            self.push(embedding, id, frame);
        }
        self.latest_frame = frame;
        Ok(count)
    }

    /// Stores the current-frame endpoint of every assigned pair that falls
    /// inside its object's predicted mask. Returns the number of entries added.
    pub fn insert_frame(
        &mut self,
        frame: u32,
        current: &EmbeddingGrid,
        pairs: &BTreeMap<u16, Vec<CyclePair>>,
        predicted_masks: &BTreeMap<u16, BinaryMask>,
    ) -> Result<usize> {
        self.check_frame(frame, true)?;
        if current.dim() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "frame dim {} vs memory dim {}",
                current.dim(),
                self.dim
            )));
        }
        let mut candidates = Vec::new();
        for (&id, list) in pairs {
            let Some(mask) = predicted_masks.get(&id) else {
                continue;
            };
            let mut seen = BTreeSet::new();
            for pair in list {
                if pair.cur_index < mask.bits().len() && mask.get_index(pair.cur_index) && seen.insert(pair.cur_index) {
                    candidates.push((current.patch(pair.cur_index).to_vec(), id));
                }
            }
        }
        self.insert_candidates(frame, candidates)
    }

    /// Stores every patch of a newly admitted object's mask.
    pub fn admit_object(
        &mut self,
        frame: u32,
        current: &EmbeddingGrid,
        object_id: u16,
        mask: &BinaryMask,
    ) -> Result<usize> {
        self.check_frame(frame, false)?;
        let candidates = mask.indices().map(|i| (current.patch(i).to_vec(), object_id)).collect();
        self.insert_candidates(frame, candidates)
    }

    /// Snapshot of embeddings and labels in entry order.
    pub fn reference_view(&self) -> Result<ReferenceSet> {
        if self.entries.is_empty() {
            return Err(Error::EmptyBank);
        }
        let mut embeddings = Vec::with_capacity(self.entries.len() * self.dim);
        let mut labels = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            embeddings.extend_from_slice(&e.embedding);
            labels.push(e.object_id);
        }
        ReferenceSet::new(self.dim, embeddings, labels)
    }

    /// Mean embedding of an object's entries (not renormalized), if any.
    pub fn object_mean(&self, object_id: u16) -> Option<Vec<f64>> {
        let mut sum = vec![0.0f64; self.dim];
        let mut n = 0usize;
        for e in self.entries.iter().filter(|e| e.object_id == object_id) {
            for (s, &v) in sum.iter_mut().zip(&e.embedding) {
                *s += f64::from(v);
            }
            n += 1;
        }
        (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
    }

    pub fn dump(&self, include_embeddings: bool) -> MemoryDump {
        MemoryDump {
            capacity: self.capacity,
            initial_frame: self.initial_frame,
            latest_frame: self.latest_frame,
            entries: self
                .entries
                .iter()
                .map(|e| DumpEntry {
                    object_id: e.object_id,
                    frame_of_origin: e.frame_of_origin,
                    utilization: e.utilization,
                    embedding: include_embeddings.then(|| e.embedding.clone()),
                })
                .collect(),
        }
    }
}

/// JSON form of a bank for inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryDump {
    pub capacity: usize,
    pub initial_frame: u32,
    pub latest_frame: u32,
    pub entries: Vec<DumpEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpEntry {
    pub object_id: u16,
    pub frame_of_origin: u32,
    pub utilization: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}
