//! Cycle-pair extraction, object assignment and point-prompt selection.
//!
//! A cycle pair links reference patch `i` and current patch `j` when each is
//! the other's most similar patch. Pairs are grouped by the object label of
//! their reference endpoint, and the most central points of each group become
//! that object's position prompt.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Point;
use crate::sim_kernel::{self, SimilarityMatrix, Vectors};
use crate::tensor_io::{EmbeddingGrid, LabelMask};

pub const DEFAULT_K: usize = 1;
pub const MAX_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclePair {
    pub ref_index: usize,
    pub cur_index: usize,
    pub similarity: f32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionPrompt {
    pub object_id: u16,
    pub points: Vec<Point>,
    pub k_config: usize,
}

/// All mutually-best `(row, col)` pairs, ordered by row.
pub fn mutual_pairs(s: &SimilarityMatrix) -> Result<Vec<CyclePair>> {
    let best_col = sim_kernel::row_argmax(s)?;
    let best_row = sim_kernel::col_argmax(s)?;
    Ok(best_col
        .iter()
        .enumerate()
        .filter(|&(i, &j)| best_row[j] == i)
        .map(|(i, &j)| CyclePair {
            ref_index: i,
            cur_index: j,
            similarity: s.get(i, j),
        })
        .collect())
}

/// Every row paired with its argmax column, without the reverse check.
pub fn argmax_pairs(s: &SimilarityMatrix) -> Result<Vec<CyclePair>> {
    let best_col = sim_kernel::row_argmax(s)?;
    Ok(best_col
        .into_iter()
        .enumerate()
        .map(|(i, j)| CyclePair {
            ref_index: i,
            cur_index: j,
            similarity: s.get(i, j),
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairAssignment {
    pub objects: BTreeMap<u16, Vec<CyclePair>>,
    pub background: Vec<CyclePair>,
}

impl PairAssignment {
    pub fn is_empty(&self) -> bool {
        self.objects.is_empty() && self.background.is_empty()
    }
}

/// Buckets pairs by the label of their reference endpoint.
pub fn assign_pairs_to_objects(pairs: &[CyclePair], ref_labels: &[u16]) -> Result<PairAssignment> {
    let mut out = PairAssignment::default();
    for &pair in pairs {
        let label = *ref_labels.get(pair.ref_index).ok_or(Error::IndexOutOfRange {
            index: pair.ref_index,
            len: ref_labels.len(),
        })?;
        if label == 0 {
            out.background.push(pair);
        } else {
            out.objects.entry(label).or_default().push(pair);
        }
    }
    Ok(out)
}

/// Mean distance from each point to the others; 0 for a single point.
pub fn centrality(points: &[Point]) -> Vec<f64> {
    let n = points.len();
    if n <= 1 {
        return vec![0.0; n];
    }
    sim_kernel::pairwise_euclidean(points)
        .into_iter()
        .map(|row| row.iter().sum::<f64>() / (n - 1) as f64)
        .collect()
}

/// Mean distance from each distinct point to the `total - 1` other members
/// of a multiset in which point `i` occurs `weights[i]` times.
fn weighted_centrality(points: &[Point], weights: &[f64], total: usize) -> Vec<f64> {
    if total <= 1 {
        return vec![0.0; points.len()];
    }
    points
        .iter()
        .map(|&(r, c)| {
            let sum: f64 = points
                .iter()
                .zip(weights)
                .map(|(&(r2, c2), &w)| {
                    let dr = r as f64 - r2 as f64;
                    let dc = c as f64 - c2 as f64;
                    w * (dr * dr + dc * dc).sqrt()
                })
                .sum();
            sum / (total - 1) as f64
        })
        .collect()
}

/// Picks the `k` most central current-frame points of an object's pairs.
pub fn select_prompt(object_id: u16, pairs: &[CyclePair], grid_width: usize, k: usize) -> Result<PositionPrompt> {
    if pairs.is_empty() {
        return Err(Error::NoPairs { object_id });
    }
    // Many reference patches can share a target. Score each distinct
    // location once, weighting the others by how often they occur; this is
    // the same mean distance as over the full multiset.
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for p in pairs {
        *counts.entry(p.cur_index).or_default() += 1;
    }
    let points: Vec<Point> = counts.keys().map(|&j| (j / grid_width, j % grid_width)).collect();
    let weights: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    let scores = weighted_centrality(&points, &weights, pairs.len());
    let chosen = sim_kernel::top_k_min(&scores, k.max(1))
        .into_iter()
        .map(|i| points[i])
        .collect();
    Ok(PositionPrompt {
        object_id,
        points: chosen,
        k_config: k,
    })
}

/// Labeled reference patches that propagation matches against.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    pub dim: usize,
    pub embeddings: Vec<f32>,
    pub labels: Vec<u16>,
}

impl ReferenceSet {
    pub fn new(dim: usize, embeddings: Vec<f32>, labels: Vec<u16>) -> Result<Self> {
        if dim == 0 || embeddings.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} embedding values for {} labels of dim {dim}",
                embeddings.len(),
                labels.len()
            )));
        }
        Ok(Self {
            dim,
            embeddings,
            labels,
        })
    }

    /// Every patch of a frame, background included.
    pub fn from_frame(grid: &EmbeddingGrid, labels: &LabelMask) -> Result<Self> {
        if !labels.matches_grid(grid) {
            return Err(Error::DimensionMismatch(
                "labels do not match the reference frame".into(),
            ));
        }
        Self::new(grid.dim(), grid.data().to_vec(), labels.labels().to_vec())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn vectors(&self) -> Vectors<'_> {
        Vectors::new(&self.embeddings, self.dim).expect("checked at construction")
    }

    pub fn object_ids(&self) -> BTreeSet<u16> {
        self.labels.iter().copied().filter(|&l| l != 0).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    /// Mutual nearest neighbours only.
    #[default]
    CyclePairs,
    /// Each reference patch's best match, unchecked.
    MaxSimilarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub k: usize,
    /// Pairs with similarity below this are dropped.
    pub min_similarity: f32,
    pub mode: PropagationMode,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            min_similarity: 0.0,
            mode: PropagationMode::CyclePairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub prompts: BTreeMap<u16, PositionPrompt>,
    pub pairs: PairAssignment,
    /// Reference objects that got no pairs in the current frame.
    pub misses: Vec<u16>,
}

pub fn propagate(reference: &ReferenceSet, current: &EmbeddingGrid, config: &PropagationConfig) -> Result<Propagation> {
    if reference.is_empty() {
        return Err(Error::EmptyBank);
    }
    let cur = Vectors::new(current.data(), current.dim())?;
    let s = sim_kernel::cosine_similarity_matrix(reference.vectors(), cur)?;
    let raw = match config.mode {
        PropagationMode::CyclePairs => mutual_pairs(&s)?,
        PropagationMode::MaxSimilarity => argmax_pairs(&s)?,
    };
    let kept: Vec<CyclePair> = raw
        .into_iter()
        .filter(|p| p.similarity >= config.min_similarity)
        .collect();
    let pairs = assign_pairs_to_objects(&kept, &reference.labels)?;

    let mut prompts = BTreeMap::new();
    let mut misses = Vec::new();
    for id in reference.object_ids() {
        match pairs.objects.get(&id) {
            Some(list) => {
                prompts.insert(id, select_prompt(id, list, current.width(), config.k)?);
            }
            None => misses.push(id),
        }
    }
    Ok(Propagation { prompts, pairs, misses })
}
