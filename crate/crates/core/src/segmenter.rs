//! Prompted segmentation on embedding grids.
//!
//! [`Segmenter`] is the decoder boundary: given a frame, prompt points and an
//! optional carried [`ObjectState`], produce a [`MaskProposal`] plus the state
//! to carry into the next frame. [`ToySegmenter`] grows a 4-connected region
//! from the prompt points over patches whose cosine similarity to the object
//! signature reaches the state's threshold `tau`. Carrying `(signature, tau)`
//! between frames is what keeps the mask at the same granularity.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, Point};
use crate::sim_kernel::dot;
use crate::tensor_io::EmbeddingGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    /// Unit-norm pooled object appearance.
    pub signature: Vec<f32>,
    /// Similarity threshold in `(0, 1]`; higher means finer granularity.
    pub tau: f64,
    pub area_ema: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskProposal {
    pub mask: BinaryMask,
    pub quality: f64,
    pub stability: f64,
    pub state: ObjectState,
}

pub trait Segmenter: Send + Sync {
    fn name(&self) -> &str;

    /// Must be deterministic for identical inputs.
    fn segment(&self, grid: &EmbeddingGrid, points: &[Point], state: Option<&ObjectState>) -> Result<MaskProposal>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToySegmenterConfig {
    pub default_tau: f64,
    /// Weight of the previous signature in the carried-state update.
    pub signature_keep: f64,
    pub area_keep: f64,
    pub stability_delta: f64,
}

impl Default for ToySegmenterConfig {
    fn default() -> Self {
        Self {
            default_tau: 0.85,
            signature_keep: 0.7,
            area_keep: 0.8,
            stability_delta: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ToySegmenter {
    pub config: ToySegmenterConfig,
}

impl ToySegmenter {
    pub fn new(config: ToySegmenterConfig) -> Self {
        Self { config }
    }
}

impl Segmenter for ToySegmenter {
    fn name(&self) -> &str {
        "toy"
    }

    fn segment(&self, grid: &EmbeddingGrid, points: &[Point], state: Option<&ObjectState>) -> Result<MaskProposal> {
        toy_segment(grid, points, state, &self.config)
    }
}

/// Looks up a segmenter by its configuration name.
pub fn segmenter_from_name(name: &str, config: ToySegmenterConfig) -> Result<Box<dyn Segmenter>> {
    match name {
        "toy" => Ok(Box::new(ToySegmenter::new(config))),
        other => Err(Error::InvalidConfig(format!("unknown segmenter {other:?}"))),
    }
}

fn normalize(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| (x / norm) as f32).collect()
}

fn mean_embedding(grid: &EmbeddingGrid, indices: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut sum = vec![0.0f64; grid.dim()];
    let mut n = 0usize;
    for i in indices {
        for (s, &v) in sum.iter_mut().zip(grid.patch(i)) {
            *s += f64::from(v);
        }
        n += 1;
    }
    if n > 0 {
        for s in &mut sum {
            *s /= n as f64;
        }
    }
    sum
}

/// Unit-norm mean of the patches under `mask`.
pub fn pooled_signature(grid: &EmbeddingGrid, mask: &BinaryMask) -> Vec<f32> {
    normalize(&mean_embedding(grid, mask.indices()))
}

/// Cosine similarity of every patch to `signature`.
pub fn similarity_map(grid: &EmbeddingGrid, signature: &[f32]) -> Vec<f64> {
    (0..grid.num_patches()).map(|i| dot(grid.patch(i), signature)).collect()
}

/// 4-connected flood fill from `seeds` over cells with `sims >= threshold`.
/// Seeds below the threshold contribute nothing.
pub fn grow_region(sims: &[f64], height: usize, width: usize, seeds: &[Point], threshold: f64) -> BinaryMask {
    let mut mask = BinaryMask::empty(height, width);
    let mut queue = VecDeque::new();
    for &(r, c) in seeds {
        let i = r * width + c;
        if sims[i] >= threshold && !mask.get_index(i) {
            mask.set_index(i, true);
            queue.push_back((r, c));
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        let mut visit = |rr: usize, cc: usize| {
            let i = rr * width + cc;
            if !mask.get_index(i) && sims[i] >= threshold {
                mask.set_index(i, true);
                queue.push_back((rr, cc));
            }
        };
        if r > 0 {
            visit(r - 1, c);
        }
        if r + 1 < height {
            visit(r + 1, c);
        }
        if c > 0 {
            visit(r, c - 1);
        }
        if c + 1 < width {
            visit(r, c + 1);
        }
    }
    mask
}

fn stability_from_sims(sims: &[f64], height: usize, width: usize, points: &[Point], tau: f64, delta: f64) -> f64 {
    let lo = (tau - delta).max(f64::MIN_POSITIVE);
    let hi = (tau + delta).min(1.0);
    let loose = grow_region(sims, height, width, points, lo);
    let tight = grow_region(sims, height, width, points, hi);
    loose.iou(&tight).expect("same dims")
}

/// IoU between the regions grown at `tau - delta` and `tau + delta`.
/// Thresholds are clamped into `(0, 1]`.
pub fn stability_score(grid: &EmbeddingGrid, points: &[Point], signature: &[f32], tau: f64, delta: f64) -> f64 {
    let sims = similarity_map(grid, signature);
    stability_from_sims(&sims, grid.height(), grid.width(), points, tau, delta)
}

fn check_points(grid: &EmbeddingGrid, points: &[Point]) -> Result<()> {
    if points.is_empty() {
        return Err(Error::InvalidConfig(
            "segmentation needs at least one prompt point".into(),
        ));
    }
    for &(row, col) in points {
        if row >= grid.height() || col >= grid.width() {
            return Err(Error::OutOfBounds {
                row,
                col,
                height: grid.height(),
                width: grid.width(),
            });
        }
    }
    Ok(())
}

pub fn toy_segment(
    grid: &EmbeddingGrid,
    points: &[Point],
    state: Option<&ObjectState>,
    config: &ToySegmenterConfig,
) -> Result<MaskProposal> {
    check_points(grid, points)?;
    let (signature, tau, prev_area) = match state {
        Some(s) => (s.signature.clone(), s.tau, Some(s.area_ema)),
        None => {
            let idx = points.iter().map(|&(r, c)| r * grid.width() + c);
            (normalize(&mean_embedding(grid, idx)), config.default_tau, None)
        }
    };
    let (h, w) = (grid.height(), grid.width());
    let sims = similarity_map(grid, &signature);
    let mask = grow_region(&sims, h, w, points, tau);
    let area = mask.area();
    if area == 0 {
        return Err(Error::EmptyMask);
    }

    let mean_sim = mask.indices().map(|i| sims[i]).sum::<f64>() / area as f64;
    let quality = if tau >= 1.0 {
        1.0
    } else {
        ((mean_sim - tau) / (1.0 - tau)).clamp(0.0, 1.0)
    }
    // A non-empty mask always carries some confidence.
    .max(1e-9);
    let stability = stability_from_sims(&sims, h, w, points, tau, config.stability_delta);

    let keep = config.signature_keep;
    let pooled = mean_embedding(grid, mask.indices());
    let blended: Vec<f64> = signature
        .iter()
        .zip(&pooled)
        .map(|(&old, &new)| keep * f64::from(old) + (1.0 - keep) * new)
        .collect();
    let area_ema = match prev_area {
        Some(old) => config.area_keep * old + (1.0 - config.area_keep) * area as f64,
        None => area as f64,
    };
    Ok(MaskProposal {
        mask,
        quality,
        stability,
        state: ObjectState {
            signature: normalize(&blended),
            tau,
            area_ema,
        },
    })
}

impl ObjectState {
    /// Derives a carried state from a given mask (e.g. a ground-truth first
    /// frame). The signature is the pooled mask appearance; `tau` sits midway
    /// between the least similar patch inside the mask and the most similar
    /// 4-neighbour just outside it, so regrowing reproduces the given
    /// granularity. Falls back to `default_tau` when no such gap exists.
    pub fn from_mask(grid: &EmbeddingGrid, mask: &BinaryMask, config: &ToySegmenterConfig) -> Option<Self> {
        if mask.is_empty() {
            return None;
        }
        let signature = pooled_signature(grid, mask);
        let sims = similarity_map(grid, &signature);
        let (h, w) = (grid.height(), grid.width());
        let inside_min = mask.indices().map(|i| sims[i]).fold(f64::INFINITY, f64::min);
        let mut outside_max = f64::NEG_INFINITY;
        for i in mask.indices() {
            let (r, c) = (i / w, i % w);
            let neighbours = [
                (r > 0).then(|| i - w),
                (r + 1 < h).then(|| i + w),
                (c > 0).then(|| i - 1),
                (c + 1 < w).then(|| i + 1),
            ];
            for j in neighbours.into_iter().flatten() {
                if !mask.get_index(j) {
                    outside_max = outside_max.max(sims[j]);
                }
            }
        }
        let tau = if outside_max == f64::NEG_INFINITY {
            config.default_tau.min(inside_min)
        } else if outside_max < inside_min {
            0.5 * (inside_min + outside_max)
        } else {
            config.default_tau
        };
        Some(Self {
            signature,
            tau: tau.clamp(1e-3, 1.0),
            area_ema: mask.area() as f64,
        })
    }
}

pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    a.iou(b)
}

/// Greedy mask NMS: best quality first (ties: larger area, then earlier
/// index); a proposal survives if its IoU with every survivor is below the
/// threshold.
pub fn mask_nms(proposals: Vec<MaskProposal>, iou_threshold: f64) -> Vec<MaskProposal> {
    let mut order: Vec<usize> = (0..proposals.len()).collect();
    let areas: Vec<usize> = proposals.iter().map(|p| p.mask.area()).collect();
    order.sort_by(|&a, &b| {
        proposals[b]
            .quality
            .total_cmp(&proposals[a].quality)
            .then(areas[b].cmp(&areas[a]))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let survives = kept
            .iter()
            .all(|&k| proposals[i].mask.iou(&proposals[k].mask).expect("same dims") < iou_threshold);
        if survives {
            kept.push(i);
        }
    }
    let mut slots: Vec<Option<MaskProposal>> = proposals.into_iter().map(Some).collect();
    kept.into_iter().map(|i| slots[i].take().expect("kept once")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    /// Prompt grid is `grid_side x grid_side`, capped by the frame size.
    pub grid_side: usize,
    pub q_min: f64,
    pub s_min: f64,
    pub nms_iou: f64,
    /// Proposals smaller than this many patches are dropped.
    pub min_area: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            grid_side: 32,
            q_min: 0.5,
            s_min: 0.8,
            nms_iou: 0.7,
            min_area: 4,
        }
    }
}

/// Evenly spaced prompt coordinates, `min(side, n)` of them over `0..n`.
pub fn prompt_axis(n: usize, side: usize) -> Vec<usize> {
    let count = side.min(n).max(1);
    (0..count).map(|k| ((2 * k + 1) * n) / (2 * count)).collect()
}

/// Automatic mode: one single-point prompt per grid node, filtered by
/// quality, stability and area, then deduplicated with NMS.
pub fn grid_detect(segmenter: &dyn Segmenter, grid: &EmbeddingGrid, config: &DetectConfig) -> Vec<MaskProposal> {
    let rows = prompt_axis(grid.height(), config.grid_side);
    let cols = prompt_axis(grid.width(), config.grid_side);
    let prompts: Vec<Point> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    let proposals: Vec<MaskProposal> = prompts
        .par_iter()
        .filter_map(|&p| segmenter.segment(grid, &[p], None).ok())
        .filter(|p| p.quality >= config.q_min && p.stability >= config.s_min && p.mask.area() >= config.min_area)
        .collect();
    mask_nms(proposals, config.nms_iou)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(d: usize, k: usize) -> Vec<f32> {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        v
    }

    fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f32> {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        normalize(&v)
    }

    fn field(h: usize, w: usize, d: usize, f: impl Fn(usize, usize) -> Vec<f32>) -> EmbeddingGrid {
        let mut data = Vec::with_capacity(h * w * d);
        for r in 0..h {
            for c in 0..w {
                data.extend(f(r, c));
            }
        }
        EmbeddingGrid::new(h, w, d, data).unwrap()
    }

    /// Independent flood fill: repeatedly add any passing cell adjacent to
    /// the current set until nothing changes.
    fn flood_oracle(sims: &[f64], h: usize, w: usize, seeds: &[Point], t: f64) -> BinaryMask {
        let mut m = BinaryMask::empty(h, w);
        for &(r, c) in seeds {
            if sims[r * w + c] >= t {
                m.set(r, c, true);
            }
        }
        loop {
            let mut changed = false;
            for r in 0..h {
                for c in 0..w {
                    if m.get(r, c) || sims[r * w + c] < t {
                        continue;
                    }
                    let adj = (r > 0 && m.get(r - 1, c))
                        || (r + 1 < h && m.get(r + 1, c))
                        || (c > 0 && m.get(r, c - 1))
                        || (c + 1 < w && m.get(r, c + 1));
                    if adj {
                        m.set(r, c, true);
                        changed = true;
                    }
                }
            }
            if !changed {
                return m;
            }
        }
    }

    #[test]
    fn uniform_grid_gives_full_mask() {
        let g = field(5, 6, 4, |_, _| vec![0.5; 4]);
        let p = toy_segment(&g, &[(2, 3)], None, &ToySegmenterConfig::default()).unwrap();
        assert_eq!(p.mask, BinaryMask::full(5, 6));
        assert_eq!(p.stability, 1.0);
        assert!(p.quality > 0.99);
    }

    #[test]
    fn point_in_one_blob_selects_that_blob() {
        let d = 8;
        let g = field(8, 8, d, |r, c| match (r, c) {
            (1..=3, 1..=3) => basis(d, 1),
            (4..=6, 4..=6) => basis(d, 2),
            _ => basis(d, 0),
        });
        let p = toy_segment(&g, &[(2, 2)], None, &ToySegmenterConfig::default()).unwrap();
        let sims = similarity_map(&g, &basis(d, 1));
        assert_eq!(p.mask, flood_oracle(&sims, 8, 8, &[(2, 2)], 0.85));
        assert_eq!(p.mask.area(), 9);
        assert!(p.mask.get(1, 1) && !p.mask.get(4, 4));
    }

    /// Whole object with signature `whole`, part patches at cosine 0.9 to it.
    fn nested_field() -> (EmbeddingGrid, Vec<f32>, Vec<f32>, BinaryMask, BinaryMask) {
        let d = 8;
        let whole = basis(d, 1);
        let part = normalize(&[0.0, 0.9, (1.0f64 - 0.81).sqrt(), 0.0, 0.0, 0.0, 0.0, 0.0]);
        let in_whole = |r: usize, c: usize| (1..=6).contains(&r) && (1..=6).contains(&c);
        let in_part = |r: usize, c: usize| (3..=4).contains(&r) && (3..=4).contains(&c);
        let g = field(8, 8, d, |r, c| {
            if in_part(r, c) {
                part.clone()
            } else if in_whole(r, c) {
                whole.clone()
            } else {
                basis(d, 0)
            }
        });
        let mut wm = BinaryMask::empty(8, 8);
        let mut pm = BinaryMask::empty(8, 8);
        for r in 0..8 {
            for c in 0..8 {
                wm.set(r, c, in_whole(r, c));
                pm.set(r, c, in_part(r, c));
            }
        }
        (g, whole, part, wm, pm)
    }

    #[test]
    fn threshold_selects_granularity_and_state_keeps_it() {
        let (g, _whole, part, wm, pm) = nested_field();
        let cfg = ToySegmenterConfig::default();
        let fine = ObjectState {
            signature: part.clone(),
            tau: 0.99,
            area_ema: 4.0,
        };
        let coarse = ObjectState {
            signature: part,
            tau: 0.80,
            area_ema: 36.0,
        };

        let p = toy_segment(&g, &[(3, 3)], Some(&fine), &cfg).unwrap();
        assert_eq!(p.mask, pm);
        let q = toy_segment(&g, &[(3, 3)], Some(&coarse), &cfg).unwrap();
        assert_eq!(q.mask, wm);

        // Carrying the returned state across identical frames keeps the choice.
        let mut state = p.state;
        for _ in 0..5 {
            let next = toy_segment(&g, &[(3, 3)], Some(&state), &cfg).unwrap();
            assert_eq!(next.mask, pm);
            state = next.state;
        }
        let mut state = q.state;
        for _ in 0..5 {
            let next = toy_segment(&g, &[(4, 4)], Some(&state), &cfg).unwrap();
            assert_eq!(next.mask, wm);
            state = next.state;
        }
    }

    #[test]
    fn state_from_mask_reproduces_granularity() {
        let (g, _, _, wm, pm) = nested_field();
        let cfg = ToySegmenterConfig::default();
        let ws = ObjectState::from_mask(&g, &wm, &cfg).unwrap();
        let ps = ObjectState::from_mask(&g, &pm, &cfg).unwrap();
        assert!(ps.tau > ws.tau);
        assert_eq!(toy_segment(&g, &[(3, 3)], Some(&ws), &cfg).unwrap().mask, wm);
        assert_eq!(toy_segment(&g, &[(3, 3)], Some(&ps), &cfg).unwrap().mask, pm);
        assert!(ObjectState::from_mask(&g, &BinaryMask::empty(8, 8), &cfg).is_none());
    }

    #[test]
    fn seed_below_threshold_is_empty_mask() {
        let d = 4;
        let g = field(3, 3, d, |_, _| basis(d, 0));
        let state = ObjectState {
            signature: basis(d, 1),
            tau: 0.85,
            area_ema: 1.0,
        };
        let err = toy_segment(&g, &[(1, 1)], Some(&state), &ToySegmenterConfig::default()).unwrap_err();
        assert!(matches!(err, Error::EmptyMask));
        let err = toy_segment(&g, &[(3, 0)], None, &ToySegmenterConfig::default()).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { .. }));
    }

    /// A unit vector whose cosine with `e0` is exactly `cos`.
    fn at_cos(d: usize, cos: f64) -> Vec<f32> {
        let mut v = vec![0.0f64; d];
        v[0] = cos;
        v[1] = (1.0 - cos * cos).sqrt();
        v.into_iter().map(|x| x as f32).collect()
    }

    #[test]
    fn stability_examples() {
        let d = 4;
        let sig = basis(d, 0);
        let uniform = field(4, 4, d, |_, _| sig.clone());
        assert_eq!(stability_score(&uniform, &[(0, 0)], &sig, 0.85, 0.05), 1.0);

        // Similarities at 0.95 in a block, 0.2 elsewhere.
        let split = field(4, 4, d, |r, _| if r < 2 { at_cos(d, 0.95) } else { at_cos(d, 0.2) });
        assert_eq!(stability_score(&split, &[(0, 0)], &sig, 0.85, 0.05), 1.0);

        // Similarities spread across [0.8, 0.9].
        let spread = field(4, 4, d, |r, c| at_cos(d, 0.8 + 0.1 * (r * 4 + c) as f64 / 15.0));
        let s = stability_score(&spread, &[(3, 3)], &sig, 0.85, 0.05);
        assert!((0.0..1.0).contains(&s));
    }

    fn proposal(points: &[Point], quality: f64) -> MaskProposal {
        MaskProposal {
            mask: BinaryMask::from_points(4, 4, points),
            quality,
            stability: 1.0,
            state: ObjectState {
                signature: vec![1.0],
                tau: 0.85,
                area_ema: 1.0,
            },
        }
    }

    #[test]
    fn nms_examples() {
        let kept = mask_nms(
            vec![proposal(&[(0, 0), (0, 1)], 0.8), proposal(&[(0, 0), (0, 1)], 0.9)],
            0.7,
        );
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].quality, 0.9);

        let kept = mask_nms(
            vec![
                proposal(&[(0, 0)], 0.5),
                proposal(&[(3, 3)], 0.6),
                proposal(&[(2, 2)], 0.7),
            ],
            0.7,
        );
        assert_eq!(kept.len(), 3);
    }

    fn naive_nms(props: &[MaskProposal], thr: f64) -> Vec<usize> {
        let n = props.len();
        let mut rank: Vec<usize> = (0..n).collect();
        // Selection sort by (quality desc, area desc, index asc).
        for a in 0..n {
            for b in a + 1..n {
                let (x, y) = (rank[a], rank[b]);
                let better = props[y].quality > props[x].quality
                    || (props[y].quality == props[x].quality
                        && (props[y].mask.area() > props[x].mask.area()
                            || (props[y].mask.area() == props[x].mask.area() && y < x)));
                if better {
                    rank.swap(a, b);
                }
            }
        }
        let mut suppressed = vec![false; n];
        let mut kept = Vec::new();
        for a in 0..n {
            let i = rank[a];
            if suppressed[i] {
                continue;
            }
            kept.push(i);
            for &j in &rank[a + 1..] {
                if props[i].mask.iou(&props[j].mask).unwrap() >= thr {
                    suppressed[j] = true;
                }
            }
        }
        kept
    }

    #[test]
    fn nms_matches_quadratic_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let props: Vec<MaskProposal> = (0..10)
                .map(|_| {
                    let (r0, c0) = (rng.random_range(0..3), rng.random_range(0..3));
                    let pts: Vec<Point> = (r0..r0 + 2)
                        .flat_map(|r| (c0..c0 + rng.random_range(1..3)).map(move |c| (r, c)))
                        .collect();
                    proposal(&pts, f64::from(rng.random_range(0u8..4)) / 4.0)
                })
                .collect();
            let expected: Vec<f64> = naive_nms(&props, 0.5).into_iter().map(|i| props[i].quality).collect();
            let expected_masks: Vec<BinaryMask> = naive_nms(&props, 0.5)
                .into_iter()
                .map(|i| props[i].mask.clone())
                .collect();
            let kept = mask_nms(props, 0.5);
            assert_eq!(kept.iter().map(|p| p.quality).collect::<Vec<_>>(), expected);
            assert_eq!(kept.iter().map(|p| p.mask.clone()).collect::<Vec<_>>(), expected_masks);
            for a in 0..kept.len() {
                for b in a + 1..kept.len() {
                    assert!(kept[a].mask.iou(&kept[b].mask).unwrap() < 0.5);
                }
            }
        }
    }

    #[test]
    fn detect_uniform_grid_once() {
        let g = field(6, 6, 4, |_, _| vec![0.5; 4]);
        let found = grid_detect(&ToySegmenter::default(), &g, &DetectConfig::default());
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].mask, BinaryMask::full(6, 6));
    }

    #[test]
    fn detect_three_blobs_on_noise_background() {
        let d = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut noise = Vec::new();
        for _ in 0..24 * 24 {
            noise.push(random_unit(&mut rng, d));
        }
        let blob = |r: usize, c: usize| -> Option<usize> {
            match (r, c) {
                (2..=6, 2..=6) => Some(1),
                (10..=15, 14..=19) => Some(2),
                (17..=21, 3..=8) => Some(3),
                _ => None,
            }
        };
        let g = field(24, 24, d, |r, c| match blob(r, c) {
            Some(k) => basis(d, k),
            None => noise[r * 24 + c].clone(),
        });
        let found = grid_detect(&ToySegmenter::default(), &g, &DetectConfig::default());
        assert_eq!(found.len(), 3);
        let mut areas: Vec<usize> = found.iter().map(|p| p.mask.area()).collect();
        areas.sort_unstable();
        assert_eq!(areas, vec![25, 30, 36]);
    }

    #[test]
    fn detect_nothing_on_noise() {
        let d = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut data = Vec::new();
        for _ in 0..16 * 16 {
            data.extend(random_unit(&mut rng, d));
        }
        let g = EmbeddingGrid::new(16, 16, d, data).unwrap();
        assert!(grid_detect(&ToySegmenter::default(), &g, &DetectConfig::default()).is_empty());
    }

    #[test]
    fn prompt_axis_spacing() {
        assert_eq!(prompt_axis(4, 32), vec![0, 1, 2, 3]);
        assert_eq!(prompt_axis(64, 32).len(), 32);
        assert_eq!(prompt_axis(64, 32)[0], 1);
        assert_eq!(prompt_axis(64, 32)[31], 63);
    }

    #[test]
    fn unknown_segmenter_rejected() {
        assert!(segmenter_from_name("toy", ToySegmenterConfig::default()).is_ok());
        assert!(matches!(
            segmenter_from_name("neural", ToySegmenterConfig::default()),
            Err(Error::InvalidConfig(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn region_growing_matches_flood_oracle(
            h in 1usize..10,
            w in 1usize..10,
            raw in prop::collection::vec(0u8..10, 100),
            seeds in prop::collection::vec((0usize..10, 0usize..10), 1..4),
            t in 0u8..10,
        ) {
            let sims: Vec<f64> = (0..h * w).map(|i| f64::from(raw[i]) / 10.0).collect();
            let seeds: Vec<Point> = seeds.into_iter().map(|(r, c)| (r % h, c % w)).collect();
            let t = f64::from(t) / 10.0;
            prop_assert_eq!(grow_region(&sims, h, w, &seeds, t), flood_oracle(&sims, h, w, &seeds, t));
        }

        #[test]
        fn stability_is_a_fraction(seed in any::<u64>(), tau in 0.6f64..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 6;
            let mut data = Vec::new();
            for _ in 0..36 {
                data.extend(random_unit(&mut rng, d));
            }
            let g = EmbeddingGrid::new(6, 6, d, data).unwrap();
            let sig = g.patch(0).to_vec();
            let s = stability_score(&g, &[(0, 0)], &sig, tau, 0.05);
            prop_assert!((0.0..=1.0).contains(&s));
        }

        #[test]
        fn segment_contains_a_prompt_point(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = 3;
            let mut data = Vec::new();
            for _ in 0..25 {
                data.extend(random_unit(&mut rng, d));
            }
            let g = EmbeddingGrid::new(5, 5, d, data).unwrap();
            let pts = [(rng.random_range(0..5), rng.random_range(0..5))];
            match toy_segment(&g, &pts, None, &ToySegmenterConfig::default()) {
                Ok(p) => {
                    prop_assert!(pts.iter().any(|&(r, c)| p.mask.get(r, c)));
                    prop_assert!(p.quality > 0.0);
                }
                Err(e) => prop_assert!(matches!(e, Error::EmptyMask)),
            }
        }
    }
}
