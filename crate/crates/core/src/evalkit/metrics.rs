//! Track-level segmentation and tracking metrics.
//!
//! A track is one mask per frame (empty where the object is absent).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor_io::LabelMask;

pub type Track = Vec<BinaryMask>;

/// Thresholds 0.50, 0.55, ..., 0.95.
pub fn default_iou_thresholds() -> Vec<f64> {
    (0..10).map(|k| 0.5 + 0.05 * k as f64).collect()
}

/// Splits label maps into one track per object id.
pub fn tracks_from_labels(labels: &[LabelMask]) -> Result<BTreeMap<u16, Track>> {
    let Some(first) = labels.first() else {
        return Ok(BTreeMap::new());
    };
    let (h, w) = (first.height(), first.width());
    let mut ids = BTreeSet::new();
    for l in labels {
        if (l.height(), l.width()) != (h, w) {
            return Err(Error::DimensionMismatch(format!(
                "label map is {}x{}, expected {h}x{w}",
                l.height(),
                l.width()
            )));
        }
        ids.extend(l.object_ids());
    }
    Ok(ids
        .into_iter()
        .map(|id| (id, labels.iter().map(|l| l.object_mask(id)).collect()))
        .collect())
}

/// Summed intersection over summed union across frames. Two all-empty
/// tracks agree perfectly and score 1.
pub fn st_iou(pred: &[BinaryMask], gt: &[BinaryMask]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!(
            "track lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        let (i, u) = p.overlap_counts(g)?;
        inter += i;
        union += u;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

fn frames_present(track: &[BinaryMask]) -> usize {
    track.iter().filter(|m| !m.is_empty()).count()
}

/// One-to-one greedy matching by descending score (ties: lower pred index,
/// then lower gt index). Returns `(pred, gt, score)` in match order.
pub fn greedy_match(scores: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let mut cells: Vec<(usize, usize, f64)> = scores
        .iter()
        .enumerate()
        .flat_map(|(p, row)| row.iter().enumerate().map(move |(g, &s)| (p, g, s)))
        .collect();
    cells.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let (mut used_p, mut used_g) = (BTreeSet::new(), BTreeSet::new());
    let mut out = Vec::new();
    for (p, g, s) in cells {
        if s > 0.0 && !used_p.contains(&p) && !used_g.contains(&g) {
            used_p.insert(p);
            used_g.insert(g);
            out.push((p, g, s));
        }
    }
    out
}

/// Recall of the `n` longest-lived predicted tracks, averaged over IoU
/// thresholds. With no ground truth there is nothing to miss and the result
/// is 1.
pub fn ar_at_n(pred: &[Track], gt: &[Track], n: usize, thresholds: &[f64]) -> Result<f64> {
    if gt.is_empty() {
        return Ok(1.0);
    }
    if thresholds.is_empty() {
        return Err(Error::InvalidConfig("no IoU thresholds given".into()));
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(frames_present(&pred[i])), i));
    order.truncate(n);
    let scores = order
        .iter()
        .map(|&p| gt.iter().map(|g| st_iou(&pred[p], g)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    let matches = greedy_match(&scores);
    // Greedy over pairs above a threshold is a prefix of the full greedy
    // order, so one matching serves every threshold.
    let total: f64 = thresholds
        .iter()
        .map(|&t| matches.iter().filter(|m| m.2 >= t).count() as f64 / gt.len() as f64)
        .sum();
    Ok(total / thresholds.len() as f64)
}

/// Frames in which a ground-truth object's assigned prediction changes.
/// The assignment in a frame is the prediction with the highest IoU at or
/// above 0.5 (ties: lower id); uncovered frames keep the last assignment.
pub fn id_switches(pred: &BTreeMap<u16, Track>, gt: &BTreeMap<u16, Track>) -> Result<usize> {
    let mut switches = 0;
    for g in gt.values() {
        let mut last: Option<u16> = None;
        for (t, gm) in g.iter().enumerate() {
            if gm.is_empty() {
                continue;
            }
            let mut best: Option<(f64, u16)> = None;
            for (&id, p) in pred {
                let Some(pm) = p.get(t) else { continue };
                let iou = pm.iou(gm)?;
                if iou >= 0.5 && best.is_none_or(|(b, _)| iou > b) {
                    best = Some((iou, id));
                }
            }
            if let Some((_, id)) = best {
                if last.is_some_and(|l| l != id) {
                    switches += 1;
                }
                last = Some(id);
            }
        }
    }
    Ok(switches)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub matched_pred: Option<u16>,
    pub st_iou: f64,
    /// Mean and minimum IoU over frames where the object is present.
    pub mean_frame_iou: f64,
    pub min_frame_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_frames: usize,
    pub per_object: BTreeMap<u16, ObjectReport>,
    pub mean_st_iou: f64,
    pub ar_at_n: BTreeMap<usize, f64>,
    pub id_switches: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle_consistency_iou: Option<f64>,
}

/// Full report of predicted against ground-truth label maps.
pub fn evaluate(pred: &[LabelMask], gt: &[LabelMask]) -> Result<EvalReport> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predicted frames vs {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let pred_tracks = tracks_from_labels(pred)?;
    let gt_tracks = tracks_from_labels(gt)?;
    let pred_ids: Vec<u16> = pred_tracks.keys().copied().collect();
    let gt_ids: Vec<u16> = gt_tracks.keys().copied().collect();
    let pred_list: Vec<Track> = pred_tracks.values().cloned().collect();
    let gt_list: Vec<Track> = gt_tracks.values().cloned().collect();

    let scores = pred_list
        .iter()
        .map(|p| gt_list.iter().map(|g| st_iou(p, g)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    let matched: BTreeMap<usize, (usize, f64)> =
        greedy_match(&scores).into_iter().map(|(p, g, s)| (g, (p, s))).collect();

    let mut per_object = BTreeMap::new();
    for (gi, &gid) in gt_ids.iter().enumerate() {
        let g = &gt_list[gi];
        let report = match matched.get(&gi) {
            Some(&(pi, s)) => {
                let ious = g
                    .iter()
                    .zip(&pred_list[pi])
                    .filter(|(gm, _)| !gm.is_empty())
                    .map(|(gm, pm)| pm.iou(gm))
                    .collect::<Result<Vec<f64>>>()?;
                ObjectReport {
                    matched_pred: Some(pred_ids[pi]),
                    st_iou: s,
                    mean_frame_iou: mean(&ious),
                    min_frame_iou: ious.iter().copied().fold(1.0, f64::min),
                }
            }
            None => ObjectReport {
                matched_pred: None,
                st_iou: 0.0,
                mean_frame_iou: 0.0,
                min_frame_iou: 0.0,
            },
        };
        per_object.insert(gid, report);
    }
    let mean_st_iou = mean(&per_object.values().map(|r| r.st_iou).collect::<Vec<_>>());
    let thresholds = default_iou_thresholds();
    let mut ar = BTreeMap::new();
    for n in [1, 10, 100] {
        ar.insert(n, ar_at_n(&pred_list, &gt_list, n, &thresholds)?);
    }
    Ok(EvalReport {
        num_frames: gt.len(),
        per_object,
        mean_st_iou,
        ar_at_n: ar,
        id_switches: id_switches(&pred_tracks, &gt_tracks)?,
        cycle_consistency_iou: None,
    })
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
