//! Forward/backward cycle consistency.
//!
//! The tracker is run backwards over the sequence, seeded with the forward
//! run's last label map. Objects that come back to where the forward run
//! started them score high.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor_io::{EmbeddingGrid, LabelMask};
use crate::tracker::{run_frames, TrackerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    /// Mean over objects present at both ends; `None` if there are none.
    pub iou: Option<f64>,
    pub per_object: BTreeMap<u16, f64>,
    /// Frame-0 objects missing from the forward run's last frame.
    pub lost_forward: Vec<u16>,
    /// Objects in the last frame that were not there at frame 0.
    pub born_forward: Vec<u16>,
}

/// `forward` holds the forward run's label maps, one per frame.
pub fn cycle_consistency(
    frames: &[EmbeddingGrid],
    forward: &[LabelMask],
    config: &TrackerConfig,
) -> Result<CycleReport> {
    let (Some(first), Some(last)) = (forward.first(), forward.last()) else {
        return Ok(CycleReport {
            iou: None,
            per_object: BTreeMap::new(),
            lost_forward: Vec::new(),
            born_forward: Vec::new(),
        });
    };
    let start_ids = first.object_ids();
    let end_ids = last.object_ids();
    let lost_forward: Vec<u16> = start_ids.difference(&end_ids).copied().collect();
    let born_forward: Vec<u16> = end_ids.difference(&start_ids).copied().collect();

    let mut backward_config = config.clone();
    // Only the seeded objects are followed back.
    backward_config.redetect_interval = 0;
    let mut per_object = BTreeMap::new();
    if !end_ids.is_empty() {
        let backward = run_frames(
            "backward",
            frames.iter().rev().cloned().map(Ok),
            Some(last),
            &backward_config,
        )?;
        let back_first = backward.label_maps.last().expect("at least one frame");
        for id in start_ids.intersection(&end_ids) {
            per_object.insert(*id, back_first.object_mask(*id).iou(&first.object_mask(*id))?);
        }
    }
    let iou = (!per_object.is_empty()).then(|| per_object.values().sum::<f64>() / per_object.len() as f64);
    Ok(CycleReport {
        iou,
        per_object,
        lost_forward,
        born_forward,
    })
}
