//! Per-sequence tracking loop.
//!
//! Frame 0 is segmented by grid detection (or taken from given masks). Every
//! later frame runs propagate → segment → resolve overlaps → out check →
//! memory update, with periodic re-detection to admit new objects.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycle_prop::{self, PropagationConfig, PropagationMode, MAX_K};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::memory::{MemoryBank, MemoryDump, DEFAULT_CAPACITY_FRAMES};
use crate::segmenter::{self, grid_detect, DetectConfig, ObjectState, Segmenter, ToySegmenterConfig};
use crate::sim_kernel::dot;
use crate::tensor_io::{EmbeddingGrid, LabelMask, ManifestSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub k_points: usize,
    /// Re-detect every this many frames; 0 turns re-detection off.
    pub redetect_interval: u32,
    pub out_limit: u32,
    pub new_object_iou: f64,
    /// Bank size in patches; defaults to eight frames' worth.
    pub memory_capacity: Option<usize>,
    /// Cycle pairs below this similarity are ignored.
    pub min_pair_similarity: f32,
    pub segmenter: String,
    pub detect: DetectConfig,
    pub toy: ToySegmenterConfig,
    /// Keep the first-frame memory fixed.
    pub disable_memory: bool,
    /// Prompt from each reference patch's best match instead of mutual pairs.
    pub disable_cycle_pairs: bool,
    /// Segment every frame from the prompt alone, without carried state.
    pub disable_object_state: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            k_points: cycle_prop::DEFAULT_K,
            redetect_interval: 5,
            out_limit: 10,
            new_object_iou: 0.5,
            memory_capacity: None,
            min_pair_similarity: 0.0,
            segmenter: "toy".into(),
            detect: DetectConfig::default(),
            toy: ToySegmenterConfig::default(),
            disable_memory: false,
            disable_cycle_pairs: false,
            disable_object_state: false,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(1..=MAX_K).contains(&self.k_points) {
            return bad(format!("k_points must be in 1..={MAX_K}, got {}", self.k_points));
        }
        if self.out_limit == 0 {
            return bad("out_limit must be positive".into());
        }
        if !(self.new_object_iou > 0.0 && self.new_object_iou < 1.0) {
            return bad(format!("new_object_iou must be in (0, 1), got {}", self.new_object_iou));
        }
        if self.memory_capacity == Some(0) {
            return bad("memory_capacity must be positive".into());
        }
        if self.detect.grid_side == 0 {
            return bad("detect.grid_side must be positive".into());
        }
        for (name, v) in [
            ("detect.q_min", self.detect.q_min),
            ("detect.s_min", self.detect.s_min),
            ("detect.nms_iou", self.detect.nms_iou),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(self.toy.default_tau > 0.0 && self.toy.default_tau <= 1.0) {
            return bad(format!(
                "toy.default_tau must be in (0, 1], got {}",
                self.toy.default_tau
            ));
        }
        for (name, v) in [
            ("toy.signature_keep", self.toy.signature_keep),
            ("toy.area_keep", self.toy.area_keep),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        Ok(())
    }

    fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            k: self.k_points,
            min_similarity: self.min_pair_similarity,
            mode: if self.disable_cycle_pairs {
                PropagationMode::MaxSimilarity
            } else {
                PropagationMode::CyclePairs
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub object_id: u16,
    pub state: ObjectState,
    /// Final per-frame masks; a missing frame is a miss.
    pub masks: BTreeMap<u32, BinaryMask>,
    pub out_counter: u32,
    pub alive: bool,
    pub birth_frame: u32,
    pub death_frame: Option<u32>,
}

impl Tracklet {
    fn new(object_id: u16, state: ObjectState, frame: u32, mask: BinaryMask) -> Self {
        Self {
            object_id,
            state,
            masks: BTreeMap::from([(frame, mask)]),
            out_counter: 0,
            alive: true,
            birth_frame: frame,
            death_frame: None,
        }
    }
}

/// A non-fatal problem recorded while tracking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameFailure {
    pub frame: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub object_id: Option<u16>,
    pub message: String,
}

pub struct TrackerSession {
    config: TrackerConfig,
    segmenter: Box<dyn Segmenter>,
    memory: MemoryBank,
    tracklets: Vec<Tracklet>,
    next_id: u32,
    frame: u32,
    shape: (usize, usize, usize),
    failures: Vec<FrameFailure>,
}

impl std::fmt::Debug for TrackerSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrackerSession")
            .field("segmenter", &self.segmenter.name())
            .field("frame", &self.frame)
            .field("tracklets", &self.tracklets.len())
            .field("memory", &self.memory.len())
            .finish()
    }
}

impl TrackerSession {
    /// Automatic mode: detect objects on the first frame.
    pub fn init_sequence(frame0: &EmbeddingGrid, config: TrackerConfig) -> Result<(Self, LabelMask)> {
        config.validate()?;
        let segmenter = segmenter::segmenter_from_name(&config.segmenter, config.toy)?;
        let mut proposals = grid_detect(segmenter.as_ref(), frame0, &config.detect);
        // Number objects in reading order of their first patch.
        proposals.sort_by_key(|p| p.mask.indices().next());

        let (h, w) = (frame0.height(), frame0.width());
        let mut labels = LabelMask::background(h, w);
        let mut objects = Vec::new();
        for p in proposals {
            let free = claim_free(&labels, &p.mask);
            if free.is_empty() {
                continue;
            }
            let id = u16::try_from(objects.len() + 1)
                .map_err(|_| Error::InvalidConfig("more than 65535 objects detected".into()))?;
            labels.paint(&free, id)?;
            objects.push((id, p.state, free));
        }
        let mut session = Self::from_objects(frame0, &labels, objects, config, segmenter)?;
        if session.tracklets.is_empty() {
            session.fail(None, &Error::NoObjectsDetected);
        }
        Ok((session, labels))
    }

    /// Semi-supervised mode: the given label map defines the objects.
    pub fn init_with_masks(frame0: &EmbeddingGrid, labels: &LabelMask, config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        if !labels.matches_grid(frame0) {
            return Err(Error::DimensionMismatch(
                "initial labels do not match the first frame".into(),
            ));
        }
        let segmenter = segmenter::segmenter_from_name(&config.segmenter, config.toy)?;
        let objects = labels
            .object_ids()
            .into_iter()
            .map(|id| {
                let mask = labels.object_mask(id);
                let state = ObjectState::from_mask(frame0, &mask, &config.toy).expect("id present in labels");
                (id, state, mask)
            })
            .collect();
        Self::from_objects(frame0, labels, objects, config, segmenter)
    }

    fn from_objects(
        frame0: &EmbeddingGrid,
        labels: &LabelMask,
        objects: Vec<(u16, ObjectState, BinaryMask)>,
        config: TrackerConfig,
        segmenter: Box<dyn Segmenter>,
    ) -> Result<Self> {
        let capacity = config
            .memory_capacity
            .unwrap_or(DEFAULT_CAPACITY_FRAMES * frame0.num_patches());
        let memory = MemoryBank::init(frame0, labels, capacity)?;
        let next_id = objects.iter().map(|o| u32::from(o.0)).max().unwrap_or(0) + 1;
        let tracklets = objects
            .into_iter()
            .map(|(id, state, mask)| Tracklet::new(id, state, 0, mask))
            .collect();
        Ok(Self {
            config,
            segmenter,
            memory,
            tracklets,
            next_id,
            frame: 0,
            shape: (frame0.height(), frame0.width(), frame0.dim()),
            failures: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn memory(&self) -> &MemoryBank {
        &self.memory
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    pub fn failures(&self) -> &[FrameFailure] {
        &self.failures
    }

    /// Index of the last processed frame.
    pub fn frame(&self) -> u32 {
        self.frame
    }

    fn fail(&mut self, object_id: Option<u16>, err: &Error) {
        self.failures.push(FrameFailure {
            frame: self.frame,
            object_id,
            message: err.to_string(),
        });
    }

    fn fresh_id(&mut self) -> Result<u16> {
        let id = u16::try_from(self.next_id).map_err(|_| Error::InvalidConfig("object ids exhausted".into()))?;
        self.next_id += 1;
        Ok(id)
    }

    /// Processes the next frame and returns its label map.
    pub fn step(&mut self, frame: &EmbeddingGrid) -> Result<LabelMask> {
        let shape = (frame.height(), frame.width(), frame.dim());
        if shape != self.shape {
            return Err(Error::DimensionMismatch(format!(
                "frame is {}x{}x{}, session expects {}x{}x{}",
                shape.0, shape.1, shape.2, self.shape.0, self.shape.1, self.shape.2
            )));
        }
        let t = self.frame + 1;
        self.frame = t;

        // 1. propagate
        let alive: Vec<usize> = (0..self.tracklets.len()).filter(|&i| self.tracklets[i].alive).collect();
        let propagation = if self.memory.is_empty() || alive.is_empty() {
            None
        } else {
            let reference = self.memory.reference_view()?;
            Some(cycle_prop::propagate(&reference, frame, &self.config.propagation())?)
        };

        // 2. segment each prompted object against the same snapshot
        let use_state = !self.config.disable_object_state;
        let segmenter = self.segmenter.as_ref();
        let outcomes: Vec<(usize, Result<segmenter::MaskProposal>)> = alive
            .par_iter()
            .map(|&i| {
                let tr = &self.tracklets[i];
                let prompt = propagation.as_ref().and_then(|p| p.prompts.get(&tr.object_id));
                let result = match prompt {
                    Some(prompt) => segmenter.segment(frame, &prompt.points, use_state.then_some(&tr.state)),
                    None => Err(Error::NoPairs {
                        object_id: tr.object_id,
                    }),
                };
                (i, result)
            })
            .collect();

        let mut proposals: BTreeMap<u16, (usize, segmenter::MaskProposal)> = BTreeMap::new();
        for (i, outcome) in outcomes {
            match outcome {
                Ok(p) => {
                    proposals.insert(self.tracklets[i].object_id, (i, p));
                }
                Err(Error::NoPairs { .. } | Error::EmptyMask) => {}
                Err(e) => {
                    let id = self.tracklets[i].object_id;
                    self.fail(Some(id), &e);
                }
            }
        }

        // 3. resolve overlaps
        let mut masks = resolve_overlaps(frame, &proposals);

        // 4. out check against pre-update memory
        let out = self.object_out(frame, &alive, &masks);

        for &i in &alive {
            let id = self.tracklets[i].object_id;
            if out.contains(&id) {
                masks.remove(&id);
            }
            let tr = &mut self.tracklets[i];
            if out.contains(&id) {
                tr.out_counter += 1;
                if tr.out_counter >= self.config.out_limit {
                    tr.alive = false;
                    tr.death_frame = Some(t);
                }
            } else {
                tr.out_counter = 0;
            }
        }
        for (id, (i, p)) in proposals {
            if let Some(mask) = masks.get(&id) {
                self.tracklets[i].state = p.state;
                self.tracklets[i].masks.insert(t, mask.clone());
            }
        }

        // 5. memory update
        if let Some(prop) = &propagation {
            let mut used = Vec::new();
            let mut kept_pairs = BTreeMap::new();
            for (id, list) in &prop.pairs.objects {
                let Some(mask) = masks.get(id) else { continue };
                let inside: Vec<_> = list.iter().copied().filter(|p| mask.get_index(p.cur_index)).collect();
                used.extend(inside.iter().map(|p| p.ref_index));
                kept_pairs.insert(*id, inside);
            }
            self.memory.record_utilization(&used)?;
            if !self.config.disable_memory {
                if let Err(e) = self.memory.insert_frame(t, frame, &kept_pairs, &masks) {
                    match e {
                        Error::InsertionOverflow { .. } | Error::NothingEvictable { .. } => self.fail(None, &e),
                        other => return Err(other),
                    }
                }
            }
        }

        let mut labels = LabelMask::background(shape.0, shape.1);
        for (id, mask) in &masks {
            labels.paint(mask, *id)?;
        }

        // 6. re-detection
        let interval = self.config.redetect_interval;
        if interval > 0 && t % interval == 0 {
            self.object_in(frame, &mut labels, &masks)?;
        }
        Ok(labels)
    }

    /// Ids judged out for this frame: missing mask, or an object token whose
    /// most similar tracklet token is not its own.
    fn object_out(&self, frame: &EmbeddingGrid, alive: &[usize], masks: &BTreeMap<u16, BinaryMask>) -> BTreeSet<u16> {
        let tokens: Vec<(u16, Vec<f32>)> = alive
            .iter()
            .map(|&i| {
                let tr = &self.tracklets[i];
                let token = match self.memory.object_mean(tr.object_id) {
                    Some(mean) => normalize(&mean),
                    None => tr.state.signature.clone(),
                };
                (tr.object_id, token)
            })
            .collect();
        let mut out = BTreeSet::new();
        for (id, _) in &tokens {
            let Some(mask) = masks.get(id) else {
                out.insert(*id);
                continue;
            };
            let object_token = segmenter::pooled_signature(frame, mask);
            let mut best = (f64::NEG_INFINITY, 0u16);
            for (other, token) in &tokens {
                let s = dot(&object_token, token);
                if s > best.0 {
                    best = (s, *other);
                }
            }
            if best.1 != *id {
                out.insert(*id);
            }
        }
        out
    }

    /// Admits re-detected proposals that overlap no current mask.
    fn object_in(
        &mut self,
        frame: &EmbeddingGrid,
        labels: &mut LabelMask,
        masks: &BTreeMap<u16, BinaryMask>,
    ) -> Result<()> {
        let t = self.frame;
        let mut existing: Vec<BinaryMask> = masks.values().cloned().collect();
        let proposals = grid_detect(self.segmenter.as_ref(), frame, &self.config.detect);
        for p in proposals {
            let max_iou = existing
                .iter()
                .map(|m| m.iou(&p.mask).expect("same dims"))
                .fold(0.0, f64::max);
            if max_iou >= self.config.new_object_iou {
                continue;
            }
            let free = claim_free(labels, &p.mask);
            if free.is_empty() {
                continue;
            }
            let id = self.fresh_id()?;
            labels.paint(&free, id)?;
            if let Err(e) = self.memory.admit_object(t, frame, id, &free) {
                match e {
                    Error::InsertionOverflow { .. } => self.fail(Some(id), &e),
                    other => return Err(other),
                }
            }
            existing.push(p.mask);
            self.tracklets.push(Tracklet::new(id, p.state, t, free));
        }
        Ok(())
    }

    pub fn tracklet_table(&self) -> Vec<TrackletRecord> {
        self.tracklets
            .iter()
            .map(|tr| TrackletRecord {
                id: tr.object_id,
                birth_frame: tr.birth_frame,
                death_frame: tr.death_frame,
                presence: tr.masks.keys().copied().collect(),
            })
            .collect()
    }
}

fn normalize(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.iter().map(|x| (x / norm) as f32).collect()
}

/// The part of `mask` not yet labeled.
fn claim_free(labels: &LabelMask, mask: &BinaryMask) -> BinaryMask {
    let mut free = mask.clone();
    for i in mask.indices() {
        if labels.labels()[i] != 0 {
            free.set_index(i, false);
        }
    }
    free
}

/// Gives each multiply-claimed patch to the claimant whose signature it is
/// most similar to (ties: lower id). Objects left with nothing are dropped.
fn resolve_overlaps(
    frame: &EmbeddingGrid,
    proposals: &BTreeMap<u16, (usize, segmenter::MaskProposal)>,
) -> BTreeMap<u16, BinaryMask> {
    let mut masks: BTreeMap<u16, BinaryMask> = proposals.iter().map(|(&id, (_, p))| (id, p.mask.clone())).collect();
    for i in 0..frame.num_patches() {
        let claimants: Vec<u16> = proposals
            .iter()
            .filter(|(_, (_, p))| p.mask.get_index(i))
            .map(|(&id, _)| id)
            .collect();
        if claimants.len() < 2 {
            continue;
        }
        let patch = frame.patch(i);
        let mut winner = claimants[0];
        let mut best = f64::NEG_INFINITY;
        for &id in &claimants {
            let s = dot(patch, &proposals[&id].1.state.signature);
            if s > best {
                best = s;
                winner = id;
            }
        }
        for id in claimants {
            if id != winner {
                masks.get_mut(&id).expect("claimant").set_index(i, false);
            }
        }
    }
    masks.retain(|_, m| !m.is_empty());
    masks
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackletRecord {
    pub id: u16,
    pub birth_frame: u32,
    pub death_frame: Option<u32>,
    /// Frames in which the object has a mask.
    pub presence: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub name: String,
    pub num_frames: usize,
    pub tracklets: Vec<TrackletRecord>,
    pub failures: Vec<FrameFailure>,
    #[serde(skip)]
    pub label_maps: Vec<LabelMask>,
    /// Wall time per frame; kept out of serialized results.
    #[serde(skip)]
    pub frame_times: Vec<Duration>,
    #[serde(skip)]
    pub final_memory: Option<MemoryDump>,
}

/// How the first frame is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Detect,
    /// Use the first frame's label mask from the input.
    GroundTruth,
}

/// Tracks over any frame source. `frames` yields frames 0..T in order.
pub fn run_frames<I>(
    name: &str,
    mut frames: I,
    init: Option<&LabelMask>,
    config: &TrackerConfig,
) -> Result<SequenceResult>
where
    I: Iterator<Item = Result<EmbeddingGrid>>,
{
    let started = Instant::now();
    let frame0 = frames
        .next()
        .ok_or_else(|| Error::InvalidConfig("sequence has no frames".into()))??;
    let (mut session, first) = match init {
        Some(labels) => {
            let s = TrackerSession::init_with_masks(&frame0, labels, config.clone())?;
            (s, labels.clone())
        }
        None => TrackerSession::init_sequence(&frame0, config.clone())?,
    };
    drop(frame0);
    let (h, w, _) = session.shape;
    let mut label_maps = vec![first];
    let mut frame_times = vec![started.elapsed()];
    for frame in frames {
        let frame = frame?;
        let started = Instant::now();
        match session.step(&frame) {
            Ok(labels) => label_maps.push(labels),
            Err(e @ (Error::Io { .. } | Error::DimensionMismatch(_))) => return Err(e),
            Err(e) => {
                session.fail(None, &e);
                label_maps.push(LabelMask::background(h, w));
            }
        }
        frame_times.push(started.elapsed());
    }
    Ok(SequenceResult {
        name: name.to_owned(),
        num_frames: label_maps.len(),
        tracklets: session.tracklet_table(),
        failures: session.failures.clone(),
        label_maps,
        frame_times,
        final_memory: Some(session.memory.dump(false)),
    })
}

pub fn run(sequence: &ManifestSequence, config: &TrackerConfig, init: InitMode) -> Result<SequenceResult> {
    let init_labels = match init {
        InitMode::Detect => None,
        InitMode::GroundTruth => Some(sequence.read_mask(0)?.ok_or_else(|| Error::Manifest {
            path: sequence.path.clone(),
            message: "ground-truth init needs a mask for frame 0".into(),
        })?),
    };
    let frames = (0..sequence.len()).map(|i| sequence.read_frame(i));
    run_frames(&sequence.manifest.name, frames, init_labels.as_ref(), config)
}
