//! Synthetic sequences with ground truth, and the metrics used to score
//! tracking against them.

pub mod cycle;
pub mod metrics;
pub mod synth;

pub use cycle::{cycle_consistency, CycleReport};
pub use metrics::{ar_at_n, evaluate, id_switches, st_iou, tracks_from_labels, EvalReport, Track};
pub use synth::{generate, ObjectSpec, PartSpec, Shape, SynthSequence, SynthSpec};
