//! Zero-shot video object tracking over patch-embedding grids.
//!
//! Frames arrive as L2-normalized embedding grids. Objects are carried from
//! frame to frame by mutual nearest-neighbour ("cycle-ack") pairs between a
//! bounded memory of past object patches and the current frame, turned into
//! point prompts for a prompted segmenter.

pub mod cycle_prop;
pub mod error;
pub mod evalkit;
pub mod mask;
pub mod memory;
pub mod segmenter;
pub mod sim_kernel;
pub mod tensor_io;
pub mod tracker;

pub use cycle_prop::{CyclePair, PositionPrompt, PropagationConfig, PropagationMode, ReferenceSet};
pub use error::{Error, Result};
pub use mask::{BinaryMask, Point};
pub use memory::{MemoryBank, MemoryDump, MemoryEntry};
pub use segmenter::{MaskProposal, ObjectState, Segmenter, ToySegmenter};
pub use sim_kernel::{SimilarityMatrix, Vectors};
pub use tensor_io::{EmbeddingGrid, LabelMask, SequenceManifest};
pub use tracker::{InitMode, SequenceResult, TrackerConfig, TrackerSession, Tracklet};
