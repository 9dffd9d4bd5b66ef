//! Tracker configuration files, command-line overrides and run metadata.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use cptrack_core::{InitMode, TrackerConfig};
use serde::{Deserialize, Serialize};

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "CPTRACK_CONFIG";

/// Reads a TOML or JSON tracker config, chosen by file extension.
pub fn load_config(path: &Path) -> anyhow::Result<TrackerConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let config: TrackerConfig = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?,
        Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?,
        _ => bail!("config {} must end in .toml or .json", path.display()),
    };
    config
        .validate()
        .with_context(|| format!("invalid config {}", path.display()))?;
    Ok(config)
}

/// Flags that override individual config fields.
#[derive(Debug, Clone, Default, Args)]
pub struct TrackOverrides {
    /// Prompt points per object.
    #[arg(long)]
    pub k_points: Option<usize>,
    /// Frames between re-detections; 0 disables them.
    #[arg(long)]
    pub redetect_interval: Option<u32>,
    /// Consecutive out frames before a tracklet dies.
    #[arg(long)]
    pub out_limit: Option<u32>,
    /// A detection overlapping every tracked mask below this IoU is a new object.
    #[arg(long)]
    pub new_object_iou: Option<f64>,
    /// Memory capacity in patches.
    #[arg(long)]
    pub memory_capacity: Option<usize>,
    #[arg(long)]
    pub min_pair_similarity: Option<f32>,
    /// Prompts per side of the detection grid.
    #[arg(long)]
    pub grid_side: Option<usize>,
    #[arg(long)]
    pub q_min: Option<f64>,
    #[arg(long)]
    pub s_min: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    /// Freeze memory at the first frame.
    #[arg(long)]
    pub disable_memory: bool,
    /// Prompt from plain best matches instead of mutual pairs.
    #[arg(long)]
    pub disable_cycle_pairs: bool,
    /// Segment without carried per-object state.
    #[arg(long)]
    pub disable_object_state: bool,
}

impl TrackOverrides {
    pub fn apply(&self, config: &mut TrackerConfig) {
        fn set<T: Copy>(field: &mut T, value: Option<T>) {
            if let Some(v) = value {
                *field = v;
            }
        }
        set(&mut config.k_points, self.k_points);
        set(&mut config.redetect_interval, self.redetect_interval);
        set(&mut config.out_limit, self.out_limit);
        set(&mut config.new_object_iou, self.new_object_iou);
        set(&mut config.min_pair_similarity, self.min_pair_similarity);
        set(&mut config.detect.grid_side, self.grid_side);
        set(&mut config.detect.q_min, self.q_min);
        set(&mut config.detect.s_min, self.s_min);
        set(&mut config.detect.nms_iou, self.nms_iou);
        if self.memory_capacity.is_some() {
            config.memory_capacity = self.memory_capacity;
        }
        config.disable_memory |= self.disable_memory;
        config.disable_cycle_pairs |= self.disable_cycle_pairs;
        config.disable_object_state |= self.disable_object_state;
    }
}

/// Everything needed to repeat a `track` run, written as `run_meta.json`.
///
/// Timings and the output directory are left out so that two runs from the
/// same metadata produce identical directories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub tool_version: String,
    pub manifests: Vec<PathBuf>,
    pub init: InitMode,
    pub dump_memory: bool,
    pub config: TrackerConfig,
}

impl RunMeta {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading run metadata {}", path.display()))?;
        let meta: Self =
            serde_json::from_str(&text).with_context(|| format!("parsing run metadata {}", path.display()))?;
        meta.config
            .validate()
            .with_context(|| format!("invalid config in {}", path.display()))?;
        Ok(meta)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let json = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))
    }
}
