use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use cptrack_core::tensor_io::{write_label_mask, ManifestSequence};
use cptrack_core::tracker;
use cptrack_core::{InitMode, SequenceResult, TrackerConfig};
use rayon::prelude::*;

use crate::config::{load_config, RunMeta, TrackOverrides, CONFIG_ENV};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    /// Detect objects in the first frame.
    Detect,
    /// Start from the first frame's ground-truth mask.
    GroundTruth,
}

impl From<InitArg> for InitMode {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Detect => InitMode::Detect,
            InitArg::GroundTruth => InitMode::GroundTruth,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Sequence manifests to track.
    #[arg(required_unless_present = "from_meta", conflicts_with = "from_meta")]
    manifests: Vec<PathBuf>,
    /// Run directory; one subdirectory per sequence.
    #[arg(long)]
    out: PathBuf,
    /// Tracker config, TOML or JSON.
    #[arg(long, env = CONFIG_ENV, conflicts_with = "from_meta")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrackOverrides,
    #[arg(long, value_enum, default_value = "detect", conflicts_with = "from_meta")]
    init: InitArg,
    /// Sequences tracked in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also write each sequence's final memory as `memory.json`.
    #[arg(long, conflicts_with = "from_meta")]
    dump_memory: bool,
    /// Repeat a run from its `run_meta.json`; other run settings are taken from it.
    #[arg(long)]
    from_meta: Option<PathBuf>,
}

pub fn run(args: TrackArgs) -> anyhow::Result<()> {
    if args.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let meta = match &args.from_meta {
        Some(path) => RunMeta::read(path)?,
        None => resolve(&args)?,
    };
    let sequences = meta
        .manifests
        .iter()
        .map(|p| ManifestSequence::open(p).with_context(|| format!("opening manifest {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut names = BTreeSet::new();
    for s in &sequences {
        let name = &s.manifest.name;
        if name.is_empty() || name == "." || name == ".." || name.contains(['/', '\\']) {
            bail!(
                "sequence name {name:?} in {} is not usable as a directory name",
                s.path.display()
            );
        }
        if !names.insert(name.clone()) {
            bail!("two manifests share the sequence name {name:?}");
        }
    }

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    meta.write(&args.out.join("run_meta.json"))?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.jobs).build()?;
    let results: Vec<SequenceResult> = pool.install(|| {
        sequences
            .par_iter()
            .map(|s| {
                let result = tracker::run(s, &meta.config, meta.init)
                    .with_context(|| format!("tracking {}", s.path.display()))?;
                write_sequence(&args.out.join(&s.manifest.name), &result, meta.dump_memory)?;
                Ok(result)
            })
            .collect::<anyhow::Result<_>>()
    })?;

    for r in &results {
        eprintln!("{}", timing_summary(r));
    }
    Ok(())
}

fn resolve(args: &TrackArgs) -> anyhow::Result<RunMeta> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => TrackerConfig::default(),
    };
    args.overrides.apply(&mut config);
    config
        .validate()
        .context("invalid config after command-line overrides")?;
    let manifests = args
        .manifests
        .iter()
        .map(|p| std::path::absolute(p).with_context(|| format!("resolving manifest path {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(RunMeta {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        manifests,
        init: args.init.into(),
        dump_memory: args.dump_memory,
        config,
    })
}

fn write_sequence(dir: &Path, result: &SequenceResult, dump_memory: bool) -> anyhow::Result<()> {
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).with_context(|| format!("creating {}", frames.display()))?;
    for (t, labels) in result.label_maps.iter().enumerate() {
        write_label_mask(labels, frames.join(format!("{t:05}.lmk")))?;
    }
    let json = serde_json::to_string_pretty(result)? + "\n";
    let path = dir.join("result.json");
    std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    if let (true, Some(memory)) = (dump_memory, &result.final_memory) {
        let path = dir.join("memory.json");
        let json = serde_json::to_string_pretty(memory)? + "\n";
        std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn timing_summary(r: &SequenceResult) -> String {
    let total: Duration = r.frame_times.iter().sum();
    let max = r.frame_times.iter().max().copied().unwrap_or_default();
    let mean = total.as_secs_f64() * 1e3 / r.frame_times.len().max(1) as f64;
    let alive = r.tracklets.iter().filter(|t| t.death_frame.is_none()).count();
    format!(
        "{}: {} frames in {:.3} s (mean {:.2} ms, max {:.2} ms per frame), {} tracklets ({} alive), {} failures",
        r.name,
        r.num_frames,
        total.as_secs_f64(),
        mean,
        max.as_secs_f64() * 1e3,
        r.tracklets.len(),
        alive,
        r.failures.len()
    )
}
