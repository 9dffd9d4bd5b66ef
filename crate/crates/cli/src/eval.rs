use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use cptrack_core::evalkit::{cycle_consistency, evaluate};
use cptrack_core::tensor_io::{read_label_mask, ManifestSequence};
use cptrack_core::{LabelMask, TrackerConfig};

use crate::config::load_config;

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A sequence output directory from `track`, holding `frames/NNNNN.lmk`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth manifest; every frame needs a mask.
    #[arg(long)]
    gt: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also run the tracker backwards and report cycle consistency.
    #[arg(long)]
    cycle: bool,
    /// Tracker config for the backward run.
    #[arg(long, requires = "cycle")]
    config: Option<PathBuf>,
}

pub fn run(args: EvalArgs) -> anyhow::Result<()> {
    let gt_seq = ManifestSequence::open(&args.gt).with_context(|| format!("opening manifest {}", args.gt.display()))?;
    let gt = (0..gt_seq.len())
        .map(|t| {
            gt_seq
                .read_mask(t)?
                .with_context(|| format!("{} has no mask for frame {t}", args.gt.display()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let pred = read_prediction(&args.pred)?;
    let mut report = evaluate(&pred, &gt).context("scoring prediction")?;
    if args.cycle {
        let config = match &args.config {
            Some(p) => load_config(p)?,
            None => TrackerConfig::default(),
        };
        let frames = (0..gt_seq.len())
            .map(|t| gt_seq.read_frame(t))
            .collect::<Result<Vec<_>, _>>()?;
        report.cycle_consistency_iou = cycle_consistency(&frames, &pred, &config)?.iou;
    }
    let json = serde_json::to_string_pretty(&report)? + "\n";
    match &args.out {
        Some(path) => std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{json}"),
    }
    Ok(())
}

/// Label maps `frames/00000.lmk`, `frames/00001.lmk`, ... with no gaps.
pub fn read_prediction(dir: &Path) -> anyhow::Result<Vec<LabelMask>> {
    let frames = dir.join("frames");
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(&frames).with_context(|| format!("listing {}", frames.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "lmk") {
            paths.push(path);
        }
    }
    paths.sort();
    let mut out = Vec::with_capacity(paths.len());
    for (t, path) in paths.iter().enumerate() {
        let expected = format!("{t:05}.lmk");
        if path.file_name().and_then(|n| n.to_str()) != Some(expected.as_str()) {
            bail!("{}: expected {expected} at position {t}", frames.display());
        }
        out.push(read_label_mask(path).with_context(|| format!("reading {}", path.display()))?);
    }
    if out.is_empty() {
        bail!("{} holds no label masks", frames.display());
    }
    Ok(out)
}
