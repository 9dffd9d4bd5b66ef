use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use cptrack_core::tensor_io::{read_grid_header, read_label_mask};
use cptrack_core::{MemoryDump, SequenceResult};

use crate::config::RunMeta;

pub fn run(path: &Path, out: &mut impl Write) -> anyhow::Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("lmk") => {
            let mask = read_label_mask(path).with_context(|| format!("reading {}", path.display()))?;
            writeln!(out, "label mask {}x{}", mask.height(), mask.width())?;
            writeln!(out, "{:>6} {:>8}", "id", "patches")?;
            for id in std::iter::once(0).chain(mask.object_ids()) {
                let n = mask.labels().iter().filter(|&&l| l == id).count();
                writeln!(out, "{id:>6} {n:>8}")?;
            }
        }
        Some("egr") => {
            let h = read_grid_header(path).with_context(|| format!("reading {}", path.display()))?;
            writeln!(
                out,
                "embedding grid {}x{}, dim {}, {}",
                h.height,
                h.width,
                h.dim,
                if h.normalized { "normalized" } else { "raw" }
            )?;
        }
        Some("json") => inspect_json(path, out)?,
        _ => bail!("don't know how to inspect {}", path.display()),
    }
    Ok(())
}

fn inspect_json(path: &Path, out: &mut impl Write) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if value.get("tracklets").is_some() {
        let r: SequenceResult = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        writeln!(out, "sequence {} ({} frames)", r.name, r.num_frames)?;
        writeln!(out, "{:>6} {:>6} {:>6} {:>8}", "id", "birth", "death", "present")?;
        for t in &r.tracklets {
            let death = t.death_frame.map_or_else(|| "-".to_string(), |d| d.to_string());
            writeln!(
                out,
                "{:>6} {:>6} {:>6} {:>8}",
                t.id,
                t.birth_frame,
                death,
                t.presence.len()
            )?;
        }
        for f in &r.failures {
            let id = f.object_id.map_or_else(|| "-".to_string(), |i| i.to_string());
            writeln!(out, "failure at frame {} (object {id}): {}", f.frame, f.message)?;
        }
    } else if value.get("entries").is_some() {
        let m: MemoryDump = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        writeln!(
            out,
            "memory: {} / {} entries, frames {}..={}",
            m.entries.len(),
            m.capacity,
            m.initial_frame,
            m.latest_frame
        )?;
        writeln!(out, "{:>6} {:>6} {:>8}", "object", "frame", "util")?;
        for e in &m.entries {
            writeln!(out, "{:>6} {:>6} {:>8}", e.object_id, e.frame_of_origin, e.utilization)?;
        }
    } else if value.get("tool_version").is_some() {
        let m: RunMeta = serde_json::from_value(value).with_context(|| format!("parsing {}", path.display()))?;
        writeln!(out, "run by cptrack {} with init {:?}", m.tool_version, m.init)?;
        for p in &m.manifests {
            writeln!(out, "  {}", p.display())?;
        }
        writeln!(out, "{}", toml::to_string_pretty(&m.config)?)?;
    } else {
        bail!("{} is not a result, memory dump or run metadata file", path.display());
    }
    Ok(())
}
