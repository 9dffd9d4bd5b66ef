use std::path::Path;

use anyhow::Context;
use cptrack_core::evalkit::{generate, SynthSpec};
use cptrack_core::tensor_io::{write_label_mask, FrameEntry, SequenceManifest};

/// Writes the sequence plus `spec.json`. Specs with parts also get
/// `masks_whole/` and `manifest_whole.json`, where parts are merged into
/// their whole.
pub fn run(spec_path: &Path, out: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(spec_path).with_context(|| format!("reading spec {}", spec_path.display()))?;
    let spec: SynthSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing spec {}", spec_path.display()))?;
    let seq = generate(&spec).with_context(|| format!("generating from {}", spec_path.display()))?;
    let manifest = seq.write(out)?;
    let spec_out = out.join("spec.json");
    std::fs::write(&spec_out, serde_json::to_string_pretty(&spec)? + "\n")
        .with_context(|| format!("writing {}", spec_out.display()))?;

    if !spec.parts.is_empty() {
        let dir = out.join("masks_whole");
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut frames = Vec::with_capacity(seq.frames.len());
        for (t, labels) in seq.whole_labels().iter().enumerate() {
            let mask = format!("masks_whole/{t:05}.lmk");
            write_label_mask(labels, out.join(&mask))?;
            frames.push(FrameEntry {
                embedding: format!("frames/{t:05}.egr").into(),
                mask: Some(mask.into()),
            });
        }
        SequenceManifest {
            name: format!("{}_whole", spec.name),
            fps: 10.0,
            frames,
        }
        .write(out.join("manifest_whole.json"))?;
    }
    println!("{}", manifest.display());
    Ok(())
}
