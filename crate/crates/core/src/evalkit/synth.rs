//! Seeded synthetic sequences with exact ground truth.
//!
//! Each object is a rectangle or ellipse with a unit signature; its patches
//! are the signature plus Gaussian noise, renormalized, drawn over a
//! background with its own signature. Objects move at constant velocity and
//! bounce off the borders. A deformation amplitude makes them breathe
//! (area-preserving stretch) and drift in appearance towards a second vector
//! and back. Parts are drawn inside a whole at cosine ~0.9 to its signature.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{self, EmbeddingGrid, FrameEntry, LabelMask, SequenceManifest};

/// Perturbation size that puts a part at cosine 0.9 to its whole.
pub const PART_EPSILON: f64 = 0.4843;
pub const MAX_SIGNATURE_COSINE: f64 = 0.3;
const MAX_DRAWS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    #[default]
    Rect,
    Ellipse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    #[serde(default)]
    pub shape: Shape,
    /// `[rows, cols]` in patches.
    pub size: [f64; 2],
    /// Centre `[row, col]` at frame 0; random when absent.
    #[serde(default)]
    pub start: Option<[f64; 2]>,
    /// Patches per frame, `[row, col]`.
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Amplitude in `[0, 1]` of the periodic stretch and appearance drift.
    #[serde(default)]
    pub deformation: f64,
    #[serde(default = "default_period")]
    pub deformation_period: f64,
    #[serde(default)]
    pub appear_at: Option<usize>,
    #[serde(default)]
    pub vanish_at: Option<usize>,
}

fn default_period() -> f64 {
    20.0
}

/// A part drawn inside `objects[whole]`, moving with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartSpec {
    pub whole: usize,
    pub size: [f64; 2],
    /// Centre offset from the whole's centre.
    #[serde(default)]
    pub offset: [f64; 2],
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_epsilon() -> f64 {
    PART_EPSILON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub frames: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub parts: Vec<PartSpec>,
}

fn default_name() -> String {
    "synth".into()
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InfeasibleSpec(m));
        if self.height == 0 || self.width == 0 || self.dim < 2 || self.frames == 0 {
            return bad("grid must be non-empty with dim >= 2 and at least one frame".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if self.objects.len() + self.parts.len() > usize::from(u16::MAX) {
            return bad("too many objects".into());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !(o.size[0] > 0.0 && o.size[1] > 0.0) {
                return bad(format!("object {i} has non-positive size"));
            }
            if !(0.0..=1.0).contains(&o.deformation) || o.deformation_period <= 0.0 {
                return bad(format!(
                    "object {i}: deformation must be in [0, 1] with a positive period"
                ));
            }
            let (lo, hi) = self.centre_range(o);
            if lo[0] > hi[0] || lo[1] > hi[1] {
                return bad(format!(
                    "object {i} does not fit in a {}x{} grid",
                    self.height, self.width
                ));
            }
            if let Some(s) = o.start {
                if s[0] < lo[0] || s[0] > hi[0] || s[1] < lo[1] || s[1] > hi[1] {
                    return bad(format!("object {i} starts partly outside the grid"));
                }
            }
        }
        for (i, p) in self.parts.iter().enumerate() {
            if p.whole >= self.objects.len() {
                return bad(format!("part {i} refers to missing object {}", p.whole));
            }
            if !(p.epsilon > 0.0 && p.size[0] > 0.0 && p.size[1] > 0.0) {
                return bad(format!("part {i} needs positive size and epsilon"));
            }
        }
        Ok(())
    }

    /// Allowed centre range, accounting for the largest stretch.
    fn centre_range(&self, o: &ObjectSpec) -> ([f64; 2], [f64; 2]) {
        let grow = 1.0 / (1.0 - 0.5 * o.deformation);
        let half = [0.5 * o.size[0] * grow, 0.5 * o.size[1] * grow];
        (
            [half[0] - 0.5, half[1] - 0.5],
            [self.height as f64 - 0.5 - half[0], self.width as f64 - 0.5 - half[1]],
        )
    }

    /// Label id of object `i` (1-based); parts follow the objects.
    pub fn object_id(&self, i: usize) -> u16 {
        (i + 1) as u16
    }

    pub fn part_id(&self, k: usize) -> u16 {
        (self.objects.len() + k + 1) as u16
    }
}

/// Triangle-wave reflection of `x` into `[lo, hi]`.
fn bounce(x: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (x - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v {
        *x /= n;
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if v.iter().map(|x| x * x).sum::<f64>() > 1e-12 {
            normalize(&mut v);
            return v;
        }
    }
}

/// Draws unit vectors until `count` of them have pairwise cosine at most
/// [`MAX_SIGNATURE_COSINE`].
fn separated_signatures(rng: &mut ChaCha8Rng, d: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let mut placed = false;
        for _ in 0..MAX_DRAWS {
            let v = random_unit(rng, d);
            if out.iter().all(|u| cosine(u, &v) <= MAX_SIGNATURE_COSINE) {
                out.push(v);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasibleSpec(format!(
                "could not draw signature {k} of {count} with cosine <= {MAX_SIGNATURE_COSINE} in dimension {d}"
            )));
        }
    }
    Ok(out)
}

/// `whole + epsilon * u` with `u` a random unit vector orthogonal to `whole`.
fn part_signature(rng: &mut ChaCha8Rng, whole: &[f64], epsilon: f64) -> Vec<f64> {
    loop {
        let mut u = random_unit(rng, whole.len());
        let proj = cosine(&u, whole);
        for (x, w) in u.iter_mut().zip(whole) {
            *x -= proj * w;
        }
        if u.iter().map(|x| x * x).sum::<f64>() > 1e-6 {
            normalize(&mut u);
            let mut v: Vec<f64> = whole.iter().zip(&u).map(|(w, x)| w + epsilon * x).collect();
            normalize(&mut v);
            return v;
        }
    }
}

/// The generated sequence held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub spec: SynthSpec,
    pub frames: Vec<EmbeddingGrid>,
    /// Finest labels: a part's patches carry the part id.
    pub labels: Vec<LabelMask>,
    pub background_signature: Vec<f64>,
    /// Frame-0 signature per label id.
    pub signatures: BTreeMap<u16, Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
struct Placement {
    centre: [f64; 2],
    half: [f64; 2],
}

fn inside(shape: Shape, p: &Placement, r: usize, c: usize) -> bool {
    let dr = (r as f64 - p.centre[0]) / p.half[0];
    let dc = (c as f64 - p.centre[1]) / p.half[1];
    match shape {
        // Half-open so an integer size covers exactly that many cells.
        Shape::Rect => (-1.0..1.0).contains(&dr) && (-1.0..1.0).contains(&dc),
        Shape::Ellipse => dr * dr + dc * dc < 1.0,
    }
}

pub fn generate(spec: &SynthSpec) -> Result<SynthSequence> {
    spec.validate()?;
    let d = spec.dim;
    let n = spec.objects.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Background, one signature per object, then one drift target per object.
    let sigs = separated_signatures(&mut rng, d, 1 + 2 * n)?;
    let background = sigs[0].clone();
    let base: Vec<Vec<f64>> = sigs[1..=n].to_vec();
    let drift: Vec<Vec<f64>> = sigs[n + 1..].to_vec();
    let part_base: Vec<Vec<f64>> = spec
        .parts
        .iter()
        .map(|p| part_signature(&mut rng, &base[p.whole], p.epsilon))
        .collect();
    let starts: Vec<[f64; 2]> = spec
        .objects
        .iter()
        .map(|o| {
            let (lo, hi) = spec.centre_range(o);
            o.start
                .unwrap_or_else(|| [rng.random_range(lo[0]..=hi[0]), rng.random_range(lo[1]..=hi[1])])
        })
        .collect();

    let mut signatures = BTreeMap::new();
    for (i, s) in base.iter().enumerate() {
        signatures.insert(spec.object_id(i), s.clone());
    }
    for (k, s) in part_base.iter().enumerate() {
        signatures.insert(spec.part_id(k), s.clone());
    }

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
    let mut frames = Vec::with_capacity(spec.frames);
    let mut labels = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let mut frame_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        frame_rng.set_stream(t as u64 + 1);

        let mut label = LabelMask::background(spec.height, spec.width);
        // Per-label signature at this frame.
        let mut current: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
        let mut placements = Vec::with_capacity(n);
        for (i, o) in spec.objects.iter().enumerate() {
            let phase = 2.0 * PI * t as f64 / o.deformation_period;
            let stretch = 1.0 + 0.5 * o.deformation * phase.sin();
            let (lo, hi) = spec.centre_range(o);
            let centre = [
                bounce(starts[i][0] + o.velocity[0] * t as f64, lo[0], hi[0]),
                bounce(starts[i][1] + o.velocity[1] * t as f64, lo[1], hi[1]),
            ];
            let half = [0.5 * o.size[0] / stretch, 0.5 * o.size[1] * stretch];
            let place = Placement { centre, half };
            placements.push(place);
            let visible = o.appear_at.is_none_or(|a| t >= a) && o.vanish_at.is_none_or(|v| t < v);
            if !visible {
                continue;
            }
            let w = o.deformation * (1.0 - phase.cos()) / 2.0;
            let mut sig: Vec<f64> = base[i]
                .iter()
                .zip(&drift[i])
                .map(|(a, b)| (1.0 - w) * a + w * b)
                .collect();
            normalize(&mut sig);
            current.insert(spec.object_id(i), sig);
            paint(&mut label, o.shape, &place, spec.object_id(i));
        }
        for (k, p) in spec.parts.iter().enumerate() {
            let whole_id = spec.object_id(p.whole);
            let Some(whole_sig) = current.get(&whole_id) else {
                continue;
            };
            // Parts follow the whole's appearance drift.
            let w0 = &base[p.whole];
            let mut sig: Vec<f64> = part_base[k]
                .iter()
                .zip(w0.iter().zip(whole_sig))
                .map(|(s, (a, b))| s - a + b)
                .collect();
            normalize(&mut sig);
            let wp = placements[p.whole];
            let place = Placement {
                centre: [wp.centre[0] + p.offset[0], wp.centre[1] + p.offset[1]],
                half: [0.5 * p.size[0], 0.5 * p.size[1]],
            };
            let id = spec.part_id(k);
            current.insert(id, sig);
            // Parts never extend past their whole.
            let mut part = LabelMask::background(spec.height, spec.width);
            paint(&mut part, Shape::Rect, &place, id);
            for r in 0..spec.height {
                for c in 0..spec.width {
                    if part.get(r, c) == id && label.get(r, c) == whole_id {
                        label.set(r, c, id);
                    }
                }
            }
        }

        let mut data = Vec::with_capacity(spec.height * spec.width * d);
        let mut v = vec![0.0f64; d];
        for &id in label.labels() {
            let sig = if id == 0 { &background } else { &current[&id] };
            for (x, s) in v.iter_mut().zip(sig) {
                *x = s + if spec.noise_sigma > 0.0 {
                    noise.sample(&mut frame_rng)
                } else {
                    0.0
                };
            }
            normalize(&mut v);
            data.extend(v.iter().map(|&x| x as f32));
        }
        frames.push(EmbeddingGrid::new(spec.height, spec.width, d, data)?);
        labels.push(label);
    }
    Ok(SynthSequence {
        spec: spec.clone(),
        frames,
        labels,
        background_signature: background,
        signatures,
    })
}

fn paint(label: &mut LabelMask, shape: Shape, place: &Placement, id: u16) {
    for r in 0..label.height() {
        for c in 0..label.width() {
            if inside(shape, place, r, c) {
                label.set(r, c, id);
            }
        }
    }
}

impl SynthSequence {
    /// Labels with every part merged into its whole.
    pub fn whole_labels(&self) -> Vec<LabelMask> {
        let map: BTreeMap<u16, u16> = self
            .spec
            .parts
            .iter()
            .enumerate()
            .map(|(k, p)| (self.spec.part_id(k), self.spec.object_id(p.whole)))
            .collect();
        self.labels
            .iter()
            .map(|l| {
                let merged = l.labels().iter().map(|x| *map.get(x).unwrap_or(x)).collect();
                LabelMask::new(l.height(), l.width(), merged).expect("same shape")
            })
            .collect()
    }

    /// Writes `frames/NNNNN.egr`, `masks/NNNNN.lmk` and `manifest.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<std::path::PathBuf> {
        let dir = dir.as_ref();
        for sub in ["frames", "masks"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut entries = Vec::with_capacity(self.frames.len());
        for (t, (grid, label)) in self.frames.iter().zip(&self.labels).enumerate() {
            let embedding = format!("frames/{t:05}.egr");
            let mask = format!("masks/{t:05}.lmk");
            tensor_io::write_embedding_grid(grid, dir.join(&embedding))?;
            tensor_io::write_label_mask(label, dir.join(&mask))?;
            entries.push(FrameEntry {
                embedding: embedding.into(),
                mask: Some(mask.into()),
            });
        }
        let manifest = SequenceManifest {
            name: self.spec.name.clone(),
            fps: 10.0,
            frames: entries,
        };
        let path = dir.join("manifest.json");
        manifest.write(&path)?;
        Ok(path)
    }
}
