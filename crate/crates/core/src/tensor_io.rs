//! Embedding grids, label masks, and their on-disk formats.
//!
//! Both binary formats are little-endian and start with a 4-byte magic and a
//! `u32` version:
//!
//! ```text
//! .egr  "VSEG" | version u32 | H u32 | W u32 | d u32 | normalized u8 | H*W*d f32
//! .lmk  "VMSK" | version u32 | H u32 | W u32 | H*W u16
//! ```
//!
//! Sequences are described by a JSON manifest whose frame paths are relative
//! to the manifest's own directory.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

pub const GRID_MAGIC: [u8; 4] = *b"VSEG";
pub const MASK_MAGIC: [u8; 4] = *b"VMSK";
pub const FORMAT_VERSION: u32 = 1;

const GRID_HEADER_LEN: usize = 4 + 4 * 4 + 1;
const MASK_HEADER_LEN: usize = 4 + 3 * 4;

/// Norms below this are treated as zero vectors.
pub const ZERO_NORM: f64 = 1e-12;
/// Allowed deviation from unit norm for grids flagged as normalized.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

/// Upper bounds checked against a file header before any payload is allocated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadLimits {
    pub max_height: usize,
    pub max_width: usize,
    pub max_dim: usize,
}

impl Default for ReadLimits {
    fn default() -> Self {
        Self {
            max_height: 1024,
            max_width: 1024,
            max_dim: 4096,
        }
    }
}

impl ReadLimits {
    fn check(&self, height: usize, width: usize, dim: usize) -> Result<()> {
        if height > self.max_height || width > self.max_width || dim > self.max_dim {
            return Err(Error::DimensionsTooLarge {
                height,
                width,
                dim,
                max_height: self.max_height,
                max_width: self.max_width,
                max_dim: self.max_dim,
            });
        }
        Ok(())
    }
}

/// An `H x W` grid of unit-norm `d`-dimensional patch embeddings, stored
/// row-major with each patch's channels contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrid {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingGrid {
    /// Builds a grid from raw vectors, normalizing every patch.
    ///
    /// Fails with [`Error::ZeroVector`] if any patch norm is below `1e-12`.
    pub fn new(height: usize, width: usize, dim: usize, mut data: Vec<f32>) -> Result<Self> {
        check_len(height, width, dim, data.len())?;
        if dim == 0 {
            return Err(Error::DimensionMismatch("embedding dim must be positive".into()));
        }
        for (index, patch) in data.chunks_exact_mut(dim).enumerate() {
            let norm = l2_norm(patch);
            if norm < ZERO_NORM {
                return Err(Error::ZeroVector { index, norm });
            }
            let scale = norm.max(ZERO_NORM);
            for v in patch.iter_mut() {
                *v = (f64::from(*v) / scale) as f32;
            }
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    /// Wraps data that is already unit-norm, verifying it within `1e-5`.
    pub fn from_normalized(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        check_len(height, width, dim, data.len())?;
        if dim == 0 {
            return Err(Error::DimensionMismatch("embedding dim must be positive".into()));
        }
        for (index, patch) in data.chunks_exact(dim).enumerate() {
            let norm = l2_norm(patch);
            if norm < ZERO_NORM {
                return Err(Error::ZeroVector { index, norm });
            }
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::NotNormalized { index, norm });
            }
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_patches(&self) -> usize {
        self.height * self.width
    }

    /// Every grid that exists has passed normalization.
    pub fn is_normalized(&self) -> bool {
        true
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn patch(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn patch_at(&self, row: usize, col: usize) -> &[f32] {
        self.patch(row * self.width + col)
    }

    pub fn same_shape(&self, other: &EmbeddingGrid) -> bool {
        self.height == other.height && self.width == other.width && self.dim == other.dim
    }
}

fn check_len(height: usize, width: usize, dim: usize, len: usize) -> Result<()> {
    let expected = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(dim))
        .ok_or_else(|| Error::DimensionMismatch("grid size overflows".into()))?;
    if expected != len {
        return Err(Error::DimensionMismatch(format!(
            "grid {height}x{width}x{dim} needs {expected} values, got {len}"
        )));
    }
    Ok(())
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

/// Per-patch object labels; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "label mask {height}x{width} needs {} cells, got {}",
                height * width,
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, id: u16) {
        self.labels[row * self.width + col] = id;
    }

    /// Non-background ids present, ascending.
    pub fn object_ids(&self) -> BTreeSet<u16> {
        self.labels.iter().copied().filter(|&l| l != 0).collect()
    }

    pub fn object_mask(&self, id: u16) -> BinaryMask {
        let bits = self.labels.iter().map(|&l| l == id).collect();
        BinaryMask::from_bits(self.height, self.width, bits).expect("dims are consistent")
    }

    /// Paints `mask` with `id`, overwriting whatever was there.
    pub fn paint(&mut self, mask: &BinaryMask, id: u16) -> Result<()> {
        if mask.height() != self.height || mask.width() != self.width {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs label map {}x{}",
                mask.height(),
                mask.width(),
                self.height,
                self.width
            )));
        }
        for i in mask.indices() {
            self.labels[i] = id;
        }
        Ok(())
    }

    pub fn matches_grid(&self, grid: &EmbeddingGrid) -> bool {
        self.height == grid.height() && self.width == grid.width()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn read_exact_or_mismatch(reader: &mut impl Read, buf: &mut [u8], path: &Path) -> Result<()> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::DimensionMismatch(format!("{}: truncated header", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

/// Reads exactly `expected` payload bytes and rejects trailing data.
fn read_payload(reader: &mut impl Read, expected: usize, path: &Path) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(expected);
    reader
        .take(expected as u64 + 1)
        .read_to_end(&mut payload)
        .map_err(|e| Error::io(path, e))?;
    if payload.len() != expected {
        let got = if payload.len() > expected {
            "more".to_string()
        } else {
            payload.len().to_string()
        };
        return Err(Error::DimensionMismatch(format!(
            "{}: header declares {expected} payload bytes, found {got}",
            path.display()
        )));
    }
    Ok(payload)
}

fn u32_at(buf: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(buf[offset..offset + 4].try_into().expect("4 bytes"))
}

fn check_magic(found: &[u8], expected: [u8; 4], path: &Path) -> Result<()> {
    let found: [u8; 4] = found[..4].try_into().expect("4 bytes");
    if found != expected {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Header fields of an `.egr` file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridHeader {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub normalized: bool,
}

fn read_grid_header_from(reader: &mut impl Read, path: &Path) -> Result<GridHeader> {
    let mut header = [0u8; GRID_HEADER_LEN];
    // Check the magic on whatever is there before complaining about length.
    let mut got = 0;
    while got < header.len() {
        match reader.read(&mut header[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::io(path, e)),
        }
    }
    if got >= 4 {
        check_magic(&header, GRID_MAGIC, path)?;
    }
    if got < header.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}: truncated header",
            path.display()
        )));
    }
    let version = u32_at(&header, 4);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    Ok(GridHeader {
        height: u32_at(&header, 8) as usize,
        width: u32_at(&header, 12) as usize,
        dim: u32_at(&header, 16) as usize,
        normalized: header[20] != 0,
    })
}

/// Reads only the header of an `.egr` file.
pub fn read_grid_header(path: impl AsRef<Path>) -> Result<GridHeader> {
    let path = path.as_ref();
    read_grid_header_from(&mut open(path)?, path)
}

pub fn read_embedding_grid(path: impl AsRef<Path>) -> Result<EmbeddingGrid> {
    read_embedding_grid_with(path, &ReadLimits::default())
}

pub fn read_embedding_grid_with(path: impl AsRef<Path>, limits: &ReadLimits) -> Result<EmbeddingGrid> {
    let path = path.as_ref();
    let mut file = open(path)?;
    let header = read_grid_header_from(&mut file, path)?;
    limits.check(header.height, header.width, header.dim)?;
    let count = header.height * header.width * header.dim;
    let payload = read_payload(&mut file, count * 4, path)?;
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    if header.normalized {
        EmbeddingGrid::from_normalized(header.height, header.width, header.dim, data)
    } else {
        EmbeddingGrid::new(header.height, header.width, header.dim, data)
    }
}

pub fn write_embedding_grid(grid: &EmbeddingGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let mut header = Vec::with_capacity(GRID_HEADER_LEN);
    header.extend_from_slice(&GRID_MAGIC);
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [grid.height, grid.width, grid.dim] {
        header.extend_from_slice(&(v as u32).to_le_bytes());
    }
    header.push(u8::from(grid.is_normalized()));
    out.write_all(&header).map_err(|e| Error::io(path, e))?;
    let mut payload = Vec::with_capacity(grid.data.len() * 4);
    for v in &grid.data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&payload).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_label_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    read_label_mask_with(path, &ReadLimits::default())
}

pub fn read_label_mask_with(path: impl AsRef<Path>, limits: &ReadLimits) -> Result<LabelMask> {
    let path = path.as_ref();
    let mut file = open(path)?;
    let mut header = [0u8; MASK_HEADER_LEN];
    read_exact_or_mismatch(&mut file, &mut header[..4], path)?;
    check_magic(&header, MASK_MAGIC, path)?;
    read_exact_or_mismatch(&mut file, &mut header[4..], path)?;
    let version = u32_at(&header, 4);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let height = u32_at(&header, 8) as usize;
    let width = u32_at(&header, 12) as usize;
    limits.check(height, width, 1)?;
    let payload = read_payload(&mut file, height * width * 2, path)?;
    let labels = payload
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    LabelMask::new(height, width, labels)
}

pub fn write_label_mask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let mut buf = Vec::with_capacity(MASK_HEADER_LEN + mask.labels.len() * 2);
    buf.extend_from_slice(&MASK_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(mask.height as u32).to_le_bytes());
    buf.extend_from_slice(&(mask.width as u32).to_le_bytes());
    for l in &mask.labels {
        buf.extend_from_slice(&l.to_le_bytes());
    }
    out.write_all(&buf).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub embedding: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

/// `manifest.json`: ordered frames plus sequence metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub name: String,
    pub fps: f64,
    pub frames: Vec<FrameEntry>,
}

impl SequenceManifest {
    pub fn validate(&self, path: &Path) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                message: "manifest lists no frames".into(),
            });
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                message: format!("fps must be positive, got {}", self.fps),
            });
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct ManifestSequence {
    pub manifest: SequenceManifest,
    pub path: PathBuf,
    base_dir: PathBuf,
    header: GridHeader,
    limits: ReadLimits,
}

impl ManifestSequence {
    /// Loads the manifest and checks that every frame header agrees in shape.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::open_with(path, ReadLimits::default())
    }

    pub fn open_with(path: impl AsRef<Path>, limits: ReadLimits) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: SequenceManifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        manifest.validate(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let first = read_grid_header(base_dir.join(&manifest.frames[0].embedding))?;
        limits.check(first.height, first.width, first.dim)?;
        for (i, frame) in manifest.frames.iter().enumerate().skip(1) {
            let h = read_grid_header(base_dir.join(&frame.embedding))?;
            if (h.height, h.width, h.dim) != (first.height, first.width, first.dim) {
                return Err(Error::DimensionMismatch(format!(
                    "frame {i} is {}x{}x{}, frame 0 is {}x{}x{}",
                    h.height, h.width, h.dim, first.height, first.width, first.dim
                )));
            }
        }
        Ok(Self {
            manifest,
            path: path.to_path_buf(),
            base_dir,
            header: first,
            limits,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frames.is_empty()
    }

    pub fn header(&self) -> GridHeader {
        self.header
    }

    pub fn read_frame(&self, index: usize) -> Result<EmbeddingGrid> {
        let path = self.base_dir.join(&self.manifest.frames[index].embedding);
        read_embedding_grid_with(path, &self.limits)
    }

    /// Ground-truth labels for a frame, if the manifest lists them.
    pub fn read_mask(&self, index: usize) -> Result<Option<LabelMask>> {
        let Some(rel) = &self.manifest.frames[index].mask else {
            return Ok(None);
        };
        let mask = read_label_mask_with(self.base_dir.join(rel), &self.limits)?;
        if mask.height() != self.header.height || mask.width() != self.header.width {
            return Err(Error::DimensionMismatch(format!(
                "mask for frame {index} is {}x{}, frames are {}x{}",
                mask.height(),
                mask.width(),
                self.header.height,
                self.header.width
            )));
        }
        Ok(Some(mask))
    }
}
