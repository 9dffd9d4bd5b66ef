//! Dense similarity and reduction kernels.
//!
//! Dot products accumulate in `f64` over eight fixed lanes (element `k` goes
//! to lane `k % 8`, lanes are combined in a fixed tree), so a value depends
//! only on its two input vectors. Tiling, thread count and the SIMD path never
//! change a result bit.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::Point;

pub const DEFAULT_TILE: usize = 64;

/// A borrowed set of equal-length vectors stored back to back.
#[derive(Debug, Clone, Copy)]
pub struct Vectors<'a> {
    data: &'a [f32],
    dim: usize,
}

impl<'a> Vectors<'a> {
    pub fn new(data: &'a [f32], dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} values do not split into vectors of dim {dim}",
                data.len()
            )));
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Row-major `rows x cols` matrix of cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    /// Convenience constructor for tests and small fixtures.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0 || self.cols == 0
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut values = vec![0.0; self.values.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                values[j * self.rows + i] = self.values[i * self.cols + j];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }
}

#[inline(always)]
fn dot_lanes(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += f64::from(x[l]) * f64::from(y[l]);
        }
    }
    for (l, (x, y)) in ra.iter().zip(rb).enumerate() {
        acc[l] += f64::from(*x) * f64::from(*y);
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]))
}

/// Dot product with the kernel's fixed summation order.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    dot_lanes(a, b)
}

#[inline(always)]
fn fill_rows(out: &mut [f32], row0: usize, reference: Vectors<'_>, current: Vectors<'_>, tile: usize) {
    let cols = current.len();
    let nrows = out.len() / cols;
    for c0 in (0..cols).step_by(tile) {
        let c1 = (c0 + tile).min(cols);
        for r in 0..nrows {
            let a = reference.get(row0 + r);
            let out_row = &mut out[r * cols..(r + 1) * cols];
            for (c, slot) in (c0..c1).zip(&mut out_row[c0..c1]) {
                *slot = dot_lanes(a, current.get(c)) as f32;
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn fill_rows_avx2(out: &mut [f32], row0: usize, reference: Vectors<'_>, current: Vectors<'_>, tile: usize) {
    fill_rows(out, row0, reference, current, tile)
}

fn fill_block(out: &mut [f32], row0: usize, reference: Vectors<'_>, current: Vectors<'_>, tile: usize) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { fill_rows_avx2(out, row0, reference, current, tile) };
            return;
        }
    }
    fill_rows(out, row0, reference, current, tile)
}

/// `S[i][j] = <reference_i, current_j>` for unit vectors.
pub fn cosine_similarity_matrix(reference: Vectors<'_>, current: Vectors<'_>) -> Result<SimilarityMatrix> {
    cosine_similarity_matrix_tiled(reference, current, DEFAULT_TILE)
}

pub fn cosine_similarity_matrix_tiled(
    reference: Vectors<'_>,
    current: Vectors<'_>,
    tile: usize,
) -> Result<SimilarityMatrix> {
    if reference.dim() != current.dim() {
        return Err(Error::DimensionMismatch(format!(
            "reference dim {} vs current dim {}",
            reference.dim(),
            current.dim()
        )));
    }
    let tile = tile.max(1);
    let (rows, cols) = (reference.len(), current.len());
    let mut values = vec![0.0f32; rows * cols];
    if rows > 0 && cols > 0 {
        values
            .par_chunks_mut(tile * cols)
            .enumerate()
            .for_each(|(block, out)| fill_block(out, block * tile, reference, current, tile));
    }
    SimilarityMatrix::new(rows, cols, values)
}

/// Column index of each row's maximum; ties go to the lowest index.
pub fn row_argmax(s: &SimilarityMatrix) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    Ok((0..s.rows())
        .into_par_iter()
        .map(|i| {
            let row = s.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

/// Row index of each column's maximum; ties go to the lowest index.
pub fn col_argmax(s: &SimilarityMatrix) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut best_idx = vec![0usize; s.cols()];
    let mut best_val = s.row(0).to_vec();
    for i in 1..s.rows() {
        for (j, &v) in s.row(i).iter().enumerate() {
            if v > best_val[j] {
                best_val[j] = v;
                best_idx[j] = i;
            }
        }
    }
    Ok(best_idx)
}

/// Symmetric matrix of Euclidean distances between grid coordinates.
pub fn pairwise_euclidean(points: &[Point]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let dr = points[a].0 as f64 - points[b].0 as f64;
            let dc = points[a].1 as f64 - points[b].1 as f64;
            let v = (dr * dr + dc * dc).sqrt();
            d[a][b] = v;
            d[b][a] = v;
        }
    }
    d
}

/// Indices of the `k` smallest scores ordered by `(score, index)`.
pub fn top_k_min(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order.truncate(k);
    order
}
