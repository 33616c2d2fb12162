//! Adaptive equal-count hyperrectangle partitions with per-cell affine
//! least squares, the conditional-expectation estimator used by both the
//! cut engine and the DP oracle.
//!
//! The partition is built recursively: the build points are split along
//! direction 1 into `I_1` strips of near-equal counts (remainders go to
//! the earliest strips), then each strip is split along direction 2 into
//! `I_2` strips, and so on. A breakpoint is the midpoint between the
//! largest coordinate of the lower strip and the smallest of the upper;
//! lookup ties at a breakpoint go to the lower cell and queries outside
//! the sampled box clamp to the boundary cell.

use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error("insufficient samples for partition: {points} points for {cells} cells")]
    InsufficientSamples { points: usize, cells: usize },
    #[error("invalid partition splits: {0}")]
    InvalidSplits(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMode {
    Affine,
    Constant,
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub dim: usize,
    pub splits: Vec<usize>,
    pub cell_count: usize,
    /// Breakpoint table per direction: direction `k` holds
    /// `prod(splits[..k])` rows of `splits[k] - 1` breakpoints.
    boundaries: Vec<Vec<f64>>,
    /// Cell assigned to each build point.
    pub sample_cell: Vec<usize>,
    /// Build point indices per cell, ascending.
    cell_samples: Vec<Vec<usize>>,
}

impl Partition {
    /// Equal-count recursive construction over `points` (row-major, S x dim).
    pub fn build(points: &[f64], dim: usize, splits: &[usize]) -> Result<Self, RegressionError> {
        if splits.len() != dim || splits.iter().any(|&s| s == 0) {
            return Err(RegressionError::InvalidSplits(format!(
                "need {dim} positive split counts, got {splits:?}"
            )));
        }
        let n = points.len() / dim;
        let cell_count: usize = splits.iter().product();
        if n < cell_count {
            return Err(RegressionError::InsufficientSamples {
                points: n,
                cells: cell_count,
            });
        }
        assert!(points.iter().all(|x| x.is_finite()), "build points must be finite");

        let mut boundaries: Vec<Vec<f64>> = Vec::with_capacity(dim);
        let mut rows_at_level = 1usize;
        for &s in splits {
            boundaries.push(vec![0.0; rows_at_level * (s.max(1) - 1)]);
            rows_at_level *= s;
        }

        let mut part = Partition {
            dim,
            splits: splits.to_vec(),
            cell_count,
            boundaries,
            sample_cell: vec![0; n],
            cell_samples: vec![Vec::new(); cell_count],
        };
        let mut indices: Vec<usize> = (0..n).collect();
        part.split_recursive(points, &mut indices, 0, 0);
        for cell in &mut part.cell_samples {
            cell.sort_unstable();
        }
        for (cell_idx, cell) in part.cell_samples.iter().enumerate() {
            for &s in cell {
                part.sample_cell[s] = cell_idx;
            }
        }
        Ok(part)
    }

    fn split_recursive(&mut self, points: &[f64], indices: &mut [usize], level: usize, row: usize) {
        if level == self.dim {
            self.cell_samples[row] = indices.to_vec();
            return;
        }
        let dim = self.dim;
        // sort by coordinate, index as tiebreaker for determinism
        indices.sort_unstable_by(|&a, &b| {
            points[a * dim + level]
                .partial_cmp(&points[b * dim + level])
                .unwrap()
                .then(a.cmp(&b))
        });
        let strips = self.splits[level];
        let n = indices.len();
        let base = n / strips;
        let extra = n % strips; // remainders spread to the earliest strips
        let mut start = 0usize;
        for j in 0..strips {
            let len = base + usize::from(j < extra);
            if j + 1 < strips {
                let lo = points[indices[start + len - 1] * dim + level];
                let hi = points[indices[start + len] * dim + level];
                self.boundaries[level][row * (strips - 1) + j] = 0.5 * (lo + hi);
            }
            let (head, tail) = indices.split_at_mut(start + len);
            let strip = &mut head[start..];
            let _ = tail;
            self.split_recursive(points, strip, level + 1, row * strips + j);
            start += len;
        }
    }

    /// Cell containing `point`. Out-of-box queries clamp to the nearest
    /// boundary cell; ties at a breakpoint go low.
    pub fn locate(&self, point: &[f64]) -> usize {
        debug_assert_eq!(point.len(), self.dim);
        let mut row = 0usize;
        for (level, &strips) in self.splits.iter().enumerate() {
            let nb = strips - 1;
            let b = &self.boundaries[level][row * nb..(row + 1) * nb];
            // number of breakpoints strictly below the query
            let j = b.partition_point(|&bp| bp < point[level]);
            row = row * strips + j;
        }
        row
    }

    /// Build point indices of a cell, ascending.
    pub fn cell(&self, cell: usize) -> &[usize] {
        &self.cell_samples[cell]
    }

    /// Flat breakpoint tables, direction-major (serialization surface).
    pub fn boundary_tables(&self) -> &[Vec<f64>] {
        &self.boundaries
    }

    /// Reassemble a partition from serialized tables; build-point
    /// assignments are not preserved.
    pub fn from_parts(dim: usize, splits: Vec<usize>, boundaries: Vec<Vec<f64>>) -> Self {
        let cell_count = splits.iter().product();
        Partition {
            dim,
            splits,
            cell_count,
            boundaries,
            sample_cell: Vec::new(),
            cell_samples: vec![Vec::new(); cell_count],
        }
    }

    /// Degenerate single-cell partition (used for deterministic stages and
    /// augmented-state runs).
    pub fn single_cell(dim: usize, n_points: usize) -> Self {
        Partition {
            dim,
            splits: vec![1; dim],
            cell_count: 1,
            boundaries: vec![Vec::new(); dim],
            sample_cell: vec![0; n_points],
            cell_samples: vec![(0..n_points).collect()],
        }
    }
}

/// Result of a single-cell least-squares fit: `coeffs[0]` is the
/// intercept, `coeffs[1..]` the slopes (zero in constant/degenerate fits).
#[derive(Debug, Clone)]
pub struct AffineFit {
    pub coeffs: Vec<f64>,
    pub degenerate: bool,
}

impl AffineFit {
    #[inline]
    pub fn evaluate(&self, point: &[f64]) -> f64 {
        let mut v = self.coeffs[0];
        for (c, x) in self.coeffs[1..].iter().zip(point) {
            v += c * x;
        }
        v
    }
}

/// Least squares of `responses` on `[1, x_1..x_m]` over the given point
/// rows, solved through the normal equations by Cholesky. A singular
/// system (constant coordinates, too few points) falls back to the cell
/// mean with zero slopes.
pub fn affine_fit<'a, I>(dim: usize, rows: I, responses: &[f64]) -> AffineFit
where
    I: Iterator<Item = &'a [f64]> + Clone,
{
    let p = dim + 1;
    let n = responses.len();
    if n == 0 {
        return AffineFit { coeffs: vec![0.0; p], degenerate: true };
    }
    let mean = responses.iter().sum::<f64>() / n as f64;
    if n < p {
        let mut coeffs = vec![0.0; p];
        coeffs[0] = mean;
        return AffineFit { coeffs, degenerate: true };
    }
    // center the regressors first: the normal matrix of the centered
    // system is far better conditioned and the intercept recovers from
    // slope . mean afterwards
    let mut mx = vec![0.0f64; dim];
    for row in rows.clone() {
        for (mi, &xi) in mx.iter_mut().zip(row) {
            *mi += xi;
        }
    }
    for mi in mx.iter_mut() {
        *mi /= n as f64;
    }
    // centered normal matrix (lower triangle) and right-hand side
    let mut a = vec![0.0f64; dim * dim];
    let mut b = vec![0.0f64; dim];
    for (row, &y) in rows.clone().zip(responses) {
        let dy = y - mean;
        for i in 0..dim {
            let xi = row[i] - mx[i];
            b[i] += xi * dy;
            for j in 0..=i {
                a[i * dim + j] += xi * (row[j] - mx[j]);
            }
        }
    }
    // benign conditioning guard, well below test tolerances
    let trace: f64 = n as f64 + (0..dim).map(|i| a[i * dim + i]).sum::<f64>();
    let reg = 1e-12 * trace / p as f64;
    for i in 0..dim {
        a[i * dim + i] += reg;
    }
    let mut slopes = b.clone();
    // a pivot at the regularizer level means the cell carries no spread
    // in some direction: drop to the constant fit
    if cholesky_solve_in_place(&mut a, &mut slopes, dim, 2.0 * reg) {
        let mut coeffs = vec![0.0; p];
        coeffs[0] = mean - slopes.iter().zip(&mx).map(|(s, m)| s * m).sum::<f64>();
        coeffs[1..].copy_from_slice(&slopes);
        AffineFit { coeffs, degenerate: false }
    } else {
        let mut coeffs = vec![0.0; p];
        coeffs[0] = mean;
        AffineFit { coeffs, degenerate: true }
    }
}

/// Constant fit: cell mean with zero slopes.
pub fn constant_fit(dim: usize, responses: &[f64]) -> AffineFit {
    let mut coeffs = vec![0.0; dim + 1];
    if !responses.is_empty() {
        coeffs[0] = responses.iter().sum::<f64>() / responses.len() as f64;
    }
    AffineFit { coeffs, degenerate: responses.is_empty() }
}

/// Cholesky factorization/solve of a symmetric system stored in the lower
/// triangle of `a` (n x n, row-major). Returns false when a pivot falls
/// to `pivot_floor` or below.
fn cholesky_solve_in_place(a: &mut [f64], b: &mut [f64], n: usize, pivot_floor: f64) -> bool {
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= a[i * n + k] * a[j * n + k];
            }
            if i == j {
                if sum <= pivot_floor {
                    return false;
                }
                a[i * n + i] = sum.sqrt();
            } else {
                a[i * n + j] = sum / a[j * n + j];
            }
        }
    }
    // forward substitution L y = b
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= a[i * n + k] * b[k];
        }
        b[i] = sum / a[i * n + i];
    }
    // back substitution L^T x = y
    for i in (0..n).rev() {
        let mut sum = b[i];
        for k in i + 1..n {
            sum -= a[k * n + i] * b[k];
        }
        b[i] = sum / a[i * n + i];
    }
    true
}

/// Piecewise model over a shared partition: one affine (or constant)
/// regressor per cell.
#[derive(Debug, Clone)]
pub struct LocalAffineModel {
    pub partition: Arc<Partition>,
    pub mode: FitMode,
    /// Per-cell `[intercept, slopes..]`, `1 + dim` values each.
    pub coefficients: Vec<f64>,
    /// Cells where the affine solve fell back to a constant.
    pub degenerate_cells: Vec<usize>,
}

impl LocalAffineModel {
    /// Fit all cells of the partition. `points` must be the partition's
    /// build points (row-major), `responses` one value per point.
    pub fn fit(
        partition: Arc<Partition>,
        points: &[f64],
        responses: &[f64],
        mode: FitMode,
    ) -> Self {
        let dim = partition.dim;
        let p = dim + 1;
        let mut coefficients = vec![0.0; partition.cell_count * p];
        let mut degenerate_cells = Vec::new();
        for cell in 0..partition.cell_count {
            let idx = partition.cell(cell);
            let ys: Vec<f64> = idx.iter().map(|&s| responses[s]).collect();
            let fit = match mode {
                FitMode::Constant => constant_fit(dim, &ys),
                FitMode::Affine => {
                    affine_fit(dim, idx.iter().map(|&s| &points[s * dim..(s + 1) * dim]), &ys)
                }
            };
            if fit.degenerate && mode == FitMode::Affine {
                degenerate_cells.push(cell);
            }
            coefficients[cell * p..(cell + 1) * p].copy_from_slice(&fit.coeffs);
        }
        LocalAffineModel { partition, mode, coefficients, degenerate_cells }
    }

    /// Evaluate at `point`: locate the cell and apply its affine function
    /// (at the raw point, also for clamped out-of-box queries).
    pub fn evaluate(&self, point: &[f64]) -> f64 {
        let cell = self.partition.locate(point);
        self.evaluate_in_cell(cell, point)
    }

    #[inline]
    pub fn evaluate_in_cell(&self, cell: usize, point: &[f64]) -> f64 {
        let p = self.partition.dim + 1;
        let c = &self.coefficients[cell * p..(cell + 1) * p];
        let mut v = c[0];
        for (ci, xi) in c[1..].iter().zip(point) {
            v += ci * xi;
        }
        v
    }
}
