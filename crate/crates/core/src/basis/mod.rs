//! Local bases on a regular hypercube partition of a box `D`.
//!
//! `D = Π (c_j - a_j, c_j + a_j]` is cut into `n_j = ceil(2 a_j / δ_j)`
//! half-open slabs per axis, `(lo_j + i δ_j, lo_j + (i + 1) δ_j]`, the last
//! one truncated at the upper face of `D`. Each cell carries either an
//! indicator (degree 0) or an indicator times `(1, x - center)` (degree 1).
//! Cells are disjoint, so every least-squares fit decouples into independent
//! per-cell problems.

mod lsq;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use lsq::CellSolver;

const OUTSIDE: u32 = u32::MAX;

/// Polynomial degree carried on each cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degree {
    Constant,
    Affine,
}

impl Degree {
    pub fn from_int(d: u32) -> Option<Self> {
        match d {
            0 => Some(Degree::Constant),
            1 => Some(Degree::Affine),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypercubeBasis {
    center: Vec<f64>,
    half_width: Vec<f64>,
    edge: Vec<f64>,
    degree: Degree,
    cells_per_axis: Vec<usize>,
    /// Flat index stride per axis; axis 0 is the most significant.
    strides: Vec<usize>,
    cell_count: usize,
}

/// Features of one point: its cell (if inside `D`) and the local feature
/// vector, `[1]` or `[1, x - center]`; all zeros outside.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignRow {
    pub cell: Option<usize>,
    pub features: Vec<f64>,
}

/// Basis coefficients, stored cell by cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientVector {
    values: Vec<f64>,
    per_cell: usize,
}

impl CoefficientVector {
    pub fn zeros(basis: &HypercubeBasis) -> Self {
        Self {
            values: vec![0.0; basis.size()],
            per_cell: basis.functions_per_cell(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cell(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.per_cell..(cell + 1) * self.per_cell]
    }
}

impl HypercubeBasis {
    pub fn new(center: Vec<f64>, half_width: Vec<f64>, edge: Vec<f64>, degree: Degree) -> Result<Self> {
        let d = center.len();
        if d == 0 {
            return Err(invalid("center", "basis needs at least one axis"));
        }
        if half_width.len() != d || edge.len() != d {
            return Err(invalid("basis", "center, half-width and edge lengths differ"));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(invalid("center", "must be finite"));
        }
        if half_width.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(invalid("half_width", "must be positive and finite"));
        }
        if edge.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(invalid("delta", "must be positive and finite"));
        }
        let cells_per_axis: Vec<usize> = half_width
            .iter()
            .zip(&edge)
            .map(|(a, e)| ((2.0 * a / e).ceil() as usize).max(1))
            .collect();
        let mut strides = vec![1usize; d];
        let mut count: usize = 1;
        for j in (0..d).rev() {
            strides[j] = count;
            count = count
                .checked_mul(cells_per_axis[j])
                .filter(|&c| c < OUTSIDE as usize)
                .ok_or_else(|| invalid("delta", "too many cells for the domain"))?;
        }
        Ok(Self {
            center,
            half_width,
            edge,
            degree,
            cells_per_axis,
            strides,
            cell_count: count,
        })
    }

    /// Same half-width and edge on every axis.
    pub fn isotropic(center: Vec<f64>, half_width: f64, edge: f64, degree: Degree) -> Result<Self> {
        let d = center.len();
        Self::new(center, vec![half_width; d], vec![edge; d], degree)
    }

    /// A single cell covering `D`.
    pub fn single_cell(center: Vec<f64>, half_width: Vec<f64>, degree: Degree) -> Result<Self> {
        let edge = half_width.iter().map(|a| 2.0 * a).collect();
        Self::new(center, half_width, edge, degree)
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn degree(&self) -> Degree {
        self.degree
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn half_width(&self) -> &[f64] {
        &self.half_width
    }

    pub fn edge(&self) -> &[f64] {
        &self.edge
    }

    pub fn cells_per_axis(&self) -> &[usize] {
        &self.cells_per_axis
    }

    pub fn cell_count(&self) -> usize {
        self.cell_count
    }

    pub fn functions_per_cell(&self) -> usize {
        match self.degree {
            Degree::Constant => 1,
            Degree::Affine => 1 + self.dim(),
        }
    }

    /// Basis size `K`.
    pub fn size(&self) -> usize {
        self.cell_count * self.functions_per_cell()
    }

    /// `i`-th slab boundary on axis `j`; boundary `n_j` is the upper face of `D`.
    fn boundary(&self, j: usize, i: usize) -> f64 {
        let lo = self.center[j] - self.half_width[j];
        if i >= self.cells_per_axis[j] {
            self.center[j] + self.half_width[j]
        } else {
            lo + i as f64 * self.edge[j]
        }
    }

    fn axis_index(&self, j: usize, x: f64) -> Option<usize> {
        let lo = self.boundary(j, 0);
        let hi = self.center[j] + self.half_width[j];
        if !(x > lo && x <= hi) {
            return None;
        }
        let n = self.cells_per_axis[j];
        let raw = ((x - lo) / self.edge[j]).ceil() - 1.0;
        let mut i = raw.clamp(0.0, (n - 1) as f64) as usize;
        // settle rounding against the same boundaries `cell_bounds` reports
        while i > 0 && x <= self.boundary(j, i) {
            i -= 1;
        }
        while i + 1 < n && x > self.boundary(j, i + 1) {
            i += 1;
        }
        Some(i)
    }

    /// Flat index of the cell containing `x`, or `None` outside `D`.
    pub fn locate(&self, x: &[f64]) -> Option<usize> {
        debug_assert_eq!(x.len(), self.dim());
        let mut flat = 0;
        for (j, &xj) in x.iter().enumerate() {
            flat += self.axis_index(j, xj)? * self.strides[j];
        }
        Some(flat)
    }

    /// Per-axis cell index of `x`.
    pub fn locate_multi(&self, x: &[f64]) -> Option<Vec<usize>> {
        x.iter()
            .enumerate()
            .map(|(j, &xj)| self.axis_index(j, xj))
            .collect()
    }

    pub fn multi_index(&self, cell: usize) -> Vec<usize> {
        self.strides
            .iter()
            .zip(&self.cells_per_axis)
            .map(|(s, n)| (cell / s) % n)
            .collect()
    }

    /// `(lower, upper]` bounds of a cell on each axis.
    pub fn cell_bounds(&self, cell: usize) -> Vec<(f64, f64)> {
        self.multi_index(cell)
            .into_iter()
            .enumerate()
            .map(|(j, i)| (self.boundary(j, i), self.boundary(j, i + 1)))
            .collect()
    }

    fn write_cell_center(&self, cell: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            let i = (cell / self.strides[j]) % self.cells_per_axis[j];
            *o = 0.5 * (self.boundary(j, i) + self.boundary(j, i + 1));
        }
    }

    pub fn cell_center(&self, cell: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        self.write_cell_center(cell, &mut c);
        c
    }

    pub fn design_row(&self, x: &[f64]) -> DesignRow {
        let f = self.functions_per_cell();
        match self.locate(x) {
            None => DesignRow {
                cell: None,
                features: vec![0.0; f],
            },
            Some(cell) => {
                let mut features = vec![1.0; f];
                if self.degree == Degree::Affine {
                    self.write_cell_center(cell, &mut features[1..]);
                    for (feat, xj) in features[1..].iter_mut().zip(x) {
                        *feat = xj - *feat;
                    }
                }
                DesignRow {
                    cell: Some(cell),
                    features,
                }
            }
        }
    }

    /// `α · p(x)`; zero outside `D`.
    pub fn evaluate(&self, coeffs: &CoefficientVector, x: &[f64]) -> f64 {
        debug_assert_eq!(coeffs.len(), self.size());
        let Some(cell) = self.locate(x) else {
            return 0.0;
        };
        let a = coeffs.cell(cell);
        match self.degree {
            Degree::Constant => a[0],
            Degree::Affine => {
                let mut v = a[0];
                for (j, xj) in x.iter().enumerate() {
                    let i = (cell / self.strides[j]) % self.cells_per_axis[j];
                    let c = 0.5 * (self.boundary(j, i) + self.boundary(j, i + 1));
                    v += a[1 + j] * (xj - c);
                }
                v
            }
        }
    }

    /// Least-squares fit of `targets` against the basis rows of `xs`
    /// (row-major, `targets.len() x d`).
    pub fn fit(&self, xs: &[f64], targets: &[f64]) -> Result<CoefficientVector> {
        if xs.len() != targets.len() * self.dim() {
            return Err(invalid("xs", "point count differs from target count"));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(invalid("targets", "must be finite"));
        }
        Ok(self.prepare(xs).fit(targets))
    }

    /// Locates and factorizes a sample once so several right-hand sides can be
    /// fitted against it.
    pub fn prepare(&self, xs: &[f64]) -> Design<'_> {
        Design::new(self, xs)
    }
}

struct CellGroup {
    cell: usize,
    start: usize,
    end: usize,
    solver: Option<CellSolver>,
}

/// A located, factorized sample for one basis.
pub struct Design<'a> {
    basis: &'a HypercubeBasis,
    cells: Vec<u32>,
    /// Sample indices grouped by cell, in ascending sample order within a cell.
    order: Vec<u32>,
    groups: Vec<CellGroup>,
    /// Centered local coordinates per sample (degree 1 only).
    local: Vec<f64>,
}

impl<'a> Design<'a> {
    fn new(basis: &'a HypercubeBasis, xs: &[f64]) -> Self {
        let d = basis.dim();
        assert_eq!(xs.len() % d, 0, "point buffer is not a multiple of the dimension");
        let m = xs.len() / d;

        let cells: Vec<u32> = xs
            .par_chunks(d)
            .map(|x| basis.locate(x).map_or(OUTSIDE, |c| c as u32))
            .collect();

        let mut pairs: Vec<(u32, u32)> = cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != OUTSIDE)
            .map(|(i, &c)| (c, i as u32))
            .collect();
        pairs.sort_unstable();
        let order: Vec<u32> = pairs.iter().map(|p| p.1).collect();

        let mut groups = Vec::new();
        let mut start = 0;
        while start < pairs.len() {
            let cell = pairs[start].0;
            let mut end = start;
            while end < pairs.len() && pairs[end].0 == cell {
                end += 1;
            }
            groups.push(CellGroup {
                cell: cell as usize,
                start,
                end,
                solver: None,
            });
            start = end;
        }

        let mut local = Vec::new();
        if basis.degree == Degree::Affine {
            local = vec![0.0; m * d];
            local
                .par_chunks_mut(d)
                .zip(xs.par_chunks(d))
                .zip(cells.par_iter())
                .for_each(|((out, x), &c)| {
                    if c != OUTSIDE {
                        basis.write_cell_center(c as usize, out);
                        for (o, xj) in out.iter_mut().zip(x) {
                            *o = xj - *o;
                        }
                    }
                });
            let f = d + 1;
            groups.par_iter_mut().for_each(|g| {
                let rows = g.end - g.start;
                let block = DMatrix::from_fn(rows, f, |r, col| {
                    if col == 0 {
                        1.0
                    } else {
                        let s = order[g.start + r] as usize;
                        local[s * d + col - 1]
                    }
                });
                g.solver = Some(CellSolver::new(block));
            });
        }

        Self {
            basis,
            cells,
            order,
            groups,
            local,
        }
    }

    pub fn basis(&self) -> &HypercubeBasis {
        self.basis
    }

    pub fn samples(&self) -> usize {
        self.cells.len()
    }

    /// Cell of sample `i`, if inside `D`.
    pub fn cell_of(&self, i: usize) -> Option<usize> {
        let c = self.cells[i];
        (c != OUTSIDE).then_some(c as usize)
    }

    /// Number of cells hit by at least one sample.
    pub fn occupied_cells(&self) -> usize {
        self.groups.len()
    }

    /// Sum over occupied cells of the local design rank, i.e. the rank of the
    /// full `M x K` design matrix.
    pub fn rank(&self) -> usize {
        match self.basis.degree {
            Degree::Constant => self.groups.len(),
            Degree::Affine => self
                .groups
                .iter()
                .map(|g| g.solver.as_ref().map_or(0, |s| s.rank()))
                .sum(),
        }
    }

    /// Minimum-norm least-squares coefficients; cells without samples get 0.
    /// Degree-0 cell means use compensated summation, so a constant target
    /// is reproduced exactly and the mean does not drift over many steps.
    pub fn fit(&self, targets: &[f64]) -> CoefficientVector {
        assert_eq!(targets.len(), self.samples(), "target count differs from sample count");
        let mut coeffs = CoefficientVector::zeros(self.basis);
        let f = self.basis.functions_per_cell();
        let solved: Vec<(usize, Vec<f64>)> = self
            .groups
            .par_iter()
            .map(|g| {
                let idx = &self.order[g.start..g.end];
                let local = match &g.solver {
                    None => {
                        let sum = compensated_sum(idx.iter().map(|&s| targets[s as usize]));
                        vec![sum / idx.len() as f64]
                    }
                    Some(solver) => {
                        let rhs: Vec<f64> = idx.iter().map(|&s| targets[s as usize]).collect();
                        solver.solve(&rhs)
                    }
                };
                (g.cell, local)
            })
            .collect();
        for (cell, local) in solved {
            coeffs.values[cell * f..(cell + 1) * f].copy_from_slice(&local);
        }
        coeffs
    }

    /// `α · p(x_i)` at the sample points themselves.
    pub fn evaluate(&self, coeffs: &CoefficientVector) -> Vec<f64> {
        (0..self.samples())
            .into_par_iter()
            .map(|i| self.evaluate_at(coeffs, i))
            .collect()
    }

    /// `α · p(x_i)` for one sample.
    pub fn evaluate_at(&self, coeffs: &CoefficientVector, i: usize) -> f64 {
        let c = self.cells[i];
        if c == OUTSIDE {
            return 0.0;
        }
        let a = coeffs.cell(c as usize);
        match self.basis.degree {
            Degree::Constant => a[0],
            Degree::Affine => {
                let d = self.basis.dim();
                let loc = &self.local[i * d..(i + 1) * d];
                a[0] + a[1..].iter().zip(loc).map(|(c, x)| c * x).sum::<f64>()
            }
        }
    }
}

/// Neumaier summation.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        carry += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + carry
}
