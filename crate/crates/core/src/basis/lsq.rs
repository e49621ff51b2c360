//! Minimum-norm least squares on one cell's design block.
//!
//! The block `A` (rows = samples, columns = local features) is reduced by a
//! Householder QR, `A = Q R`, and the small factor is then decomposed as
//! `R = U Σ Vᵀ`. Together that is an SVD of `A`, so singular directions are
//! detected reliably and dropped, which yields the minimum-norm minimiser.

use nalgebra::{DMatrix, DVector, SVD};

pub(crate) struct CellSolver {
    /// Householder factorization of the design block.
    qr: nalgebra::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    svd: SVD<f64, nalgebra::Dyn, nalgebra::Dyn>,
    rows: usize,
    tol: f64,
}

impl CellSolver {
    pub(crate) fn new(design: DMatrix<f64>) -> Self {
        let (rows, cols) = design.shape();
        let qr = design.qr();
        let r = qr.r();
        let svd = SVD::new(r, true, true);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let tol = smax * rows.max(cols) as f64 * f64::EPSILON;
        Self { qr, svd, rows, tol }
    }

    pub(crate) fn rank(&self) -> usize {
        self.svd
            .singular_values
            .iter()
            .filter(|&&s| s > self.tol)
            .count()
    }

    /// Minimum-norm solution for one right-hand side, given in row order.
    pub(crate) fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(rhs.len(), self.rows);
        let mut b = DVector::from_column_slice(rhs);
        self.qr.q_tr_mul(&mut b);
        let k = self.svd.singular_values.len();
        let head = b.rows(0, k).into_owned();
        let u = self.svd.u.as_ref().expect("U requested");
        let v_t = self.svd.v_t.as_ref().expect("Vᵀ requested");
        let mut coeffs = DVector::zeros(v_t.ncols());
        for (i, &s) in self.svd.singular_values.iter().enumerate() {
            if s > self.tol {
                let w = u.column(i).dot(&head) / s;
                coeffs.axpy(w, &v_t.row(i).transpose(), 1.0);
            }
        }
        coeffs.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exact_fit_on_full_rank_block() {
        // y = 1 + 2 x
        let xs = [-0.3, -0.1, 0.2, 0.4];
        let a = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let b: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x).collect();
        let s = CellSolver::new(a);
        assert_eq!(s.rank(), 2);
        let c = s.solve(&b);
        assert_relative_eq!(c[0], 1.0, epsilon = 1e-13);
        assert_relative_eq!(c[1], 2.0, epsilon = 1e-13);
    }

    #[test]
    fn rank_deficient_block_gives_minimum_norm() {
        // both rows share the same x: columns (1, x) are collinear
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 1.0, 0.5]);
        let s = CellSolver::new(a);
        assert_eq!(s.rank(), 1);
        let c = s.solve(&[2.0, 4.0]);
        // the solution lies along (1, 0.5) and reproduces the mean 3
        assert_relative_eq!(c[0] + 0.5 * c[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(c[1], 0.5 * c[0], epsilon = 1e-12);
    }

    #[test]
    fn underdetermined_block() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 0.2, -0.1]);
        let s = CellSolver::new(a);
        assert_eq!(s.rank(), 1);
        let c = s.solve(&[1.05]);
        let norm2 = 1.0 + 0.04 + 0.01;
        assert_relative_eq!(c[0], 1.05 / norm2, epsilon = 1e-12);
        assert_relative_eq!(c[1], 0.2 * 1.05 / norm2, epsilon = 1e-12);
    }
}
