//! Reflected solvers: max, penalization and regularization.
//!
//! All three reuse the backward engine of [`crate::bsde`]. The max method
//! floors `y_k` by the obstacle when evaluated; the other two only change
//! the `y` regression target.

use std::sync::Arc;

use crate::basis::{CoefficientVector, HypercubeBasis};
use crate::bsde::{run_backward, BackwardSolution, Driver, EngineInput, Obstacle, Reflection, TargetSource};
use crate::error::{invalid, Result};
use crate::grid::TimeGrid;
use crate::sde::PathCloud;
use crate::threshold::{clamp_z, ThresholdSet};

pub use crate::bsde::mollifier;

/// Inputs of a reflected solve. The obstacle at `t = T` is the terminal value.
#[derive(Clone)]
pub struct RbsdeProblem {
    pub grid: TimeGrid,
    pub basis_y: HypercubeBasis,
    pub basis_z: HypercubeBasis,
    pub driver: Arc<dyn Driver>,
    pub obstacle: Arc<dyn Obstacle>,
    pub thresholds: ThresholdSet,
}

/// Penalization intensity or mollifier parameter `n`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct PenaltyLevel(f64);

impl PenaltyLevel {
    pub fn new(n: f64) -> Result<Self> {
        if !(n.is_finite() && n >= 0.0) {
            return Err(invalid("n", format!("must be finite and >= 0, got {n}")));
        }
        Ok(Self(n))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReflectionMethod {
    Max,
    Penalization,
    Regularization,
}

#[derive(Clone, Debug)]
pub struct ReflectedSolution {
    method: ReflectionMethod,
    solution: BackwardSolution,
    v_coeffs: Option<Vec<Vec<CoefficientVector>>>,
}

impl ReflectedSolution {
    pub fn method(&self) -> ReflectionMethod {
        self.method
    }

    pub fn solution(&self) -> &BackwardSolution {
        &self.solution
    }

    pub fn into_solution(self) -> BackwardSolution {
        self.solution
    }

    pub fn y0(&self) -> f64 {
        self.solution.y0()
    }

    pub fn z0(&self) -> &[f64] {
        self.solution.z0()
    }

    /// `V_{l,k}(x) = [β_{l,k} · p]_v`, regularization only.
    pub fn v(&self, k: usize, l: usize, x: &[f64]) -> Option<f64> {
        let s = &self.solution;
        self.v_coeffs.as_ref().map(|v| {
            clamp_z(s.basis_z().evaluate(&v[k][l], x), s.thresholds().cy(), s.grid().step_size())
        })
    }

    /// `β_{l,k}`, regularization only.
    pub fn v_coefficients(&self, k: usize, l: usize) -> Option<&CoefficientVector> {
        self.v_coeffs.as_ref().map(|v| &v[k][l])
    }
}

fn run(cloud: &PathCloud, p: &RbsdeProblem, reflection: Reflection, method: ReflectionMethod) -> Result<ReflectedSolution> {
    let out = run_backward(EngineInput {
        cloud,
        grid: p.grid,
        basis_y: &p.basis_y,
        basis_z: &p.basis_z,
        driver: p.driver.as_ref(),
        obstacle: p.obstacle.clone(),
        thresholds: &p.thresholds,
        reflection,
        source: TargetSource::Primary,
    })?;
    Ok(ReflectedSolution {
        method,
        solution: out.solution,
        v_coeffs: out.v_coeffs,
    })
}

/// `y_k = max(φ^R(t_k, ·), [α_{0,k} · p]_y)`.
pub fn solve_max(cloud: &PathCloud, problem: &RbsdeProblem) -> Result<ReflectedSolution> {
    run(cloud, problem, Reflection::Max, ReflectionMethod::Max)
}

/// Adds `n h (y_{k+1}(X_{k+1}) - φ^R(t_k, X_k))_-` to the `y` target.
pub fn solve_penalized(cloud: &PathCloud, problem: &RbsdeProblem, n: PenaltyLevel) -> Result<ReflectedSolution> {
    let nh = n.value() * problem.grid.step_size();
    if nh >= 1.0 {
        log::warn!("penalty n*h = {nh:.3} >= 1; the explicit penalty may overshoot");
    }
    run(cloud, problem, Reflection::Penalty(n.value()), ReflectionMethod::Penalization)
}

/// Adds the mollified correction
/// `h φ_n(y_{k+1} - φ^R_{k+1}) [f^R(t_k, X_k, φ^R_{k+1}, V_k) + (φ^R_{k+1} - φ^R_k)/h]_-`,
/// where `φ^R_{k+1} = φ^R(t_{k+1}, X_{k+1})` and `V_k` regresses
/// `φ^R_{k+1} [ΔW]_w / h`.
pub fn solve_regularized(cloud: &PathCloud, problem: &RbsdeProblem, n: PenaltyLevel) -> Result<ReflectedSolution> {
    if n.value() < 1.0 {
        return Err(invalid("n", format!("regularization needs n >= 1, got {}", n.value())));
    }
    run(cloud, problem, Reflection::Regularize(n.value()), ReflectionMethod::Regularization)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::Degree;
    use crate::bsde::{solve_backward_initial, BsdeProblem, FnDriver, FnObstacle, FnTerminal, Terminal};
    use crate::sde::{simulate_paths, BrownianModel};

    const FLOOR: f64 = -1.0e6;

    fn setup(paths: usize) -> (TimeGrid, PathCloud, HypercubeBasis) {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let model = BrownianModel::new(vec![0.0], vec![0.02], vec![0.3]).unwrap();
        let cloud = simulate_paths(&model, &grid, paths, 17).unwrap();
        let basis = HypercubeBasis::isotropic(vec![0.0], 1.5, 0.25, Degree::Affine).unwrap();
        (grid, cloud, basis)
    }

    fn driver() -> Arc<dyn Driver> {
        Arc::new(FnDriver::new(0.05, |_, _, y, z: &[f64]| -0.05 * y + 0.01 * z[0]).with_sup_at_origin(0.0))
    }

    fn reflected(grid: TimeGrid, basis: HypercubeBasis, obstacle: Arc<dyn Obstacle>) -> RbsdeProblem {
        RbsdeProblem {
            grid,
            basis_y: basis.clone(),
            basis_z: basis,
            driver: driver(),
            obstacle,
            thresholds: ThresholdSet::new(5.0, vec![10.0], 100.0).unwrap(),
        }
    }

    fn plain(grid: TimeGrid, basis: HypercubeBasis, terminal: Arc<dyn Terminal>) -> BsdeProblem {
        BsdeProblem {
            grid,
            basis_y: basis.clone(),
            basis_z: basis,
            driver: driver(),
            terminal,
            thresholds: ThresholdSet::new(5.0, vec![10.0], 100.0).unwrap(),
        }
    }

    fn assert_same(a: &BackwardSolution, b: &BackwardSolution) {
        assert_eq!(a.y0(), b.y0());
        assert_eq!(a.z0(), b.z0());
        for k in 0..a.grid().steps() {
            assert_eq!(a.y_coefficients(k), b.y_coefficients(k));
            assert_eq!(a.z_coefficients(k, 0), b.z_coefficients(k, 0));
        }
    }

    #[test]
    fn far_obstacle_reduces_every_method_to_plain() {
        let (grid, cloud, basis) = setup(2000);
        let base = solve_backward_initial(&cloud, &plain(grid, basis.clone(), Arc::new(FnTerminal(|_: &[f64]| FLOOR))))
            .unwrap();
        let p = reflected(grid, basis, Arc::new(FnObstacle(|_, _: &[f64]| FLOOR)));
        assert_same(&base, solve_max(&cloud, &p).unwrap().solution());
        assert_same(&base, solve_penalized(&cloud, &p, PenaltyLevel::new(3.0).unwrap()).unwrap().solution());
        assert_same(&base, solve_regularized(&cloud, &p, PenaltyLevel::new(2.0).unwrap()).unwrap().solution());
    }

    #[test]
    fn zero_penalty_is_plain_solver() {
        let (grid, cloud, basis) = setup(2000);
        let put = |x: &[f64]| (1.0 - x[0].exp()).max(0.0);
        let base = solve_backward_initial(&cloud, &plain(grid, basis.clone(), Arc::new(FnTerminal(put)))).unwrap();
        let p = reflected(grid, basis, Arc::new(FnObstacle(move |_, x: &[f64]| put(x))));
        let pen = solve_penalized(&cloud, &p, PenaltyLevel::new(0.0).unwrap()).unwrap();
        assert_same(&base, pen.solution());
    }

    #[test]
    fn constant_obstacle_is_a_fixed_point() {
        let (grid, cloud, basis) = setup(500);
        let mut p = reflected(grid, basis, Arc::new(FnObstacle(|_, _: &[f64]| 2.5)));
        p.driver = Arc::new(FnDriver::new(1e-8, |_, _, _, _| 0.0));
        let max = solve_max(&cloud, &p).unwrap();
        let pen = solve_penalized(&cloud, &p, PenaltyLevel::new(4.0).unwrap()).unwrap();
        for k in 0..grid.steps() {
            for x in [-1.0, 0.0, 0.7] {
                let y = max.solution().y(k, &[x]);
                assert!(y >= 2.5 && y - 2.5 < 1e-12);
            }
            // the affine fit reproduces a constant target at the samples
            for m in (0..500).step_by(7) {
                let x = cloud.state(m, k);
                assert!((pen.solution().y(k, x) - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn max_method_dominates_obstacle() {
        let (grid, cloud, basis) = setup(3000);
        let put = |x: &[f64]| (1.0 - x[0].exp()).max(0.0);
        let p = reflected(grid, basis, Arc::new(FnObstacle(move |_, x: &[f64]| put(x))));
        let sol = solve_max(&cloud, &p).unwrap();
        for k in 0..=grid.steps() {
            for i in 0..200 {
                let x = -3.0 + 6.0 * i as f64 / 199.0;
                assert!(sol.solution().y(k, &[x]) >= put(&[x]));
            }
        }
    }

    #[test]
    fn regularized_needs_n_at_least_one() {
        let (grid, cloud, basis) = setup(10);
        let p = reflected(grid, basis, Arc::new(FnObstacle(|_, _: &[f64]| 0.0)));
        assert!(solve_regularized(&cloud, &p, PenaltyLevel::new(0.5).unwrap()).is_err());
        assert!(PenaltyLevel::new(-1.0).is_err());
    }

    #[test]
    fn regularized_carries_v_coefficients() {
        let (grid, cloud, basis) = setup(400);
        let p = reflected(grid, basis, Arc::new(FnObstacle(|_, x: &[f64]| (1.0 - x[0].exp()).max(0.0))));
        let sol = solve_regularized(&cloud, &p, PenaltyLevel::new(2.0).unwrap()).unwrap();
        assert_eq!(sol.method(), ReflectionMethod::Regularization);
        assert!(sol.v_coefficients(0, 0).is_some());
        let max = solve_max(&cloud, &p).unwrap();
        assert!(max.v_coefficients(0, 0).is_none());
    }
}
