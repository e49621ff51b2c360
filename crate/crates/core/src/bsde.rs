//! Backward regression solvers for the (non-reflected) BSDE
//! `-dY = f(t, X, Y, Z) dt - Z dW - dL`, `Y_T = φ(X_T)`.
//!
//! At each step `k = N-1, …, 0` the solver regresses, on the basis rows at
//! `X_k`,
//!
//! * `y_{k+1}(X_{k+1}) [ΔW_l]_w / h` to get `z_{l,k} = [α_l · p]_z`, then
//! * `y_{k+1}(X_{k+1}) + h f^R(t_k, X_k, y_{k+1}(X_{k+1}), z_k(X_k))` to get
//!   `y_k = [α_0 · p]_y`.
//!
//! The driver sees `y` at the next state and `z` at the current one. The
//! modified solver uses the same recursion with targets built from
//! conditionally independent re-simulations `(X̃_{k+1}, ΔW̃_k)`.

use std::sync::Arc;

use rayon::prelude::*;

use crate::basis::{CoefficientVector, HypercubeBasis};
use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::sde::PathCloud;
use crate::threshold::{
    clamp_increment, clamp_level, clamp_state_in_place, clamp_y, clamp_z, estimate_sup_on_box,
    ThresholdSet,
};

/// Smallest Lipschitz constant a driver may declare.
pub const MIN_LIPSCHITZ: f64 = 1e-8;

/// Generator `f(t, x, y, z)`.
pub trait Driver: Send + Sync {
    fn value(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> f64;
    /// Declared Lipschitz constant `C_f`.
    fn lipschitz(&self) -> f64;
    /// `sup_{t,x} |f(t, x, 0, 0)|` over the clamp box, when known in closed form.
    fn sup_at_origin(&self, _state_bounds: &[f64], _horizon: f64) -> Option<f64> {
        None
    }
}

/// Terminal function `φ(x)`.
pub trait Terminal: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    /// `sup |φ|` over the box `Π [-R_i, R_i]`, when known in closed form.
    fn sup_clamped(&self, _state_bounds: &[f64]) -> Option<f64> {
        None
    }
}

/// Time-dependent obstacle `φ(t, x)`; at `t = T` it is also the terminal value.
pub trait Obstacle: Send + Sync {
    fn value(&self, t: f64, x: &[f64]) -> f64;
    fn sup_clamped(&self, _state_bounds: &[f64]) -> Option<f64> {
        None
    }
}

/// Obstacle view of a terminal function, constant in time.
pub struct TerminalAsObstacle(pub Arc<dyn Terminal>);

impl Obstacle for TerminalAsObstacle {
    fn value(&self, _t: f64, x: &[f64]) -> f64 {
        self.0.value(x)
    }
    fn sup_clamped(&self, state_bounds: &[f64]) -> Option<f64> {
        self.0.sup_clamped(state_bounds)
    }
}

/// Driver from a closure, with a declared Lipschitz constant.
pub struct FnDriver<F> {
    f: F,
    lipschitz: f64,
    sup: Option<f64>,
}

impl<F> FnDriver<F>
where
    F: Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync,
{
    pub fn new(lipschitz: f64, f: F) -> Self {
        Self {
            f,
            lipschitz,
            sup: None,
        }
    }

    pub fn with_sup_at_origin(mut self, sup: f64) -> Self {
        self.sup = Some(sup);
        self
    }
}

impl<F> Driver for FnDriver<F>
where
    F: Fn(f64, &[f64], f64, &[f64]) -> f64 + Send + Sync,
{
    fn value(&self, t: f64, x: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.f)(t, x, y, z)
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
    fn sup_at_origin(&self, _: &[f64], _: f64) -> Option<f64> {
        self.sup
    }
}

pub struct FnTerminal<F>(pub F);

impl<F> Terminal for FnTerminal<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

pub struct FnObstacle<F>(pub F);

impl<F> Obstacle for FnObstacle<F>
where
    F: Fn(f64, &[f64]) -> f64 + Send + Sync,
{
    fn value(&self, t: f64, x: &[f64]) -> f64 {
        (self.0)(t, x)
    }
}

/// A clamp level and whether every sup entering it was declared analytically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClampLevel {
    pub value: f64,
    pub rigorous: bool,
}

const SUP_GRID_BUDGET: usize = 4096;

fn driver_sup(driver: &dyn Driver, bounds: &[f64], grid: &TimeGrid, q: usize) -> (f64, bool) {
    if let Some(s) = driver.sup_at_origin(bounds, grid.horizon()) {
        return (s, true);
    }
    let zero = vec![0.0; q];
    let est = [0.0, 0.5 * grid.horizon(), grid.horizon()]
        .iter()
        .map(|&t| estimate_sup_on_box(bounds, SUP_GRID_BUDGET, |x| driver.value(t, x, 0.0, &zero)))
        .fold(0.0, f64::max);
    (est, false)
}

fn finish_level(
    driver: &dyn Driver,
    bounds: &[f64],
    grid: &TimeGrid,
    q: usize,
    terminal_sup: (f64, bool),
) -> Result<ClampLevel> {
    let (f_sup, f_rig) = driver_sup(driver, bounds, grid, q);
    let value = clamp_level(driver.lipschitz(), q, grid.horizon(), terminal_sup.0, f_sup)?;
    let rigorous = f_rig && terminal_sup.1;
    if !rigorous {
        log::warn!("clamp level {value:.6e} uses grid-estimated sup-norms and is not a rigorous bound");
    }
    Ok(ClampLevel { value, rigorous })
}

/// Clamp level `C_y(R)` for a terminal condition; see
/// [`clamp_level`](crate::threshold::clamp_level).
pub fn compute_cy(
    state_bounds: &[f64],
    driver: &dyn Driver,
    terminal: &dyn Terminal,
    grid: &TimeGrid,
    q: usize,
) -> Result<ClampLevel> {
    let sup = match terminal.sup_clamped(state_bounds) {
        Some(s) => (s, true),
        None => (
            estimate_sup_on_box(state_bounds, SUP_GRID_BUDGET, |x| terminal.value(x)),
            false,
        ),
    };
    finish_level(driver, state_bounds, grid, q, sup)
}

/// Clamp level with the obstacle's sup over all times standing in for the
/// terminal sup.
pub fn compute_cy_reflected(
    state_bounds: &[f64],
    driver: &dyn Driver,
    obstacle: &dyn Obstacle,
    grid: &TimeGrid,
    q: usize,
) -> Result<ClampLevel> {
    let sup = match obstacle.sup_clamped(state_bounds) {
        Some(s) => (s, true),
        None => (obstacle_sup_estimate(obstacle, state_bounds, grid), false),
    };
    finish_level(driver, state_bounds, grid, q, sup)
}

pub(crate) fn obstacle_sup_estimate(obstacle: &dyn Obstacle, bounds: &[f64], grid: &TimeGrid) -> f64 {
    [0.0, 0.5 * grid.horizon(), grid.horizon()]
        .iter()
        .map(|&t| estimate_sup_on_box(bounds, SUP_GRID_BUDGET, |x| obstacle.value(t, x)))
        .fold(0.0, f64::max)
}

/// Inputs of a non-reflected backward solve.
#[derive(Clone)]
pub struct BsdeProblem {
    pub grid: TimeGrid,
    pub basis_y: HypercubeBasis,
    pub basis_z: HypercubeBasis,
    pub driver: Arc<dyn Driver>,
    pub terminal: Arc<dyn Terminal>,
    pub thresholds: ThresholdSet,
}

/// Per-step coefficients of `y_k` and `z_{l,k}` with everything needed to
/// evaluate them as clamped functions.
#[derive(Clone)]
pub struct BackwardSolution {
    grid: TimeGrid,
    basis_y: HypercubeBasis,
    basis_z: HypercubeBasis,
    thresholds: ThresholdSet,
    /// `φ^R(T, ·)` at `k = N`, and the floor of the max method.
    obstacle: Arc<dyn Obstacle>,
    floor: bool,
    y_coeffs: Vec<CoefficientVector>,
    z_coeffs: Vec<Vec<CoefficientVector>>,
    q: usize,
    y_bound: f64,
    y0: f64,
    z0: Vec<f64>,
}

impl std::fmt::Debug for BackwardSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackwardSolution")
            .field("steps", &self.grid.steps())
            .field("floor", &self.floor)
            .field("y_bound", &self.y_bound)
            .field("y0", &self.y0)
            .field("z0", &self.z0)
            .finish_non_exhaustive()
    }
}

impl BackwardSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn thresholds(&self) -> &ThresholdSet {
        &self.thresholds
    }

    pub fn basis_y(&self) -> &HypercubeBasis {
        &self.basis_y
    }

    pub fn basis_z(&self) -> &HypercubeBasis {
        &self.basis_z
    }

    pub fn brownian_dim(&self) -> usize {
        self.q
    }

    /// Bound on `|y_k|`: `C_y`, raised to the obstacle's sup for the max
    /// method when the obstacle exceeds `C_y`.
    pub fn y_bound(&self) -> f64 {
        self.y_bound
    }

    pub fn z_bound(&self) -> f64 {
        self.thresholds.z_bound(self.grid.step_size())
    }

    /// `y_0(x_0)`.
    pub fn y0(&self) -> f64 {
        self.y0
    }

    /// `z_0(x_0)`, one entry per Brownian component.
    pub fn z0(&self) -> &[f64] {
        &self.z0
    }

    /// `y_k`'s coefficients; `None` at `k = N` where `y_N = φ^R` exactly.
    pub fn y_coefficients(&self, k: usize) -> Option<&CoefficientVector> {
        self.y_coeffs.get(k).filter(|_| k < self.grid.steps())
    }

    pub fn z_coefficients(&self, k: usize, l: usize) -> &CoefficientVector {
        &self.z_coeffs[k][l]
    }

    fn obstacle_clamped(&self, k: usize, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        buf.clear();
        buf.extend_from_slice(x);
        clamp_state_in_place(buf, self.thresholds.state());
        self.obstacle.value(self.grid.time(k), buf)
    }

    fn y_with(&self, k: usize, x: &[f64], buf: &mut Vec<f64>) -> f64 {
        if k == self.grid.steps() {
            return self.obstacle_clamped(k, x, buf);
        }
        let v = clamp_y(self.basis_y.evaluate(&self.y_coeffs[k], x), self.thresholds.cy());
        if self.floor {
            v.max(self.obstacle_clamped(k, x, buf))
        } else {
            v
        }
    }

    /// `y_k(x)`.
    pub fn y(&self, k: usize, x: &[f64]) -> f64 {
        self.y_with(k, x, &mut Vec::with_capacity(x.len()))
    }

    /// `z_{l,k}(x)`.
    pub fn z(&self, k: usize, l: usize, x: &[f64]) -> f64 {
        clamp_z(
            self.basis_z.evaluate(&self.z_coeffs[k][l], x),
            self.thresholds.cy(),
            self.grid.step_size(),
        )
    }
}

/// How the obstacle enters the recursion.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Reflection {
    None,
    Max,
    Penalty(f64),
    Regularize(f64),
}

/// Where regression targets take `X_{k+1}` and `ΔW_k` from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum TargetSource {
    Primary,
    Shadow,
}

/// `(u)_- = max(-u, 0)`.
#[inline]
pub(crate) fn negative_part(u: f64) -> f64 {
    (-u).max(0.0)
}

/// Piecewise-linear mollifier: 1 on `|x| <= 1/n`, 0 on `|x| >= 2/n`.
pub fn mollifier(n: f64, x: f64) -> f64 {
    let a = n * x.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        2.0 - a
    }
}

pub(crate) struct EngineInput<'a> {
    pub cloud: &'a PathCloud,
    pub grid: TimeGrid,
    pub basis_y: &'a HypercubeBasis,
    pub basis_z: &'a HypercubeBasis,
    pub driver: &'a dyn Driver,
    pub obstacle: Arc<dyn Obstacle>,
    pub thresholds: &'a ThresholdSet,
    pub reflection: Reflection,
    pub source: TargetSource,
}

pub(crate) struct EngineOutput {
    pub solution: BackwardSolution,
    pub v_coeffs: Option<Vec<Vec<CoefficientVector>>>,
}

fn validate(input: &EngineInput<'_>) -> Result<()> {
    let cloud = input.cloud;
    if *cloud.grid() != input.grid {
        return Err(Error::GridMismatch(format!(
            "cloud has {} steps over {}, problem has {} over {}",
            cloud.grid().steps(),
            cloud.grid().horizon(),
            input.grid.steps(),
            input.grid.horizon()
        )));
    }
    let d = cloud.dim();
    if input.basis_y.dim() != d || input.basis_z.dim() != d {
        return Err(invalid("basis", format!("basis dimension differs from state dimension {d}")));
    }
    if input.thresholds.state().len() != d {
        return Err(invalid("state thresholds", format!("need {d} entries")));
    }
    if input.source == TargetSource::Shadow && !cloud.has_shadow() {
        return Err(Error::MissingShadow);
    }
    Ok(())
}

pub(crate) fn run_backward(input: EngineInput<'_>) -> Result<EngineOutput> {
    validate(&input)?;
    let EngineInput {
        cloud,
        grid,
        basis_y,
        basis_z,
        driver,
        obstacle,
        thresholds,
        reflection,
        source,
    } = input;
    let (m_paths, d, q, n) = (cloud.paths(), cloud.dim(), cloud.brownian_dim(), grid.steps());
    let h = grid.step_size();
    let cy = thresholds.cy();
    let r0 = thresholds.r0();
    let bounds = thresholds.state();
    let shared_basis = basis_y == basis_z;

    let mut y_bound = cy;
    if reflection == Reflection::Max {
        let sup = obstacle
            .sup_clamped(bounds)
            .unwrap_or_else(|| obstacle_sup_estimate(obstacle.as_ref(), bounds, &grid));
        if sup > cy {
            log::warn!("obstacle sup {sup:.6e} exceeds C_y = {cy:.6e}; y is bounded by the obstacle instead");
            y_bound = sup;
        }
    }

    let mut sol = BackwardSolution {
        grid,
        basis_y: basis_y.clone(),
        basis_z: basis_z.clone(),
        thresholds: thresholds.clone(),
        obstacle,
        floor: reflection == Reflection::Max,
        y_coeffs: vec![CoefficientVector::zeros(basis_y); n],
        z_coeffs: vec![Vec::new(); n],
        q,
        y_bound,
        y0: 0.0,
        z0: vec![0.0; q],
    };
    let mut v_coeffs = matches!(reflection, Reflection::Regularize(_)).then(|| vec![Vec::new(); n]);

    struct PathData {
        y_next: f64,
        /// clamped increments
        dw: Vec<f64>,
        obstacle_next: f64,
        obstacle_now: f64,
    }

    for k in (0..n).rev() {
        let t = grid.time(k);
        let xs = cloud.states_at(k);
        let design_z = basis_z.prepare(&xs);
        let design_y_own = (!shared_basis).then(|| basis_y.prepare(&xs));
        let design_y = design_y_own.as_ref().unwrap_or(&design_z);

        let needs_next_obstacle = matches!(reflection, Reflection::Regularize(_));
        let needs_now_obstacle = !matches!(reflection, Reflection::None | Reflection::Max);
        let sol_ref = &sol;
        let data: Vec<PathData> = (0..m_paths)
            .into_par_iter()
            .map_init(
                || Vec::with_capacity(d),
                |buf, m| {
                    let (next, dw) = match source {
                        TargetSource::Primary => (cloud.state(m, k + 1), cloud.increment(m, k)),
                        TargetSource::Shadow => (
                            cloud.shadow_state(m, k).expect("validated"),
                            cloud.shadow_increment(m, k).expect("validated"),
                        ),
                    };
                    let y_next = sol_ref.y_with(k + 1, next, buf);
                    let obstacle_next = if needs_next_obstacle {
                        sol_ref.obstacle_clamped(k + 1, next, buf)
                    } else {
                        0.0
                    };
                    let obstacle_now = if needs_now_obstacle {
                        sol_ref.obstacle_clamped(k, cloud.state(m, k), buf)
                    } else {
                        0.0
                    };
                    PathData {
                        y_next,
                        dw: dw.iter().map(|w| clamp_increment(*w, r0, h)).collect(),
                        obstacle_next,
                        obstacle_now,
                    }
                },
            )
            .collect();
        if let Some(m) = data.iter().position(|p| !p.y_next.is_finite()) {
            return Err(Error::NonFiniteTarget {
                target: "y",
                path: m,
                step: k,
            });
        }

        // z_{l,k}
        let mut z_vals = vec![0.0; m_paths * q];
        let mut z_step = Vec::with_capacity(q);
        for l in 0..q {
            let targets: Vec<f64> = data.iter().map(|p| p.y_next * p.dw[l] / h).collect();
            let alpha = design_z.fit(&targets);
            for (m, v) in design_z.evaluate(&alpha).into_iter().enumerate() {
                z_vals[m * q + l] = clamp_z(v, cy, h);
            }
            z_step.push(alpha);
        }

        // V_{l,k} for the regularized scheme
        let mut v_vals = Vec::new();
        if let Some(vc) = v_coeffs.as_mut() {
            v_vals = vec![0.0; m_paths * q];
            let mut v_step = Vec::with_capacity(q);
            for l in 0..q {
                let targets: Vec<f64> = data.iter().map(|p| p.obstacle_next * p.dw[l] / h).collect();
                if let Some(m) = targets.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteTarget {
                        target: "v",
                        path: m,
                        step: k,
                    });
                }
                let beta = design_z.fit(&targets);
                for (m, v) in design_z.evaluate(&beta).into_iter().enumerate() {
                    v_vals[m * q + l] = clamp_z(v, cy, h);
                }
                v_step.push(beta);
            }
            vc[k] = v_step;
        }

        // y_k
        let targets: Vec<f64> = (0..m_paths)
            .into_par_iter()
            .map_init(
                || vec![0.0; d],
                |xbuf, m| {
                    let p = &data[m];
                    xbuf.copy_from_slice(cloud.state(m, k));
                    clamp_state_in_place(xbuf, bounds);
                    let z = &z_vals[m * q..(m + 1) * q];
                    let mut target = p.y_next + h * driver.value(t, xbuf, p.y_next, z);
                    match reflection {
                        Reflection::None | Reflection::Max => {}
                        Reflection::Penalty(pen) => {
                            let push = pen * negative_part(p.y_next - p.obstacle_now);
                            if push != 0.0 {
                                target += h * push;
                            }
                        }
                        Reflection::Regularize(nm) => {
                            let w = mollifier(nm, p.y_next - p.obstacle_next);
                            if w != 0.0 {
                                let v = &v_vals[m * q..(m + 1) * q];
                                let bracket = driver.value(t, xbuf, p.obstacle_next, v)
                                    + (p.obstacle_next - p.obstacle_now) / h;
                                let corr = w * negative_part(bracket);
                                if corr != 0.0 {
                                    target += h * corr;
                                }
                            }
                        }
                    }
                    target
                },
            )
            .collect();
        if let Some(m) = targets.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteTarget {
                target: "y",
                path: m,
                step: k,
            });
        }
        sol.y_coeffs[k] = design_y.fit(&targets);
        sol.z_coeffs[k] = z_step;
    }

    let x0 = cloud.state(0, 0).to_vec();
    sol.y0 = sol.y(0, &x0);
    sol.z0 = (0..q).map(|l| sol.z(0, l, &x0)).collect();
    Ok(EngineOutput {
        solution: sol,
        v_coeffs,
    })
}

fn engine_input<'a>(cloud: &'a PathCloud, problem: &'a BsdeProblem, source: TargetSource) -> EngineInput<'a> {
    EngineInput {
        cloud,
        grid: problem.grid,
        basis_y: &problem.basis_y,
        basis_z: &problem.basis_z,
        driver: problem.driver.as_ref(),
        obstacle: Arc::new(TerminalAsObstacle(problem.terminal.clone())),
        thresholds: &problem.thresholds,
        reflection: Reflection::None,
        source,
    }
}

/// Initial algorithm: every regression uses the primary paths.
pub fn solve_backward_initial(cloud: &PathCloud, problem: &BsdeProblem) -> Result<BackwardSolution> {
    run_backward(engine_input(cloud, problem, TargetSource::Primary)).map(|o| o.solution)
}

/// Modified algorithm: regression targets use the shadow steps
/// `(X̃_{k+1}, ΔW̃_k)`, regressors stay at `X_k`.
pub fn solve_backward_modified(cloud: &PathCloud, problem: &BsdeProblem) -> Result<BackwardSolution> {
    run_backward(engine_input(cloud, problem, TargetSource::Shadow)).map(|o| o.solution)
}
