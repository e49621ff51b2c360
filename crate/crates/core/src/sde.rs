//! Euler simulation of the forward chain `X^N`, with optional compound-Poisson
//! jumps, plus the conditionally independent one-step re-simulations used by
//! the modified backward solver.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::TimeGrid;
use crate::rng::StreamFamily;

/// Coefficients of a forward jump-diffusion
/// `dX = b(t,X) dt + σ(t,X) dW + ∫ β(t,X_-,e) (μ - ν)(dt,de)`.
///
/// Implementations must return finite values for finite arguments.
pub trait ForwardModel: Sync {
    /// State dimension `d`.
    fn dim(&self) -> usize;
    /// Brownian dimension `q`.
    fn brownian_dim(&self) -> usize;
    fn initial_state(&self) -> &[f64];
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Row-major `d x q` diffusion matrix.
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Finite-activity jump part; `None` is the pure Brownian case.
    fn jumps(&self) -> Option<&dyn JumpPart> {
        None
    }
}

/// Compound-Poisson jump part with total intensity `Λ = λ(E)`.
pub trait JumpPart: Sync {
    /// Expected number of jumps per unit time.
    fn intensity(&self) -> f64;
    fn mark_dim(&self) -> usize;
    fn sample_mark(&self, rng: &mut dyn RngCore, mark: &mut [f64]);
    /// Jump coefficient `β(t, x, e)`.
    fn coefficient(&self, t: f64, x: &[f64], mark: &[f64], out: &mut [f64]);
    /// Writes `Λ E[β(t, x, ·)]` and returns `true` when the compensator is
    /// declared. Returning `false` means the drift already absorbs it.
    fn compensator(&self, _t: f64, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// One-step re-simulations `(X̃_{k+1}, ΔW̃_k)` drawn from every `X_k`.
#[derive(Clone, Debug)]
pub struct ShadowSteps {
    seed: u64,
    states: Vec<f64>,
    increments: Vec<f64>,
}

/// `M` simulated paths of the forward chain with their Brownian increments.
///
/// Storage is path-major: `X[m][k]` lives at `((m * (N + 1)) + k) * d`.
#[derive(Clone, Debug)]
pub struct PathCloud {
    grid: TimeGrid,
    paths: usize,
    dim: usize,
    bdim: usize,
    seed: u64,
    states: Vec<f64>,
    increments: Vec<f64>,
    shadow: Option<ShadowSteps>,
}

impl PathCloud {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn brownian_dim(&self) -> usize {
        self.bdim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn state(&self, m: usize, k: usize) -> &[f64] {
        let n1 = self.grid.steps() + 1;
        let at = (m * n1 + k) * self.dim;
        &self.states[at..at + self.dim]
    }

    /// `ΔW[m][k] = W_{t_{k+1}} - W_{t_k}` for path `m`.
    pub fn increment(&self, m: usize, k: usize) -> &[f64] {
        let at = (m * self.grid.steps() + k) * self.bdim;
        &self.increments[at..at + self.bdim]
    }

    pub fn has_shadow(&self) -> bool {
        self.shadow.is_some()
    }

    pub fn shadow_seed(&self) -> Option<u64> {
        self.shadow.as_ref().map(|s| s.seed)
    }

    /// `X̃[m][k+1]`, the re-simulated successor of `X[m][k]`.
    pub fn shadow_state(&self, m: usize, k: usize) -> Option<&[f64]> {
        let s = self.shadow.as_ref()?;
        let at = (m * self.grid.steps() + k) * self.dim;
        Some(&s.states[at..at + self.dim])
    }

    /// `ΔW̃[m][k]`.
    pub fn shadow_increment(&self, m: usize, k: usize) -> Option<&[f64]> {
        let s = self.shadow.as_ref()?;
        let at = (m * self.grid.steps() + k) * self.bdim;
        Some(&s.increments[at..at + self.bdim])
    }

    /// All states at node `k`, gathered into a contiguous `M x d` buffer.
    pub fn states_at(&self, k: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.paths * self.dim);
        for m in 0..self.paths {
            out.extend_from_slice(self.state(m, k));
        }
        out
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = &[f64]> + '_ {
        let n = self.grid.steps();
        (0..self.paths).map(move |m| self.state(m, n))
    }
}

struct Scratch {
    drift: Vec<f64>,
    sigma: Vec<f64>,
    jump: Vec<f64>,
    mark: Vec<f64>,
}

impl Scratch {
    fn new(model: &dyn ForwardModel) -> Self {
        let d = model.dim();
        Self {
            drift: vec![0.0; d],
            sigma: vec![0.0; d * model.brownian_dim()],
            jump: vec![0.0; d],
            mark: vec![0.0; model.jumps().map_or(0, |j| j.mark_dim())],
        }
    }
}

/// One explicit Euler step from `(t, x)`; coefficients frozen at `t`.
fn euler_step<R: Rng>(
    model: &dyn ForwardModel,
    poisson: Option<&Poisson<f64>>,
    t: f64,
    h: f64,
    x: &[f64],
    dw: &mut [f64],
    next: &mut [f64],
    rng: &mut R,
    s: &mut Scratch,
) {
    let sqrt_h = h.sqrt();
    for w in dw.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *w = sqrt_h * z;
    }
    let q = dw.len();
    model.drift(t, x, &mut s.drift);
    model.diffusion(t, x, &mut s.sigma);
    for i in 0..x.len() {
        let row = &s.sigma[i * q..(i + 1) * q];
        let noise: f64 = row.iter().zip(dw.iter()).map(|(a, b)| a * b).sum();
        next[i] = x[i] + s.drift[i] * h + noise;
    }
    if let (Some(jumps), Some(poisson)) = (model.jumps(), poisson) {
        let count = poisson.sample(rng) as usize;
        for _ in 0..count {
            jumps.sample_mark(rng, &mut s.mark);
            jumps.coefficient(t, x, &s.mark, &mut s.jump);
            for (n, j) in next.iter_mut().zip(&s.jump) {
                *n += j;
            }
        }
        if jumps.compensator(t, x, &mut s.jump) {
            for (n, j) in next.iter_mut().zip(&s.jump) {
                *n -= h * j;
            }
        }
    }
}

fn check_model(model: &dyn ForwardModel) -> Result<Option<f64>> {
    let d = model.dim();
    if d == 0 {
        return Err(invalid("dim", "state dimension must be at least 1"));
    }
    if model.brownian_dim() == 0 {
        return Err(invalid("brownian_dim", "Brownian dimension must be at least 1"));
    }
    if model.initial_state().len() != d {
        return Err(invalid("initial_state", format!("expected {d} components")));
    }
    match model.jumps() {
        None => Ok(None),
        Some(j) => {
            let lambda = j.intensity();
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(invalid("intensity", format!("must be finite and >= 0, got {lambda}")));
            }
            Ok((lambda > 0.0).then_some(lambda))
        }
    }
}

fn poisson_for(lambda: Option<f64>, h: f64) -> Result<Option<Poisson<f64>>> {
    lambda
        .map(|l| Poisson::new(l * h).map_err(|e| invalid("intensity", e.to_string())))
        .transpose()
}

/// Simulates `paths` independent Euler paths of `model` on `grid`.
///
/// Path `m` draws only from the counter-based stream `(seed, m, k)`, so the
/// result is bit-identical for any thread count.
pub fn simulate_paths(
    model: &dyn ForwardModel,
    grid: &TimeGrid,
    paths: usize,
    seed: u64,
) -> Result<PathCloud> {
    if paths == 0 {
        return Err(invalid("paths", "need at least one path"));
    }
    let lambda = check_model(model)?;
    let (d, q, n) = (model.dim(), model.brownian_dim(), grid.steps());
    let h = grid.step_size();
    let poisson = poisson_for(lambda, h)?;
    let family = StreamFamily::new(seed);

    let mut states = vec![0.0; paths * (n + 1) * d];
    let mut increments = vec![0.0; paths * n * q];

    states
        .par_chunks_mut((n + 1) * d)
        .zip(increments.par_chunks_mut(n * q))
        .enumerate()
        .try_for_each_init(
            || Scratch::new(model),
            |scratch, (m, (xs, dws))| {
                xs[..d].copy_from_slice(model.initial_state());
                let mut stream = family.path(m);
                for k in 0..n {
                    let (head, tail) = xs.split_at_mut((k + 1) * d);
                    let x = &head[k * d..];
                    let next = &mut tail[..d];
                    let dw = &mut dws[k * q..(k + 1) * q];
                    let rng = stream.at_step(k);
                    euler_step(model, poisson.as_ref(), grid.time(k), h, x, dw, next, rng, scratch);
                    if next.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteState { path: m, step: k + 1 });
                    }
                }
                Ok(())
            },
        )?;

    Ok(PathCloud {
        grid: *grid,
        paths,
        dim: d,
        bdim: q,
        seed,
        states,
        increments,
        shadow: None,
    })
}

/// Adds, for every `(m, k)`, a fresh Euler step `X̃[m][k+1]` started at
/// `X[m][k]` together with its own increment `ΔW̃[m][k]`, drawn from the
/// streams of `seed2`. Primary arrays are left untouched.
pub fn simulate_shadow_steps(
    mut cloud: PathCloud,
    model: &dyn ForwardModel,
    grid: &TimeGrid,
    seed2: u64,
) -> Result<PathCloud> {
    if cloud.shadow.is_some() {
        return Err(Error::ShadowPresent);
    }
    if seed2 == cloud.seed {
        return Err(invalid("seed2", "shadow seed must differ from the primary seed"));
    }
    if cloud.grid != *grid {
        return Err(Error::GridMismatch(format!(
            "cloud has {} steps over {}, grid has {} over {}",
            cloud.grid.steps(),
            cloud.grid.horizon(),
            grid.steps(),
            grid.horizon()
        )));
    }
    let lambda = check_model(model)?;
    let (d, q, n) = (cloud.dim, cloud.bdim, grid.steps());
    if model.dim() != d || model.brownian_dim() != q {
        return Err(invalid("model", "dimensions differ from the path cloud"));
    }
    let h = grid.step_size();
    let poisson = poisson_for(lambda, h)?;
    let family = StreamFamily::new(seed2);

    let mut states = vec![0.0; cloud.paths * n * d];
    let mut increments = vec![0.0; cloud.paths * n * q];
    let primary = &cloud;

    states
        .par_chunks_mut(n * d)
        .zip(increments.par_chunks_mut(n * q))
        .enumerate()
        .try_for_each_init(
            || Scratch::new(model),
            |scratch, (m, (xs, dws))| {
                let mut stream = family.path(m);
                for k in 0..n {
                    let next = &mut xs[k * d..(k + 1) * d];
                    let dw = &mut dws[k * q..(k + 1) * q];
                    let rng = stream.at_step(k);
                    let x = primary.state(m, k);
                    euler_step(model, poisson.as_ref(), grid.time(k), h, x, dw, next, rng, scratch);
                    if next.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFiniteState { path: m, step: k + 1 });
                    }
                }
                Ok(())
            },
        )?;

    cloud.shadow = Some(ShadowSteps {
        seed: seed2,
        states,
        increments,
    });
    Ok(cloud)
}

/// Forward model assembled from closures; handy for tests and custom
/// dynamics that do not warrant their own type.
pub struct FnModel<B, S> {
    x0: Vec<f64>,
    bdim: usize,
    drift: B,
    diffusion: S,
}

impl<B, S> FnModel<B, S>
where
    B: Fn(f64, &[f64], &mut [f64]) + Sync,
    S: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    pub fn new(x0: Vec<f64>, brownian_dim: usize, drift: B, diffusion: S) -> Self {
        Self {
            x0,
            bdim: brownian_dim,
            drift,
            diffusion,
        }
    }
}

impl<B, S> ForwardModel for FnModel<B, S>
where
    B: Fn(f64, &[f64], &mut [f64]) + Sync,
    S: Fn(f64, &[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.x0.len()
    }
    fn brownian_dim(&self) -> usize {
        self.bdim
    }
    fn initial_state(&self) -> &[f64] {
        &self.x0
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out)
    }
}

/// Arithmetic Brownian motion `X = x0 + μ t + s W` with diagonal noise.
#[derive(Clone, Debug)]
pub struct BrownianModel {
    x0: Vec<f64>,
    drift: Vec<f64>,
    vol: Vec<f64>,
}

impl BrownianModel {
    pub fn new(x0: Vec<f64>, drift: Vec<f64>, vol: Vec<f64>) -> Result<Self> {
        if x0.is_empty() || drift.len() != x0.len() || vol.len() != x0.len() {
            return Err(invalid("brownian", "x0, drift and volatility need equal, nonzero lengths"));
        }
        Ok(Self { x0, drift, vol })
    }

    /// Standard one-dimensional Brownian motion started at `x0`.
    pub fn standard(x0: f64) -> Self {
        Self {
            x0: vec![x0],
            drift: vec![0.0],
            vol: vec![1.0],
        }
    }
}

impl ForwardModel for BrownianModel {
    fn dim(&self) -> usize {
        self.x0.len()
    }
    fn brownian_dim(&self) -> usize {
        self.x0.len()
    }
    fn initial_state(&self) -> &[f64] {
        &self.x0
    }
    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.drift);
    }
    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        let d = self.x0.len();
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = self.vol[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn frozen(x0: f64) -> impl ForwardModel {
        FnModel::new(vec![x0], 1, |_, _, b| b[0] = 0.0, |_, _, s| s[0] = 0.0)
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let cloud = simulate_paths(&frozen(5.0), &grid, 16, 3).unwrap();
        for m in 0..16 {
            for k in 0..=10 {
                assert_eq!(cloud.state(m, k), &[5.0]);
            }
        }
    }

    #[test]
    fn deterministic_compounding() {
        let model = FnModel::new(vec![1.0], 1, |_, x, b| b[0] = 0.05 * x[0], |_, _, s| s[0] = 0.0);
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let cloud = simulate_paths(&model, &grid, 2, 0).unwrap();
        assert_relative_eq!(cloud.state(1, 4)[0], 1.0509453369140622, max_relative = 1e-15);
    }

    #[test]
    fn same_seed_same_cloud_across_pools() {
        let model = BrownianModel::standard(0.0);
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let a = simulate_paths(&model, &grid, 500, 11).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate_paths(&model, &grid, 500, 11).unwrap());
        assert_eq!(a.states, b.states);
        assert_eq!(a.increments, b.increments);
        let c = simulate_paths(&model, &grid, 500, 12).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn increments_have_variance_h() {
        let model = BrownianModel::standard(0.0);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let cloud = simulate_paths(&model, &grid, 4000, 5).unwrap();
        let h = grid.step_size();
        let n = cloud.increments.len() as f64;
        let var = cloud.increments.iter().map(|w| w * w).sum::<f64>() / n;
        // Var(W^2) = 2 h^2
        let se = (2.0 * h * h / n).sqrt();
        assert!((var - h).abs() < 5.0 * se, "var {var} vs h {h}, se {se}");
    }

    #[test]
    fn euler_sums_increments_for_brownian_motion() {
        let model = BrownianModel::standard(0.3);
        let grid = TimeGrid::new(1.0, 5).unwrap();
        let cloud = simulate_paths(&model, &grid, 10, 1).unwrap();
        for m in 0..10 {
            let mut x = 0.3;
            for k in 0..5 {
                x += cloud.increment(m, k)[0];
                assert_relative_eq!(cloud.state(m, k + 1)[0], x, max_relative = 1e-14);
            }
        }
    }

    struct PanickingJumps;
    impl JumpPart for PanickingJumps {
        fn intensity(&self) -> f64 {
            0.0
        }
        fn mark_dim(&self) -> usize {
            1
        }
        fn sample_mark(&self, _: &mut dyn RngCore, _: &mut [f64]) {
            panic!("jump sampler must not run without jump activity");
        }
        fn coefficient(&self, _: f64, _: &[f64], _: &[f64], _: &mut [f64]) {
            panic!("jump coefficient must not run without jump activity");
        }
    }

    struct ZeroIntensity(BrownianModel, PanickingJumps);
    impl ForwardModel for ZeroIntensity {
        fn dim(&self) -> usize {
            1
        }
        fn brownian_dim(&self) -> usize {
            1
        }
        fn initial_state(&self) -> &[f64] {
            self.0.initial_state()
        }
        fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
            self.0.drift(t, x, out)
        }
        fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
            self.0.diffusion(t, x, out)
        }
        fn jumps(&self) -> Option<&dyn JumpPart> {
            Some(&self.1)
        }
    }

    #[test]
    fn zero_intensity_never_samples_jumps() {
        let model = ZeroIntensity(BrownianModel::standard(0.0), PanickingJumps);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let with = simulate_paths(&model, &grid, 100, 4).unwrap();
        let without = simulate_paths(&BrownianModel::standard(0.0), &grid, 100, 4).unwrap();
        assert_eq!(with.states, without.states);
    }

    #[test]
    fn non_finite_state_reports_path_and_step() {
        let model = FnModel::new(
            vec![1.0],
            1,
            |t, _, b| b[0] = if t > 0.45 { f64::INFINITY } else { 0.0 },
            |_, _, s| s[0] = 0.0,
        );
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let err = simulate_paths(&model, &grid, 3, 0).unwrap_err();
        assert_eq!(err, Error::NonFiniteState { path: 0, step: 6 });
    }

    #[test]
    fn shadow_of_deterministic_model_repeats_current_state() {
        let grid = TimeGrid::new(1.0, 6).unwrap();
        let model = frozen(2.5);
        let cloud = simulate_paths(&model, &grid, 8, 1).unwrap();
        let cloud = simulate_shadow_steps(cloud, &model, &grid, 2).unwrap();
        for m in 0..8 {
            for k in 0..6 {
                assert_eq!(cloud.shadow_state(m, k).unwrap(), cloud.state(m, k));
            }
        }
    }

    #[test]
    fn shadow_preconditions() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let model = BrownianModel::standard(0.0);
        let cloud = simulate_paths(&model, &grid, 8, 1).unwrap();
        assert!(simulate_shadow_steps(cloud.clone(), &model, &grid, 1).is_err());
        let other = TimeGrid::new(1.0, 5).unwrap();
        assert!(matches!(
            simulate_shadow_steps(cloud.clone(), &model, &other, 2),
            Err(Error::GridMismatch(_))
        ));
        let with = simulate_shadow_steps(cloud.clone(), &model, &grid, 2).unwrap();
        assert_eq!(with.states, cloud.states);
        assert_eq!(with.increments, cloud.increments);
        assert_eq!(
            simulate_shadow_steps(with, &model, &grid, 3).unwrap_err(),
            Error::ShadowPresent
        );
    }
}
