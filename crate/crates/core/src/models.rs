//! Black-Scholes dynamics in log-price coordinates, basket payoffs, the linear
//! pricing driver and ready-made benchmark configurations.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::basis::{Degree, HypercubeBasis};
use crate::bsde::{Driver, Obstacle, Terminal, MIN_LIPSCHITZ};
use crate::error::{invalid, Result};
use crate::sde::{ForwardModel, JumpPart};

/// Merton jumps: every asset's log-price jumps by an independent
/// `N(mean, std²)` at the event times of one Poisson clock.
#[derive(Clone, Debug, PartialEq)]
pub struct MertonJumps {
    pub intensity: f64,
    pub mean: f64,
    pub std: f64,
}

/// `dS_l / S_l = (r - μ_l) dt + σ_l dW_l`, with `d<W_i, W_j> = ρ_ij dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlackScholesSpec {
    pub rate: f64,
    pub dividends: Vec<f64>,
    pub vols: Vec<f64>,
    pub spots: Vec<f64>,
    /// Row-major `d x d` correlation; `None` means independent drivers.
    pub correlation: Option<Vec<f64>>,
    pub jumps: Option<MertonJumps>,
}

impl BlackScholesSpec {
    /// `d` identical independent assets.
    pub fn iid(d: usize, rate: f64, dividend: f64, vol: f64, spot: f64) -> Self {
        Self {
            rate,
            dividends: vec![dividend; d],
            vols: vec![vol; d],
            spots: vec![spot; d],
            correlation: None,
            jumps: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.spots.len()
    }

    /// `x_0 = log S_0`.
    pub fn initial_log_state(&self) -> Vec<f64> {
        self.spots.iter().map(|s| s.ln()).collect()
    }
}

/// Forward model of [`BlackScholesSpec`] with state `x = log S`.
#[derive(Clone, Debug)]
pub struct BlackScholesModel {
    x0: Vec<f64>,
    drift: Vec<f64>,
    /// `diag(σ) L` with `L Lᵀ = ρ`, row-major.
    sigma: Vec<f64>,
    jumps: Option<LogJumps>,
}

#[derive(Clone, Debug)]
struct LogJumps {
    dim: usize,
    spec: MertonJumps,
}

impl JumpPart for LogJumps {
    fn intensity(&self) -> f64 {
        self.spec.intensity
    }
    fn mark_dim(&self) -> usize {
        self.dim
    }
    fn sample_mark(&self, rng: &mut dyn RngCore, mark: &mut [f64]) {
        for m in mark.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *m = self.spec.mean + self.spec.std * z;
        }
    }
    fn coefficient(&self, _t: f64, _x: &[f64], mark: &[f64], out: &mut [f64]) {
        out.copy_from_slice(mark);
    }
    fn compensator(&self, _t: f64, _x: &[f64], out: &mut [f64]) -> bool {
        out.fill(self.spec.intensity * self.spec.mean);
        true
    }
}

/// Log-price dynamics: drift `r - μ_l - σ_l²/2` (minus the Merton
/// correction when jumps are present), diffusion `diag(σ) L`.
pub fn build_forward(spec: &BlackScholesSpec) -> Result<BlackScholesModel> {
    let d = spec.dim();
    if d == 0 {
        return Err(invalid("spots", "need at least one asset"));
    }
    if spec.vols.len() != d || spec.dividends.len() != d {
        return Err(invalid("vols", format!("vols and dividends need {d} entries")));
    }
    if spec.vols.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(invalid("vols", "volatilities must be positive"));
    }
    if spec.spots.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(invalid("spots", "initial prices must be positive"));
    }
    if !spec.rate.is_finite() || spec.dividends.iter().any(|m| !m.is_finite()) {
        return Err(invalid("rate", "rate and dividends must be finite"));
    }
    let chol = match &spec.correlation {
        None => DMatrix::identity(d, d),
        Some(rho) => {
            if rho.len() != d * d {
                return Err(invalid("correlation", format!("need {d}x{d} entries")));
            }
            let m = DMatrix::from_row_slice(d, d, rho);
            let sym = (0..d).all(|i| (0..d).all(|j| (m[(i, j)] - m[(j, i)]).abs() < 1e-12));
            if !sym || (0..d).any(|i| m[(i, i)] != 1.0) {
                return Err(invalid("correlation", "must be symmetric with unit diagonal"));
            }
            m.cholesky()
                .ok_or_else(|| invalid("correlation", "not positive definite"))?
                .l()
        }
    };
    let mut sigma = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            sigma[i * d + j] = spec.vols[i] * chol[(i, j)];
        }
    }
    let jump_drift = match &spec.jumps {
        None => 0.0,
        Some(j) => {
            if !(j.intensity >= 0.0 && j.intensity.is_finite() && j.std >= 0.0 && j.mean.is_finite()) {
                return Err(invalid("jumps", "need intensity >= 0, std >= 0, finite mean"));
            }
            let kappa = (j.mean + 0.5 * j.std * j.std).exp() - 1.0;
            j.intensity * (j.mean - kappa)
        }
    };
    let drift = (0..d)
        .map(|i| spec.rate - spec.dividends[i] - 0.5 * spec.vols[i] * spec.vols[i] + jump_drift)
        .collect();
    Ok(BlackScholesModel {
        x0: spec.initial_log_state(),
        drift,
        sigma,
        jumps: spec.jumps.clone().map(|spec| LogJumps { dim: d, spec }),
    })
}

impl ForwardModel for BlackScholesModel {
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
        out.copy_from_slice(&self.sigma);
    }
    fn jumps(&self) -> Option<&dyn JumpPart> {
        self.jumps.as_ref().map(|j| j as &dyn JumpPart)
    }
}

/// Payoffs as functions of log-prices.
#[derive(Clone, Debug, PartialEq)]
pub enum Payoff {
    /// `(K - (Π S_i)^{1/d})_+`.
    GeometricPut { strike: f64 },
    /// `(S_1⋯S_p - S_{p+1}⋯S_{2p})_+`.
    ProductExchange { p: usize },
    /// `x_1`; for tests.
    Identity,
    Constant(f64),
}

impl Payoff {
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Payoff::GeometricPut { strike } => {
                let mean = x.iter().sum::<f64>() / x.len() as f64;
                (strike - mean.exp()).max(0.0)
            }
            Payoff::ProductExchange { p } => {
                let a: f64 = x[..p].iter().sum();
                let b: f64 = x[p..2 * p].iter().sum();
                (a.exp() - b.exp()).max(0.0)
            }
            Payoff::Identity => x[0],
            Payoff::Constant(c) => c,
        }
    }

    /// `sup |φ|` over `Π [-R_i, R_i]`.
    pub fn sup_on_box(&self, bounds: &[f64]) -> f64 {
        match *self {
            Payoff::GeometricPut { strike } => {
                let low = -bounds.iter().sum::<f64>() / bounds.len() as f64;
                (strike - low.exp()).max(0.0)
            }
            Payoff::ProductExchange { p } => {
                let a: f64 = bounds[..p].iter().sum();
                let b: f64 = bounds[p..2 * p].iter().sum();
                (a.exp() - (-b).exp()).max(0.0)
            }
            Payoff::Identity => bounds[0],
            Payoff::Constant(c) => c.abs(),
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match *self {
            Payoff::GeometricPut { strike } if !(strike > 0.0 && strike.is_finite()) => {
                Err(invalid("strike", "must be positive"))
            }
            Payoff::ProductExchange { p } if p == 0 || 2 * p != d => {
                Err(invalid("p", format!("product exchange needs d = 2p, got d = {d}, p = {p}")))
            }
            Payoff::Constant(c) if !c.is_finite() => Err(invalid("constant", "must be finite")),
            _ => Ok(()),
        }
    }
}

impl Terminal for Payoff {
    fn value(&self, x: &[f64]) -> f64 {
        Payoff::value(self, x)
    }
    fn sup_clamped(&self, bounds: &[f64]) -> Option<f64> {
        Some(self.sup_on_box(bounds))
    }
}

/// Time-invariant obstacle: the immediate exercise value.
impl Obstacle for Payoff {
    fn value(&self, _t: f64, x: &[f64]) -> f64 {
        Payoff::value(self, x)
    }
    fn sup_clamped(&self, bounds: &[f64]) -> Option<f64> {
        Some(self.sup_on_box(bounds))
    }
}

/// `f(t, x, y, z) = -r y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearPricingDriver {
    rate: f64,
}

impl Driver for LinearPricingDriver {
    fn value(&self, _t: f64, _x: &[f64], y: f64, _z: &[f64]) -> f64 {
        -self.rate * y
    }
    fn lipschitz(&self) -> f64 {
        self.rate.abs().max(MIN_LIPSCHITZ)
    }
    fn sup_at_origin(&self, _: &[f64], _: f64) -> Option<f64> {
        Some(0.0)
    }
}

pub fn linear_pricing_driver(rate: f64) -> Result<LinearPricingDriver> {
    if !rate.is_finite() {
        return Err(invalid("rate", "must be finite"));
    }
    Ok(LinearPricingDriver { rate })
}

/// Parameters of one benchmark experiment, with everything in log space.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkConfig {
    pub market: BlackScholesSpec,
    pub payoff: Payoff,
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    /// Half-width `a` of the regression domain around `x_0`.
    pub half_width: f64,
    pub edge: f64,
    pub degree: Degree,
    pub r0: f64,
    pub state_bound: f64,
    pub penalty: f64,
}

impl BenchmarkConfig {
    pub fn basis(&self) -> Result<HypercubeBasis> {
        let x0 = self.market.initial_log_state();
        HypercubeBasis::isotropic(x0, self.half_width, self.edge, self.degree)
    }

    pub fn state_bounds(&self) -> Vec<f64> {
        vec![self.state_bound; self.market.dim()]
    }

    pub fn driver(&self) -> Arc<dyn Driver> {
        Arc::new(LinearPricingDriver {
            rate: self.market.rate,
        })
    }
}

/// Half-width of `sds` terminal standard deviations of the widest log-price.
pub fn default_half_width(spec: &BlackScholesSpec, horizon: f64, sds: f64) -> f64 {
    let vmax = spec.vols.iter().cloned().fold(0.0, f64::max);
    sds * vmax * horizon.sqrt()
}

/// One-asset American put: `T = 1`, `r = 0.05`, `σ = 0.15`, `K = S_0 = 100`.
pub fn american_put_1d() -> BenchmarkConfig {
    let market = BlackScholesSpec::iid(1, 0.05, 0.0, 0.15, 100.0);
    BenchmarkConfig {
        half_width: default_half_width(&market, 1.0, 4.0),
        market,
        payoff: Payoff::GeometricPut { strike: 100.0 },
        horizon: 1.0,
        steps: 50,
        paths: 1 << 17,
        edge: 0.01,
        degree: Degree::Constant,
        r0: 5.0,
        state_bound: 10.0,
        penalty: 2.0,
    }
}

/// Geometric put on three independent assets of the one-asset market. Cell
/// edges quoted in price units are divided by the spot to get log units.
pub fn american_put_3d() -> BenchmarkConfig {
    let market = BlackScholesSpec::iid(3, 0.05, 0.0, 0.15, 100.0);
    BenchmarkConfig {
        half_width: default_half_width(&market, 1.0, 4.0),
        market,
        payoff: Payoff::GeometricPut { strike: 100.0 },
        horizon: 1.0,
        steps: 44,
        paths: 1 << 17,
        edge: 0.07,
        degree: Degree::Constant,
        r0: 5.0,
        state_bound: 10.0,
        penalty: 2.0,
    }
}

/// Exchange of two products of five assets: `r = 0`, `μ_1 = -0.05`,
/// `σ_l = 0.2/√10`, `T = 0.5`, `S_0 = 40^{1/5}` then `36^{1/5}`.
pub fn exchange_10d() -> BenchmarkConfig {
    let d = 10;
    let p = 5;
    let mut market = BlackScholesSpec::iid(d, 0.0, 0.0, 0.2 / (d as f64).sqrt(), 1.0);
    market.dividends[0] = -0.05;
    for (i, s) in market.spots.iter_mut().enumerate() {
        let base: f64 = if i < p { 40.0 } else { 36.0 };
        *s = base.powf(2.0 / d as f64);
    }
    BenchmarkConfig {
        half_width: default_half_width(&market, 0.5, 4.0),
        market,
        payoff: Payoff::ProductExchange { p },
        horizon: 0.5,
        steps: 60,
        paths: 1 << 16,
        edge: 0.6,
        degree: Degree::Affine,
        r0: 5.0,
        state_bound: 10.0,
        penalty: 2.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::sde::simulate_paths;
    use approx::assert_relative_eq;

    #[test]
    fn log_drift_one_asset() {
        let m = build_forward(&BlackScholesSpec::iid(1, 0.05, 0.0, 0.15, 100.0)).unwrap();
        let mut b = [0.0];
        m.drift(0.0, &[0.0], &mut b);
        assert_relative_eq!(b[0], 0.03875, epsilon = 1e-15);
    }

    #[test]
    fn correlated_diffusion_reproduces_covariance() {
        let mut spec = BlackScholesSpec::iid(2, 0.0, 0.0, 0.2, 1.0);
        spec.vols[1] = 0.3;
        spec.correlation = Some(vec![1.0, 0.4, 0.4, 1.0]);
        let m = build_forward(&spec).unwrap();
        let mut s = [0.0; 4];
        m.diffusion(0.0, &[0.0, 0.0], &mut s);
        let cov = |i: usize, j: usize| s[i * 2] * s[j * 2] + s[i * 2 + 1] * s[j * 2 + 1];
        assert_relative_eq!(cov(0, 0), 0.04, epsilon = 1e-15);
        assert_relative_eq!(cov(1, 1), 0.09, epsilon = 1e-15);
        assert_relative_eq!(cov(0, 1), 0.4 * 0.2 * 0.3, epsilon = 1e-15);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = BlackScholesSpec::iid(2, 0.0, 0.0, 0.2, 1.0);
        spec.correlation = Some(vec![1.0, 1.5, 1.5, 1.0]);
        assert!(build_forward(&spec).is_err());
        assert!(build_forward(&BlackScholesSpec::iid(1, 0.0, 0.0, 0.0, 1.0)).is_err());
        assert!(build_forward(&BlackScholesSpec::iid(1, 0.0, 0.0, 0.1, -1.0)).is_err());
    }

    #[test]
    fn zero_vol_grows_at_rate() {
        let spec = BlackScholesSpec::iid(1, 0.05, 0.0, 1e-300, 1.0);
        let m = build_forward(&spec).unwrap();
        let grid = TimeGrid::new(2.0, 10).unwrap();
        let cloud = simulate_paths(&m, &grid, 4, 1).unwrap();
        for x in cloud.terminal_states() {
            assert_relative_eq!(x[0], 0.1, epsilon = 1e-14);
        }
    }

    #[test]
    fn merton_jumps_keep_discounted_price_a_martingale() {
        let mut spec = BlackScholesSpec::iid(1, 0.03, 0.0, 0.2, 1.0);
        spec.jumps = Some(MertonJumps {
            intensity: 2.0,
            mean: -0.1,
            std: 0.15,
        });
        let m = build_forward(&spec).unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let cloud = simulate_paths(&m, &grid, 100_000, 9).unwrap();
        let disc = (-0.03f64).exp();
        let vals: Vec<f64> = cloud.terminal_states().map(|x| x[0].exp() * disc).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        let se = (var / vals.len() as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn payoffs_are_nonnegative_and_bounded_on_box() {
        let put = Payoff::GeometricPut { strike: 100.0 };
        let exch = Payoff::ProductExchange { p: 2 };
        let b = [1.0, 1.5, 0.5, 2.0];
        for i in 0..500 {
            let x: Vec<f64> = (0..4)
                .map(|j| b[j] * (((i * 7 + j * 13) % 97) as f64 / 48.0 - 1.0))
                .collect();
            let v = Terminal::value(&exch, &x);
            assert!(v >= 0.0 && v <= exch.sup_on_box(&b) + 1e-12);
            let v = Terminal::value(&put, &x);
            assert!(v >= 0.0 && v <= put.sup_on_box(&b) + 1e-12);
        }
        assert_relative_eq!(Terminal::value(&put, &[4.0f64.ln(), 1.0f64.ln()]), 98.0, epsilon = 1e-12);
        assert_relative_eq!(exch.sup_on_box(&b), (2.5f64).exp() - (-2.5f64).exp(), epsilon = 1e-12);
        assert!(exch.validate(3).is_err());
        assert!(exch.validate(4).is_ok());
    }

    #[test]
    fn pricing_driver_examples() {
        let f = linear_pricing_driver(0.05).unwrap();
        assert_relative_eq!(f.value(0.0, &[], 4.0, &[]), -0.2, epsilon = 1e-15);
        let zero = linear_pricing_driver(0.0).unwrap();
        assert_eq!(zero.value(0.3, &[1.0], 7.0, &[2.0]), 0.0);
        assert_eq!(zero.lipschitz(), MIN_LIPSCHITZ);
    }

    #[test]
    fn benchmark_configs_are_consistent() {
        let c = american_put_1d();
        assert_relative_eq!(c.half_width, 0.6, epsilon = 1e-15);
        assert_eq!(c.basis().unwrap().cell_count(), 120);
        let e = exchange_10d();
        e.payoff.validate(e.market.dim()).unwrap();
        assert_eq!(e.basis().unwrap().cell_count(), 1);
        let s: f64 = e.market.initial_log_state()[..5].iter().sum();
        assert_relative_eq!(s.exp(), 40.0, max_relative = 1e-13);
    }
}
