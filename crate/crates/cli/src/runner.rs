//! Turning an [`ExperimentConfig`] into solver runs and CSV rows.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use regbsde::basis::HypercubeBasis;
use regbsde::bsde::{compute_cy, compute_cy_reflected, BsdeProblem, Driver, Obstacle, Terminal};
use regbsde::models::{build_forward, linear_pricing_driver};
use regbsde::rbsde::{PenaltyLevel, RbsdeProblem};
use regbsde::sde::{simulate_paths, simulate_shadow_steps, BrownianModel, ForwardModel};
use regbsde::{ThresholdSet, TimeGrid};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, Method, ModelConfig, SweepPoint};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("solver aborted: {0}")]
    Solver(#[from] regbsde::Error),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// Process exit status: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn setup_err(field: &str, e: regbsde::Error) -> RunError {
    RunError::Config(ConfigError::Field {
        field: field.to_string(),
        reason: e.to_string(),
    })
}

pub fn build_model(model: &ModelConfig) -> Result<Box<dyn ForwardModel>, RunError> {
    Ok(match model {
        ModelConfig::BlackScholes(spec) => Box::new(build_forward(spec).map_err(|e| setup_err("model", e))?),
        ModelConfig::Brownian { x0, drift, vol } => Box::new(
            BrownianModel::new(x0.clone(), drift.clone(), vol.clone()).map_err(|e| setup_err("model", e))?,
        ),
    })
}

enum Problem {
    Plain(BsdeProblem),
    Reflected(RbsdeProblem),
}

/// One sweep point, fully validated and ready to run.
pub struct Prepared {
    pub point: SweepPoint,
    problem: Problem,
}

fn basis_for(cfg: &ExperimentConfig, point: &SweepPoint) -> Result<HypercubeBasis, RunError> {
    let b = &cfg.basis;
    let d = b.center.len();
    let edge = match (point.edge, &b.edge) {
        (Some(e), _) => vec![e; d],
        (None, Some(e)) => e.clone(),
        (None, None) => b.half_width.iter().map(|a| 2.0 * a).collect(),
    };
    HypercubeBasis::new(b.center.clone(), b.half_width.clone(), edge, b.degree).map_err(|e| setup_err("basis", e))
}

/// Validates every sweep point before anything is simulated.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Vec<Prepared>, RunError> {
    let q = build_model(&cfg.model)?.brownian_dim();
    let driver: Arc<dyn Driver> =
        Arc::new(linear_pricing_driver(cfg.driver_rate).map_err(|e| setup_err("driver.rate", e))?);
    let payoff = Arc::new(cfg.payoff.clone());
    cfg.sweep
        .points()
        .into_iter()
        .map(|point| {
            let grid = TimeGrid::new(cfg.horizon, point.steps).map_err(|e| setup_err("grid.steps", e))?;
            let basis = basis_for(cfg, &point)?;
            let bounds = cfg.thresholds.state.clone();
            let cy = match cfg.thresholds.cy {
                Some(cy) => cy,
                None if cfg.method.is_reflected() => {
                    compute_cy_reflected(&bounds, driver.as_ref(), payoff.as_ref() as &dyn Obstacle, &grid, q)
                        .map_err(|e| setup_err("thresholds.cy", e))?
                        .value
                }
                None => {
                    compute_cy(&bounds, driver.as_ref(), payoff.as_ref() as &dyn Terminal, &grid, q)
                        .map_err(|e| setup_err("thresholds.cy", e))?
                        .value
                }
            };
            let thresholds =
                ThresholdSet::new(cfg.thresholds.r0, bounds, cy).map_err(|e| setup_err("thresholds.cy", e))?;
            let problem = if cfg.method.is_reflected() {
                Problem::Reflected(RbsdeProblem {
                    grid,
                    basis_y: basis.clone(),
                    basis_z: basis,
                    driver: driver.clone(),
                    obstacle: payoff.clone(),
                    thresholds,
                })
            } else {
                Problem::Plain(BsdeProblem {
                    grid,
                    basis_y: basis.clone(),
                    basis_z: basis,
                    driver: driver.clone(),
                    terminal: payoff.clone(),
                    thresholds,
                })
            };
            Ok(Prepared { point, problem })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub point: SweepPoint,
    pub replication: usize,
    pub seed: u64,
    pub y0: f64,
    pub z0: Vec<f64>,
    /// Standard error of `y0` across the point's replications; 0 for one.
    pub se: f64,
    pub seconds: f64,
}

/// Seed of the shadow steps belonging to `seed`.
pub fn shadow_seed(seed: u64) -> u64 {
    !seed
}

/// Runs all replications of one prepared point.
pub fn run_point(
    cfg: &ExperimentConfig,
    model: &dyn ForwardModel,
    prepared: &Prepared,
    seed_override: Option<u64>,
) -> Result<Vec<ResultRow>, RunError> {
    let base = seed_override.unwrap_or(cfg.seed);
    let point = prepared.point;
    let mut rows = Vec::with_capacity(cfg.replications);
    for rep in 0..cfg.replications {
        let seed = base.wrapping_add(rep as u64);
        let start = Instant::now();
        let sol = match &prepared.problem {
            Problem::Plain(p) => {
                let cloud = simulate_paths(model, &p.grid, point.paths, seed)?;
                if cfg.method == Method::PlainModified {
                    let cloud = simulate_shadow_steps(cloud, model, &p.grid, shadow_seed(seed))?;
                    regbsde::solve_backward_modified(&cloud, p)?
                } else {
                    regbsde::solve_backward_initial(&cloud, p)?
                }
            }
            Problem::Reflected(p) => {
                let cloud = simulate_paths(model, &p.grid, point.paths, seed)?;
                let n = PenaltyLevel::new(point.n).map_err(|e| setup_err("method.n", e))?;
                let out = match cfg.method {
                    Method::Max => regbsde::solve_max(&cloud, p)?,
                    Method::Penalization => regbsde::solve_penalized(&cloud, p, n)?,
                    _ => regbsde::solve_regularized(&cloud, p, n)?,
                };
                out.into_solution()
            }
        };
        rows.push(ResultRow {
            point,
            replication: rep,
            seed,
            y0: sol.y0(),
            z0: sol.z0().to_vec(),
            se: 0.0,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let (_, se) = mean_se(rows.iter().map(|r| r.y0));
    for r in &mut rows {
        r.se = se;
    }
    Ok(rows)
}

pub fn mean_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_header(out: &mut impl Write, q: usize) -> std::io::Result<()> {
    let mut cols: Vec<String> = ["steps", "paths", "edge", "n", "replication", "seed", "y0"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((1..=q).map(|l| format!("z0_{l}")));
    cols.push("se".into());
    cols.push("seconds".into());
    writeln!(out, "{}", cols.join(","))
}

pub fn write_row(out: &mut impl Write, row: &ResultRow) -> std::io::Result<()> {
    let p = &row.point;
    let mut cols = vec![
        p.steps.to_string(),
        p.paths.to_string(),
        p.edge.map(fmt).unwrap_or_default(),
        fmt(p.n),
        row.replication.to_string(),
        row.seed.to_string(),
        fmt(row.y0),
    ];
    cols.extend(row.z0.iter().map(|z| fmt(*z)));
    cols.push(fmt(row.se));
    cols.push(fmt(row.seconds));
    writeln!(out, "{}", cols.join(","))
}

/// Terminal states and every Brownian increment, one row per path.
pub fn dump_paths(
    cfg: &ExperimentConfig,
    seed_override: Option<u64>,
    out: &mut impl Write,
) -> Result<(), RunError> {
    let model = build_model(&cfg.model)?;
    let point = cfg.sweep.points()[0];
    let grid = TimeGrid::new(cfg.horizon, point.steps).map_err(|e| setup_err("grid.steps", e))?;
    let cloud = simulate_paths(model.as_ref(), &grid, point.paths, seed_override.unwrap_or(cfg.seed))?;
    let (d, q) = (cloud.dim(), cloud.brownian_dim());
    let mut cols = vec!["path".to_string()];
    cols.extend((1..=d).map(|i| format!("x_T_{i}")));
    for k in 0..grid.steps() {
        cols.extend((1..=q).map(|l| format!("dw_{k}_{l}")));
    }
    writeln!(out, "{}", cols.join(","))?;
    for (m, x) in cloud.terminal_states().enumerate() {
        let mut row = vec![m.to_string()];
        row.extend(x.iter().map(|v| fmt(*v)));
        for k in 0..grid.steps() {
            row.extend(cloud.increment(m, k).iter().map(|v| fmt(*v)));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
