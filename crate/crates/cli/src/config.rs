//! Sectioned `key = value` experiment files.
//!
//! ```text
//! # American put, one asset
//! [model]
//! kind = black_scholes
//! rate = 0.05
//! vol = 0.15
//! spot = 100
//!
//! [payoff]
//! kind = geometric_put
//! strike = 100
//!
//! [method]
//! name = max
//!
//! [grid]
//! horizon = 1
//! steps = 50
//!
//! [basis]
//! edge = 0.01
//!
//! [simulation]
//! paths = 131072
//! seed = 1
//! replications = 10
//!
//! [sweep]
//! paths = 4096, 16384, 65536
//! ```
//!
//! Lists are comma-separated; a scalar given where a per-axis list is
//! expected applies to every axis.

use std::collections::BTreeMap;
use std::path::Path;

use regbsde::basis::Degree;
use regbsde::models::{default_half_width, BlackScholesSpec, MertonJumps, Payoff};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("{field}: {reason}")]
    Field { field: String, reason: String },
}

impl ConfigError {
    /// `section.key` of the offending entry, when there is one.
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Field { field, .. } => Some(field),
            _ => None,
        }
    }
}

fn field_err(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        reason: reason.into(),
    }
}

const SCHEMA: &[(&str, &[&str])] = &[
    (
        "model",
        &[
            "kind", "d", "rate", "dividend", "vol", "spot", "correlation", "jump_intensity", "jump_mean",
            "jump_std", "x0", "drift",
        ],
    ),
    ("payoff", &["kind", "strike", "p", "value"]),
    ("driver", &["kind", "rate"]),
    ("method", &["name", "n"]),
    ("grid", &["horizon", "steps"]),
    ("basis", &["center", "half_width", "edge", "degree"]),
    ("thresholds", &["r0", "state", "cy"]),
    ("simulation", &["paths", "seed", "replications"]),
    ("sweep", &["steps", "paths", "edge", "n"]),
];

/// Raw `section -> key -> value` map.
#[derive(Debug, Default)]
struct Raw {
    entries: BTreeMap<String, BTreeMap<String, String>>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Raw::default();
        let mut section: Option<String> = None;
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| ConfigError::Syntax {
                        line: line_no,
                        reason: "unterminated section header".into(),
                    })?
                    .trim();
                if !SCHEMA.iter().any(|(s, _)| *s == name) {
                    return Err(ConfigError::Syntax {
                        line: line_no,
                        reason: format!("unknown section [{name}]"),
                    });
                }
                raw.entries.entry(name.to_string()).or_default();
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                reason: "expected `key = value`".into(),
            })?;
            let sec = section.as_ref().ok_or_else(|| ConfigError::Syntax {
                line: line_no,
                reason: "entry before any section header".into(),
            })?;
            let key = key.trim();
            let known = SCHEMA.iter().find(|(s, _)| s == sec).map_or(&[][..], |(_, k)| k);
            if !known.contains(&key) {
                return Err(field_err(&format!("{sec}.{key}"), "unknown key"));
            }
            let prev = raw
                .entries
                .get_mut(sec)
                .expect("section registered")
                .insert(key.to_string(), value.trim().to_string());
            if prev.is_some() {
                return Err(field_err(&format!("{sec}.{key}"), "given twice"));
            }
        }
        Ok(raw)
    }

    fn str(&self, sec: &str, key: &str) -> Option<&str> {
        self.entries.get(sec)?.get(key).map(String::as_str)
    }

    fn required(&self, sec: &str, key: &str) -> Result<&str, ConfigError> {
        self.str(sec, key).ok_or_else(|| field_err(&format!("{sec}.{key}"), "missing"))
    }

    fn list<T: std::str::FromStr>(&self, sec: &str, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        let Some(v) = self.str(sec, key) else {
            return Ok(None);
        };
        let items: Result<Vec<T>, _> = v.split(',').map(|s| s.trim().parse::<T>()).collect();
        match items {
            Ok(items) if !items.is_empty() => Ok(Some(items)),
            _ => Err(field_err(&format!("{sec}.{key}"), format!("cannot parse `{v}`"))),
        }
    }

    fn scalar<T: std::str::FromStr>(&self, sec: &str, key: &str) -> Result<Option<T>, ConfigError> {
        match self.list::<T>(sec, key)? {
            None => Ok(None),
            Some(mut v) if v.len() == 1 => Ok(v.pop()),
            Some(_) => Err(field_err(&format!("{sec}.{key}"), "expected a single value")),
        }
    }
}

fn broadcast(field: &str, v: Vec<f64>, d: usize) -> Result<Vec<f64>, ConfigError> {
    match v.len() {
        1 => Ok(vec![v[0]; d]),
        n if n == d => Ok(v),
        n => Err(field_err(field, format!("expected 1 or {d} values, got {n}"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelConfig {
    BlackScholes(BlackScholesSpec),
    /// `dX = b dt + diag(σ) dW`.
    Brownian { x0: Vec<f64>, drift: Vec<f64>, vol: Vec<f64> },
}

impl ModelConfig {
    pub fn dim(&self) -> usize {
        match self {
            ModelConfig::BlackScholes(s) => s.dim(),
            ModelConfig::Brownian { x0, .. } => x0.len(),
        }
    }

    pub fn initial_state(&self) -> Vec<f64> {
        match self {
            ModelConfig::BlackScholes(s) => s.initial_log_state(),
            ModelConfig::Brownian { x0, .. } => x0.clone(),
        }
    }

    fn default_rate(&self) -> f64 {
        match self {
            ModelConfig::BlackScholes(s) => s.rate,
            ModelConfig::Brownian { .. } => 0.0,
        }
    }

    fn max_vol(&self) -> f64 {
        let v = match self {
            ModelConfig::BlackScholes(s) => &s.vols,
            ModelConfig::Brownian { vol, .. } => vol,
        };
        v.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Plain,
    PlainModified,
    Max,
    Penalization,
    Regularization,
}

impl Method {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "plain" => Method::Plain,
            "plain_modified" => Method::PlainModified,
            "max" => Method::Max,
            "penalization" => Method::Penalization,
            "regularization" => Method::Regularization,
            _ => return None,
        })
    }

    pub fn is_reflected(self) -> bool {
        matches!(self, Method::Max | Method::Penalization | Method::Regularization)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BasisConfig {
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
    /// `None` means one cell covering the whole domain.
    pub edge: Option<Vec<f64>>,
    pub degree: Degree,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdConfig {
    pub r0: f64,
    pub state: Vec<f64>,
    /// Explicit clamp level; computed from the problem data when absent.
    pub cy: Option<f64>,
}

/// Swept values; each list holds at least the base value.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub steps: Vec<usize>,
    pub paths: Vec<usize>,
    pub edge: Vec<Option<f64>>,
    pub n: Vec<f64>,
}

impl Sweep {
    pub fn len(&self) -> usize {
        self.steps.len() * self.paths.len() * self.edge.len() * self.n.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product, `steps` slowest and `n` fastest.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &steps in &self.steps {
            for &paths in &self.paths {
                for &edge in &self.edge {
                    for &n in &self.n {
                        out.push(SweepPoint { steps, paths, edge, n });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub steps: usize,
    pub paths: usize,
    /// Isotropic edge override; `None` keeps the base basis.
    pub edge: Option<f64>,
    pub n: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub payoff: Payoff,
    /// Rate of the linear driver `-r y`.
    pub driver_rate: f64,
    pub method: Method,
    pub horizon: f64,
    pub basis: BasisConfig,
    pub thresholds: ThresholdConfig,
    pub seed: u64,
    pub replications: usize,
    pub sweep: Sweep,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw = Raw::parse(text)?;
        let model = parse_model(&raw)?;
        let d = model.dim();
        let payoff = parse_payoff(&raw)?;
        payoff
            .validate(d)
            .map_err(|e| field_err("payoff.kind", e.to_string()))?;

        let driver_rate = match raw.str("driver", "kind").unwrap_or("linear") {
            "linear" => raw.scalar("driver", "rate")?.unwrap_or(model.default_rate()),
            "zero" => 0.0,
            other => return Err(field_err("driver.kind", format!("unknown driver `{other}`"))),
        };
        if !driver_rate.is_finite() {
            return Err(field_err("driver.rate", "must be finite"));
        }

        let method_name = raw.required("method", "name")?;
        let method = Method::parse(method_name)
            .ok_or_else(|| field_err("method.name", format!("unknown method `{method_name}`")))?;
        let n_base: f64 = raw.scalar("method", "n")?.unwrap_or(0.0);
        if matches!(method, Method::Penalization | Method::Regularization) && raw.str("method", "n").is_none()
            && raw.str("sweep", "n").is_none()
        {
            return Err(field_err("method.n", "missing; required by this method"));
        }

        let horizon: f64 = raw
            .scalar("grid", "horizon")?
            .ok_or_else(|| field_err("grid.horizon", "missing"))?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(field_err("grid.horizon", "must be positive"));
        }
        let steps: Option<usize> = raw.scalar("grid", "steps")?;
        let steps = match (steps, raw.list::<usize>("sweep", "steps")?) {
            (_, Some(list)) => list,
            (Some(n), None) => vec![n],
            (None, None) => return Err(field_err("grid.steps", "missing")),
        };
        if steps.contains(&0) {
            return Err(field_err("grid.steps", "must be at least 1"));
        }

        let basis = parse_basis(&raw, &model, horizon)?;
        let edge = match raw.list::<f64>("sweep", "edge")? {
            Some(list) => list.into_iter().map(Some).collect(),
            None => vec![None],
        };
        if edge.iter().flatten().any(|e| !(*e > 0.0)) {
            return Err(field_err("sweep.edge", "edges must be positive"));
        }

        let thresholds = ThresholdConfig {
            r0: raw.scalar("thresholds", "r0")?.unwrap_or(5.0),
            state: broadcast(
                "thresholds.state",
                raw.list("thresholds", "state")?.unwrap_or_else(|| vec![10.0]),
                d,
            )?,
            cy: raw.scalar("thresholds", "cy")?,
        };
        if !(thresholds.r0 > 0.0) {
            return Err(field_err("thresholds.r0", "must be positive"));
        }
        if thresholds.state.iter().any(|r| !(*r > 0.0)) {
            return Err(field_err("thresholds.state", "must be positive"));
        }
        if let Some(cy) = thresholds.cy {
            if !(cy > 0.0 && cy.is_finite()) {
                return Err(field_err("thresholds.cy", "must be positive and finite"));
            }
        }

        let paths = match (raw.scalar::<usize>("simulation", "paths")?, raw.list::<usize>("sweep", "paths")?) {
            (_, Some(list)) => list,
            (Some(m), None) => vec![m],
            (None, None) => return Err(field_err("simulation.paths", "missing")),
        };
        if paths.contains(&0) {
            return Err(field_err("simulation.paths", "must be a positive integer"));
        }
        let n = raw.list::<f64>("sweep", "n")?.unwrap_or_else(|| vec![n_base]);
        if n.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(field_err("method.n", "must be finite and >= 0"));
        }
        if method == Method::Regularization && n.iter().any(|v| *v < 1.0) {
            return Err(field_err("method.n", "regularization needs n >= 1"));
        }
        let replications = raw.scalar("simulation", "replications")?.unwrap_or(1);
        if replications == 0 {
            return Err(field_err("simulation.replications", "must be at least 1"));
        }

        Ok(ExperimentConfig {
            model,
            payoff,
            driver_rate,
            method,
            horizon,
            basis,
            thresholds,
            seed: raw.scalar("simulation", "seed")?.unwrap_or(1),
            replications,
            sweep: Sweep { steps, paths, edge, n },
        })
    }
}

fn parse_model(raw: &Raw) -> Result<ModelConfig, ConfigError> {
    match raw.required("model", "kind")? {
        "black_scholes" => {
            let spot = raw
                .list::<f64>("model", "spot")?
                .ok_or_else(|| field_err("model.spot", "missing"))?;
            let d = match raw.scalar::<usize>("model", "d")? {
                Some(d) => d,
                None => spot.len(),
            };
            if d == 0 {
                return Err(field_err("model.d", "must be at least 1"));
            }
            let rate = raw.scalar("model", "rate")?.unwrap_or(0.0);
            let vols = broadcast(
                "model.vol",
                raw.list("model", "vol")?.ok_or_else(|| field_err("model.vol", "missing"))?,
                d,
            )?;
            let spec = BlackScholesSpec {
                rate,
                dividends: broadcast("model.dividend", raw.list("model", "dividend")?.unwrap_or(vec![0.0]), d)?,
                vols,
                spots: broadcast("model.spot", spot, d)?,
                correlation: raw.list("model", "correlation")?,
                jumps: match raw.scalar::<f64>("model", "jump_intensity")? {
                    None => None,
                    Some(intensity) => Some(MertonJumps {
                        intensity,
                        mean: raw.scalar("model", "jump_mean")?.unwrap_or(0.0),
                        std: raw.scalar("model", "jump_std")?.unwrap_or(0.0),
                    }),
                },
            };
            regbsde::models::build_forward(&spec).map_err(|e| field_err("model", e.to_string()))?;
            Ok(ModelConfig::BlackScholes(spec))
        }
        "brownian" => {
            let x0 = raw.list::<f64>("model", "x0")?.ok_or_else(|| field_err("model.x0", "missing"))?;
            let d = x0.len();
            let drift = broadcast("model.drift", raw.list("model", "drift")?.unwrap_or(vec![0.0]), d)?;
            let vol = broadcast("model.vol", raw.list("model", "vol")?.unwrap_or(vec![1.0]), d)?;
            if vol.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(field_err("model.vol", "must be finite and >= 0"));
            }
            Ok(ModelConfig::Brownian { x0, drift, vol })
        }
        other => Err(field_err("model.kind", format!("unknown model `{other}`"))),
    }
}

fn parse_payoff(raw: &Raw) -> Result<Payoff, ConfigError> {
    Ok(match raw.required("payoff", "kind")? {
        "geometric_put" => Payoff::GeometricPut {
            strike: raw
                .scalar("payoff", "strike")?
                .ok_or_else(|| field_err("payoff.strike", "missing"))?,
        },
        "product_exchange" => Payoff::ProductExchange {
            p: raw.scalar("payoff", "p")?.ok_or_else(|| field_err("payoff.p", "missing"))?,
        },
        "identity" => Payoff::Identity,
        "constant" => Payoff::Constant(
            raw.scalar("payoff", "value")?
                .ok_or_else(|| field_err("payoff.value", "missing"))?,
        ),
        other => return Err(field_err("payoff.kind", format!("unknown payoff `{other}`"))),
    })
}

fn parse_basis(raw: &Raw, model: &ModelConfig, horizon: f64) -> Result<BasisConfig, ConfigError> {
    let d = model.dim();
    let center = broadcast(
        "basis.center",
        raw.list("basis", "center")?.unwrap_or_else(|| model.initial_state()),
        d,
    )?;
    let half_width = match raw.list("basis", "half_width")? {
        Some(v) => broadcast("basis.half_width", v, d)?,
        None => {
            let a = match model {
                ModelConfig::BlackScholes(s) => default_half_width(s, horizon, 4.0),
                ModelConfig::Brownian { .. } => 4.0 * model.max_vol() * horizon.sqrt(),
            };
            if !(a > 0.0) {
                return Err(field_err("basis.half_width", "missing; cannot default for a zero-volatility model"));
            }
            vec![a; d]
        }
    };
    if half_width.iter().any(|a| !(*a > 0.0)) {
        return Err(field_err("basis.half_width", "must be positive"));
    }
    let edge = raw
        .list("basis", "edge")?
        .map(|v| broadcast("basis.edge", v, d))
        .transpose()?;
    if edge.iter().flatten().any(|e| !(*e > 0.0)) {
        return Err(field_err("basis.edge", "must be positive"));
    }
    let degree = Degree::from_int(raw.scalar::<u32>("basis", "degree")?.unwrap_or(0))
        .ok_or_else(|| field_err("basis.degree", "must be 0 or 1"))?;
    Ok(BasisConfig {
        center,
        half_width,
        edge,
        degree,
    })
}
