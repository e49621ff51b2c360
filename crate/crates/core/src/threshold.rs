//! Truncation maps and the uniform bound `C_y(R)` they enforce.
//!
//! The five maps are: the Brownian increment clamp `[ΔW]_w` at `R₀√h`, the
//! state clamp feeding `f^R` and `φ^R` (componentwise at `±R_i`), and the
//! output clamps `[ψ]_y` at `C_y` and `[ψ]_z` at `C_y/√h`.

use crate::error::{invalid, Error, Result};

/// `(-R₀√h) ∨ Δw ∧ (R₀√h)`.
#[inline]
pub fn clamp_increment(dw: f64, r0: f64, h: f64) -> f64 {
    let b = r0 * h.sqrt();
    dw.clamp(-b, b)
}

/// Componentwise `(-R_i) ∨ x_i ∧ R_i`, in place.
#[inline]
pub fn clamp_state_in_place(x: &mut [f64], bounds: &[f64]) {
    for (xi, r) in x.iter_mut().zip(bounds) {
        *xi = xi.clamp(-r, *r);
    }
}

pub fn clamp_state_args(x: &[f64], bounds: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    clamp_state_in_place(&mut out, bounds);
    out
}

/// `[ψ]_y`.
#[inline]
pub fn clamp_y(v: f64, cy: f64) -> f64 {
    v.clamp(-cy, cy)
}

/// `[ψ]_z`, i.e. a clamp at `C_y/√h`.
#[inline]
pub fn clamp_z(v: f64, cy: f64, h: f64) -> f64 {
    let b = cy / h.sqrt();
    v.clamp(-b, b)
}

/// A supremum bound together with how it was obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupBound {
    pub value: f64,
    /// `false` when the value was estimated on a sample grid rather than
    /// declared analytically.
    pub rigorous: bool,
}

impl SupBound {
    pub fn declared(value: f64) -> Self {
        Self {
            value,
            rigorous: true,
        }
    }

    pub fn estimated(value: f64) -> Self {
        Self {
            value,
            rigorous: false,
        }
    }
}

/// Thresholds `R = (R₀, R₁, …, R_d)` and the derived clamp level `C_y`.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSet {
    r0: f64,
    state: Vec<f64>,
    cy: f64,
}

impl ThresholdSet {
    pub fn new(r0: f64, state: Vec<f64>, cy: f64) -> Result<Self> {
        if !(r0.is_finite() && r0 > 0.0) {
            return Err(invalid("r0", format!("must be positive, got {r0}")));
        }
        if state.is_empty() || state.iter().any(|r| !(*r > 0.0) || r.is_nan()) {
            return Err(invalid("state thresholds", "need one positive entry per state axis"));
        }
        if !(cy.is_finite() && cy > 0.0) {
            return Err(Error::DegenerateClamp(cy));
        }
        Ok(Self { r0, state, cy })
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn z_bound(&self, h: f64) -> f64 {
        self.cy / h.sqrt()
    }

    pub fn with_cy(mut self, cy: f64) -> Result<Self> {
        if !(cy.is_finite() && cy > 0.0) {
            return Err(Error::DegenerateClamp(cy));
        }
        self.cy = cy;
        Ok(self)
    }
}

/// Square root of
/// `exp((2γ* + (1+γ*)/q) T) { sup|φ^R|² + 2T (1+γ*)/γ* sup|f^R(·,·,0,0)|² }`
/// with `γ* = 4 q C_f²`.
///
/// The bracket is quadratic in the sup-norms while it bounds `|Y|`; taking the
/// square root makes the level scale like `Y`. Use [`clamp_level_squared`] for
/// the unrooted expression.
pub fn clamp_level(lipschitz: f64, q: usize, horizon: f64, sup_terminal: f64, sup_driver: f64) -> Result<f64> {
    clamp_level_squared(lipschitz, q, horizon, sup_terminal, sup_driver).map(f64::sqrt)
}

pub fn clamp_level_squared(
    lipschitz: f64,
    q: usize,
    horizon: f64,
    sup_terminal: f64,
    sup_driver: f64,
) -> Result<f64> {
    if !(lipschitz.is_finite() && lipschitz > 0.0) {
        return Err(invalid(
            "lipschitz",
            "C_f must be positive for the bound; supply an explicit clamp level instead",
        ));
    }
    if q == 0 {
        return Err(invalid("q", "Brownian dimension must be at least 1"));
    }
    let gamma = 4.0 * q as f64 * lipschitz * lipschitz;
    let growth = ((2.0 * gamma + (1.0 + gamma) / q as f64) * horizon).exp();
    let data = sup_terminal * sup_terminal;
    let forcing = if sup_driver == 0.0 {
        0.0
    } else {
        2.0 * horizon * (1.0 + gamma) / gamma * sup_driver * sup_driver
    };
    Ok(growth * (data + forcing))
}

/// Maximum of `|g|` over a coarse deterministic grid of the box
/// `Π [-R_i, R_i]`, using at most about `budget` points.
pub fn estimate_sup_on_box(bounds: &[f64], budget: usize, g: impl Fn(&[f64]) -> f64) -> f64 {
    let d = bounds.len();
    let per_axis = ((budget as f64).powf(1.0 / d as f64).floor() as usize).max(2);
    let total = per_axis.saturating_pow(d as u32);
    let mut x = vec![0.0; d];
    let mut best: f64 = 0.0;
    for idx in 0..total {
        let mut rest = idx;
        for (j, xj) in x.iter_mut().enumerate() {
            let i = rest % per_axis;
            rest /= per_axis;
            *xj = -bounds[j] + 2.0 * bounds[j] * i as f64 / (per_axis - 1) as f64;
        }
        best = best.max(g(&x).abs());
    }
    best
}
