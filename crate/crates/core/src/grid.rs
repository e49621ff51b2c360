use crate::error::{invalid, Result};

/// Uniform time grid `t_k = k h`, `h = T / N`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    h: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("steps", "need at least one time step"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("horizon", format!("must be positive, got {horizon}")));
        }
        Ok(Self {
            horizon,
            steps,
            h: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    /// Node `t_k`. The last node is the horizon itself, not `N * h`.
    pub fn time(&self, k: usize) -> f64 {
        assert!(k <= self.steps, "node {k} beyond grid of {} steps", self.steps);
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.h
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|k| self.time(k))
    }
}
