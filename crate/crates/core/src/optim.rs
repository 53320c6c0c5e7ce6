//! Staircase phase schedule and Adam.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub total_steps: u64,
    pub gamma: f64,
    pub decay_period: u64,
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if self.decay_period == 0 {
            return Err(Error::Config("decay_period must be at least 1".into()));
        }
        Ok(())
    }
}

/// Probability of running the structural phase at `step`:
/// `1 / (1 + γ·⌊step / N_decay⌋)`.
pub fn tau(step: u64, cfg: &ScheduleConfig) -> f64 {
    1.0 / (1.0 + cfg.gamma * (step / cfg.decay_period) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    /// Bias-corrected step for one coordinate; updates the moments in place.
    #[inline]
    fn step(&self, m: &mut f64, v: &mut f64, g: f64, lr_t: f64, c2: f64) -> f64 {
        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
        -lr_t * *m / ((*v / c2).sqrt() + self.epsilon)
    }

    /// `(lr / (1 - β₁ᵗ), 1 - β₂ᵗ)`
    fn corrections(&self, t: u64, lr: f64) -> (f64, f64) {
        let t = t as i32;
        (lr / (1.0 - self.beta1.powi(t)), 1.0 - self.beta2.powi(t))
    }
}

/// Adam over a fixed list of dense tensors.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub skipped: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            skipped: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update. Non-finite gradients leave parameters and moments
    /// untouched, bump `skipped`, and return a numerical error.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                field: "adam tensor count".into(),
                expected: self.m.len(),
                found: params.len().min(grads.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::Shape {
                    field: format!("adam tensor {i}"),
                    expected: self.m[i].len(),
                    found: p.len().min(g.len()),
                });
            }
        }
        if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
            self.skipped += 1;
            return Err(Error::numerical("non-finite gradient, update skipped"));
        }
        self.step += 1;
        let (lr_t, c2) = self.config.corrections(self.step, lr);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..p.len() {
                p[j] += self.config.step(&mut m[j], &mut v[j], g[j], lr_t, c2);
            }
        }
        Ok(())
    }
}

/// Lazy Adam over the rows of an embedding matrix: only rows with a
/// gradient in the current step have their moments and values touched.
#[derive(Debug, Clone)]
pub struct RowAdam {
    pub config: AdamConfig,
    pub step: u64,
    m: Mat,
    v: Mat,
}

impl RowAdam {
    pub fn new(config: AdamConfig, rows: usize, cols: usize) -> Self {
        RowAdam {
            config,
            step: 0,
            m: Mat::zeros(rows, cols),
            v: Mat::zeros(rows, cols),
        }
    }

    pub fn update(&mut self, target: &mut Mat, grads: &BTreeMap<usize, Vec<f64>>, lr: f64) -> Result<()> {
        if grads.values().any(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(Error::numerical("non-finite embedding gradient, update skipped"));
        }
        self.step += 1;
        let (lr_t, c2) = self.config.corrections(self.step, lr);
        for (&row, g) in grads {
            let m = self.m.row_mut(row);
            let v = self.v.row_mut(row);
            let p = target.row_mut(row);
            for j in 0..g.len() {
                p[j] += self.config.step(&mut m[j], &mut v[j], g[j], lr_t, c2);
            }
        }
        Ok(())
    }
}
