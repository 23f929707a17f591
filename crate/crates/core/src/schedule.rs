//! Variance schedule and the inference timestep grid.
//!
//! Timesteps are 1-based (`1..=train_steps`). Index 0 denotes the clean
//! sample, for which `ᾱ_0 = 1` by convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of a linear β schedule, as stored in experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self { train_steps: 1000, beta_start: 1e-4, beta_end: 0.02 }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<Schedule> {
        Schedule::linear(self.train_steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    // All tables have length train_steps + 1; slot 0 holds the t = 0 convention.
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Schedule {
    /// Linearly spaced β from `beta_start` to `beta_end`, endpoints inclusive.
    pub fn linear(train_steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if train_steps < 2 {
            return Err(Error::Schedule(format!("need at least 2 training steps, got {train_steps}")));
        }
        if !(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 && beta_end < 1.0) {
            return Err(Error::Schedule(format!(
                "beta endpoints must lie in (0, 1), got [{beta_start}, {beta_end}]"
            )));
        }
        if beta_start > beta_end {
            return Err(Error::Schedule(format!(
                "beta_start {beta_start} exceeds beta_end {beta_end}"
            )));
        }
        let span = (train_steps - 1) as f64;
        let mut betas = Vec::with_capacity(train_steps + 1);
        betas.push(0.0);
        for i in 0..train_steps {
            betas.push(beta_start + (beta_end - beta_start) * i as f64 / span);
        }
        Self::from_betas_padded(betas)
    }

    /// Builds a schedule from explicit `β_1..β_T`.
    pub fn from_betas(betas: &[f64]) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::Schedule("need at least 2 betas".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Schedule(format!("beta {b} outside (0, 1)")));
        }
        let mut padded = Vec::with_capacity(betas.len() + 1);
        padded.push(0.0);
        padded.extend_from_slice(betas);
        Self::from_betas_padded(padded)
    }

    fn from_betas_padded(betas: Vec<f64>) -> Result<Self> {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        alpha_bars.push(1.0);
        for t in 1..alphas.len() {
            alpha_bars.push(alpha_bars[t - 1] * alphas[t]);
        }
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn train_steps(&self) -> usize {
        self.betas.len() - 1
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.train_steps() {
            return Err(Error::TimestepOutOfRange { t, max: self.train_steps() });
        }
        Ok(())
    }

    /// β_t for `t ∈ 1..=T`. Panics outside that range.
    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1, "beta is undefined at t = 0");
        self.betas[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        assert!(t >= 1, "alpha is undefined at t = 0");
        self.alphas[t]
    }

    /// ᾱ_t for `t ∈ 0..=T`, with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t].sqrt()
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bars[t]).sqrt()
    }

    /// ᾱ at the final training step.
    pub fn terminal_alpha_bar(&self) -> f64 {
        self.alpha_bars[self.train_steps()]
    }

    /// `ᾱ_1..ᾱ_T`, 1-based values in a 0-based slice.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars[1..]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas[1..]
    }

    /// DDPM posterior variance β̃_t = (1 − ᾱ_{t−1}) / (1 − ᾱ_t) · β_t.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t]) * self.betas[t]
    }
}

/// Strictly decreasing subset of training timesteps used at inference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceGrid {
    steps: Vec<usize>,
}

impl InferenceGrid {
    /// Evenly spaced descending grid `T − ⌊k·T/n⌋` for `k = 0..n`.
    pub fn subsample(train_steps: usize, infer_steps: usize) -> Result<Self> {
        if infer_steps == 0 || infer_steps > train_steps {
            return Err(Error::InvalidArgument(format!(
                "inference steps {infer_steps} must lie in 1..={train_steps}"
            )));
        }
        let steps = (0..infer_steps).map(|k| train_steps - k * train_steps / infer_steps).collect();
        Ok(Self { steps })
    }

    /// Wraps an explicit grid, validating order and range.
    pub fn from_steps(steps: Vec<usize>, train_steps: usize) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidArgument("empty inference grid".into()));
        }
        if steps.iter().any(|&t| t == 0 || t > train_steps) {
            return Err(Error::InvalidArgument(format!("grid entry outside 1..={train_steps}")));
        }
        if steps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidArgument("grid must be strictly decreasing".into()));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(t, t_prev)` pairs; the last pair steps to 0.
    pub fn transitions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, self.steps.get(i + 1).copied().unwrap_or(0)))
    }
}
