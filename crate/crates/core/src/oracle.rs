//! Closed-form idealizations of a denoiser that has memorized a single
//! training latent `x`.
//!
//! These serve as exact ground truth for the diagnostics and for the
//! overestimation identities: at `t = T` a memorizing model predicts
//! `ε_∅ ≈ x_T` and `ε_c ≈ x_T − s·x`, and a memorized trajectory decomposes
//! into a weighted sum of `x` and `x_T`.

use crate::diffusion::{cfg_combine, predict_x0, GuidedPrediction, NoisePredictor};
use crate::error::{check_dims, Error, Result};
use crate::schedule::Schedule;
use crate::vector::Vector;

/// Memorized latent plus the scale of its imprint on the conditional prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSpec {
    pub x: Vector,
    pub s: f64,
}

impl OracleSpec {
    /// Uses the exact scale `s = sqrt(ᾱ_T) / sqrt(1 − ᾱ_T)`.
    pub fn exact(x: Vector, schedule: &Schedule) -> Self {
        let t = schedule.train_steps();
        let s = schedule.sqrt_alpha_bar(t) / schedule.sqrt_one_minus_alpha_bar(t);
        Self { x, s }
    }

    pub fn with_scale(x: Vector, s: f64) -> Result<Self> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!("oracle scale must be finite and non-negative, got {s}")));
        }
        if !x.is_finite() {
            return Err(Error::InvalidArgument("oracle latent has non-finite entries".into()));
        }
        Ok(Self { x, s })
    }
}

/// Unconditional prediction at `t = T`: the initial latent itself.
pub fn oracle_uncond(x_t_init: &Vector) -> Vector {
    x_t_init.clone()
}

/// Conditional prediction at `t = T`: `x_T − s·x`.
pub fn oracle_cond(x_t_init: &Vector, spec: &OracleSpec) -> Result<Vector> {
    Vector::try_lin_comb(1.0, x_t_init, -spec.s, &spec.x)
}

/// Guided oracle prediction at `t = T` for scale `g`.
pub fn guided_first_prediction(x_t_init: &Vector, spec: &OracleSpec, g: f64) -> Result<GuidedPrediction> {
    cfg_combine(oracle_uncond(x_t_init), oracle_cond(x_t_init, spec)?, g)
}

/// x̂₀ after one guided step from `x_T` under the oracle predictor.
pub fn guided_first_step_x0(x_t_init: &Vector, spec: &OracleSpec, g: f64, schedule: &Schedule) -> Result<Vector> {
    let pred = guided_first_prediction(x_t_init, spec, g)?;
    predict_x0(x_t_init, &pred.eps_tilde, schedule.train_steps(), schedule)
}

/// Closed-form coefficients `(c_x, δ)` with x̂₀ = c_x·x + δ·x_T for the
/// guided first step. `c_x = g` exactly when the scale is the exact one.
pub fn guided_first_step_coefficients(spec: &OracleSpec, g: f64, schedule: &Schedule) -> (f64, f64) {
    let t = schedule.train_steps();
    let sa = schedule.sqrt_alpha_bar(t);
    let sb = schedule.sqrt_one_minus_alpha_bar(t);
    (g * spec.s * sb / sa, (1.0 - sb) / sa)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecompositionMode {
    /// Coefficients obtained by substituting the exact terminal noise.
    Exact,
    /// The `ᾱ_T ≈ 0` form `sqrt(ᾱ_t)·x + sqrt(1 − ᾱ_t)·x_T`.
    Approximate,
}

/// `(w0, wT)` of the memorized latent at `t ∈ 0..=T`.
pub fn closed_form_weights(t: usize, schedule: &Schedule, mode: DecompositionMode) -> (f64, f64) {
    match mode {
        DecompositionMode::Approximate => (schedule.sqrt_alpha_bar(t), schedule.sqrt_one_minus_alpha_bar(t)),
        DecompositionMode::Exact => {
            let big_t = schedule.train_steps();
            let w_t = schedule.sqrt_one_minus_alpha_bar(t) / schedule.sqrt_one_minus_alpha_bar(big_t);
            // Written so that t = T gives (0, 1) exactly.
            (schedule.sqrt_alpha_bar(t) - w_t * schedule.sqrt_alpha_bar(big_t), w_t)
        }
    }
}

/// Memorized-trajectory latent at timestep `t` (0 is the clean end).
pub fn closed_form_xt(x: &Vector, x_t_init: &Vector, t: usize, schedule: &Schedule, mode: DecompositionMode) -> Result<Vector> {
    check_dims(x.dim(), x_t_init.dim())?;
    if t > schedule.train_steps() {
        return Err(Error::TimestepOutOfRange { t, max: schedule.train_steps() });
    }
    let (a, b) = closed_form_weights(t, schedule, mode);
    Ok(Vector::lin_comb(a, x, b, x_t_init))
}

/// Coefficient of `x_T` in one memorized DDPM step from `t`:
/// `sqrt(α_t)·(1 − ᾱ_{t−1}) / sqrt(1 − ᾱ_t)`.
pub fn ddpm_noise_coefficient(t: usize, schedule: &Schedule) -> f64 {
    schedule.alpha(t).sqrt() * (1.0 - schedule.alpha_bar(t - 1)) / schedule.sqrt_one_minus_alpha_bar(t)
}

/// Single memorized DDPM step from `t` to `t − 1`:
/// `sqrt(ᾱ_{t−1})·x + c_t·x_T + σ_t·z`.
pub fn ddpm_memorized_step(x: &Vector, x_t_init: &Vector, t: usize, schedule: &Schedule, z: &Vector) -> Result<Vector> {
    check_dims(x.dim(), x_t_init.dim())?;
    check_dims(x.dim(), z.dim())?;
    schedule.check_timestep(t)?;
    let a = schedule.sqrt_alpha_bar(t - 1);
    let b = ddpm_noise_coefficient(t, schedule);
    let sigma = schedule.posterior_variance(t).sqrt();
    let out = x
        .iter()
        .zip(x_t_init.iter())
        .zip(z.iter())
        .map(|((xi, ni), zi)| a * xi + b * ni + sigma * zi)
        .collect::<Vec<_>>();
    Ok(Vector::new(out))
}

/// Fraction of the noise component at timestep `from` that survives to `to`
/// under a memorized DDPM chain: `sqrt(ᾱ_from / ᾱ_to)·(1 − ᾱ_to)/(1 − ᾱ_from)`.
fn ddpm_noise_carry(from: usize, to: usize, schedule: &Schedule) -> f64 {
    if from == to {
        return 1.0;
    }
    let (ab_from, ab_to) = (schedule.alpha_bar(from), schedule.alpha_bar(to));
    (ab_from / ab_to).sqrt() * (1.0 - ab_to) / (1.0 - ab_from)
}

/// Latent at timestep `t` after running the memorized DDPM chain from
/// `x_T` at `t = T`. `z_sequence[k]` is the noise drawn in the step leaving
/// timestep `T − k`, so it must hold `T − t` vectors (or be empty for z = 0).
pub fn ddpm_memorized_xt(
    x: &Vector,
    x_t_init: &Vector,
    t: usize,
    schedule: &Schedule,
    z_sequence: &[Vector],
) -> Result<Vector> {
    check_dims(x.dim(), x_t_init.dim())?;
    let big_t = schedule.train_steps();
    if t > big_t {
        return Err(Error::TimestepOutOfRange { t, max: big_t });
    }
    if !z_sequence.is_empty() && z_sequence.len() != big_t - t {
        return Err(Error::InvalidArgument(format!(
            "expected {} noise vectors for t = {t}, got {}",
            big_t - t,
            z_sequence.len()
        )));
    }
    let noise_init = Vector::lin_comb(1.0, x_t_init, -schedule.sqrt_alpha_bar(big_t), x);
    let mut out = Vector::lin_comb(schedule.sqrt_alpha_bar(t), x, ddpm_noise_carry(big_t, t, schedule), &noise_init);
    for (k, z) in z_sequence.iter().enumerate() {
        check_dims(x.dim(), z.dim())?;
        let r = big_t - k;
        let coef = schedule.posterior_variance(r).sqrt() * ddpm_noise_carry(r - 1, t, schedule);
        out = Vector::lin_comb(1.0, &out, coef, z);
    }
    Ok(out)
}

/// An idealized predictor that has memorized one latent per condition.
///
/// Conditional queries return the exact noise of `x_t` relative to the
/// memorized latent; unconditional queries treat the data mean as zero.
#[derive(Debug, Clone)]
pub struct MemorizedOracle {
    schedule: Schedule,
    memorized: Vec<Vector>,
}

impl MemorizedOracle {
    pub fn new(schedule: Schedule, memorized: Vec<Vector>) -> Result<Self> {
        let dim = memorized.first().map(Vector::dim).ok_or_else(|| Error::InvalidArgument("no memorized latents".into()))?;
        for m in &memorized {
            check_dims(dim, m.dim())?;
        }
        Ok(Self { schedule, memorized })
    }

    /// The exact noise this predictor returns for a conditional query.
    pub fn predict_one(&self, x_t: &Vector, t: usize, cond: Option<usize>) -> Result<Vector> {
        self.schedule.check_timestep(t)?;
        let sb = self.schedule.sqrt_one_minus_alpha_bar(t);
        match cond {
            None => Ok(x_t.scale(1.0 / sb)),
            Some(c) => {
                let x = self
                    .memorized
                    .get(c)
                    .ok_or(Error::ConditionOutOfRange { cond: c, num_conds: self.memorized.len() })?;
                Vector::try_lin_comb(1.0 / sb, x_t, -self.schedule.sqrt_alpha_bar(t) / sb, x)
            }
        }
    }
}

impl NoisePredictor for MemorizedOracle {
    fn dim(&self) -> usize {
        self.memorized[0].dim()
    }

    fn predict_batch(&self, xs: &[Vector], t: usize, cond: Option<usize>) -> Result<Vec<Vector>> {
        xs.iter().map(|x| self.predict_one(x, t, cond)).collect()
    }
}
