//! Standalone identity checks on the core algebra, runnable from the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diagnostics::decompose;
use crate::diffusion::{ddpm_step, forward_sample, loss_x0_form, predict_x0, training_loss};
use crate::error::Result;
use crate::oracle::{
    closed_form_xt, ddpm_memorized_xt, guided_first_step_x0, DecompositionMode, MemorizedOracle, OracleSpec,
};
use crate::schedule::{InferenceGrid, Schedule, ScheduleParams};
use crate::toy_model::{
    batch_loss, batch_loss_and_grad, net_config, Architecture, DatasetSpec, DenoiserParams, ToyDataset, TrainBatch,
};
use crate::vector::Vector;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error.
    pub worst: f64,
    pub tolerance: f64,
}

fn check(name: &'static str, worst: f64, tolerance: f64) -> CheckResult {
    CheckResult { name, passed: worst <= tolerance, worst, tolerance }
}

fn max_abs_diff(a: &Vector, b: &Vector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Noise-space and clean-space forms of the training loss agree.
pub fn loss_equivalence(s: &Schedule, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let x = Vector::standard_normal(64, &mut rng);
        let eps = Vector::standard_normal(64, &mut rng);
        let eps_hat = &eps + &Vector::standard_normal(64, &mut rng).scale(0.3);
        let t = rng.random_range(1..=s.train_steps());
        let x_t = forward_sample(&x, t, &eps, s)?;
        let x0_hat = predict_x0(&x_t, &eps_hat, t, s)?;
        let a = training_loss(&eps, &eps_hat)?;
        let b = loss_x0_form(&x0_hat, &x, t, s)?;
        worst = worst.max((a - b).abs() / a.abs().max(f64::MIN_POSITIVE));
    }
    Ok(check("loss_equivalence", worst, 1e-9))
}

/// Least squares on memorized closed-form latents returns the schedule weights.
pub fn decomposition_exactness(s: &Schedule, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = InferenceGrid::subsample(s.train_steps(), 50)?;
    let (mut weight_err, mut residual) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = Vector::standard_normal(64, &mut rng).scale(0.5);
        let x_init = Vector::standard_normal(64, &mut rng);
        for &t in grid.steps() {
            let x_t = closed_form_xt(&x, &x_init, t, s, DecompositionMode::Approximate)?;
            let d = decompose(&x_t, &x, &x_init)?;
            weight_err = weight_err
                .max((d.w0 - s.sqrt_alpha_bar(t)).abs())
                .max((d.w_t - s.sqrt_one_minus_alpha_bar(t)).abs());
            residual = residual.max(d.residual_norm);
        }
    }
    Ok(vec![check("decomposition_weights", weight_err, 1e-8), check("decomposition_residual", residual, 1e-10)])
}

/// The x-component of the first guided x̂₀ is exactly g·x when x ⟂ x_T.
pub fn overestimation(s: &Schedule, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = Vector::standard_normal(64, &mut rng);
        let raw = Vector::standard_normal(64, &mut rng);
        let x_init = Vector::lin_comb(1.0, &raw, -raw.dot(&x) / x.norm_sq(), &x);
        let spec = OracleSpec::exact(x.clone(), s);
        for g in [0.5, 1.0, 2.0, 7.5] {
            let x0 = guided_first_step_x0(&x_init, &spec, g, s)?;
            let along = x0.dot(&x) / x.norm_sq();
            worst = worst.max((along - g).abs());
        }
    }
    Ok(check("overestimation", worst, 1e-10))
}

/// A DDPM chain driven by the memorized predictor with z = 0 follows the closed form.
pub fn ddpm_chain(s: &Schedule, seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Vector::standard_normal(16, &mut rng).scale(0.5);
    let x_init = Vector::standard_normal(16, &mut rng);
    let oracle = MemorizedOracle::new(s.clone(), vec![x.clone()])?;
    let z = Vector::zeros(16);
    let mut cur = x_init.clone();
    let mut worst = 0.0f64;
    for t in (1..=s.train_steps()).rev() {
        let eps = oracle.predict_one(&cur, t, Some(0))?;
        cur = ddpm_step(&cur, &eps, t, s, &z)?;
        let closed = ddpm_memorized_xt(&x, &x_init, t - 1, s, &[])?;
        worst = worst.max(max_abs_diff(&cur, &closed));
    }
    let mut coef = 0.0f64;
    for t in 1..=s.train_steps() {
        let lhs = (1.0 - s.alpha_bar(t)) - s.beta(t);
        let rhs = s.alpha(t) * (1.0 - s.alpha_bar(t - 1));
        coef = coef.max((lhs - rhs).abs());
    }
    Ok(vec![check("ddpm_chain", worst, 1e-9), check("ddpm_coefficients", coef, 1e-12)])
}

/// Backpropagated gradients of a small network against central differences.
pub fn gradient_check(seed: u64, coordinates: usize) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schedule = Schedule::linear(100, 1e-3, 0.1)?;
    let data = ToyDataset::generate(&DatasetSpec { dim: 8, dup_factors: vec![1, 4], variants: 3, seed })?;
    let arch = Architecture { embed_dim: 4, time_features: 6, time_hidden: 5, hidden: vec![12, 10] };
    let mut params = DenoiserParams::init(net_config(&data, &schedule, &arch), &mut rng)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let batch = TrainBatch::draw(&data, &rows, &schedule, 0.3, &mut rng);
    let (_, grads) = batch_loss_and_grad(&params, &batch)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..coordinates {
        let i = rng.random_range(0..params.num_params());
        let orig = params.get_flat(i);
        params.set_flat(i, orig + h);
        let up = batch_loss(&params, &batch)?;
        params.set_flat(i, orig - h);
        let down = batch_loss(&params, &batch)?;
        params.set_flat(i, orig);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.get_flat(i);
        let scale = numeric.abs().max(analytic.abs()).max(1e-6);
        worst = worst.max((numeric - analytic).abs() / scale);
    }
    Ok(check("gradient_check", worst, 1e-4))
}

/// Every check on the default schedule.
pub fn identity_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let s = ScheduleParams::default().build()?;
    let mut out = vec![loss_equivalence(&s, seed)?];
    out.extend(decomposition_exactness(&s, seed)?);
    out.push(overestimation(&s, seed)?);
    out.extend(ddpm_chain(&s, seed)?);
    out.push(gradient_check(seed, 200)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for r in identity_suite(1).unwrap() {
            assert!(r.passed, "{r:?}");
        }
    }
}
