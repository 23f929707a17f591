use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::Trajectory;
use crate::diffusion::{cfg_combine, ddim_step, ddpm_step_between, NoisePredictor};
use crate::error::{Error, Result};
use crate::schedule::{InferenceGrid, Schedule};
use crate::vector::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Ddim,
    Ddpm,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddim" => Ok(SamplerKind::Ddim),
            "ddpm" => Ok(SamplerKind::Ddpm),
            _ => Err(Error::InvalidArgument(format!("unknown sampler {s:?} (expected ddim or ddpm)"))),
        }
    }
}

impl SamplerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplerKind::Ddim => "ddim",
            SamplerKind::Ddpm => "ddpm",
        }
    }
}

/// Arithmetic precision of the stored trajectory state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    /// Latents and predictions are rounded to f32 after every step.
    F32,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            _ => Err(Error::InvalidArgument(format!("unknown precision {s:?} (expected f64 or f32)"))),
        }
    }
}

impl Precision {
    pub fn as_str(self) -> &'static str {
        match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        }
    }

    fn apply(self, v: Vector) -> Vector {
        match self {
            Precision::F64 => v,
            Precision::F32 => v.round_f32(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSpec {
    /// Number of seeds (generations) per condition and guidance scale.
    pub seeds: usize,
    pub base_seed: u64,
    pub infer_steps: usize,
    pub guidance: Vec<f64>,
    pub sampler: SamplerKind,
    pub precision: Precision,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            seeds: 16,
            base_seed: 0,
            infer_steps: 50,
            guidance: vec![1.0, 7.5],
            sampler: SamplerKind::Ddim,
            precision: Precision::F64,
        }
    }
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 seeds per condition, got {}", self.seeds)));
        }
        if self.guidance.is_empty() {
            return Err(Error::InvalidArgument("guidance list is empty".into()));
        }
        if let Some(g) = self.guidance.iter().find(|g| !g.is_finite()) {
            return Err(Error::InvalidArgument(format!("guidance scale {g} is not finite")));
        }
        if self.infer_steps == 0 {
            return Err(Error::InvalidArgument("infer_steps must be positive".into()));
        }
        Ok(())
    }

    /// Seeds shared by every condition, so initial noises are common across conditions.
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.base_seed.wrapping_add(i)).collect()
    }
}

/// Runs the guided reverse process for several seeds in lockstep, querying
/// the predictor once per step for the null condition and once for `cond`.
#[allow(clippy::too_many_arguments)]
pub fn sample_ensemble<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &Schedule,
    grid: &InferenceGrid,
    cond: usize,
    g: f64,
    seeds: &[u64],
    sampler: SamplerKind,
    precision: Precision,
) -> Result<Vec<Trajectory>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty inference grid".into()));
    }
    let dim = predictor.dim();
    let mut rngs: Vec<ChaCha8Rng> = seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect();
    let mut current: Vec<Vector> =
        rngs.iter_mut().map(|r| precision.apply(Vector::standard_normal(dim, r))).collect();
    let mut trajs: Vec<Trajectory> = seeds
        .iter()
        .zip(&current)
        .map(|(&seed, x)| Trajectory {
            grid: grid.steps().to_vec(),
            latents: vec![x.clone()],
            preds: Vec::with_capacity(grid.len()),
            cond_id: cond,
            g,
            seed,
        })
        .collect();
    for (t, t_prev) in grid.transitions() {
        let uncond = predictor.predict_batch(&current, t, None)?;
        let condp = predictor.predict_batch(&current, t, Some(cond))?;
        for (k, (eu, ec)) in uncond.into_iter().zip(condp).enumerate() {
            let pred = cfg_combine(precision.apply(eu), precision.apply(ec), g)?;
            let pred = crate::diffusion::GuidedPrediction { eps_tilde: precision.apply(pred.eps_tilde), ..pred };
            let next = match sampler {
                SamplerKind::Ddim => ddim_step(&current[k], &pred.eps_tilde, t, t_prev, schedule)?,
                SamplerKind::Ddpm => {
                    let z = Vector::standard_normal(dim, &mut rngs[k]);
                    ddpm_step_between(&current[k], &pred.eps_tilde, t, t_prev, schedule, &z)?
                }
            };
            let next = precision.apply(next);
            trajs[k].preds.push(pred);
            trajs[k].latents.push(next.clone());
            current[k] = next;
        }
    }
    Ok(trajs)
}

/// One seeded trajectory. Identical to the matching member of [`sample_ensemble`]
/// run on this seed alone.
pub fn sample_trajectory<P: NoisePredictor + ?Sized>(
    predictor: &P,
    schedule: &Schedule,
    grid: &InferenceGrid,
    cond: usize,
    g: f64,
    seed: u64,
    sampler: SamplerKind,
    precision: Precision,
) -> Result<Trajectory> {
    Ok(sample_ensemble(predictor, schedule, grid, cond, g, &[seed], sampler, precision)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::MemorizedOracle;
    use crate::schedule::ScheduleParams;

    fn setup() -> (Schedule, MemorizedOracle, Vec<Vector>) {
        let s = ScheduleParams::default().build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<Vector> = (0..2).map(|_| Vector::standard_normal(16, &mut rng).scale(0.5)).collect();
        (s.clone(), MemorizedOracle::new(s, xs.clone()).unwrap(), xs)
    }

    #[test]
    fn unit_guidance_uses_conditional_prediction() {
        let (s, oracle, _) = setup();
        let grid = InferenceGrid::subsample(1000, 50).unwrap();
        let traj = sample_trajectory(&oracle, &s, &grid, 0, 1.0, 5, SamplerKind::Ddim, Precision::F64).unwrap();
        traj.validate().unwrap();
        for p in &traj.preds {
            let a: Vec<u64> = p.eps_tilde.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = p.eps_cond.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (s, oracle, _) = setup();
        let grid = InferenceGrid::subsample(1000, 20).unwrap();
        for sampler in [SamplerKind::Ddim, SamplerKind::Ddpm] {
            let a = sample_trajectory(&oracle, &s, &grid, 1, 7.5, 3, sampler, Precision::F64).unwrap();
            let b = sample_trajectory(&oracle, &s, &grid, 1, 7.5, 3, sampler, Precision::F64).unwrap();
            assert_eq!(a, b);
            let c = sample_trajectory(&oracle, &s, &grid, 1, 7.5, 4, sampler, Precision::F64).unwrap();
            assert_ne!(a.initial(), c.initial());
        }
    }

    #[test]
    fn oracle_pipeline_recovers_memorized_sample() {
        let (s, oracle, xs) = setup();
        let grid = InferenceGrid::subsample(1000, 50).unwrap();
        for sampler in [SamplerKind::Ddim, SamplerKind::Ddpm] {
            let traj = sample_trajectory(&oracle, &s, &grid, 1, 1.0, 11, sampler, Precision::F64).unwrap();
            let err = traj.final_sample().sq_dist(&xs[1]).sqrt();
            assert!(err < 1e-6, "{sampler:?}: {err}");
        }
    }

    #[test]
    fn ensemble_matches_single_runs_and_shares_noise_across_conditions() {
        let (s, oracle, _) = setup();
        let grid = InferenceGrid::subsample(1000, 10).unwrap();
        let seeds = [7, 8, 9];
        let ens = sample_ensemble(&oracle, &s, &grid, 0, 2.0, &seeds, SamplerKind::Ddpm, Precision::F64).unwrap();
        for (traj, &seed) in ens.iter().zip(&seeds) {
            let one = sample_trajectory(&oracle, &s, &grid, 0, 2.0, seed, SamplerKind::Ddpm, Precision::F64).unwrap();
            assert_eq!(&one, traj);
        }
        let other = sample_trajectory(&oracle, &s, &grid, 1, 2.0, 7, SamplerKind::Ddpm, Precision::F64).unwrap();
        assert_eq!(other.initial(), ens[0].initial());
    }

    #[test]
    fn f32_precision_rounds_state() {
        let (s, oracle, _) = setup();
        let grid = InferenceGrid::subsample(1000, 10).unwrap();
        let traj = sample_trajectory(&oracle, &s, &grid, 0, 7.5, 1, SamplerKind::Ddim, Precision::F32).unwrap();
        for l in &traj.latents {
            assert!(l.iter().all(|v| (*v as f32) as f64 == *v));
        }
        let full = sample_trajectory(&oracle, &s, &grid, 0, 7.5, 1, SamplerKind::Ddim, Precision::F64).unwrap();
        assert!(traj.final_sample().sq_dist(full.final_sample()).sqrt() < 1e-3 * full.final_sample().norm().max(1.0));
    }

    #[test]
    fn spec_validation() {
        let ok = SamplingSpec::default();
        assert!(ok.validate().is_ok());
        assert!(SamplingSpec { seeds: 1, ..ok.clone() }.validate().is_err());
        assert!(SamplingSpec { guidance: vec![], ..ok.clone() }.validate().is_err());
        assert_eq!(ok.seed_list().len(), 16);
        assert_eq!("ddpm".parse::<SamplerKind>().unwrap(), SamplerKind::Ddpm);
        assert!("euler".parse::<SamplerKind>().is_err());
        assert!("f16".parse::<Precision>().is_err());
    }
}
