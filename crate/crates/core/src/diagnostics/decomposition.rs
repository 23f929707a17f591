//! Two-basis least-squares decomposition of intermediate latents.

use serde::{Deserialize, Serialize};

use crate::diffusion::GuidedPrediction;
use crate::error::{check_dims, Error, Result};
use crate::schedule::Schedule;
use crate::vector::Vector;

/// One sampled denoising trajectory for a (condition, guidance, seed) triple.
///
/// `latents[i]` is the latent at `grid[i]`; the final entry is the clean
/// sample at `t = 0`, so `latents.len() == grid.len() + 1`. `preds[i]` is
/// the prediction made from `latents[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: Vec<usize>,
    pub latents: Vec<Vector>,
    pub preds: Vec<GuidedPrediction>,
    pub cond_id: usize,
    pub g: f64,
    pub seed: u64,
}

impl Trajectory {
    pub fn initial(&self) -> &Vector {
        &self.latents[0]
    }

    pub fn final_sample(&self) -> &Vector {
        self.latents.last().expect("trajectory has at least one latent")
    }

    pub fn dim(&self) -> usize {
        self.latents[0].dim()
    }

    /// True when every latent stayed finite.
    pub fn is_finite(&self) -> bool {
        self.latents.iter().all(Vector::is_finite)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("trajectory grid is empty".into()));
        }
        if self.grid.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidArgument("trajectory grid is not strictly decreasing".into()));
        }
        if self.latents.len() != self.grid.len() + 1 || self.preds.len() != self.grid.len() {
            return Err(Error::InvalidArgument(format!(
                "trajectory has {} latents and {} predictions for a grid of {}",
                self.latents.len(),
                self.preds.len(),
                self.grid.len()
            )));
        }
        let d = self.dim();
        for l in &self.latents {
            check_dims(d, l.dim())?;
        }
        for p in &self.preds {
            check_dims(d, p.eps_uncond.dim())?;
            check_dims(d, p.eps_cond.dim())?;
            check_dims(d, p.eps_tilde.dim())?;
        }
        Ok(())
    }

    /// `Δx = x_{next} − x_current` for the transition leaving grid index `i`.
    pub fn delta(&self, i: usize) -> Vector {
        &self.latents[i + 1] - &self.latents[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub w0: f64,
    pub w_t: f64,
    pub residual_norm: f64,
}

/// Least-squares fit `x_t ≈ w0·a + wT·b` via the 2×2 normal equations.
pub fn decompose(x_t: &Vector, a: &Vector, b: &Vector) -> Result<Decomposition> {
    check_dims(x_t.dim(), a.dim())?;
    check_dims(x_t.dim(), b.dim())?;
    let (aa, ab, bb) = (a.norm_sq(), a.dot(b), b.norm_sq());
    let det = aa * bb - ab * ab;
    let tol = 1e-12 * aa * bb;
    if det.abs() < tol || det == 0.0 {
        return Err(Error::DegenerateBasis { det, tol });
    }
    let (ra, rb) = (a.dot(x_t), b.dot(x_t));
    let w0 = (bb * ra - ab * rb) / det;
    let w_t = (aa * rb - ab * ra) / det;
    let residual: f64 = x_t
        .iter()
        .zip(a.iter())
        .zip(b.iter())
        .map(|((x, p), q)| {
            let r = x - w0 * p - w_t * q;
            r * r
        })
        .sum();
    Ok(Decomposition { w0, w_t, residual_norm: residual.sqrt() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `x_t = w0·x + wT·x_T` with the paired training latent.
    TrainX,
    /// `x_t = w0·x_0 + wT·x_T` with the trajectory's own final sample.
    FinalX0,
}

impl BasisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BasisKind::TrainX => "train_x",
            BasisKind::FinalX0 => "final_x0",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionStep {
    pub t: usize,
    pub w0: f64,
    pub w_t: f64,
    pub residual_norm: f64,
    /// sqrt(ᾱ_t)
    pub theory_w0: f64,
    /// sqrt(1 − ᾱ_t)
    pub theory_w_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionSeries {
    pub basis: BasisKind,
    pub steps: Vec<DecompositionStep>,
}

impl DecompositionSeries {
    /// Step-wise mean over an ensemble of aligned series.
    pub fn mean(ensemble: &[DecompositionSeries]) -> Result<DecompositionSeries> {
        let first = ensemble.first().ok_or_else(|| Error::InvalidArgument("empty ensemble".into()))?;
        let n = ensemble.len() as f64;
        let mut steps = first.steps.clone();
        for s in &mut steps {
            s.w0 = 0.0;
            s.w_t = 0.0;
            s.residual_norm = 0.0;
        }
        for series in ensemble {
            if series.steps.len() != steps.len() || series.basis != first.basis {
                return Err(Error::InvalidArgument("ensemble series are not aligned".into()));
            }
            for (acc, s) in steps.iter_mut().zip(&series.steps) {
                if acc.t != s.t {
                    return Err(Error::InvalidArgument("ensemble series use different grids".into()));
                }
                acc.w0 += s.w0 / n;
                acc.w_t += s.w_t / n;
                acc.residual_norm += s.residual_norm / n;
            }
        }
        Ok(DecompositionSeries { basis: first.basis, steps })
    }
}

/// Decomposes every grid latent of `traj` (the first grid step through the
/// last, excluding the clean endpoint) in the basis `{basis_first, x_init}`.
/// For sampled trajectories `x_init` is `traj.initial()`.
pub fn decomposition_series(
    traj: &Trajectory,
    basis_first: &Vector,
    x_init: &Vector,
    basis: BasisKind,
    schedule: &Schedule,
) -> Result<DecompositionSeries> {
    let steps = traj
        .grid
        .iter()
        .zip(&traj.latents)
        .map(|(&t, x_t)| {
            let d = decompose(x_t, basis_first, x_init)?;
            Ok(DecompositionStep {
                t,
                w0: d.w0,
                w_t: d.w_t,
                residual_norm: d.residual_norm,
                theory_w0: schedule.sqrt_alpha_bar(t),
                theory_w_t: schedule.sqrt_one_minus_alpha_bar(t),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DecompositionSeries { basis, steps })
}

/// Whether the schedule terms are subtracted from the aggregated weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Baseline {
    /// Drop the schedule terms; they are constant across generations.
    Omitted,
    /// Subtract sqrt(ᾱ_t) and sqrt(1 − ᾱ_t) per step.
    Schedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationMetrics {
    /// Σ_t E[w0]: excess contribution of the memorized latent.
    pub m1: f64,
    /// −Σ_t E[wT]: premature suppression of the initial noise.
    pub m2: f64,
    /// m1 + m2: overall deviation from the theoretical trajectory.
    pub m3: f64,
}

/// Timestep-aggregated deviation sums over a seed ensemble of one condition.
pub fn deviation_metrics(ensemble: &[DecompositionSeries], baseline: Baseline) -> Result<DeviationMetrics> {
    let mean = DecompositionSeries::mean(ensemble)?;
    if mean.steps.is_empty() {
        return Err(Error::InvalidArgument("empty decomposition series".into()));
    }
    let (mut m1, mut m2) = (0.0, 0.0);
    for s in &mean.steps {
        let (b0, bt) = match baseline {
            Baseline::Omitted => (0.0, 0.0),
            Baseline::Schedule => (s.theory_w0, s.theory_w_t),
        };
        m1 += s.w0 - b0;
        m2 -= s.w_t - bt;
    }
    Ok(DeviationMetrics { m1, m2, m3: m1 + m2 })
}
