use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::vector::{cosine, Vector};

/// Trace of the unbiased sample covariance, without forming the D×D matrix.
pub fn covariance_trace(samples: &[Vector]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!("covariance needs at least 2 samples, got {}", samples.len())));
    }
    let mean = sample_mean(samples)?;
    let n = samples.len() as f64;
    let total: f64 = samples.iter().map(|s| s.sq_dist(&mean)).sum();
    Ok(total / (n - 1.0))
}

fn sample_mean(samples: &[Vector]) -> Result<Vector> {
    let dim = samples[0].dim();
    let mut acc = vec![0.0; dim];
    for s in samples {
        check_dims(dim, s.dim())?;
        for (a, v) in acc.iter_mut().zip(s.iter()) {
            *a += v;
        }
    }
    let n = samples.len() as f64;
    Ok(Vector::new(acc.into_iter().map(|a| a / n).collect()))
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { expected: xs.len(), actual: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::InvalidArgument("pearson needs at least 2 points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson of a zero-variance series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIterationConfig {
    pub tolerance: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for PowerIterationConfig {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_iters: 20_000, seed: 0x5eed }
    }
}

/// Top eigenvector of the sample covariance of `samples` (centered), by
/// power iteration until `‖Cv − λv‖ ≤ tol·λ`. Returns `None` when the
/// covariance is zero.
pub fn top_principal_component(samples: &[Vector], cfg: &PowerIterationConfig) -> Result<Option<(Vector, f64)>> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("principal component needs at least 2 samples".into()));
    }
    let mean = sample_mean(samples)?;
    let centered: Vec<Vector> = samples.iter().map(|s| s - &mean).collect();
    if centered.iter().all(|c| c.norm_sq() == 0.0) {
        return Ok(None);
    }
    let n1 = (samples.len() - 1) as f64;
    let apply = |v: &Vector| -> Vector {
        let mut out = vec![0.0; v.dim()];
        for c in &centered {
            let w = c.dot(v) / n1;
            for (o, ci) in out.iter_mut().zip(c.iter()) {
                *o += w * ci;
            }
        }
        Vector::new(out)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut v = Vector::standard_normal(mean.dim(), &mut rng);
    v = v.scale(1.0 / v.norm());
    let mut lambda = 0.0;
    for _ in 0..cfg.max_iters {
        let cv = apply(&v);
        lambda = v.dot(&cv);
        let norm = cv.norm();
        if norm == 0.0 {
            // Start vector orthogonal to the data span; restart inside it.
            v = centered.iter().find(|c| c.norm_sq() > 0.0).unwrap().clone();
            v = v.scale(1.0 / v.norm());
            continue;
        }
        let residual = Vector::lin_comb(1.0, &cv, -lambda, &v).norm();
        v = cv.scale(1.0 / norm);
        if residual <= cfg.tolerance * lambda.abs() {
            break;
        }
    }
    Ok(Some((v, lambda)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcAlignment {
    /// |cos(v₁, x)|
    pub alignment: f64,
    /// Set when all deltas coincide and the shared direction was used instead.
    pub degenerate: bool,
}

/// Alignment between the first principal component of the deltas and `x`.
pub fn pc1_alignment(deltas: &[Vector], x: &Vector, cfg: &PowerIterationConfig) -> Result<PcAlignment> {
    if x.norm_sq() == 0.0 {
        return Err(Error::Degenerate("reference latent is zero".into()));
    }
    check_dims(x.dim(), deltas.first().map_or(x.dim(), Vector::dim))?;
    match top_principal_component(deltas, cfg)? {
        Some((v, _)) => Ok(PcAlignment { alignment: cosine(&v, x).unwrap_or(0.0).abs(), degenerate: false }),
        None => Ok(PcAlignment { alignment: cosine(&deltas[0], x).unwrap_or(0.0).abs(), degenerate: true }),
    }
}
