use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::vector::{cosine, Vector};

/// Replication similarity: cosine of the mean-centered vectors, in [−1, 1].
pub fn similarity(a: &Vector, b: &Vector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    cosine(&a.centered(), &b.centered())
        .ok_or_else(|| Error::Degenerate("similarity of a constant (zero after centering) vector".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemScore {
    pub score: f64,
    pub sim_train: f64,
    pub sim_generate: f64,
    /// Number of unordered generated pairs averaged into `sim_generate`.
    pub pairs: usize,
}

/// Memorization score of a set of generations for one condition: the mean
/// of train-similarity and all-pairs generation similarity.
pub fn mem_score(generated: &[Vector], train_x: &Vector) -> Result<MemScore> {
    if generated.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "memorization score needs at least 2 samples, got {}",
            generated.len()
        )));
    }
    let n = generated.len();
    let mut train_sum = 0.0;
    for g in generated {
        train_sum += similarity(g, train_x)?;
    }
    let mut pair_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            pair_sum += similarity(&generated[i], &generated[j])?;
            pairs += 1;
        }
    }
    let sim_train = train_sum / n as f64;
    let sim_generate = pair_sum / pairs as f64;
    Ok(MemScore { score: 0.5 * (sim_train + sim_generate), sim_train, sim_generate, pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct X0Geometry {
    pub sq_l2: f64,
    pub cos: f64,
}

/// Squared distance and (uncentered) cosine between x̂₀ and the training latent.
pub fn x0_geometry(x0_hat: &Vector, x: &Vector) -> Result<X0Geometry> {
    check_dims(x0_hat.dim(), x.dim())?;
    if x.norm_sq() == 0.0 {
        return Err(Error::Degenerate("reference latent is zero".into()));
    }
    Ok(X0Geometry { sq_l2: x0_hat.sq_dist(x), cos: cosine(x0_hat, x).unwrap_or(0.0) })
}

/// Norm ratio ‖x̂₀‖ / ‖x‖; values above 1 indicate overestimation.
pub fn k_ratio(x0_hat: &Vector, x: &Vector) -> Result<f64> {
    check_dims(x0_hat.dim(), x.dim())?;
    let nx = x.norm();
    if nx == 0.0 {
        return Err(Error::Degenerate("reference latent is zero".into()));
    }
    Ok(x0_hat.norm() / nx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredLatentGeometry {
    /// cos(ε, x_T)
    pub cos_eps_xt: f64,
    /// cos(ε − x_T, −x); 0 when ε = x_T exactly.
    pub cos_diff_negx: f64,
    /// ‖ε − x_T‖²
    pub sq_diff: f64,
}

/// Geometry of a noise prediction relative to the initial latent and the training latent.
pub fn pred_latent_geometry(eps: &Vector, x_init: &Vector, x: &Vector) -> Result<PredLatentGeometry> {
    check_dims(eps.dim(), x_init.dim())?;
    check_dims(eps.dim(), x.dim())?;
    if x_init.norm_sq() == 0.0 || x.norm_sq() == 0.0 {
        return Err(Error::Degenerate("reference latents must be nonzero".into()));
    }
    let diff = eps - x_init;
    Ok(PredLatentGeometry {
        cos_eps_xt: cosine(eps, x_init).unwrap_or(0.0),
        cos_diff_negx: cosine(&diff, &-x).unwrap_or(0.0),
        sq_diff: diff.norm_sq(),
    })
}
