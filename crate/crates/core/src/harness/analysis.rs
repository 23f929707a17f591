use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    covariance_trace, decomposition_series, deviation_metrics, k_ratio, mem_score, pc1_alignment,
    pred_latent_geometry, x0_geometry, Baseline, BasisKind, ConditionMetrics, DecompositionSeries, MetricsReport,
    PowerIterationConfig, SeriesPoint, Trajectory,
};
use crate::diffusion::predict_x0;
use crate::error::{Error, Result};
use crate::schedule::Schedule;
use crate::vector::Vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// mem_score at or above this marks a condition as memorized.
    pub threshold: f64,
    /// Fraction of the grid completed at the covariance-trace checkpoint.
    pub checkpoint_fraction: f64,
    /// Fraction of the grid averaged into the early PC1 alignment.
    pub early_fraction: f64,
    pub power: PowerIterationConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig { threshold: 0.75, checkpoint_fraction: 0.2, early_fraction: 0.4, power: PowerIterationConfig::default() }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("checkpoint_fraction", self.checkpoint_fraction), ("early_fraction", self.early_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !self.threshold.is_finite() {
            return Err(Error::InvalidArgument("threshold must be finite".into()));
        }
        Ok(())
    }

    /// Grid index of the mid-denoising checkpoint for a grid of `n` steps.
    pub fn checkpoint_index(&self, n: usize) -> usize {
        ((self.checkpoint_fraction * n as f64).round() as usize).min(n.saturating_sub(1))
    }

    /// Number of leading steps averaged for the early PC1 alignment.
    pub fn early_steps(&self, n: usize) -> usize {
        ((self.early_fraction * n as f64).round() as usize).clamp(1, n)
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    s / n as f64
}

/// All diagnostics for the seed ensemble of one (condition, g) pair.
/// Trajectories with non-finite latents are dropped and counted.
pub fn analyze_condition(
    trajs: &[Trajectory],
    train_x: &Vector,
    dup_factor: usize,
    schedule: &Schedule,
    cfg: &AnalysisConfig,
) -> Result<ConditionMetrics> {
    let first = trajs.first().ok_or_else(|| Error::InvalidArgument("no trajectories to analyze".into()))?;
    let (cond_id, g, grid) = (first.cond_id, first.g, first.grid.clone());
    for t in trajs {
        t.validate()?;
        if t.cond_id != cond_id || t.g != g || t.grid != grid {
            return Err(Error::InvalidArgument("ensemble mixes conditions, guidance scales or grids".into()));
        }
    }
    let finite: Vec<&Trajectory> = trajs.iter().filter(|t| t.is_finite()).collect();
    let diverged = trajs.len() - finite.len();
    if finite.len() < 2 {
        return Err(Error::Degenerate(format!(
            "condition {cond_id} at g = {g}: only {} of {} trajectories stayed finite",
            finite.len(),
            trajs.len()
        )));
    }
    let n = grid.len();

    let finals: Vec<Vector> = finite.iter().map(|t| t.final_sample().clone()).collect();
    let ms = mem_score(&finals, train_x)?;

    let train_series = finite
        .iter()
        .map(|t| decomposition_series(t, train_x, t.initial(), BasisKind::TrainX, schedule))
        .collect::<Result<Vec<_>>>()?;
    let final_series = finite
        .iter()
        .map(|t| decomposition_series(t, t.final_sample(), t.initial(), BasisKind::FinalX0, schedule))
        .collect::<Result<Vec<_>>>()?;
    let dev = deviation_metrics(&train_series, Baseline::Omitted)?;
    let train_mean = DecompositionSeries::mean(&train_series)?;
    let final_mean = DecompositionSeries::mean(&final_series)?;

    let mut series = Vec::with_capacity(n);
    for (i, &t) in grid.iter().enumerate() {
        let at: Vec<Vector> = finite.iter().map(|tr| tr.latents[i].clone()).collect();
        let deltas: Vec<Vector> = finite.iter().map(|tr| tr.delta(i)).collect();
        let pc = pc1_alignment(&deltas, train_x, &cfg.power)?;
        let mut x0s = Vec::with_capacity(finite.len());
        let mut geo_u = Vec::with_capacity(finite.len());
        let mut geo_c = Vec::with_capacity(finite.len());
        for tr in &finite {
            let p = &tr.preds[i];
            x0s.push(predict_x0(&tr.latents[i], &p.eps_tilde, t, schedule)?);
            geo_u.push(pred_latent_geometry(&p.eps_uncond, tr.initial(), train_x)?);
            geo_c.push(pred_latent_geometry(&p.eps_cond, tr.initial(), train_x)?);
        }
        let x0g = x0s.iter().map(|x0| x0_geometry(x0, train_x)).collect::<Result<Vec<_>>>()?;
        let ks = x0s.iter().map(|x0| k_ratio(x0, train_x)).collect::<Result<Vec<_>>>()?;
        let (tm, fm) = (&train_mean.steps[i], &final_mean.steps[i]);
        series.push(SeriesPoint {
            t,
            trace: covariance_trace(&at)?,
            pc1: Some(pc.alignment),
            pc1_degenerate: pc.degenerate,
            k_ratio: mean(ks.iter().copied()),
            x0_cos: mean(x0g.iter().map(|g| g.cos)),
            x0_sq_l2: mean(x0g.iter().map(|g| g.sq_l2)),
            w0: tm.w0,
            w_t: tm.w_t,
            w0_final: fm.w0,
            w_t_final: fm.w_t,
            sched_w0: tm.theory_w0,
            sched_w_t: tm.theory_w_t,
            cos_uncond_xt: mean(geo_u.iter().map(|g| g.cos_eps_xt)),
            cos_cond_xt: mean(geo_c.iter().map(|g| g.cos_eps_xt)),
            cos_uncond_diff_negx: mean(geo_u.iter().map(|g| g.cos_diff_negx)),
            cos_cond_diff_negx: mean(geo_c.iter().map(|g| g.cos_diff_negx)),
            sq_diff_uncond: mean(geo_u.iter().map(|g| g.sq_diff)),
            sq_diff_cond: mean(geo_c.iter().map(|g| g.sq_diff)),
        });
    }
    let early = cfg.early_steps(n);
    let pc1_early = mean(series[..early].iter().map(|p| p.pc1.unwrap_or(0.0)));
    let first_point = series[0];
    Ok(ConditionMetrics {
        cond_id,
        g,
        dup_factor,
        samples: finite.len(),
        diverged,
        mem_score: ms.score,
        sim_train: ms.sim_train,
        sim_generate: ms.sim_generate,
        memorized: ms.score >= cfg.threshold,
        m1: dev.m1,
        m2: dev.m2,
        m3: dev.m3,
        trace_mid: series[cfg.checkpoint_index(n)].trace,
        pc1_early,
        k_ratio_first: first_point.k_ratio,
        x0_cos_first: first_point.x0_cos,
        x0_sq_l2_first: first_point.x0_sq_l2,
        series,
    })
}

/// Assembles a report from per-(condition, g) metrics.
pub fn build_report(rows: Vec<ConditionMetrics>, grid: &[usize], cfg: &AnalysisConfig) -> MetricsReport {
    let checkpoint_t = grid.get(cfg.checkpoint_index(grid.len())).copied().unwrap_or(0);
    MetricsReport::new(cfg.threshold, checkpoint_t, rows)
}
