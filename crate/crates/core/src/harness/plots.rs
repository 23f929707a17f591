//! Plain TSV tables, one per figure analogue.

use std::path::{Path, PathBuf};

use crate::diagnostics::{
    pred_latent_geometry, top_principal_component, x0_geometry, MetricsReport, PowerIterationConfig, Trajectory,
};
use crate::diffusion::predict_x0;
use crate::error::{Error, Result};
use crate::schedule::Schedule;
use crate::toy_model::ToyDataset;
use crate::vector::Vector;

struct Table {
    text: String,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table { text: columns.join("\t") + "\n" }
    }

    fn row(&mut self, cells: &[String]) {
        self.text.push_str(&cells.join("\t"));
        self.text.push('\n');
    }
}

macro_rules! cells {
    ($($x:expr),* $(,)?) => { &[$($x.to_string()),*] };
}

/// Latent trajectories projected on the ensemble's first principal component.
fn latent_flow(trajs: &[&Trajectory], x: &Vector, power: &PowerIterationConfig) -> Result<Option<Vec<Vec<f64>>>> {
    let all: Vec<Vector> = trajs.iter().flat_map(|t| t.latents.iter().cloned()).collect();
    let Some((mut v, _)) = top_principal_component(&all, power)? else {
        return Ok(None);
    };
    if v.dot(x) < 0.0 {
        v = -&v;
    }
    let mean = Vector::new((0..x.dim()).map(|j| all.iter().map(|a| a[j]).sum::<f64>() / all.len() as f64).collect());
    Ok(Some(trajs.iter().map(|t| t.latents.iter().map(|l| (l - &mean).dot(&v)).collect()).collect()))
}

/// Writes every plot table into `dir` and returns the written paths.
pub fn write_plot_data(
    dir: &Path,
    report: &MetricsReport,
    trajs: &[Trajectory],
    dataset: &ToyDataset,
    schedule: &Schedule,
    power: &PowerIterationConfig,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let finite: Vec<&Trajectory> = trajs.iter().filter(|t| t.is_finite()).collect();

    let mut fig1 = Table::new(&["cond_id", "g", "dup_factor", "seed", "sq_l2", "cos"]);
    let mut fig4 = Table::new(&[
        "cond_id",
        "g",
        "dup_factor",
        "seed",
        "cos_uncond_xt",
        "cos_cond_xt",
        "cos_uncond_diff_negx",
        "cos_cond_diff_negx",
        "sq_diff_uncond",
        "sq_diff_cond",
    ]);
    for t in &finite {
        let x = dataset.train_x(t.cond_id);
        let dup = dataset.dup_factor(t.cond_id);
        let p = &t.preds[0];
        let x0 = predict_x0(t.initial(), &p.eps_tilde, t.grid[0], schedule)?;
        let geo = x0_geometry(&x0, x)?;
        fig1.row(cells![t.cond_id, t.g, dup, t.seed, geo.sq_l2, geo.cos]);
        let u = pred_latent_geometry(&p.eps_uncond, t.initial(), x)?;
        let c = pred_latent_geometry(&p.eps_cond, t.initial(), x)?;
        fig4.row(cells![
            t.cond_id,
            t.g,
            dup,
            t.seed,
            u.cos_eps_xt,
            c.cos_eps_xt,
            u.cos_diff_negx,
            c.cos_diff_negx,
            u.sq_diff,
            c.sq_diff
        ]);
    }

    let mut fig3 = Table::new(&["cond_id", "dup_factor", "g", "mem_score", "sim_train", "sim_generate", "memorized"]);
    let mut fig9 = Table::new(&["cond_id", "dup_factor", "g", "mem_score", "m1", "m2", "m3"]);
    let mut fig6 = Table::new(&["cond_id", "g", "step", "t", "trace"]);
    let mut fig7 = Table::new(&["cond_id", "g", "step", "t", "pc1_alignment", "degenerate"]);
    let mut fig8 = Table::new(&["cond_id", "g", "step", "t", "w0", "w_t", "w0_final", "w_t_final", "sched_w0", "sched_w_t"]);
    let mut fig11 = Table::new(&["cond_id", "g", "step", "t", "k_ratio", "x0_cos", "x0_sq_l2"]);
    for r in &report.rows {
        fig3.row(cells![r.cond_id, r.dup_factor, r.g, r.mem_score, r.sim_train, r.sim_generate, u8::from(r.memorized)]);
        fig9.row(cells![r.cond_id, r.dup_factor, r.g, r.mem_score, r.m1, r.m2, r.m3]);
        for (i, p) in r.series.iter().enumerate() {
            fig6.row(cells![r.cond_id, r.g, i, p.t, p.trace]);
            let pc1 = p.pc1.map_or_else(|| "nan".to_string(), |v| v.to_string());
            fig7.row(&[r.cond_id.to_string(), r.g.to_string(), i.to_string(), p.t.to_string(), pc1, u8::from(p.pc1_degenerate).to_string()]);
            fig8.row(cells![r.cond_id, r.g, i, p.t, p.w0, p.w_t, p.w0_final, p.w_t_final, p.sched_w0, p.sched_w_t]);
            fig11.row(cells![r.cond_id, r.g, i, p.t, p.k_ratio, p.x0_cos, p.x0_sq_l2]);
        }
    }

    let mut fig10 = Table::new(&["cond_id", "g", "seed", "step", "t", "pc1_coord"]);
    for r in &report.rows {
        let group: Vec<&Trajectory> = finite.iter().copied().filter(|t| t.cond_id == r.cond_id && t.g == r.g).collect();
        if group.len() < 2 {
            continue;
        }
        if let Some(coords) = latent_flow(&group, dataset.train_x(r.cond_id), power)? {
            for (t, cs) in group.iter().zip(coords) {
                for (i, c) in cs.iter().enumerate() {
                    let ts = t.grid.get(i).copied().unwrap_or(0);
                    fig10.row(cells![r.cond_id, r.g, t.seed, i, ts, c]);
                }
            }
        }
    }

    let mut written = Vec::new();
    for (name, table) in [
        ("fig01_x0_geometry.tsv", fig1),
        ("fig03_guidance_scores.tsv", fig3),
        ("fig04_prediction_geometry.tsv", fig4),
        ("fig06_covariance_trace.tsv", fig6),
        ("fig07_pc1_alignment.tsv", fig7),
        ("fig08_decomposition.tsv", fig8),
        ("fig09_deviation.tsv", fig9),
        ("fig10_latent_flow.tsv", fig10),
        ("fig11_k_ratio.tsv", fig11),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, table.text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
