//! Binary trajectory container.
//!
//! Layout (little-endian): magic `MLTJ`, u32 version, u32 dim, u32 grid
//! length n, n u32 timesteps, u64 seed, u32 cond_id, f64 g, then f64 arrays:
//! the initial latent, the n latents after each step, and n prediction
//! triples (unconditional, conditional, guided).

use std::path::Path;

use crate::binio::{read_file, write_file, Decoder, Encoder};
use crate::diagnostics::Trajectory;
use crate::diffusion::GuidedPrediction;
use crate::error::{Error, Result};
use crate::vector::Vector;

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"MLTJ";
pub const TRAJECTORY_VERSION: u32 = 1;

/// Byte length of a trajectory file with dimension `dim` and `n` grid steps.
pub fn trajectory_file_size(dim: usize, n: usize) -> usize {
    36 + 4 * n + 8 * dim * (1 + 4 * n)
}

pub fn encode_trajectory(traj: &Trajectory) -> Result<Vec<u8>> {
    traj.validate()?;
    let mut e = Encoder::default();
    e.bytes(TRAJECTORY_MAGIC);
    e.u32(TRAJECTORY_VERSION);
    e.len_u32(traj.dim())?;
    e.len_u32(traj.grid.len())?;
    for &t in &traj.grid {
        e.len_u32(t)?;
    }
    e.u64(traj.seed);
    e.len_u32(traj.cond_id)?;
    e.f64(traj.g);
    for l in &traj.latents {
        e.f64s(l.as_slice());
    }
    for p in &traj.preds {
        e.f64s(p.eps_uncond.as_slice());
        e.f64s(p.eps_cond.as_slice());
        e.f64s(p.eps_tilde.as_slice());
    }
    Ok(e.buf)
}

pub fn decode_trajectory(path: &Path, bytes: &[u8]) -> Result<Trajectory> {
    let mut d = Decoder::new(path, bytes);
    d.magic(TRAJECTORY_MAGIC)?;
    d.version(TRAJECTORY_VERSION)?;
    let dim = d.usize()?;
    let n = d.usize()?;
    let grid = (0..n).map(|_| d.usize()).collect::<Result<Vec<_>>>()?;
    let seed = d.u64()?;
    let cond_id = d.usize()?;
    let g = d.f64()?;
    let latents = (0..=n).map(|_| d.f64s(dim).map(Vector::new)).collect::<Result<Vec<_>>>()?;
    let mut preds = Vec::with_capacity(n);
    for _ in 0..n {
        let eps_uncond = Vector::new(d.f64s(dim)?);
        let eps_cond = Vector::new(d.f64s(dim)?);
        let eps_tilde = Vector::new(d.f64s(dim)?);
        preds.push(GuidedPrediction { eps_uncond, eps_cond, g, eps_tilde });
    }
    d.finish()?;
    let traj = Trajectory { grid, latents, preds, cond_id, g, seed };
    traj.validate()?;
    Ok(traj)
}

pub fn dump_trajectory(traj: &Trajectory, path: &Path) -> Result<()> {
    write_file(path, &encode_trajectory(traj)?)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory> {
    decode_trajectory(path, &read_file(path)?)
}

/// Canonical file name for a trajectory.
pub fn trajectory_file_name(cond_id: usize, g: f64, seed: u64) -> String {
    format!("traj_c{cond_id:03}_g{g}_s{seed}.mltj")
}

/// Loads every `.mltj` file in a directory, sorted by (cond, g, seed).
pub fn load_trajectory_dir(dir: &Path) -> Result<Vec<Trajectory>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "mltj") {
            out.push(load_trajectory(&path)?);
        }
    }
    out.sort_by(|a, b| a.cond_id.cmp(&b.cond_id).then(a.g.total_cmp(&b.g)).then(a.seed.cmp(&b.seed)));
    Ok(out)
}
