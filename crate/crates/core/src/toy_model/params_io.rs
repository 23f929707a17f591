//! Versioned binary container for trained weights.
//!
//! Layout (little-endian): magic `MLPW`, u32 version, u32 dim, num_conds,
//! embed_dim, time_features, time_hidden, train_steps, hidden-layer count and
//! each hidden width, then every parameter tensor as f64 in canonical order.

use std::path::Path;

use ndarray::{Array1, Array2};

use super::network::{Dense, DenoiserParams, NetConfig};
use crate::binio::{read_file, write_file, Decoder, Encoder};
use crate::error::Result;

pub const PARAMS_MAGIC: &[u8; 4] = b"MLPW";
pub const PARAMS_VERSION: u32 = 1;

pub fn encode_params(params: &DenoiserParams) -> Result<Vec<u8>> {
    let c = &params.config;
    let mut e = Encoder::default();
    e.bytes(PARAMS_MAGIC);
    e.u32(PARAMS_VERSION);
    for n in [c.dim, c.num_conds, c.embed_dim, c.time_features, c.time_hidden, c.train_steps, c.hidden.len()] {
        e.len_u32(n)?;
    }
    for &h in &c.hidden {
        e.len_u32(h)?;
    }
    for t in params.tensors() {
        e.f64s(t);
    }
    Ok(e.buf)
}

pub fn decode_params(path: &Path, bytes: &[u8]) -> Result<DenoiserParams> {
    let mut d = Decoder::new(path, bytes);
    d.magic(PARAMS_MAGIC)?;
    d.version(PARAMS_VERSION)?;
    let dim = d.usize()?;
    let num_conds = d.usize()?;
    let embed_dim = d.usize()?;
    let time_features = d.usize()?;
    let time_hidden = d.usize()?;
    let train_steps = d.usize()?;
    let layers = d.usize()?;
    let hidden = (0..layers).map(|_| d.usize()).collect::<Result<Vec<_>>>()?;
    let config = NetConfig { dim, num_conds, embed_dim, time_features, time_hidden, hidden, train_steps };
    config.validate()?;

    let mat = |d: &mut Decoder, r: usize, c: usize| -> Result<Array2<f64>> {
        Ok(Array2::from_shape_vec((r, c), d.f64s(r * c)?).expect("shape matches length"))
    };
    let cond_embeddings = mat(&mut d, num_conds, embed_dim)?;
    let null_embedding = Array1::from(d.f64s(embed_dim)?);
    let time_w = mat(&mut d, time_features, time_hidden)?;
    let time_b = Array1::from(d.f64s(time_hidden)?);
    let mut widths = vec![dim + embed_dim + time_hidden];
    widths.extend(&config.hidden);
    widths.push(dim);
    let mut dense = Vec::with_capacity(widths.len() - 1);
    for w in widths.windows(2) {
        let weights = mat(&mut d, w[0], w[1])?;
        dense.push(Dense { w: weights, b: Array1::from(d.f64s(w[1])?) });
    }
    d.finish()?;
    Ok(DenoiserParams { config, cond_embeddings, null_embedding, time_w, time_b, layers: dense })
}

pub fn save_params(params: &DenoiserParams, path: &Path) -> Result<()> {
    write_file(path, &encode_params(params)?)
}

pub fn load_params(path: &Path) -> Result<DenoiserParams> {
    decode_params(path, &read_file(path)?)
}
