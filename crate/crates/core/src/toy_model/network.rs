use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::NoisePredictor;
use crate::error::{check_dims, Error, Result};
use crate::vector::Vector;

/// Shape of the conditional noise predictor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub dim: usize,
    pub num_conds: usize,
    pub embed_dim: usize,
    /// Number of sinusoidal timestep features (even).
    pub time_features: usize,
    /// Width of the learned projection of the timestep features.
    pub time_hidden: usize,
    pub hidden: Vec<usize>,
    pub train_steps: usize,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("network config: {m}")));
        if self.dim == 0 || self.num_conds == 0 || self.embed_dim == 0 || self.time_hidden == 0 {
            return bad("sizes must be positive");
        }
        if self.time_features == 0 || self.time_features % 2 != 0 {
            return bad("time_features must be positive and even");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("need at least one nonzero hidden layer");
        }
        if self.train_steps == 0 {
            return bad("train_steps must be positive");
        }
        Ok(())
    }

    fn input_width(&self) -> usize {
        self.dim + self.embed_dim + self.time_hidden
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_width()];
        widths.extend(&self.hidden);
        widths.push(self.dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// in × out
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Weights of ε_θ: `x_t` plus an MLP over `[x_t | e_c | τ(t)]`, where τ is a
/// SiLU projection of sinusoidal timestep features and `e_c` is a learned
/// embedding row, or the separate null embedding for the unconditional path.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: NetConfig,
    pub cond_embeddings: Array2<f64>,
    pub null_embedding: Array1<f64>,
    pub time_w: Array2<f64>,
    pub time_b: Array1<f64>,
    pub layers: Vec<Dense>,
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let sig = 1.0 / (1.0 + (-z).exp());
    sig * (1.0 + z * (1.0 - sig))
}

fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * scale
    })
}

/// Forward activations kept for the backward pass.
pub(crate) struct Cache {
    feats: Array2<f64>,
    time_pre: Array2<f64>,
    /// Inputs to each dense layer (the first is the concatenated input).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
}

impl DenoiserParams {
    /// Random initialization with 1/sqrt(fan_in) scaling; the output layer
    /// starts small so the initial prediction is close to `x_t`.
    pub fn init<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let cond_embeddings = gaussian(config.num_conds, config.embed_dim, 1.0, rng);
        let null_embedding = gaussian(1, config.embed_dim, 1.0, rng).row(0).to_owned();
        let time_w = gaussian(config.time_features, config.time_hidden, 1.0 / (config.time_features as f64).sqrt(), rng);
        let time_b = Array1::zeros(config.time_hidden);
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(i, &(fan_in, fan_out))| {
                let scale = if i == last { 0.1 } else { 1.0 } / (fan_in as f64).sqrt();
                Dense { w: gaussian(fan_in, fan_out, scale, rng), b: Array1::zeros(fan_out) }
            })
            .collect();
        Ok(DenoiserParams { config, cond_embeddings, null_embedding, time_w, time_b, layers })
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Flat views of every parameter tensor in the canonical order:
    /// condition embeddings, null embedding, time projection, then dense layers.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![
            self.cond_embeddings.as_slice().unwrap(),
            self.null_embedding.as_slice().unwrap(),
            self.time_w.as_slice().unwrap(),
            self.time_b.as_slice().unwrap(),
        ];
        for l in &self.layers {
            out.push(l.w.as_slice().unwrap());
            out.push(l.b.as_slice().unwrap());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            self.cond_embeddings.as_slice_mut().unwrap(),
            self.null_embedding.as_slice_mut().unwrap(),
            self.time_w.as_slice_mut().unwrap(),
            self.time_b.as_slice_mut().unwrap(),
        ];
        for l in &mut self.layers {
            out.push(l.w.as_slice_mut().unwrap());
            out.push(l.b.as_slice_mut().unwrap());
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (k, t) in self.tensors().iter().enumerate() {
            if index < t.len() {
                return (k, index);
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter at a flat index across all tensors.
    pub fn get_flat(&self, index: usize) -> f64 {
        let (k, i) = self.locate(index);
        self.tensors()[k][i]
    }

    pub fn set_flat(&mut self, index: usize, value: f64) {
        let (k, i) = self.locate(index);
        self.tensors_mut()[k][i] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn time_features(&self, ts: &[usize]) -> Array2<f64> {
        let half = self.config.time_features / 2;
        let mut f = Array2::zeros((ts.len(), self.config.time_features));
        for (row, &t) in ts.iter().enumerate() {
            for k in 0..half {
                let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
                let arg = t as f64 * freq;
                f[[row, k]] = arg.sin();
                f[[row, half + k]] = arg.cos();
            }
        }
        f
    }

    fn check_inputs(&self, ts: &[usize], conds: &[Option<usize>]) -> Result<()> {
        for &t in ts {
            if t == 0 || t > self.config.train_steps {
                return Err(Error::TimestepOutOfRange { t, max: self.config.train_steps });
            }
        }
        for &c in conds.iter().flatten() {
            if c >= self.config.num_conds {
                return Err(Error::ConditionOutOfRange { cond: c, num_conds: self.config.num_conds });
            }
        }
        Ok(())
    }

    /// Batched forward pass. Rows of `x_t` pair with `ts` and `conds`.
    pub(crate) fn forward(
        &self,
        x_t: ArrayView2<f64>,
        ts: &[usize],
        conds: &[Option<usize>],
    ) -> Result<(Array2<f64>, Cache)> {
        let n = x_t.nrows();
        if ts.len() != n || conds.len() != n {
            return Err(Error::InvalidArgument("batch columns disagree in length".into()));
        }
        check_dims(self.config.dim, x_t.ncols())?;
        self.check_inputs(ts, conds)?;

        let feats = self.time_features(ts);
        let time_pre = feats.dot(&self.time_w) + &self.time_b;
        let time_act = time_pre.mapv(silu);
        let mut emb = Array2::zeros((n, self.config.embed_dim));
        for (row, c) in conds.iter().enumerate() {
            let src = match c {
                Some(c) => self.cond_embeddings.row(*c),
                None => self.null_embedding.view(),
            };
            emb.row_mut(row).assign(&src);
        }
        let mut h = concatenate![Axis(1), x_t, emb, time_act];
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.w) + &layer.b;
            inputs.push(h);
            if i == last {
                h = z + &x_t;
            } else {
                h = z.mapv(silu);
                pre.push(z);
            }
        }
        Ok((h, Cache { feats, time_pre, inputs, pre }))
    }

    /// Accumulates parameter gradients for an upstream gradient on the output.
    pub(crate) fn backward(&self, cache: &Cache, conds: &[Option<usize>], d_out: Array2<f64>, grads: &mut Self) {
        let mut g = d_out;
        for i in (0..self.layers.len()).rev() {
            let input = &cache.inputs[i];
            grads.layers[i].w += &input.t().dot(&g);
            grads.layers[i].b += &g.sum_axis(Axis(0));
            let mut gh = g.dot(&self.layers[i].w.t());
            if i > 0 {
                gh.zip_mut_with(&cache.pre[i - 1], |a, &z| *a *= silu_grad(z));
            }
            g = gh;
        }
        let (d, e) = (self.config.dim, self.config.embed_dim);
        let d_emb = g.slice(s![.., d..d + e]);
        for (row, c) in conds.iter().enumerate() {
            let dst = match c {
                Some(c) => grads.cond_embeddings.row_mut(*c),
                None => grads.null_embedding.view_mut(),
            };
            let mut dst = dst;
            dst += &d_emb.row(row);
        }
        let mut d_time = g.slice(s![.., d + e..]).to_owned();
        d_time.zip_mut_with(&cache.time_pre, |a, &z| *a *= silu_grad(z));
        grads.time_w += &cache.feats.t().dot(&d_time);
        grads.time_b += &d_time.sum_axis(Axis(0));
    }

    /// ε_θ for a single latent.
    pub fn predict(&self, x_t: &Vector, t: usize, cond: Option<usize>) -> Result<Vector> {
        Ok(self.predict_batch(std::slice::from_ref(x_t), t, cond)?.remove(0))
    }
}

pub(crate) fn stack(xs: &[Vector], dim: usize) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((xs.len(), dim));
    for (mut row, x) in m.rows_mut().into_iter().zip(xs) {
        check_dims(dim, x.dim())?;
        row.assign(&ndarray::ArrayView1::from(x.as_slice()));
    }
    Ok(m)
}

pub(crate) fn unstack(m: &Array2<f64>) -> Vec<Vector> {
    m.rows().into_iter().map(|r| Vector::new(r.to_vec())).collect()
}

impl NoisePredictor for DenoiserParams {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn predict_batch(&self, xs: &[Vector], t: usize, cond: Option<usize>) -> Result<Vec<Vector>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let x = stack(xs, self.config.dim)?;
        let (out, _) = self.forward(x.view(), &vec![t; xs.len()], &vec![cond; xs.len()])?;
        Ok(unstack(&out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> NetConfig {
        NetConfig { dim: 5, num_conds: 3, embed_dim: 4, time_features: 6, time_hidden: 5, hidden: vec![7, 6], train_steps: 50 }
    }

    #[test]
    fn deterministic_and_shaped() {
        let p = DenoiserParams::init(tiny_config(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = Vector::new(vec![0.1, -0.2, 0.3, 0.0, 1.0]);
        let a = p.predict(&x, 10, Some(2)).unwrap();
        let b = p.predict(&x, 10, Some(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 5);
        assert_ne!(p.predict(&x, 10, None).unwrap(), a);
        let batch = p.predict_batch(&[x.clone(), x.scale(2.0)], 10, Some(2)).unwrap();
        assert_eq!(batch[0], a);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = DenoiserParams::init(tiny_config(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let x = Vector::zeros(5);
        assert!(matches!(p.predict(&x, 1, Some(3)), Err(Error::ConditionOutOfRange { cond: 3, num_conds: 3 })));
        assert!(matches!(p.predict(&x, 0, None), Err(Error::TimestepOutOfRange { .. })));
        assert!(matches!(p.predict(&x, 51, None), Err(Error::TimestepOutOfRange { .. })));
        assert!(matches!(p.predict(&Vector::zeros(4), 1, None), Err(Error::DimensionMismatch { .. })));
        let mut bad = tiny_config();
        bad.time_features = 5;
        assert!(DenoiserParams::init(bad, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn flat_indexing_covers_every_tensor() {
        let mut p = DenoiserParams::init(tiny_config(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let n = p.num_params();
        let c = tiny_config();
        let expected = c.num_conds * c.embed_dim
            + c.embed_dim
            + c.time_features * c.time_hidden
            + c.time_hidden
            + (14 * 7 + 7)
            + (7 * 6 + 6)
            + (6 * 5 + 5);
        assert_eq!(n, expected);
        p.set_flat(n - 1, 42.0);
        assert_eq!(p.get_flat(n - 1), 42.0);
        assert_eq!(p.layers.last().unwrap().b[4], 42.0);
        p.set_flat(0, -1.0);
        assert_eq!(p.cond_embeddings[[0, 0]], -1.0);
    }

    #[test]
    fn null_embedding_is_separate_storage() {
        let mut p = DenoiserParams::init(tiny_config(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let before = p.cond_embeddings.clone();
        p.null_embedding.fill(9.0);
        assert_eq!(p.cond_embeddings, before);
    }
}
