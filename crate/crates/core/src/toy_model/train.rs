use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::ToyDataset;
use super::network::{DenoiserParams, NetConfig};
use crate::error::{Error, Result};
use crate::schedule::Schedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::InvalidArgument(format!("unknown optimizer {s:?} (expected sgd or adam)"))),
        }
    }
}

/// Network widths that are not implied by the dataset or schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub embed_dim: usize,
    pub time_features: usize,
    pub time_hidden: usize,
    pub hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { embed_dim: 16, time_features: 32, time_hidden: 64, hidden: vec![256, 256, 256] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Probability of replacing the condition with the null embedding.
    pub p_drop: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine_decay: bool,
    /// Decay of the exponential moving average of the weights; 0 keeps the raw weights.
    pub ema: f64,
    pub arch: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-2,
            p_drop: 0.1,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            grad_clip: 1.0,
            cosine_decay: false,
            ema: 0.0,
            arch: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("train config: {m}")));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return bad(format!("p_drop must lie in [0, 1), got {}", self.p_drop));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.ema) {
            return bad(format!("ema must lie in [0, 1), got {}", self.ema));
        }
        if !(self.grad_clip >= 0.0) {
            return bad("grad_clip must be non-negative".into());
        }
        Ok(())
    }
}

/// A fully specified minibatch: noised inputs, their timesteps and
/// conditions, and the noise to be predicted.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub x_t: Array2<f64>,
    pub ts: Vec<usize>,
    pub conds: Vec<Option<usize>>,
    pub eps: Array2<f64>,
}

impl TrainBatch {
    /// Draws t, ε and dropout for the given dataset rows.
    pub fn draw<R: Rng + ?Sized>(
        dataset: &ToyDataset,
        rows: &[usize],
        schedule: &Schedule,
        p_drop: f64,
        rng: &mut R,
    ) -> Self {
        let d = dataset.dim();
        let n = rows.len();
        let mut x_t = Array2::zeros((n, d));
        let mut eps = Array2::zeros((n, d));
        let mut ts = Vec::with_capacity(n);
        let mut conds = Vec::with_capacity(n);
        for (r, &idx) in rows.iter().enumerate() {
            let (x, c) = &dataset.items()[idx];
            let t = rng.random_range(1..=schedule.train_steps());
            let (a, b) = (schedule.sqrt_alpha_bar(t), schedule.sqrt_one_minus_alpha_bar(t));
            for j in 0..d {
                let e: f64 = StandardNormal.sample(rng);
                eps[[r, j]] = e;
                x_t[[r, j]] = a * x[j] + b * e;
            }
            let dropped = p_drop > 0.0 && rng.random::<f64>() < p_drop;
            ts.push(t);
            conds.push(if dropped { None } else { Some(*c) });
        }
        TrainBatch { x_t, ts, conds, eps }
    }
}

/// Mean per-coordinate squared error of the batch and its parameter gradient.
pub fn batch_loss_and_grad(params: &DenoiserParams, batch: &TrainBatch) -> Result<(f64, DenoiserParams)> {
    let (out, cache) = params.forward(batch.x_t.view(), &batch.ts, &batch.conds)?;
    let diff = out - &batch.eps;
    let count = diff.len() as f64;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / count;
    let mut grads = params.zeros_like();
    params.backward(&cache, &batch.conds, diff * (2.0 / count), &mut grads);
    Ok((loss, grads))
}

/// Mean per-coordinate squared error without gradients.
pub fn batch_loss(params: &DenoiserParams, batch: &TrainBatch) -> Result<f64> {
    let (out, _) = params.forward(batch.x_t.view(), &batch.ts, &batch.conds)?;
    let diff = out - &batch.eps;
    Ok(diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64)
}

enum OptState {
    Sgd { velocity: DenoiserParams },
    Adam { m: DenoiserParams, v: DenoiserParams, step: i32 },
}

impl OptState {
    fn new(kind: OptimizerKind, params: &DenoiserParams) -> Self {
        match kind {
            OptimizerKind::Sgd => OptState::Sgd { velocity: params.zeros_like() },
            OptimizerKind::Adam => OptState::Adam { m: params.zeros_like(), v: params.zeros_like(), step: 0 },
        }
    }

    fn apply(&mut self, params: &mut DenoiserParams, grads: &DenoiserParams, cfg: &TrainConfig, lr: f64) {
        let gs = grads.tensors();
        match self {
            OptState::Sgd { velocity } => {
                for ((p, v), g) in params.tensors_mut().into_iter().zip(velocity.tensors_mut()).zip(gs) {
                    for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                        *v = cfg.momentum * *v + g;
                        *p -= lr * *v;
                    }
                }
            }
            OptState::Adam { m, v, step } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                *step += 1;
                let c1 = 1.0 - B1.powi(*step);
                let c2 = 1.0 - B2.powi(*step);
                for (((p, m), v), g) in params.tensors_mut().into_iter().zip(m.tensors_mut()).zip(v.tensors_mut()).zip(gs) {
                    for (((p, m), v), g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *m = B1 * *m + (1.0 - B1) * g;
                        *v = B2 * *v + (1.0 - B2) * g * g;
                        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
                    }
                }
            }
        }
    }
}

fn clip(grads: &mut DenoiserParams, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.tensors().iter().flat_map(|t| t.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= k);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    /// Minibatch loss after every optimizer step.
    pub losses: Vec<f64>,
}

/// Network shape for a dataset and schedule.
pub fn net_config(dataset: &ToyDataset, schedule: &Schedule, arch: &Architecture) -> NetConfig {
    NetConfig {
        dim: dataset.dim(),
        num_conds: dataset.num_conds(),
        embed_dim: arch.embed_dim,
        time_features: arch.time_features,
        time_hidden: arch.time_hidden,
        hidden: arch.hidden.clone(),
        train_steps: schedule.train_steps(),
    }
}

/// Minibatch training of ε_θ with condition dropout. Single-threaded and
/// fully determined by the dataset and `cfg.seed`.
pub fn train(dataset: &ToyDataset, schedule: &Schedule, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot train on an empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = DenoiserParams::init(net_config(dataset, schedule, &cfg.arch), &mut rng)?;
    let mut opt = OptState::new(cfg.optimizer, &params);
    let mut ema = (cfg.ema > 0.0).then(|| params.clone());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let total = cfg.epochs * dataset.len().div_ceil(cfg.batch_size);
    let mut losses = Vec::with_capacity(total);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for rows in order.chunks(cfg.batch_size) {
            let batch = TrainBatch::draw(dataset, rows, schedule, cfg.p_drop, &mut rng);
            let (loss, mut grads) = batch_loss_and_grad(&params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step: losses.len(), loss });
            }
            clip(&mut grads, cfg.grad_clip);
            let lr = if cfg.cosine_decay {
                let progress = losses.len() as f64 / total as f64;
                cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            } else {
                cfg.learning_rate
            };
            opt.apply(&mut params, &grads, cfg, lr);
            if let Some(avg) = ema.as_mut() {
                for (a, p) in avg.tensors_mut().into_iter().zip(params.tensors()) {
                    for (a, p) in a.iter_mut().zip(p) {
                        *a = cfg.ema * *a + (1.0 - cfg.ema) * p;
                    }
                }
            }
            losses.push(loss);
        }
    }
    Ok(TrainOutcome { params: ema.unwrap_or(params), losses })
}

/// Conditional loss over `draws` fresh noise draws per dataset item.
pub fn evaluate_loss(
    params: &DenoiserParams,
    dataset: &ToyDataset,
    schedule: &Schedule,
    seed: u64,
    draws: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<usize> = (0..dataset.len()).collect();
    let mut total = 0.0;
    for _ in 0..draws {
        let batch = TrainBatch::draw(dataset, &rows, schedule, 0.0, &mut rng);
        total += batch_loss(params, &batch)?;
    }
    Ok(total / draws.max(1) as f64)
}

/// Trailing moving average with the given window; empty if too short.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || xs.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(xs.len() - window + 1);
    let mut sum: f64 = xs[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..xs.len() {
        sum += xs[i] - xs[i - window];
        out.push(sum / window as f64);
    }
    out
}
