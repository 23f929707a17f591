//! Flat `section.key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored; lists are comma separated.
//! Keys not given keep their defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::analysis::AnalysisConfig;
use super::sampler::SamplingSpec;
use crate::error::{Error, Result};
use crate::schedule::ScheduleParams;
use crate::toy_model::{DatasetSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schedule: ScheduleParams,
    pub dataset: DatasetSpec,
    /// Smallest dup_factor counted as heavily duplicated.
    pub heavy_dup: usize,
    pub train: TrainConfig,
    pub sampling: SamplingSpec,
    pub analysis: AnalysisConfig,
    pub out_dir: PathBuf,
    pub save_trajectories: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schedule: ScheduleParams::default(),
            dataset: DatasetSpec { dim: 64, dup_factors: vec![1, 1, 1, 1, 8, 16, 32, 48], variants: 8, seed: 1 },
            heavy_dup: 32,
            train: TrainConfig::default(),
            sampling: SamplingSpec::default(),
            analysis: AnalysisConfig::default(),
            out_dir: PathBuf::from("memlab_out"),
            save_trajectories: true,
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config { line, message: format!("cannot parse {value:?} for {key}") })
}

fn parse_list<T: FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(line, key, v.trim())).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| Error::Config { line, message: format!("expected `key = value`, got {content:?}") })?;
            let (key, value) = (key.trim(), value.trim());
            c.set(line, key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        match key {
            "schedule.train_steps" => self.schedule.train_steps = parse(line, key, v)?,
            "schedule.beta_start" => self.schedule.beta_start = parse(line, key, v)?,
            "schedule.beta_end" => self.schedule.beta_end = parse(line, key, v)?,
            "dataset.dim" => self.dataset.dim = parse(line, key, v)?,
            "dataset.dup_factors" => self.dataset.dup_factors = parse_list(line, key, v)?,
            "dataset.variants" => self.dataset.variants = parse(line, key, v)?,
            "dataset.seed" => self.dataset.seed = parse(line, key, v)?,
            "dataset.heavy_dup" => self.heavy_dup = parse(line, key, v)?,
            "train.epochs" => self.train.epochs = parse(line, key, v)?,
            "train.batch_size" => self.train.batch_size = parse(line, key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(line, key, v)?,
            "train.p_drop" => self.train.p_drop = parse(line, key, v)?,
            "train.seed" => self.train.seed = parse(line, key, v)?,
            "train.optimizer" => self.train.optimizer = parse(line, key, v)?,
            "train.momentum" => self.train.momentum = parse(line, key, v)?,
            "train.grad_clip" => self.train.grad_clip = parse(line, key, v)?,
            "train.cosine_decay" => self.train.cosine_decay = parse(line, key, v)?,
            "train.ema" => self.train.ema = parse(line, key, v)?,
            "model.embed_dim" => self.train.arch.embed_dim = parse(line, key, v)?,
            "model.time_features" => self.train.arch.time_features = parse(line, key, v)?,
            "model.time_hidden" => self.train.arch.time_hidden = parse(line, key, v)?,
            "model.hidden" => self.train.arch.hidden = parse_list(line, key, v)?,
            "sampling.seeds" => self.sampling.seeds = parse(line, key, v)?,
            "sampling.base_seed" => self.sampling.base_seed = parse(line, key, v)?,
            "sampling.infer_steps" => self.sampling.infer_steps = parse(line, key, v)?,
            "sampling.g" => self.sampling.guidance = parse_list(line, key, v)?,
            "sampling.sampler" => self.sampling.sampler = parse(line, key, v)?,
            "sampling.precision" => self.sampling.precision = parse(line, key, v)?,
            "analysis.threshold" => self.analysis.threshold = parse(line, key, v)?,
            "analysis.checkpoint_fraction" => self.analysis.checkpoint_fraction = parse(line, key, v)?,
            "analysis.early_fraction" => self.analysis.early_fraction = parse(line, key, v)?,
            "analysis.power_tolerance" => self.analysis.power.tolerance = parse(line, key, v)?,
            "analysis.power_seed" => self.analysis.power.seed = parse(line, key, v)?,
            "output.dir" => self.out_dir = PathBuf::from(v),
            "output.save_trajectories" => self.save_trajectories = parse(line, key, v)?,
            _ => return Err(Error::Config { line, message: format!("unknown key {key:?}") }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.build()?;
        if self.dataset.dup_factors.is_empty() {
            return Err(Error::InvalidArgument("dataset.dup_factors is empty".into()));
        }
        if self.sampling.infer_steps > self.schedule.train_steps {
            return Err(Error::InvalidArgument(format!(
                "sampling.infer_steps {} exceeds schedule.train_steps {}",
                self.sampling.infer_steps, self.schedule.train_steps
            )));
        }
        self.train.validate()?;
        self.sampling.validate()?;
        self.analysis.validate()
    }

    /// Renders the configuration in the same format [`parse_str`](Self::parse_str) reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("schedule.train_steps", self.schedule.train_steps.to_string());
        kv("schedule.beta_start", self.schedule.beta_start.to_string());
        kv("schedule.beta_end", self.schedule.beta_end.to_string());
        kv("dataset.dim", self.dataset.dim.to_string());
        kv("dataset.dup_factors", join(&self.dataset.dup_factors));
        kv("dataset.variants", self.dataset.variants.to_string());
        kv("dataset.seed", self.dataset.seed.to_string());
        kv("dataset.heavy_dup", self.heavy_dup.to_string());
        kv("train.epochs", self.train.epochs.to_string());
        kv("train.batch_size", self.train.batch_size.to_string());
        kv("train.learning_rate", self.train.learning_rate.to_string());
        kv("train.p_drop", self.train.p_drop.to_string());
        kv("train.seed", self.train.seed.to_string());
        kv("train.optimizer", format!("{:?}", self.train.optimizer).to_lowercase());
        kv("train.momentum", self.train.momentum.to_string());
        kv("train.grad_clip", self.train.grad_clip.to_string());
        kv("train.cosine_decay", self.train.cosine_decay.to_string());
        kv("train.ema", self.train.ema.to_string());
        kv("model.embed_dim", self.train.arch.embed_dim.to_string());
        kv("model.time_features", self.train.arch.time_features.to_string());
        kv("model.time_hidden", self.train.arch.time_hidden.to_string());
        kv("model.hidden", join(&self.train.arch.hidden));
        kv("sampling.seeds", self.sampling.seeds.to_string());
        kv("sampling.base_seed", self.sampling.base_seed.to_string());
        kv("sampling.infer_steps", self.sampling.infer_steps.to_string());
        kv("sampling.g", join(&self.sampling.guidance));
        kv("sampling.sampler", self.sampling.sampler.as_str().to_string());
        kv("sampling.precision", self.sampling.precision.as_str().to_string());
        kv("analysis.threshold", self.analysis.threshold.to_string());
        kv("analysis.checkpoint_fraction", self.analysis.checkpoint_fraction.to_string());
        kv("analysis.early_fraction", self.analysis.early_fraction.to_string());
        kv("analysis.power_tolerance", self.analysis.power.tolerance.to_string());
        kv("analysis.power_seed", self.analysis.power.seed.to_string());
        kv("output.dir", self.out_dir.display().to_string());
        kv("output.save_trajectories", self.save_trajectories.to_string());
        s
    }
}
