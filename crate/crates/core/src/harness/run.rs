use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::analysis::{analyze_condition, build_report};
use super::config::ExperimentConfig;
use super::plots::write_plot_data;
use super::sampler::sample_ensemble;
use super::trajectory_io::{dump_trajectory, trajectory_file_name};
use crate::diagnostics::{MetricsReport, Trajectory};
use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};
use crate::schedule::{InferenceGrid, Schedule};
use crate::toy_model::{
    evaluate_loss, net_config, save_params, train, DenoiserParams, ToyDataset,
};

pub const PARAMS_FILE: &str = "params.mlpw";
pub const LOSSES_FILE: &str = "losses.tsv";
pub const CONFIG_FILE: &str = "config.txt";
pub const TRAJECTORY_DIR: &str = "trajectories";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSON: &str = "report.json";
pub const CORRELATIONS_CSV: &str = "correlations.csv";
pub const PLOTS_DIR: &str = "plots";
pub const ERROR_FILE: &str = "error.json";

/// Seed of the held-out noise draw used to compare losses before and after training.
const EVAL_SEED: u64 = 0xe7a1;
const EVAL_DRAWS: usize = 20;

/// A failed pipeline stage, rendered as a one-line JSON record.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} stage failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    status: &'a str,
    stage: &'a str,
    kind: &'a str,
    message: String,
}

impl StageError {
    pub fn to_json_line(&self) -> String {
        let rec = ErrorRecord { status: "error", stage: self.stage, kind: self.error.kind(), message: self.error.to_string() };
        serde_json::to_string(&rec).expect("error record serializes")
    }
}

pub(crate) trait StageContext<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub dataset: ToyDataset,
    pub schedule: Schedule,
    pub params: DenoiserParams,
    pub losses: Vec<f64>,
    /// Held-out conditional loss of the initial and trained weights.
    pub initial_loss: f64,
    pub final_loss: f64,
}

pub fn build_dataset(cfg: &ExperimentConfig) -> Result<ToyDataset> {
    let dataset = ToyDataset::generate(&cfg.dataset)?;
    dataset.check_contrast(cfg.heavy_dup)?;
    Ok(dataset)
}

/// Builds the dataset and trains the denoiser.
pub fn train_stage(cfg: &ExperimentConfig) -> Result<TrainedModel> {
    let schedule = cfg.schedule.build()?;
    let dataset = build_dataset(cfg)?;
    let outcome = train(&dataset, &schedule, &cfg.train)?;
    let init = DenoiserParams::init(
        net_config(&dataset, &schedule, &cfg.train.arch),
        &mut ChaCha8Rng::seed_from_u64(cfg.train.seed),
    )?;
    let initial_loss = evaluate_loss(&init, &dataset, &schedule, EVAL_SEED, EVAL_DRAWS)?;
    let final_loss = evaluate_loss(&outcome.params, &dataset, &schedule, EVAL_SEED, EVAL_DRAWS)?;
    Ok(TrainedModel { dataset, schedule, params: outcome.params, losses: outcome.losses, initial_loss, final_loss })
}

/// Samples every (condition, g, seed) trajectory, ordered by condition, then g, then seed.
pub fn sample_stage<P: NoisePredictor + ?Sized>(
    cfg: &ExperimentConfig,
    schedule: &Schedule,
    predictor: &P,
    num_conds: usize,
) -> Result<Vec<Trajectory>> {
    let grid = InferenceGrid::subsample(schedule.train_steps(), cfg.sampling.infer_steps)?;
    let seeds = cfg.sampling.seed_list();
    let mut out = Vec::with_capacity(num_conds * cfg.sampling.guidance.len() * seeds.len());
    for cond in 0..num_conds {
        for &g in &cfg.sampling.guidance {
            out.extend(sample_ensemble(
                predictor,
                schedule,
                &grid,
                cond,
                g,
                &seeds,
                cfg.sampling.sampler,
                cfg.sampling.precision,
            )?);
        }
    }
    Ok(out)
}

/// Groups trajectories by (condition, g) and computes the report.
pub fn analyze_stage(
    cfg: &ExperimentConfig,
    dataset: &ToyDataset,
    schedule: &Schedule,
    trajs: &[Trajectory],
) -> Result<MetricsReport> {
    let mut keys: Vec<(usize, f64)> = trajs.iter().map(|t| (t.cond_id, t.g)).collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys.dedup();
    let mut rows = Vec::with_capacity(keys.len());
    for (cond, g) in keys {
        if cond >= dataset.num_conds() {
            return Err(Error::ConditionOutOfRange { cond, num_conds: dataset.num_conds() });
        }
        let mut group: Vec<Trajectory> = trajs.iter().filter(|t| t.cond_id == cond && t.g == g).cloned().collect();
        group.sort_by_key(|t| t.seed);
        rows.push(analyze_condition(&group, dataset.train_x(cond), dataset.dup_factor(cond), schedule, &cfg.analysis)?);
    }
    let grid = trajs.first().map(|t| t.grid.clone()).unwrap_or_default();
    Ok(build_report(rows, &grid, &cfg.analysis))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_trained(dir: &Path, model: &TrainedModel) -> Result<()> {
    ensure_dir(dir)?;
    save_params(&model.params, &dir.join(PARAMS_FILE))?;
    let mut text = String::from("step\tloss\n");
    for (i, l) in model.losses.iter().enumerate() {
        text.push_str(&format!("{i}\t{l}\n"));
    }
    write(&dir.join(LOSSES_FILE), &text)
}

pub fn write_trajectories(dir: &Path, trajs: &[Trajectory]) -> Result<()> {
    ensure_dir(dir)?;
    for t in trajs {
        dump_trajectory(t, &dir.join(trajectory_file_name(t.cond_id, t.g, t.seed)))?;
    }
    Ok(())
}

pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    ensure_dir(dir)?;
    write(&dir.join(REPORT_CSV), &report.to_csv())?;
    write(&dir.join(REPORT_JSON), &report.to_json()?)?;
    write(&dir.join(CORRELATIONS_CSV), &report.correlations_csv())
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: MetricsReport,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_steps: usize,
    pub out_dir: PathBuf,
}

fn run_inner(cfg: &ExperimentConfig) -> std::result::Result<RunSummary, StageError> {
    let dir = &cfg.out_dir;
    cfg.validate().stage("config")?;
    ensure_dir(dir).stage("config")?;
    write(&dir.join(CONFIG_FILE), &cfg.to_text()).stage("config")?;

    let model = train_stage(cfg).stage("train")?;
    write_trained(dir, &model).stage("train")?;

    let trajs = sample_stage(cfg, &model.schedule, &model.params, model.dataset.num_conds()).stage("sample")?;
    if cfg.save_trajectories {
        write_trajectories(&dir.join(TRAJECTORY_DIR), &trajs).stage("sample")?;
    }

    let report = analyze_stage(cfg, &model.dataset, &model.schedule, &trajs).stage("analyze")?;
    write_report(dir, &report).stage("report")?;
    write_plot_data(&dir.join(PLOTS_DIR), &report, &trajs, &model.dataset, &model.schedule, &cfg.analysis.power)
        .stage("report")?;
    Ok(RunSummary {
        report,
        initial_loss: model.initial_loss,
        final_loss: model.final_loss,
        train_steps: model.losses.len(),
        out_dir: dir.clone(),
    })
}

/// Full pipeline: dataset, training, sampling, analysis and output files.
/// On failure an error record is written to `error.json` in the output
/// directory and artifacts from completed stages are kept.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<RunSummary, StageError> {
    let result = run_inner(cfg);
    if let Err(e) = &result {
        if cfg.out_dir.is_dir() {
            let _ = std::fs::write(cfg.out_dir.join(ERROR_FILE), e.to_json_line() + "\n");
        }
    }
    result
}
