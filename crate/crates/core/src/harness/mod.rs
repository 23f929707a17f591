//! Experiment orchestration: configuration, guided sampling, trajectory
//! files, analysis into a metrics report, and plot-data output.

mod analysis;
mod config;
mod plots;
mod run;
mod sampler;
mod trajectory_io;
mod verify;

pub use analysis::{analyze_condition, build_report, AnalysisConfig};
pub use config::ExperimentConfig;
pub use plots::write_plot_data;
pub use run::{
    analyze_stage, build_dataset, run_experiment, sample_stage, train_stage, write_report, write_trained,
    write_trajectories, RunSummary, StageError, TrainedModel, CONFIG_FILE, CORRELATIONS_CSV, ERROR_FILE, LOSSES_FILE,
    PARAMS_FILE, PLOTS_DIR, REPORT_CSV, REPORT_JSON, TRAJECTORY_DIR,
};
pub use sampler::{sample_ensemble, sample_trajectory, Precision, SamplerKind, SamplingSpec};
pub use trajectory_io::{
    decode_trajectory, dump_trajectory, encode_trajectory, load_trajectory, load_trajectory_dir, trajectory_file_name,
    trajectory_file_size, TRAJECTORY_MAGIC, TRAJECTORY_VERSION,
};
pub use verify::{
    ddpm_chain, decomposition_exactness, gradient_check, identity_suite, loss_equivalence, overestimation, CheckResult,
};
