use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use memlab::diagnostics::{MetricsReport, CORRELATED_METRICS};
use memlab::harness::{
    analyze_stage, build_dataset, identity_suite, load_trajectory_dir, run_experiment, sample_stage, train_stage,
    write_plot_data, write_report, write_trained, write_trajectories, ExperimentConfig, Precision, SamplerKind,
    StageError, PARAMS_FILE, PLOTS_DIR, REPORT_JSON, TRAJECTORY_DIR,
};
use memlab::toy_model::load_params;
use memlab::Error;

#[derive(Parser)]
#[command(name = "memlab", version, about = "Memorization dynamics of guided diffusion on a toy denoiser")]
struct Cli {
    /// Experiment config (flat `section.key = value` file); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the training seed and the base sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["ddim", "ddpm"])]
    sampler: Option<String>,
    #[arg(long, global = true, value_parser = ["f64", "f32"])]
    precision: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the dataset and train the denoiser; writes the params file.
    Train,
    /// Sample guided trajectories for every condition, g and seed.
    Sample {
        /// Params file; defaults to <out>/params.mlpw.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Compute diagnostics from trajectory files; writes the CSV report and plot data.
    Analyze {
        /// Trajectory directory; defaults to <out>/trajectories.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Print the aggregate summary and Pearson table of a report.
    Report {
        /// Report JSON; defaults to <out>/report.json.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the algebraic identity checks.
    Verify,
    /// Train, sample, analyze and report in one go.
    Run,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, StageError> {
    let wrap = |error| StageError { stage: "config", error };
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).map_err(wrap)?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
        cfg.sampling.base_seed = seed;
    }
    if let Some(s) = &cli.sampler {
        cfg.sampling.sampler = s.parse::<SamplerKind>().map_err(wrap)?;
    }
    if let Some(p) = &cli.precision {
        cfg.sampling.precision = p.parse::<Precision>().map_err(wrap)?;
    }
    cfg.validate().map_err(wrap)?;
    Ok(cfg)
}

fn at(stage: &'static str) -> impl Fn(Error) -> StageError {
    move |error| StageError { stage, error }
}

fn or_default(p: &Option<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| dir.join(name))
}

fn print_summary(report: &MetricsReport) {
    let mut gs: Vec<f64> = report.rows.iter().map(|r| r.g).collect();
    gs.sort_by(f64::total_cmp);
    gs.dedup();
    println!("threshold {}  checkpoint t = {}", report.threshold, report.checkpoint_t);
    println!("{:>6} {:>6} {:>10} {:>10} {:>9}", "cond", "g", "mem_score", "memorized", "diverged");
    for r in &report.rows {
        println!("{:>6} {:>6} {:>10.4} {:>10} {:>9}", r.cond_id, r.g, r.mem_score, r.memorized, r.diverged);
    }
    for g in gs {
        let rows: Vec<_> = report.rows_at(g).collect();
        let mean = rows.iter().map(|r| r.mem_score).sum::<f64>() / rows.len() as f64;
        let memorized = rows.iter().filter(|r| r.memorized).count();
        println!("g = {g}: mean mem_score {mean:.4}, memorized {memorized}/{}", rows.len());
        for m in CORRELATED_METRICS {
            match report.correlation(g, m) {
                Some(p) => println!("  pearson({m}, mem_score) = {p:.4}"),
                None => println!("  pearson({m}, mem_score) undefined"),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<(), StageError> {
    if let Command::Verify = cli.command {
        let checks = identity_suite(0).map_err(at("verify"))?;
        let mut failed = 0;
        for c in &checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            println!("{tag} {:<24} worst {:.3e} tol {:.0e}", c.name, c.worst, c.tolerance);
            failed += usize::from(!c.passed);
        }
        if failed > 0 {
            return Err(StageError {
                stage: "verify",
                error: Error::InvalidArgument(format!("{failed} identity checks failed")),
            });
        }
        return Ok(());
    }
    let cfg = load_config(cli)?;
    let dir = cfg.out_dir.clone();
    match &cli.command {
        Command::Train => {
            let model = train_stage(&cfg).map_err(at("train"))?;
            write_trained(&dir, &model).map_err(at("train"))?;
            println!(
                "trained {} steps; held-out loss {:.5} -> {:.5}; wrote {}",
                model.losses.len(),
                model.initial_loss,
                model.final_loss,
                dir.join(PARAMS_FILE).display()
            );
        }
        Command::Sample { params } => {
            let params = load_params(&or_default(params, &dir, PARAMS_FILE)).map_err(at("sample"))?;
            let schedule = cfg.schedule.build().map_err(at("sample"))?;
            let trajs = sample_stage(&cfg, &schedule, &params, params.config.num_conds).map_err(at("sample"))?;
            let tdir = dir.join(TRAJECTORY_DIR);
            write_trajectories(&tdir, &trajs).map_err(at("sample"))?;
            println!("wrote {} trajectories to {}", trajs.len(), tdir.display());
        }
        Command::Analyze { trajectories } => {
            let trajs = load_trajectory_dir(&or_default(trajectories, &dir, TRAJECTORY_DIR)).map_err(at("analyze"))?;
            if trajs.is_empty() {
                return Err(StageError { stage: "analyze", error: Error::InvalidArgument("no trajectory files found".into()) });
            }
            let schedule = cfg.schedule.build().map_err(at("analyze"))?;
            let dataset = build_dataset(&cfg).map_err(at("analyze"))?;
            let report = analyze_stage(&cfg, &dataset, &schedule, &trajs).map_err(at("analyze"))?;
            write_report(&dir, &report).map_err(at("report"))?;
            write_plot_data(&dir.join(PLOTS_DIR), &report, &trajs, &dataset, &schedule, &cfg.analysis.power)
                .map_err(at("report"))?;
            println!("analyzed {} trajectories into {} report rows", trajs.len(), report.rows.len());
        }
        Command::Report { report } => {
            let path = or_default(report, &dir, REPORT_JSON);
            let text = std::fs::read_to_string(&path).map_err(|e| StageError { stage: "report", error: Error::Io { path: path.clone(), source: e } })?;
            let report = MetricsReport::from_json(&text).map_err(at("report"))?;
            print_summary(&report);
        }
        Command::Run => {
            let summary = run_experiment(&cfg)?;
            println!(
                "trained {} steps; held-out loss {:.5} -> {:.5}",
                summary.train_steps, summary.initial_loss, summary.final_loss
            );
            print_summary(&summary.report);
            println!("outputs in {}", summary.out_dir.display());
        }
        Command::Verify => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
