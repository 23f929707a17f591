//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The exact criteria (1-5 and determinism) gate the exit code. The
//! statistical criteria on the trained model (6-10) are reported but do not
//! fail the process.
//!
//! Reference values are recomputed here from first principles (schedule
//! products, projections, central differences, hand-rolled statistics) rather
//! than read back from the library.

use std::path::{Path, PathBuf};
use std::time::Instant;

use memlab::diagnostics::{decompose, ConditionMetrics, MetricsReport};
use memlab::diffusion::{ddpm_step, forward_sample, loss_x0_form, predict_x0, training_loss};
use memlab::harness::{load_trajectory_dir, run_experiment, ExperimentConfig, REPORT_CSV, TRAJECTORY_DIR};
use memlab::oracle::{
    closed_form_xt, ddpm_memorized_xt, ddpm_noise_coefficient, guided_first_step_x0, DecompositionMode,
    MemorizedOracle, OracleSpec,
};
use memlab::toy_model::{batch_loss, batch_loss_and_grad, net_config, Architecture, DatasetSpec, DenoiserParams, ToyDataset, TrainBatch};
use memlab::{InferenceGrid, Schedule, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const G_HI: f64 = 7.5;
const G_LO: f64 = 1.0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// √ᾱ_t and √(1−ᾱ_t) rebuilt from the linear β endpoints.
struct RefSchedule {
    alpha_bar: Vec<f64>,
    beta: Vec<f64>,
}

impl RefSchedule {
    fn linear(t_max: usize, lo: f64, hi: f64) -> Self {
        let mut beta = vec![0.0];
        let mut alpha_bar = vec![1.0];
        for t in 1..=t_max {
            let b = lo + (hi - lo) * (t - 1) as f64 / (t_max - 1) as f64;
            beta.push(b);
            alpha_bar.push(alpha_bar[t - 1] * (1.0 - b));
        }
        RefSchedule { alpha_bar, beta }
    }
}

fn gaussian(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    Vector::standard_normal(dim, rng).into_inner()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn centered_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let ca: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let cb: Vec<f64> = b.iter().map(|v| v - mb).collect();
    dot(&ca, &cb) / (dot(&ca, &ca) * dot(&cb, &cb)).sqrt()
}

fn timed(limit_s: f64, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    let secs = start.elapsed().as_secs_f64();
    o.detail = format!("{}; {secs:.2}s (limit {limit_s}s)", o.detail);
    o.passed &= secs < limit_s;
    o
}

fn loss_equivalence(s: &Schedule) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let r = RefSchedule::linear(1000, 1e-4, 0.02);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random_range(1..=1000);
        let x = Vector::new(gaussian(64, &mut rng));
        let eps = Vector::new(gaussian(64, &mut rng));
        let eps_hat = Vector::new(gaussian(64, &mut rng));
        let x_t = forward_sample(&x, t, &eps, s).unwrap();
        let x0_hat = predict_x0(&x_t, &eps_hat, t, s).unwrap();
        let a = training_loss(&eps, &eps_hat).unwrap();
        let b = loss_x0_form(&x0_hat, &x, t, s).unwrap();
        // ‖ε − ε̂‖² written through the clean-space error and the reference schedule.
        let ab = r.alpha_bar[t];
        let manual: f64 = ab / (1.0 - ab)
            * x0_hat.iter().zip(x.iter()).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
        worst = worst.max((a - b).abs() / a).max((a - manual).abs() / a);
    }
    outcome(worst <= 1e-9, format!("worst relative gap {worst:.2e} over 1000 draws (tol 1e-9)"))
}

fn decomposition_exactness(s: &Schedule) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let r = RefSchedule::linear(1000, 1e-4, 0.02);
    let grid = InferenceGrid::subsample(1000, 50).unwrap();
    let (mut werr, mut resid) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let x = Vector::new(gaussian(64, &mut rng));
        let x_init = Vector::new(gaussian(64, &mut rng));
        for &t in grid.steps() {
            let x_t = closed_form_xt(&x, &x_init, t, s, DecompositionMode::Approximate).unwrap();
            let d = decompose(&x_t, &x, &x_init).unwrap();
            werr = werr
                .max((d.w0 - r.alpha_bar[t].sqrt()).abs())
                .max((d.w_t - (1.0 - r.alpha_bar[t]).sqrt()).abs());
            resid = resid.max(d.residual_norm);
        }
    }
    outcome(
        werr <= 1e-8 && resid <= 1e-10,
        format!("weight error {werr:.2e} (tol 1e-8), residual {resid:.2e} (tol 1e-10)"),
    )
}

fn overestimation(s: &Schedule) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let x = gaussian(64, &mut rng);
        let raw = gaussian(64, &mut rng);
        let k = dot(&raw, &x) / dot(&x, &x);
        let x_init: Vec<f64> = raw.iter().zip(&x).map(|(r, v)| r - k * v).collect();
        let spec = OracleSpec::exact(Vector::new(x.clone()), s);
        for g in [0.5, 1.0, 2.0, 7.5] {
            let x0 = guided_first_step_x0(&Vector::new(x_init.clone()), &spec, g, s).unwrap();
            let along = dot(x0.as_slice(), &x) / dot(&x, &x);
            worst = worst.max((along - g).abs());
        }
    }
    outcome(worst <= 1e-10, format!("max |coef − g| {worst:.2e} for g in {{0.5,1,2,7.5}} (tol 1e-10)"))
}

fn ddpm_decomposition(s: &Schedule) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let r = RefSchedule::linear(1000, 1e-4, 0.02);
    let x = Vector::new(gaussian(32, &mut rng));
    let x_init = Vector::new(gaussian(32, &mut rng));
    let oracle = MemorizedOracle::new(s.clone(), vec![x.clone()]).unwrap();
    let z = Vector::zeros(32);
    let mut cur = x_init.clone();
    let mut chain = 0.0f64;
    for t in (1..=1000).rev() {
        let eps = oracle.predict_one(&cur, t, Some(0)).unwrap();
        cur = ddpm_step(&cur, &eps, t, s, &z).unwrap();
        let closed = ddpm_memorized_xt(&x, &x_init, t - 1, s, &[]).unwrap();
        for (a, b) in cur.iter().zip(closed.iter()) {
            chain = chain.max((a - b).abs());
        }
    }
    let mut coef = 0.0f64;
    for t in 1..=1000 {
        let (ab, ab_prev, beta) = (r.alpha_bar[t], r.alpha_bar[t - 1], r.beta[t]);
        coef = coef.max(((1.0 - ab) - beta - (1.0 - beta) * (1.0 - ab_prev)).abs());
        let expected = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab).sqrt();
        coef = coef.max((ddpm_noise_coefficient(t, s) - expected).abs());
    }
    outcome(
        chain <= 1e-9 && coef <= 1e-12,
        format!("chain gap {chain:.2e} (tol 1e-9), coefficient identity {coef:.2e} (tol 1e-12)"),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let schedule = Schedule::linear(200, 1e-3, 0.05).unwrap();
    let data = ToyDataset::generate(&DatasetSpec { dim: 16, dup_factors: vec![1, 1, 6], variants: 3, seed: 5 }).unwrap();
    let arch = Architecture { embed_dim: 4, time_features: 8, time_hidden: 6, hidden: vec![20, 16, 12] };
    let mut params = DenoiserParams::init(net_config(&data, &schedule, &arch), &mut rng).unwrap();
    let rows: Vec<usize> = (0..data.len()).collect();
    let batch = TrainBatch::draw(&data, &rows, &schedule, 0.25, &mut rng);
    let (_, grads) = batch_loss_and_grad(&params, &batch).unwrap();
    let h = 1e-5;
    let coords = 150;
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let i = rng.random_range(0..params.num_params());
        let orig = params.get_flat(i);
        params.set_flat(i, orig + h);
        let up = batch_loss(&params, &batch).unwrap();
        params.set_flat(i, orig - h);
        let down = batch_loss(&params, &batch).unwrap();
        params.set_flat(i, orig);
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.get_flat(i);
        worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6));
    }
    outcome(worst <= 1e-4, format!("worst relative error {worst:.2e} on {coords} coordinates (tol 1e-4)"))
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/acceptance.cfg")
}

struct Run {
    dir: PathBuf,
    cfg: ExperimentConfig,
    report: MetricsReport,
    seconds: f64,
}

fn pipeline(root: &Path, name: &str) -> Run {
    let mut cfg = ExperimentConfig::load(&config_path()).expect("acceptance config");
    cfg.out_dir = root.join(name);
    let start = Instant::now();
    let summary = run_experiment(&cfg).unwrap_or_else(|e| panic!("{}", e.to_json_line()));
    Run { dir: cfg.out_dir.clone(), cfg, report: summary.report, seconds: start.elapsed().as_secs_f64() }
}

fn rows_at(report: &MetricsReport, g: f64) -> Vec<&ConditionMetrics> {
    report.rows.iter().filter(|r| r.g == g).collect()
}

/// Memorization score recomputed from the stored final samples.
fn recomputed_score(run: &Run, cond: usize, g: f64, train_x: &[f64]) -> f64 {
    let trajs = load_trajectory_dir(&run.dir.join(TRAJECTORY_DIR)).unwrap();
    let finals: Vec<&[f64]> =
        trajs.iter().filter(|t| t.cond_id == cond && t.g == g).map(|t| t.final_sample().as_slice()).collect();
    let sim_train = mean(&finals.iter().map(|f| centered_cosine(f, train_x)).collect::<Vec<_>>());
    let mut pairs = Vec::new();
    for i in 0..finals.len() {
        for j in i + 1..finals.len() {
            pairs.push(centered_cosine(finals[i], finals[j]));
        }
    }
    0.5 * (sim_train + mean(&pairs))
}

fn emergence(run: &Run) -> Outcome {
    let threshold = run.report.threshold;
    let hi = rows_at(&run.report, G_HI);
    let max_dup = run.cfg.dataset.dup_factors.iter().copied().max().unwrap();
    let heavy = hi.iter().filter(|r| r.dup_factor >= run.cfg.heavy_dup).map(|r| r.mem_score).fold(f64::MIN, f64::max);
    let normal = hi.iter().filter(|r| r.dup_factor == 1).map(|r| r.mem_score).fold(f64::MIN, f64::max);

    let dataset = ToyDataset::generate(&run.cfg.dataset).unwrap();
    let mut recompute_gap = 0.0f64;
    for r in &hi {
        let s = recomputed_score(run, r.cond_id, G_HI, dataset.train_x(r.cond_id).as_slice());
        recompute_gap = recompute_gap.max((s - r.mem_score).abs());
    }
    let ok = run.cfg.dataset.dup_factors.len() >= 8
        && run.cfg.dataset.dup_factors.contains(&1)
        && heavy >= threshold
        && normal < threshold
        && recompute_gap < 1e-9
        && run.seconds < 600.0;
    outcome(
        ok,
        format!(
            "best heavy (dup >= {}) {heavy:.3} >= {threshold}, worst normal {normal:.3} < {threshold}; dup 1..{max_dup}; score recompute gap {recompute_gap:.1e}; run {:.0}s (limit 600s)",
            run.cfg.heavy_dup, run.seconds
        ),
    )
}

fn guidance_effect(run: &Run) -> Outcome {
    let hi = rows_at(&run.report, G_HI);
    let lo = rows_at(&run.report, G_LO);
    let mut violations = Vec::new();
    for r in hi.iter().filter(|r| r.memorized) {
        let base = lo.iter().find(|l| l.cond_id == r.cond_id).unwrap();
        if r.mem_score < base.mem_score {
            violations.push(r.cond_id);
        }
    }
    let (m_hi, m_lo) = (mean(&hi.iter().map(|r| r.mem_score).collect::<Vec<_>>()), mean(&lo.iter().map(|r| r.mem_score).collect::<Vec<_>>()));
    outcome(
        violations.is_empty() && m_hi > m_lo,
        format!(
            "memorized conds with lower score at g={G_HI}: {violations:?}; mean score {m_hi:.3} (g={G_HI}) vs {m_lo:.3} (g={G_LO})"
        ),
    )
}

fn column(rows: &[&ConditionMetrics], f: impl Fn(&ConditionMetrics) -> f64) -> Vec<f64> {
    rows.iter().map(|r| f(r)).collect()
}

fn deviation_correlation(run: &Run) -> Outcome {
    let hi = rows_at(&run.report, G_HI);
    let score = column(&hi, |r| r.mem_score);
    let p1 = pearson(&column(&hi, |r| r.m1), &score);
    let p2 = pearson(&column(&hi, |r| r.m2), &score);
    let p3 = pearson(&column(&hi, |r| r.m3), &score);
    let lib_gap = [("m1", p1), ("m2", p2), ("m3", p3)]
        .iter()
        .map(|(m, p)| (run.report.correlation(G_HI, m).unwrap_or(f64::NAN) - p).abs())
        .fold(0.0, f64::max);
    outcome(
        p1 >= 0.6 && p3 >= 0.6 && p2 >= 0.3 && lib_gap < 1e-9,
        format!("at g={G_HI}: pearson M1 {p1:.3} (>= 0.6), M2 {p2:.3} (>= 0.3), M3 {p3:.3} (>= 0.6)"),
    )
}

fn split_means(rows: &[&ConditionMetrics], f: impl Fn(&ConditionMetrics) -> f64) -> (f64, f64, usize, usize) {
    let mem: Vec<f64> = rows.iter().filter(|r| r.memorized).map(|r| f(r)).collect();
    let nor: Vec<f64> = rows.iter().filter(|r| !r.memorized).map(|r| f(r)).collect();
    (mean(&mem), mean(&nor), mem.len(), nor.len())
}

fn diversity_collapse(run: &Run) -> Outcome {
    let hi = rows_at(&run.report, G_HI);
    let (m, n, nm, nn) = split_means(&hi, |r| r.trace_mid);
    let p = pearson(&column(&hi, |r| r.trace_mid), &column(&hi, |r| r.mem_score));
    outcome(
        nm > 0 && nn > 0 && m < n && p < 0.0,
        format!(
            "t={}, g={G_HI}: mean trace memorized {m:.3} ({nm}) vs normal {n:.3} ({nn}); pearson {p:.3} (< 0)",
            run.report.checkpoint_t
        ),
    )
}

fn alignment(run: &Run) -> Outcome {
    let hi = rows_at(&run.report, G_HI);
    let (m, n, nm, nn) = split_means(&hi, |r| r.pc1_early);
    outcome(
        nm > 0 && nn > 0 && m - n >= 0.2,
        format!("g={G_HI}: early PC1 alignment memorized {m:.3} vs normal {n:.3}, gap {:.3} (>= 0.2)", m - n),
    )
}

fn determinism(a: &Run, b: &Run) -> Outcome {
    let (x, y) = (std::fs::read(a.dir.join(REPORT_CSV)).unwrap(), std::fs::read(b.dir.join(REPORT_CSV)).unwrap());
    let corr = |r: &Run| std::fs::read(r.dir.join("correlations.csv")).unwrap();
    outcome(
        x == y && corr(a) == corr(b),
        format!("report.csv {} bytes, identical: {}; correlations.csv identical: {}", x.len(), x == y, corr(a) == corr(b)),
    )
}

const GATING: [&str; 6] = ["1 ", "2 ", "3 ", "4 ", "5 ", "11 "];

fn main() {
    let s = Schedule::linear(1000, 1e-4, 0.02).unwrap();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 loss equivalence", timed(1.0, || loss_equivalence(&s))),
        ("2 decomposition exactness", timed(1.0, || decomposition_exactness(&s))),
        ("3 overestimation identity", timed(1.0, || overestimation(&s))),
        ("4 ddpm decomposition", timed(1.0, || ddpm_decomposition(&s))),
        ("5 gradient correctness", timed(30.0, gradient_check)),
    ];
    for (name, o) in &results {
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }

    let tmp = tempfile::tempdir().unwrap();
    let first = pipeline(tmp.path(), "first");
    let late: Vec<(&str, Outcome)> = vec![
        ("6 memorization emergence", emergence(&first)),
        ("7 guidance drives memorization", guidance_effect(&first)),
        ("8 deviation-severity correlation", deviation_correlation(&first)),
        ("9 diversity collapse", diversity_collapse(&first)),
        ("10 early alignment", alignment(&first)),
    ];
    for (name, o) in &late {
        println!("{} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    results.extend(late);
    let second = pipeline(tmp.path(), "second");
    let det = determinism(&first, &second);
    println!("{} 11 determinism: {}", if det.passed { "PASS" } else { "FAIL" }, det.detail);
    results.push(("11 determinism", det));

    let failed: Vec<&str> = results.iter().filter(|(_, o)| !o.passed).map(|(n, _)| *n).collect();
    println!("{} of {} criteria passed", results.len() - failed.len(), results.len());
    if failed.iter().any(|n| GATING.iter().any(|g| n.starts_with(g))) {
        std::process::exit(1);
    }
}
