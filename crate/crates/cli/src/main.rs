//! `rfilter`: runs the rejection-filter experiments and writes CSV results
//! with a JSON manifest beside each file.

mod manifest;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use rejection_filter::batched::{batched_update, combine, relative_model_delta, replay_single_node, PartialUpdate};
use rejection_filter::classify::features::{feature_select, heatmap_csv, histogram_csv, parse_histogram_csv};
use rejection_filter::classify::idx::{load_task, Task};
use rejection_filter::classify::{evaluate, ClassifyConfig};
use rejection_filter::freq::{kappa_sweep, run_tracking, SweepConfig, TrackingConfig, CSV_HEADER, WALK_SIGMA};
use rejection_filter::model_selection::{coin, run_two_models};
use rejection_filter::{rng, FnLikelihood, GaussianModel, MomentAccumulator, RFConfig};

use manifest::{write_manifests, write_output, RunManifest};

#[derive(Parser)]
#[command(name = "rfilter", version, about = "Rejection filtering experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track a drifting frequency and write one row per update.
    FreqTrack(FreqTrackArgs),
    /// Normalized final loss for a list of likelihood scales.
    KappaSweep(KappaSweepArgs),
    /// Classify IDX digits with the particle-cloud filter.
    Classify(ClassifyArgs),
    /// Keep features whose query count reaches a percentile.
    FeatureSelect(FeatureSelectArgs),
    /// Two-model Bayes factor on simulated coin flips.
    ModelSelect(ModelSelectArgs),
    /// Time sharded updates against a single-node replay.
    BatchBench(BatchBenchArgs),
}

fn parse_kappa(s: &str) -> std::result::Result<f64, String> {
    let k: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if k > 0.0 && k <= 1.0 {
        Ok(k)
    } else {
        Err(format!("kappa must lie in (0, 1], got {k}"))
    }
}

fn parse_nonneg(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a finite value >= 0, got {v}"))
    }
}

fn parse_stop(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 0.5 {
        Ok(v)
    } else {
        Err(format!("stop threshold must lie in (0, 0.5), got {v}"))
    }
}

fn parse_bias(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("bias must lie in [0, 1], got {v}"))
    }
}

#[derive(Debug, Clone, Serialize)]
struct IdxPair {
    images: PathBuf,
    labels: PathBuf,
}

fn parse_idx_pair(s: &str) -> std::result::Result<IdxPair, String> {
    match s.split_once(',') {
        Some((i, l)) if !i.is_empty() && !l.is_empty() => Ok(IdxPair { images: i.into(), labels: l.into() }),
        _ => Err("expected IMAGES,LABELS".into()),
    }
}

#[derive(Args, Serialize)]
struct FreqTrackArgs {
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    updates: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    attempts: u64,
    #[arg(long, default_value_t = 0.02, value_parser = parse_nonneg)]
    recovery: f64,
    #[arg(long, default_value_t = 1.0, value_parser = parse_kappa)]
    kappa: f64,
    /// Diffusion rate added to the variance per update
    #[arg(long, default_value_t = WALK_SIGMA * WALK_SIGMA, value_parser = parse_nonneg)]
    eta: f64,
    /// Standard deviation of the true frequency's random walk
    #[arg(long, default_value_t = WALK_SIGMA, value_parser = parse_nonneg)]
    step_sigma: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct KappaSweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,0.67,0.4,0.1,0.04,0.01", value_parser = parse_kappa)]
    kappas: Vec<f64>,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    measurements: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    attempts: u64,
    #[arg(long, default_value_t = 0.02, value_parser = parse_nonneg)]
    recovery: f64,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = 0.0, value_parser = parse_nonneg)]
    eta: f64,
    #[arg(long, default_value_t = 0.0, value_parser = parse_nonneg)]
    step_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct ClassifyArgs {
    /// Training set as IMAGES,LABELS
    #[arg(long, value_parser = parse_idx_pair)]
    train: IdxPair,
    /// Test set as IMAGES,LABELS
    #[arg(long, value_parser = parse_idx_pair)]
    test: IdxPair,
    #[arg(long, default_value = "zero-one", value_parser = ["zero-one", "even-odd"])]
    task: String,
    #[arg(long, default_value_t = 0.01, value_parser = parse_stop)]
    stop: f64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    restarts: u64,
    #[arg(long, default_value_t = 784, value_parser = clap::value_parser!(u64).range(1..))]
    budget: u64,
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    capacity: u64,
    #[arg(long, default_value_t = 0.02, value_parser = parse_nonneg)]
    recovery: f64,
    /// Only classify the first N test images
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Per-feature query counts
    #[arg(long)]
    histogram: Option<PathBuf>,
    /// Query frequencies as a grid
    #[arg(long)]
    heatmap: Option<PathBuf>,
    #[arg(long, default_value_t = 28, value_parser = clap::value_parser!(u64).range(1..))]
    heatmap_width: u64,
}

#[derive(Args, Serialize)]
struct FeatureSelectArgs {
    #[arg(long)]
    histogram: PathBuf,
    #[arg(long)]
    percentile: f64,
    /// Kept features as `feature,count`; printed to stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct ModelSelectArgs {
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    updates: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    attempts: u64,
    #[arg(long, default_value_t = 0.02, value_parser = parse_nonneg)]
    recovery: f64,
    #[arg(long, default_value_t = 0.5)]
    hedging: f64,
    /// Coin bias used to generate the flips
    #[arg(long, default_value_t = coin::TRUE_BIAS, value_parser = parse_bias)]
    bias: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct BatchBenchArgs {
    #[arg(long, default_value_t = 100_000, value_parser = clap::value_parser!(u64).range(1..))]
    attempts: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8", value_parser = clap::value_parser!(u64).range(1..))]
    n_batch: Vec<u64>,
    /// Hypothesis dimension
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    dim: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn finish<P: Serialize>(subcommand: &str, params: &P, seed: u64, outputs: &[PathBuf], started: Instant) -> Result<()> {
    let manifest = RunManifest {
        subcommand,
        params,
        seed,
        version: env!("CARGO_PKG_VERSION"),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        duration_seconds: started.elapsed().as_secs_f64(),
    };
    write_manifests(&manifest, outputs)
}

fn freq_track(args: &FreqTrackArgs) -> Result<()> {
    let started = Instant::now();
    let config = TrackingConfig {
        updates: args.updates as usize,
        attempts: args.attempts,
        recovery: args.recovery,
        kappa: args.kappa,
        eta: args.eta,
        step_sigma: args.step_sigma,
    };
    let results = run_tracking(&config, args.trials as usize, args.seed)?;
    let mut csv = format!("{CSV_HEADER}\n");
    for r in results.iter().flat_map(|t| &t.records) {
        writeln!(csv, "{}", r.csv_row())?;
    }
    write_output(&args.out, &csv)?;
    finish("freq-track", args, args.seed, std::slice::from_ref(&args.out), started)
}

fn kappa_sweep_cmd(args: &KappaSweepArgs) -> Result<()> {
    let started = Instant::now();
    let config = SweepConfig {
        measurements: args.measurements as usize,
        attempts: args.attempts,
        recovery: args.recovery,
        trials: args.trials as usize,
        eta: args.eta,
        step_sigma: args.step_sigma,
    };
    let rows = kappa_sweep(&args.kappas, &config, args.seed)?;
    let mut csv = String::from("kappa,median_initial_loss,median_final_loss,normalized_loss\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{}", r.kappa, r.median_initial_loss, r.median_final_loss, r.normalized_loss)?;
    }
    write_output(&args.out, &csv)?;
    finish("kappa-sweep", args, args.seed, std::slice::from_ref(&args.out), started)
}

fn classify_cmd(args: &ClassifyArgs) -> Result<()> {
    let started = Instant::now();
    let task: Task = args.task.parse().map_err(anyhow::Error::msg)?;
    let train = load_task(&args.train.images, &args.train.labels, task).context("loading training set")?;
    let mut test = load_task(&args.test.images, &args.test.labels, task).context("loading test set")?;
    if let Some(n) = args.limit {
        let keep: Vec<usize> = (0..n.min(test.len())).collect();
        test = test.rows(&keep)?;
    }
    if train.dim() != test.dim() {
        bail!("training images have {} pixels, test images {}", train.dim(), test.dim());
    }
    let config = ClassifyConfig {
        stop: args.stop,
        restarts: args.restarts as usize,
        budget: args.budget as usize,
        capacity: args.capacity as usize,
        recovery: args.recovery,
    };
    let eval = evaluate(&test, &train, &config, args.seed)?;

    let mut csv = String::from("index,label,prediction,queries\n");
    for (i, (p, q)) in eval.predictions.iter().zip(&eval.queries).enumerate() {
        writeln!(csv, "{i},{},{p},{q}", test.label(i))?;
    }
    let mut outputs = vec![args.out.clone()];
    write_output(&args.out, &csv)?;
    if let Some(path) = &args.histogram {
        write_output(path, &histogram_csv(&eval.histogram))?;
        outputs.push(path.clone());
    }
    if let Some(path) = &args.heatmap {
        write_output(path, &heatmap_csv(&eval.histogram, args.heatmap_width as usize))?;
        outputs.push(path.clone());
    }
    println!("accuracy {:.4} on {} test images, mean queries {:.2}", eval.accuracy, test.len(), eval.mean_queries());
    finish("classify", args, args.seed, &outputs, started)
}

fn feature_select_cmd(args: &FeatureSelectArgs) -> Result<()> {
    let started = Instant::now();
    let text =
        std::fs::read_to_string(&args.histogram).with_context(|| format!("reading {}", args.histogram.display()))?;
    let hist = parse_histogram_csv(&text)?;
    let kept = feature_select(&hist, args.percentile)?;
    let mut csv = String::from("feature,count\n");
    for &i in &kept {
        writeln!(csv, "{i},{}", hist[i])?;
    }
    eprintln!("kept {} of {} features", kept.len(), hist.len());
    match &args.out {
        Some(path) => {
            write_output(path, &csv)?;
            finish("feature-select", args, 0, std::slice::from_ref(path), started)
        }
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn model_select_cmd(args: &ModelSelectArgs) -> Result<()> {
    let started = Instant::now();
    let config = RFConfig::new(args.attempts, args.recovery, args.seed)?;
    let evidence = coin::flips(args.updates as usize, args.bias, &mut rng::stream(args.seed, 0));
    let rows = run_two_models(
        &evidence,
        (&coin::model_a(), coin::prior()),
        (&coin::model_b(), coin::prior()),
        &config,
        args.hedging,
        &mut rng::stream(args.seed, 1),
    )?;
    let mut csv = String::from("k,log_likelihood_a,log_likelihood_b,bayes_factor\n");
    for r in &rows {
        writeln!(csv, "{},{},{},{}", r.k, r.log_likelihood_a, r.log_likelihood_b, r.bayes_factor)?;
    }
    write_output(&args.out, &csv)?;
    finish("model-select", args, args.seed, std::slice::from_ref(&args.out), started)
}

fn batch_bench(args: &BatchBenchArgs) -> Result<()> {
    let started = Instant::now();
    let d = args.dim as usize;
    let prior = GaussianModel::new(DVector::zeros(d), DMatrix::identity(d, d))?;
    let lik =
        FnLikelihood::new(|_: &(), x: &DVector<f64>| (-0.5 * x.iter().map(|v| (v - 0.5).powi(2)).sum::<f64>()).exp());
    let config = RFConfig::new(args.attempts, 0.02, args.seed)?;
    let state_bytes = MomentAccumulator::new(d).state_bytes();

    let mut csv = String::from("n_batch,wall_seconds,accumulator_bytes,accepted,moment_delta\n");
    for &n in &args.n_batch {
        let n = n as usize;
        let t = Instant::now();
        let sharded = batched_update(&[()], &prior, &lik, &config, n, args.seed)?;
        let wall = t.elapsed().as_secs_f64();
        // the single node sees every node's stream in order; its raw sums go
        // through the same refit as the sharded run
        let (_, count, acc) = replay_single_node(&[()], &prior, &lik, &config, n, args.seed)?;
        let (sum, outer) = acc.raw_sums();
        let single =
            PartialUpdate { node_id: 0, accepted: count, partial_sum: sum, partial_outer: outer, seed_used: args.seed };
        let (reference, _) = combine(&[single], &prior, config.recovery)?;
        let delta = relative_model_delta(&sharded.model, &reference);
        writeln!(csv, "{n},{wall:.6},{},{},{delta:e}", n * state_bytes, sharded.accepted)?;
    }
    write_output(&args.out, &csv)?;
    finish("batch-bench", args, args.seed, std::slice::from_ref(&args.out), started)
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("RF_THREADS") {
        let n: usize =
            value.parse().with_context(|| format!("RF_THREADS must be a positive integer, got {value:?}"))?;
        if n == 0 {
            bail!("RF_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::FreqTrack(a) => freq_track(a),
        Command::KappaSweep(a) => kappa_sweep_cmd(a),
        Command::Classify(a) => classify_cmd(a),
        Command::FeatureSelect(a) => feature_select_cmd(a),
        Command::ModelSelect(a) => model_select_cmd(a),
        Command::BatchBench(a) => batch_bench(a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on argument errors
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
