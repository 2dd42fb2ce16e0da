//! `pm` — synthesize skeleton data, train the motion model, generate
//! sequences, and evaluate them.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pm_core::autodiff::seeded_rng;
use pm_core::config::RunConfig;
use pm_core::eval::{
    diversity, emit_report, repr_power_eval, spectral_compare, EvalRow, FeatureSeries,
};
use pm_core::motion::{
    apply_transform, canonicalize, read_motion_file, synth_generate, write_motion_file,
    MotionSequence, SkeletonSpec,
};
use pm_core::rollout::{generate, RolloutConfig, RolloutStatus};
use pm_core::train::{load_checkpoint, train_run, write_log_csv};

#[derive(Parser)]
#[command(
    name = "pm",
    about = "Perpetual skeletal motion: synthesize, train, generate, evaluate",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic oscillatory motion file (PMF/1).
    Synth(SynthArgs),
    /// Train a model on a directory of PMF files.
    Train(TrainArgs),
    /// Generate motion from a trained checkpoint.
    Generate(GenerateArgs),
    /// Evaluate a model (--ckpt --data) or generated files (--gt --gen).
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of body joints.
    #[arg(long, default_value_t = 22)]
    joints: usize,
    /// Frames per second.
    #[arg(long, default_value_t = 30)]
    fps: u32,
    /// Number of frames to generate.
    #[arg(long, default_value_t = 600)]
    frames: usize,
    /// Seed for per-joint parameters and axes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest per-joint swing amplitude in radians.
    #[arg(long, default_value_t = 0.35)]
    max_amp: f64,
    /// Largest per-joint oscillation frequency in Hz (must stay below fps/2).
    #[arg(long, default_value_t = 1.6)]
    max_freq: f64,
    /// Drift velocity as `vx,vy,vz` in m/s.
    #[arg(long, default_value = "0.02,0,0")]
    velocity: String,
    /// Output PMF file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value configuration file; defaults apply for absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of training PMF files (overrides the config `data` key).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output checkpoint path (PMCKPT/1).
    #[arg(long)]
    out: PathBuf,
    /// Optional training-log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Trained checkpoint.
    #[arg(long)]
    ckpt: PathBuf,
    /// PMF file supplying the seed frames.
    #[arg(long)]
    seed_file: PathBuf,
    /// Number of leading frames to condition on.
    #[arg(long)]
    seed_frames: Option<usize>,
    /// Fraction of the seed file to condition on (ceil, at least 1 frame).
    #[arg(long)]
    seed_frac: Option<f64>,
    /// Frames to generate after the seed.
    #[arg(long)]
    frames: Option<usize>,
    /// Number of independent samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Generation RNG seed.
    #[arg(long)]
    rng_seed: Option<u64>,
    /// Pin latents to the posterior mean.
    #[arg(long)]
    deterministic: bool,
    /// Output directory for sample_<k>.pmf files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint for representation-power evaluation.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Directory of PMF files to evaluate the checkpoint on.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Ground-truth PMF file for spectral/diversity evaluation.
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Generated PMF files to compare against the ground truth.
    #[arg(long, num_args = 1..)]
    gen: Vec<PathBuf>,
    /// Report CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-metric two-column plot series.
    #[arg(long)]
    plot_dir: Option<PathBuf>,
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version to stdout (exit 0) and usage errors
            // to stderr (exit 2).
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Train(args) => run_train(args),
        Command::Generate(args) => run_generate(args),
        Command::Eval(args) => run_eval(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            eprintln!("run `pm --help` or `pm <command> --help` for a synopsis");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn parse_velocity(text: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::usage(format!(
            "--velocity expects `vx,vy,vz`, got `{text}`"
        )));
    }
    let mut v = [0.0; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|e| CliError::usage(format!("bad velocity component `{part}`: {e}")))?;
    }
    Ok(v)
}

fn run_synth(args: SynthArgs) -> CliResult {
    let velocity = parse_velocity(&args.velocity)?;
    let mut rng = seeded_rng(args.seed);
    let spec = SkeletonSpec::random(
        args.joints,
        (0.05 * args.max_amp, args.max_amp),
        (0.1, args.max_freq),
        velocity,
        &mut rng,
    );
    let seq = synth_generate(&spec, args.fps, args.frames, args.seed)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    write_motion_file(&seq, &args.out)?;
    Ok(())
}

/// Reads, parses, and canonicalizes every `.pmf` file in a directory, in
/// filename order.
fn load_dataset(dir: &Path) -> Result<Vec<(String, MotionSequence)>, CliError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "pmf"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Runtime(format!(
            "no .pmf files in {}",
            dir.display()
        )));
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let seq = read_motion_file(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        let (canonical, _) = canonicalize(&seq)?;
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string());
        out.push((name, canonical));
    }
    Ok(out)
}

fn run_train(args: TrainArgs) -> CliResult {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    let data_dir = args
        .data
        .clone()
        .or_else(|| cfg.data.clone())
        .ok_or_else(|| CliError::usage("train needs --data or a `data` config key"))?;
    cfg.data = Some(data_dir.clone());

    let named = load_dataset(&data_dir)?;
    let dataset: Vec<MotionSequence> = named.into_iter().map(|(_, s)| s).collect();
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
    }
    let outcome = train_run(&cfg, &dataset, Some(&args.out))?;
    if let Some(log_path) = &args.log {
        write_log_csv(log_path, &outcome.log).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let last = outcome.log.last().expect("at least one step");
    println!(
        "trained {} steps; final total loss {:.6}, mean per-step KL {:.6e}; checkpoint at {}",
        last.step,
        last.loss.total,
        last.mean_phi,
        args.out.display()
    );
    Ok(())
}

fn run_generate(args: GenerateArgs) -> CliResult {
    if args.seed_frames.is_some() && args.seed_frac.is_some() {
        return Err(CliError::usage(
            "--seed-frames and --seed-frac are mutually exclusive",
        ));
    }
    let (cfg, params, _) = load_checkpoint(&args.ckpt)?;
    let raw_seed = read_motion_file(&args.seed_file)?;
    let (seed_seq, back_transform) = canonicalize(&raw_seed)?;

    let seed_frames = match (args.seed_frames, args.seed_frac) {
        (Some(n), None) => n,
        (None, Some(f)) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(CliError::usage(format!(
                    "--seed-frac must lie in [0, 1], got {f}"
                )));
            }
            ((f * seed_seq.len() as f64).ceil() as usize).max(1)
        }
        (None, None) => cfg.rollout.seed_frames,
        (Some(_), Some(_)) => unreachable!(),
    };

    let rollout_cfg = RolloutConfig {
        seed_frames,
        gen_frames: args.frames.unwrap_or(cfg.rollout.gen_frames),
        samples: args.samples.unwrap_or(cfg.rollout.samples),
        seed: args.rng_seed.unwrap_or(cfg.rollout.rng_seed),
        deterministic: args.deterministic || cfg.rollout.deterministic,
    };
    let samples = generate(&params, &seed_seq, &rollout_cfg)?;

    std::fs::create_dir_all(&args.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut aborted = Vec::new();
    for (k, sample) in samples.iter().enumerate() {
        // Back into the seed file's original world coordinates.
        let restored = apply_transform(&sample.sequence, &back_transform)?;
        let pmf = args.out.join(format!("sample_{k}.pmf"));
        write_motion_file(&restored, &pmf)?;
        let sidecar = args.out.join(format!("sample_{k}.boundary.txt"));
        std::fs::write(&sidecar, format!("{}\n", sample.boundary))
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        if let RolloutStatus::Aborted { at_frame } = sample.status {
            aborted.push((k, at_frame));
        }
    }
    if !aborted.is_empty() {
        let detail: Vec<String> = aborted
            .iter()
            .map(|(k, at)| format!("sample {k} aborted at frame {at}"))
            .collect();
        return Err(CliError::Runtime(format!(
            "non-finite values during generation ({}); partial outputs written",
            detail.join(", ")
        )));
    }
    println!(
        "wrote {} samples of {} + {} frames to {}",
        samples.len(),
        seed_frames,
        rollout_cfg.gen_frames,
        args.out.display()
    );
    Ok(())
}

fn run_eval(args: EvalArgs) -> CliResult {
    let repr_mode = args.ckpt.is_some() || args.data.is_some();
    let spectral_mode = args.gt.is_some() || !args.gen.is_empty();
    let rows = match (repr_mode, spectral_mode) {
        (true, false) => {
            let (Some(ckpt), Some(data)) = (&args.ckpt, &args.data) else {
                return Err(CliError::usage("model evaluation needs both --ckpt and --data"));
            };
            eval_repr_power(ckpt, data)?
        }
        (false, true) => {
            let Some(gt) = &args.gt else {
                return Err(CliError::usage("spectral evaluation needs --gt"));
            };
            if args.gen.is_empty() {
                return Err(CliError::usage("spectral evaluation needs at least one --gen file"));
            }
            eval_spectral(gt, &args.gen)?
        }
        (true, true) => {
            return Err(CliError::usage(
                "choose one mode: --ckpt/--data or --gt/--gen",
            ))
        }
        (false, false) => {
            return Err(CliError::usage(
                "eval needs either --ckpt with --data, or --gt with --gen",
            ))
        }
    };

    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent).map_err(|e| CliError::Runtime(e.to_string()))?;
                }
            }
            emit_report(&rows, path, args.plot_dir.as_deref())?;
        }
        None => {
            print!("{}", pm_core::eval::report_csv(&rows)?);
            if let Some(dir) = &args.plot_dir {
                pm_core::eval::write_plot_series(dir, &rows)?;
            }
        }
    }
    Ok(())
}

fn eval_repr_power(ckpt: &Path, data: &Path) -> Result<Vec<EvalRow>, CliError> {
    let (cfg, params, _) = load_checkpoint(ckpt)?;
    let named = load_dataset(data)?;
    let seqs: Vec<MotionSequence> = named.iter().map(|(_, s)| s.clone()).collect();
    let scores = repr_power_eval(&params, &seqs, &cfg.weights, cfg.train.kl_penalty)?;
    Ok(named
        .iter()
        .zip(scores)
        .map(|((name, _), score)| {
            let mut row = EvalRow::named(name.clone());
            row.e_rec = Some(score.e_rec);
            row.e_trec = Some(score.e_trec);
            row.neg_log_p = score.neg_log_p;
            row
        })
        .collect())
}

/// Boundary index recorded next to a generated sample, when present.
fn sidecar_boundary(gen_path: &Path) -> Option<usize> {
    let stem = gen_path.file_stem()?.to_string_lossy().into_owned();
    let sidecar = gen_path.with_file_name(format!("{stem}.boundary.txt"));
    let text = std::fs::read_to_string(sidecar).ok()?;
    text.trim().parse().ok()
}

fn eval_spectral(gt_path: &Path, gen_paths: &[PathBuf]) -> Result<Vec<EvalRow>, CliError> {
    let gt = read_motion_file(gt_path)?;
    let mut rows = Vec::new();
    let mut generated_parts: Vec<FeatureSeries> = Vec::new();
    let mut part_lengths = std::collections::BTreeSet::new();
    for path in gen_paths {
        let gen = read_motion_file(path)?;
        if gen.joint_count() != gt.joint_count() {
            return Err(CliError::Runtime(format!(
                "{}: joint count {} does not match ground truth {}",
                path.display(),
                gen.joint_count(),
                gt.joint_count()
            )));
        }
        let boundary = sidecar_boundary(path).unwrap_or(0);
        if boundary >= gen.len() {
            return Err(CliError::Runtime(format!(
                "{}: boundary {boundary} leaves no generated frames",
                path.display()
            )));
        }
        if boundary >= gt.len() {
            return Err(CliError::Runtime(format!(
                "{}: boundary {boundary} exceeds the ground truth length {}",
                path.display(),
                gt.len()
            )));
        }
        // Compare the generated portion against the ground truth with the
        // same prefix dropped, truncated to the common length.
        let gen_part = FeatureSeries::from_sequence_tail(&gen, boundary)?;
        let gt_part = FeatureSeries::from_sequence_tail(&gt, boundary)?;
        let (pser, pskld) = spectral_compare(&gen_part, &gt_part)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let mut row = EvalRow::named(name);
        row.pser = Some(pser);
        row.pskld = Some(pskld);
        rows.push(row);
        part_lengths.insert(gen_part.frames());
        generated_parts.push(gen_part);
    }

    if generated_parts.len() >= 2 {
        if part_lengths.len() != 1 {
            return Err(CliError::Runtime(
                "diversity needs generated parts of equal length".into(),
            ));
        }
        // Diversity is a property of the sample set, not of one sample;
        // stored on the first row so the aggregate row carries it.
        rows[0].diversity = Some(diversity(&generated_parts)?);
    }
    Ok(rows)
}
