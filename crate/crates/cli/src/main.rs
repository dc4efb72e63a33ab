use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use warmup_core::exec;
use warmup_core::harness::{
    cmd_score, cmd_simulate, cmd_stats, cmd_synth, load_synthetic_spec, HarnessError, ScoreOptions,
    SimulateOptions, WarmupConfig,
};
use warmup_core::Exec;

#[derive(Parser)]
#[command(
    name = "warmup",
    version,
    about = "Complexity-guided warmup: scoring and schedule simulation"
)]
struct Cli {
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score every image in a token-embedding file.
    Score(ScoreArgs),
    /// Simulate the warmup curriculum over a score file.
    Simulate(SimulateArgs),
    /// Summarise a score file.
    Stats(StatsArgs),
    /// Write a synthetic token-embedding fixture and its truth sidecar.
    Synth(SynthArgs),
}

/// Overrides shared by `score` and `simulate`; flags win over the config file.
#[derive(Args)]
struct Overrides {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for clustering and sampling.
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn load(&self) -> Result<WarmupConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => WarmupConfig::load(path)?,
            None => WarmupConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct ScoreArgs {
    /// Token-embedding file (.tokemb).
    #[arg(long)]
    input: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: Overrides,
    /// Prototype count.
    #[arg(long)]
    k: Option<usize>,
    /// Foreground saliency threshold.
    #[arg(long)]
    theta: Option<f64>,
    /// Negate the saliency direction.
    #[arg(long)]
    flip_saliency: bool,
    /// Also write per-image foreground masks.
    #[arg(long)]
    dump_masks: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Score file written by `score`.
    #[arg(long)]
    scores: PathBuf,
    /// Iterations to simulate.
    #[arg(long)]
    iters: u64,
    /// Draws per iteration.
    #[arg(long)]
    batch: usize,
    #[command(flatten)]
    common: Overrides,
    /// Warmup length T_w.
    #[arg(long)]
    warmup: Option<u64>,
    /// Initial effective size D0 (absolute).
    #[arg(long)]
    d0: Option<f64>,
    /// Hardest images first.
    #[arg(long)]
    inverse: bool,
    /// Trace CSV path; defaults to trace.csv beside the score file.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Warmup profile CSV path; defaults to profile.csv beside the score file.
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    /// Score file written by `score`.
    #[arg(long)]
    scores: PathBuf,
    /// Write per-cluster exemplars as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON fixture description.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output .tokemb path; the truth sidecar is written beside it.
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let exec = if cli.sequential {
        Exec::Sequential
    } else {
        Exec::default()
    };
    match cli.command {
        Command::Score(args) => {
            let mut config = args.common.load()?;
            if args.k.is_some() {
                config.k = args.k;
            }
            if let Some(theta) = args.theta {
                config.theta = theta;
            }
            config.flip_saliency |= args.flip_saliency;
            let outcome = cmd_score(&ScoreOptions {
                input: args.input,
                out_dir: args.out,
                config,
                dump_masks: args.dump_masks,
                exec,
            })?;
            print!("{}", outcome.summary);
            println!("timings:");
            for (stage, d) in &outcome.scored.timings {
                println!("  {stage:<18}{:>10.3} s", d.as_secs_f64());
            }
            println!(
                "  {:<18}{:>10.3} s",
                "total",
                outcome.wall_clock.as_secs_f64()
            );
            println!("wrote {}", outcome.scores_path.display());
            println!("wrote {}", outcome.protos_path.display());
            println!("wrote {}", outcome.summary_path.display());
            if let Some(p) = &outcome.masks_path {
                println!("wrote {}", p.display());
            }
        }
        Command::Simulate(args) => {
            let mut config = args.common.load()?;
            if let Some(t_w) = args.warmup {
                config.warmup_iters = t_w;
            }
            if let Some(d0) = args.d0 {
                config.initial_size = Some(d0);
                config.initial_is_fraction = false;
            }
            config.inverse |= args.inverse;
            let (report, trace, profile) = cmd_simulate(&SimulateOptions {
                scores: args.scores,
                config,
                iterations: args.iters,
                batch_size: args.batch,
                trace: args.trace,
                profile: args.profile,
                exec,
            })?;
            print!("{report}");
            println!("wrote {}", trace.display());
            println!("wrote {}", profile.display());
        }
        Command::Stats(args) => {
            let report = cmd_stats(&args.scores)?;
            print!("{report}");
            if let Some(path) = args.csv {
                write_csv(&path, |w| report.write_csv(w))?;
                println!("wrote {}", path.display());
            }
        }
        Command::Synth(args) => {
            let spec = load_synthetic_spec(&args.spec)?;
            let sidecar = cmd_synth(&spec, args.seed, &args.out)?;
            println!("wrote {}", args.out.display());
            println!("wrote {}", sidecar.display());
        }
    }
    Ok(())
}

fn write_csv(
    path: &Path,
    body: impl FnOnce(std::io::BufWriter<std::fs::File>) -> std::io::Result<()>,
) -> Result<(), HarnessError> {
    std::fs::File::create(path)
        .and_then(|f| body(std::io::BufWriter::new(f)))
        .map_err(|e| HarnessError::io("stats", path, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = exec::init_from_env() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
