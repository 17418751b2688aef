use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use skiplab_cli::analysis::{Analysis, DEFAULT_SCALES};
use skiplab_cli::commands::{self, AnalyzeArgs, EvalArgs, Force, Globals, RefineArgs, Split};
use skiplab_cli::{CliError, Result};
use skiplab_core::cost::Convention;

#[derive(Parser)]
#[command(name = "skiplab", version, about = "Train and analyze residual networks that learn to skip blocks")]
struct Cli {
    #[command(flatten)]
    globals: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Run configuration (JSON)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dataset directory
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Supervised pre-training (or the random-skip baseline when sdv_skip_ratio is set)
    Train {
        /// Continue the run stored in the output directory
        #[arg(long)]
        resume: bool,
    },
    /// Policy-gradient refinement of the gates
    Refine {
        /// Starting checkpoint, or "none" for random initialization
        #[arg(long, value_name = "PATH|none")]
        from: String,
        #[arg(long)]
        alpha: Option<f64>,
        /// Drop the supervised loss gradient
        #[arg(long)]
        pure_rl: bool,
        #[arg(long)]
        resume: bool,
    },
    /// Accuracy and cost report for a checkpoint
    Eval {
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Inference)]
        mode: ModeArg,
        /// Override the gates
        #[arg(long, value_enum)]
        force: Option<ForceArg>,
        #[arg(long, value_enum, default_value_t = ConventionArg::ConvOnly)]
        convention: ConventionArg,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// skip-ratio, per-class, easy-hard, multi-scale
    Analyze {
        checkpoint: PathBuf,
        #[arg(long = "analysis", value_delimiter = ',', required = true, value_name = "NAME")]
        analyses: Vec<String>,
        /// Images per side for easy-hard
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Write the easy-hard images as PPM/PGM files
        #[arg(long)]
        dump_ppm: bool,
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
    },
    /// Accuracy/cost trade-off over a grid of alpha values and seeds
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Inference,
    Dense,
}

#[derive(Clone, Copy, ValueEnum)]
enum ForceArg {
    ExecuteAll,
    SkipAll,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConventionArg {
    ConvOnly,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

fn run(cli: Cli) -> Result<()> {
    commands::thread_cap()?;
    let g = Globals {
        config: cli.globals.config,
        seed: cli.globals.seed,
        out: cli.globals.out,
        data: cli.globals.data,
    };
    match cli.command {
        Command::Train { resume } => {
            let ck = commands::train(&g, resume)?;
            eprintln!("checkpoint written to {}", ck.config.out_dir.join(commands::CHECKPOINT_FILE).display());
        }
        Command::Refine { from, alpha, pure_rl, resume } => {
            let from = if from == "none" { None } else { Some(PathBuf::from(from)) };
            let ck = commands::refine(&g, &RefineArgs { from, alpha, pure_rl, resume })?;
            eprintln!("checkpoint written to {}", ck.config.out_dir.join(commands::CHECKPOINT_FILE).display());
        }
        Command::Eval { checkpoint, mode, force, convention, scale, split } => {
            commands::eval(
                &g,
                &EvalArgs {
                    checkpoint,
                    dense: matches!(mode, ModeArg::Dense),
                    force: force.map(|f| match f {
                        ForceArg::ExecuteAll => Force::ExecuteAll,
                        ForceArg::SkipAll => Force::SkipAll,
                    }),
                    convention: match convention {
                        ConventionArg::ConvOnly => Convention::ConvOnly,
                        ConventionArg::Full => Convention::Full,
                    },
                    scale,
                    split: match split {
                        SplitArg::Train => Split::Train,
                        SplitArg::Test => Split::Test,
                    },
                },
            )?;
        }
        Command::Analyze { checkpoint, analyses, k, dump_ppm, scales } => {
            let analyses = analyses.iter().map(|s| s.parse::<Analysis>()).collect::<Result<Vec<_>>>()?;
            let scales = scales.unwrap_or_else(|| DEFAULT_SCALES.to_vec());
            commands::analyze(&g, &AnalyzeArgs { checkpoint, analyses, k, dump_ppm, scales })?;
        }
        Command::Sweep { alphas, seeds } => {
            commands::sweep(&g, &alphas, &seeds)?;
        }
    }
    Ok(())
}

fn report(e: &CliError) {
    let top = e.to_string();
    eprintln!("error: {top}");
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        let text = s.to_string();
        // most variants already inline their source
        if !top.contains(&text) {
            eprintln!("  caused by: {text}");
        }
        source = s.source();
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
