use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use difflab::Error;
use difflab_cli::{run, ExperimentKind, Manifest};

#[derive(Parser)]
#[command(name = "difflab", version, about = "Run conditional-diffusion experiments from TOML manifests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Weighted L2 error of the diffused-polynomial score against N.
    ApproxRate(Args),
    /// Trained-network score risk against the dataset size n.
    TrainRisk(Args),
    /// Conditional TV of trained samplers against n.
    TvSweep(Args),
    /// Guided sampling for a linear inverse problem.
    Inverse(Args),
    /// SubOpt of reward-directed generation.
    Reward(Args),
    /// Check the density assumptions on a grid.
    Validate(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Replaces the manifest's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent sweep cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::ApproxRate(a) => (ExperimentKind::ApproxRate, a),
        Command::TrainRisk(a) => (ExperimentKind::TrainRisk, a),
        Command::TvSweep(a) => (ExperimentKind::TvSweep, a),
        Command::Inverse(a) => (ExperimentKind::Inverse, a),
        Command::Reward(a) => (ExperimentKind::Reward, a),
        Command::Validate(a) => (ExperimentKind::Validate, a),
    };
    match execute(kind, &args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::error!("validation failed; see {}", args.out.display());
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(e) => {
            log::error!("{e:#}");
            let numerical = matches!(
                e.downcast_ref::<Error>(),
                Some(Error::NumericalAbort { .. } | Error::Diverged { .. } | Error::NonFinite(_))
            );
            ExitCode::from(if numerical { EXIT_NUMERICAL } else { EXIT_VALIDATION })
        }
    }
}

/// `Ok(false)` when the run completed but a validation check failed.
fn execute(kind: ExperimentKind, args: &Args) -> anyhow::Result<bool> {
    let mut loaded = Manifest::load(&args.manifest)?;
    if loaded.manifest.kind != kind {
        anyhow::bail!(
            "manifest {} describes a {} experiment, not {}",
            args.manifest.display(),
            loaded.manifest.kind.name(),
            kind.name()
        );
    }
    if let Some(seed) = args.seed {
        loaded.manifest.seed = seed;
    }
    let report = run(&loaded, &args.out, args.jobs.max(1))?;
    for f in &report.files {
        log::info!("wrote {}", f.display());
    }
    Ok(!report.validation_failed)
}
