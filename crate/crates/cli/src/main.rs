use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use splatslide_cli::config::PipelineConfig;
use splatslide_cli::{logging, Pipeline, PipelineError, RunOptions, EXIT_INVALID};

#[derive(Parser)]
#[command(name = "splatslide", version, about = "Gaussian-splat slope scenes to MPM landslide animations")]
struct Cli {
    /// Pipeline configuration (JSON).
    #[arg(long, global = true, default_value = "pipeline.json")]
    config: PathBuf,
    /// Rerun stages whose outputs are up to date.
    #[arg(long, global = true)]
    force: bool,
    /// One JSON object per log line.
    #[arg(long, global = true)]
    log_json: bool,
    /// Worker threads; 1 is the deterministic serial path.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert the pose CSV to COLMAP images.txt in ENU coordinates.
    IngestPoses,
    /// Clamp Gaussian aspect ratios.
    Regularize {
        /// Override the configured maximum aspect ratio.
        #[arg(long)]
        r: Option<f64>,
        /// Print the loss report as JSON on stdout.
        #[arg(long)]
        report: bool,
    },
    /// Fill the volume below the surface with interior Gaussians.
    Fill,
    /// Run the MPM simulation and write checkpoints.
    Simulate,
    /// Render checkpoints to frames.
    Render,
    /// Run every stage in order.
    Run,
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let mut config = PipelineConfig::load(&cli.config)?;
    if let Command::Regularize { r: Some(r), .. } = cli.command {
        config.regularize.r = r;
    }
    if cli.threads == 0 {
        return Err(PipelineError::Config("--threads must be at least 1".into()));
    }
    let pipeline = Pipeline::new(config, RunOptions { force: cli.force, threads: cli.threads })?;
    match cli.command {
        Command::IngestPoses => {
            if pipeline.ingest_poses()?.is_none() {
                return Err(PipelineError::Config("paths.poses is not set".into()));
            }
        }
        Command::Regularize { report, .. } => {
            pipeline.regularize()?;
            if report {
                let r = pipeline.regularize_report()?;
                println!("{}", serde_json::to_string(&r).expect("report serializes"));
            }
        }
        Command::Fill => {
            pipeline.fill()?;
        }
        Command::Simulate => {
            pipeline.simulate()?;
        }
        Command::Render => {
            pipeline.render()?;
        }
        Command::Run => {
            pipeline.run()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INVALID as u8 } else { 0 });
        }
    };
    logging::init(cli.log_json);
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
