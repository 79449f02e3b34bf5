use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pme_homog::io;
use pme_homog_cli::barenblatt::{self, BarenblattCase};
use pme_homog_cli::config::ExperimentConfig;
use pme_homog_cli::pipeline::{output_dir, RunOptions, Runner};
use pme_homog_cli::RunError;

#[derive(Parser)]
#[command(name = "pmehom", version, about = "Homogenization experiments for the porous medium equation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for independent solves.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Run a single stage (with `run`).
    #[arg(long, global = true)]
    stage: Option<String>,
    /// Treat warnings as errors.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand)]
enum Command {
    /// All stages in order.
    Run,
    Validate,
    Cell,
    Homogenize,
    Solve,
    Sweep,
    /// Reports from stored trajectories; `--out` alone reuses the stored config.
    Diagnose,
    BarenblattCheck,
}

fn runner(cli: &Cli) -> Result<Runner, RunError> {
    let opts = RunOptions { strict: cli.strict };
    match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            let out = output_dir(cli.out.as_deref(), &cfg);
            Runner::new(cfg, out, opts)
        }
        None => match &cli.out {
            Some(out) => Runner::from_artifacts(out.clone(), opts),
            None => Err(RunError::Validation("--config is required".into())),
        },
    }
}

fn execute(cli: &Cli) -> Result<(), RunError> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build_global()
            .map_err(|e| RunError::Validation(e.to_string()))?;
    }
    let stage = match cli.command {
        Command::BarenblattCheck => {
            let outcome = barenblatt::run(&BarenblattCase::default())?;
            print!("{}", barenblatt::table(&outcome));
            if let Some(out) = &cli.out {
                io::write_json(&out.join("barenblatt.json"), &outcome).map_err(|e| RunError::Validation(e.to_string()))?;
            }
            return if outcome.pass {
                Ok(())
            } else {
                Err(RunError::Tolerance("Barenblatt refinement below the required factor".into()))
            };
        }
        Command::Run => cli.stage.as_deref(),
        Command::Validate => Some("validate"),
        Command::Cell => Some("cell"),
        Command::Homogenize => Some("homogenize"),
        Command::Solve => Some("solve"),
        Command::Sweep => Some("sweep"),
        Command::Diagnose => Some("diagnose"),
    };
    let mut r = runner(cli)?;
    match stage {
        Some(s) => r.run_stage(s),
        None => r.run_all(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
