use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flatstrip::config::{ConfigError, ExperimentConfig};
use flatstrip::report::Status;
use flatstrip::runner::{run_experiment, RunError, RunOptions};

#[derive(Parser)]
#[command(name = "flatstrip", version, about = "Config-driven experiments near a flat strip")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Curvature grid and order certificates.
    Curvature(Common),
    /// Integrate one geodesic.
    Geodesic(Common),
    /// Shadowing orbit of a singular segment.
    Shadow(Common),
    /// Comparison Riccati curve and psi_u field.
    Riccati(Common),
    /// Decay certificate along a shadow orbit.
    Decay(Common),
    /// Potential integrals over shadow orbits.
    #[command(name = "key-inequality")]
    KeyInequality(Common),
    /// Full pressure-gap certificate.
    #[command(name = "pressure-gap")]
    PressureGap(Common),
    /// Separated-set pressure estimate.
    Lambda(Common),
    /// Parse and validate a config without computing.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Curvature(c) => ("curvature", c),
        Command::Geodesic(c) => ("geodesic", c),
        Command::Shadow(c) => ("shadow", c),
        Command::Riccati(c) => ("riccati", c),
        Command::Decay(c) => ("decay", c),
        Command::KeyInequality(c) => ("key-inequality", c),
        Command::PressureGap(c) => ("pressure-gap", c),
        Command::Lambda(c) => ("lambda", c),
        Command::Validate(c) => ("validate", c),
    };
    match run(name, common) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(name: &str, c: &Common) -> Result<u8, RunError> {
    let cfg = ExperimentConfig::load(&c.config)?;
    if name == "validate" {
        cfg.validate()?;
        if !c.quiet {
            println!("{}: valid {} config", c.config.display(), cfg.experiment.name());
        }
        return Ok(0);
    }
    if cfg.experiment.name() != name {
        return Err(ConfigError::new(
            "cli",
            format!("subcommand `{name}` does not match experiment `{}`", cfg.experiment.name()),
        )
        .into());
    }
    let opts = RunOptions {
        out: c.out.clone(),
        jobs: c.jobs,
        seed: c.seed,
    };
    let (report, dir) = run_experiment(&cfg, &opts)?;
    if !c.quiet {
        print!("{}", report.summary_text());
        println!("wrote {}", dir.display());
    }
    Ok(match report.status {
        Status::Ok => 0,
        Status::BoundViolation => {
            for v in &report.violations {
                eprintln!("bound violation: {v}");
            }
            4
        }
    })
}
