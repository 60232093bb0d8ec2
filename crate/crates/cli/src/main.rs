use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qsm_cli::commands::{cmd_analyze, cmd_evolve, cmd_imcf, cmd_static, ensure_dir, write_json};
use qsm_cli::config::RunConfig;
use qsm_cli::error::{CliError, CliResult};
use qsm_cli::verify;

#[derive(Parser)]
#[command(name = "qsm", version, about = "Scalar-flat quasi-spherical metrics, static potentials and Minkowski functionals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for randomized checks; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Multiplier applied to every verification tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    tolerance_scale: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the configured lapse and audit the scalar curvature.
    Evolve,
    /// Fit the expansions of u and V in a snapshot.
    Analyze { snapshot: PathBuf },
    /// Static residuals and the rigidity probe on a snapshot.
    Static { snapshot: PathBuf },
    /// Trace Q along the coordinate-sphere flow (snapshot or closed form).
    Imcf { snapshot: Option<PathBuf> },
    /// Run the property suite.
    Verify,
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.as_ref().map(PathBuf::from)))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn run(cli: &Cli) -> CliResult<()> {
    if !(cli.tolerance_scale > 0.0 && cli.tolerance_scale.is_finite()) {
        return Err(CliError::Config("--tolerance-scale must be positive".into()));
    }
    let outputs = match &cli.command {
        Command::Evolve => {
            let cfg = load_config(cli)?;
            cmd_evolve(&cfg, &out_dir(cli, Some(&cfg)))?
        }
        Command::Analyze { snapshot } => {
            let cfg = load_config(cli)?;
            cmd_analyze(&cfg, snapshot, &out_dir(cli, Some(&cfg)))?
        }
        Command::Static { snapshot } => {
            let cfg = load_config(cli)?;
            cmd_static(&cfg, snapshot, &out_dir(cli, Some(&cfg)))?
        }
        Command::Imcf { snapshot } => {
            let cfg = load_config(cli)?;
            cmd_imcf(&cfg, snapshot.as_deref(), &out_dir(cli, Some(&cfg)))?
        }
        Command::Verify => {
            let cfg = match &cli.config {
                Some(_) => Some(load_config(cli)?),
                None => None,
            };
            let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let select = cfg.as_ref().and_then(|c| c.verify.select.clone());
            let summary = verify::run(seed, cli.tolerance_scale, select.as_deref());
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            let text = serde_json::to_string_pretty(&summary)?;
            println!("{text}");
            let dir = out_dir(cli, cfg.as_ref());
            ensure_dir(&dir)?;
            write_json(&dir.join("verify.json"), &summary)?;
            return Ok(());
        }
    };
    for f in outputs.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::FAILURE
        }
    }
}
