use clap::{Parser, Subcommand};
use conformal_deform::config::RunConfig;
use conformal_deform::driver::{compare, run_config, RunError};
use conformal_deform::exec;
use conformal_deform::optim::RunStatus;
use std::path::PathBuf;
use std::process::ExitCode;

/// Nearly conformal mesh deformations for 2D shape optimization.
#[derive(Parser)]
#[command(name = "conformal-deform", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Directory for run artifacts (overrides the config).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Write a VTK snapshot every N accepted iterations.
    #[arg(long, global = true)]
    snapshot_every: Option<usize>,
    /// Suppress progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration.
    Run { config: PathBuf },
    /// Run several configurations sharing problem and mesh, and tabulate.
    Compare { configs: Vec<PathBuf> },
}

fn load(path: &PathBuf, cli: &Cli) -> Result<RunConfig, RunError> {
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(dir) = &cli.output_dir {
        cfg.outputs.directory = Some(dir.clone());
    }
    if let Some(every) = cli.snapshot_every {
        cfg.outputs.snapshot_every = every;
    }
    if cli.quiet {
        cfg.outputs.quiet = true;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    exec::init_threads_from_env();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode, RunError> {
    match &cli.command {
        Command::Run { config } => {
            let cfg = load(config, cli)?;
            let out_dir = cfg
                .outputs
                .directory
                .clone()
                .unwrap_or_else(|| PathBuf::from("out"));
            let summary = run_config(&cfg, &out_dir)?;
            if !cfg.outputs.quiet {
                println!(
                    "{}: status={:?} iters={} J={} -> {} (artifacts in {})",
                    summary.problem,
                    summary.status,
                    summary.iterations,
                    summary.initial_j,
                    summary.final_j,
                    out_dir.display()
                );
            }
            Ok(match summary.status {
                RunStatus::Converged | RunStatus::MaxIters => ExitCode::SUCCESS,
                RunStatus::LineSearchFailure => ExitCode::from(5),
                RunStatus::MeshDegenerate => ExitCode::from(3),
            })
        }
        Command::Compare { configs } => {
            let out_dir = cli
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("out/compare"));
            let mut paths = Vec::new();
            for p in configs {
                // Apply global overrides during the individual runs.
                paths.push(p.clone());
            }
            let rows = compare(&paths, &out_dir)?;
            if !cli.quiet {
                for r in &rows {
                    println!(
                        "{}: eta_max={} frac(eta>2)={} iters={} J={} status={:?}",
                        r.label, r.final_max_eta, r.eta_frac_gt2, r.iterations, r.final_j, r.status
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
