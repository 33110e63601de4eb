use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kinetic_layer::expansion::{self as ex, ExperimentConfig};
use kinetic_layer::{milne, Error, Result};

/// Kinetic boundary layers and the diffusive limit in an annulus.
#[derive(Parser, Debug)]
#[command(name = "kinetic-layer", version)]
struct Cli {
    /// `key = value` experiment file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Override one key, e.g. `--set epsilon_list=0.1,0.05`. Repeatable.
    #[arg(short = 's', long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// CSV destination; `-` or absent means the `output` key, then stdout.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Inner-wall layer at the first epsilon; dumps `eta, phi, f, q, r`.
    Milne,
    /// Annulus solve at the first epsilon; dumps `r, phi, u, u_bar`.
    Transport,
    /// Composite-expansion convergence study.
    Expand,
    /// Flat against geometric layer at `(n eps, eps)`.
    Counterexample,
    /// Characteristic curve families.
    Characteristics,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    for item in &cli.overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{item}' is not key=value")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(out) = &cli.output {
        config.output = (out.as_os_str() != "-").then(|| out.clone());
    }
    config.validate()?;
    Ok(config)
}

fn sink(config: &ExperimentConfig) -> Result<Box<dyn Write>> {
    Ok(match &config.output {
        Some(path) => Box::new(BufWriter::new(File::create(path)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: &Cli) -> Result<()> {
    let config = load(cli)?;
    match cli.command {
        Command::Milne => {
            let sol = ex::milne_run(&config)?;
            ex::write_milne_dump(sink(&config)?, &sol)?;
            milne::check_max_principle(sol.problem(), &sol)?;
        }
        Command::Transport => {
            let sol = ex::annulus_solution(&config, config.epsilons[0])?;
            ex::write_transport_dump(sink(&config)?, &sol)?;
            let (lo, hi) = sol.problem().boundary_range();
            let slack = 1e-8;
            if sol.u.values().iter().any(|v| *v < lo - slack || *v > hi + slack) {
                return Err(Error::Property("solution leaves the range of the boundary data".into()));
            }
        }
        Command::Expand => {
            let rows = ex::convergence_study(&config)?;
            ex::write_convergence(sink(&config)?, &rows)?;
            if rows.len() >= 2 {
                ex::assess_convergence(&rows, 0.7)?;
            }
        }
        Command::Counterexample => {
            let rows = ex::counterexample_experiment(&config)?;
            ex::write_counterexample(sink(&config)?, &rows)?;
            ex::assess_counterexample(&rows, 0.05, 0.7)?;
        }
        Command::Characteristics => {
            let rows = ex::emit_characteristics(&config)?;
            ex::write_characteristics(sink(&config)?, &rows)?;
            ex::assess_characteristics(&rows)?;
        }
    }
    Ok(())
}

fn threads() -> usize {
    std::env::var("KINETIC_LAYER_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

fn main() -> ExitCode {
    // usage errors exit with 1; 2 is reserved for property failures
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads()).build_global() {
        eprintln!("warning: thread pool: {e}");
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Property(msg)) => {
            eprintln!("property failure: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
