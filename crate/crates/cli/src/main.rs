//! `eqprice`: equilibrium derivative pricing under heterogeneous beliefs.
//!
//! Subcommands: `validate`, `price`, `verify`, `simulate`, `heston-demo`.
//! Exit codes: 0 success, 1 check failure, 2 configuration error,
//! 3 numerical failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::EXIT_CONFIG;
use config::{RunConfig, SchemeName};

#[derive(Parser)]
#[command(name = "eqprice", version, about = "Equilibrium derivative pricing among risk-neutral agents with heterogeneous beliefs")]
struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for generated artifacts.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Override the simulation seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: machine parallelism). Results do not
    /// depend on this setting.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Time-stepping scheme override.
    #[arg(long, global = true, value_enum)]
    scheme: Option<SchemeName>,

    /// Tolerance override for the active command's checks.
    #[arg(long, global = true)]
    tolerance: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check model regularity (ellipticity, Lipschitz estimates) per agent.
    Validate,
    /// Solve the equilibrium and fundamental PDEs; write report and surfaces.
    Price,
    /// Run the verification battery (drift, Monte Carlo, lattice, P&L).
    Verify,
    /// Simulate paths under an agent's model or the feedback control.
    Simulate {
        /// "feedback" or an agent id; overrides the config's `sim.measure`.
        #[arg(long)]
        measure: Option<String>,
    },
    /// Run the built-in two-factor stochastic-volatility demo.
    HestonDemo,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run(cli) as u8)
}

fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return EXIT_CONFIG;
        }
    }
    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!("error: cannot create output directory {}: {e}", cli.out.display());
        return EXIT_CONFIG;
    }

    // `heston-demo` is self-contained; every other command needs a config.
    if let Command::HestonDemo = cli.command {
        let options = eqprice::pde::SolverOptions::implicit();
        return match commands::cmd_heston_demo(&cli.out, cli.seed.unwrap_or(42), &options) {
            Ok(code) => code,
            Err(e) => commands::report_error(&e),
        };
    }

    let Some(path) = cli.config.as_deref() else {
        eprintln!("error: --config is required for this command");
        return EXIT_CONFIG;
    };
    let mut cfg = match RunConfig::from_path(path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Some(seed) = cli.seed {
        cfg.sim.seed = seed;
    }
    let options = cfg.solver_options(cli.scheme);

    let result = match &cli.command {
        Command::Validate => commands::cmd_validate(&cfg, cli.tolerance),
        Command::Price => commands::cmd_price(&cfg, &options, &cli.out),
        Command::Verify => commands::cmd_verify(&cfg, &options, &cli.out, cli.tolerance),
        Command::Simulate { measure } => {
            commands::cmd_simulate(&cfg, &options, &cli.out, measure.clone())
        }
        Command::HestonDemo => unreachable!(),
    };
    match result {
        Ok(code) => code,
        Err(e) => commands::report_error(&e),
    }
}
