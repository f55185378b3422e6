use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use bingham_core::config::parse_config;
use bingham_core::diagnostics::ThetaRule;
use bingham_core::output::write_convergence;
use bingham_core::runner::{convergence_from_config, run_case, verification_suite};

#[derive(Parser)]
#[command(
    name = "bingham",
    version,
    about = "Variable-density Bingham flow on a staggered grid"
)]
struct Cli {
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ThetaChoice {
    /// theta = dt for every run
    Dt,
    /// keep the configured theta
    Fixed,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured case and write its time series and snapshots.
    Run {
        config: PathBuf,
        /// Overrides `output.directory`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Temporal self-convergence against a fine reference run.
    Convergence {
        config: PathBuf,
        /// Time steps to compare, e.g. `--dts 8e-3,4e-3,2e-3,1e-3`.
        #[arg(long, value_delimiter = ',', required = true)]
        dts: Vec<f64>,
        /// Reference step; defaults to min(dts) / 16.
        #[arg(long)]
        dt_ref: Option<f64>,
        #[arg(long, value_enum, default_value = "dt")]
        theta: ThetaChoice,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Property suite on tiny grids.
    Verify {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether the command finished without flagged violations.
fn execute(cli: Cli) -> Result<bool> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Run { config, output_dir } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let cfg = parse_config(&text).with_context(|| format!("in {}", config.display()))?;
            let dir = output_dir.unwrap_or_else(|| cfg.output.directory.clone());
            let outcome = run_case(&cfg, &text, &dir)?;
            for v in &outcome.violations {
                eprintln!("violation at step {}: {}", v.n, v.message);
            }
            if !quiet {
                let last = outcome
                    .ledger
                    .rows
                    .last()
                    .expect("ledger has the initial row");
                println!(
                    "{} steps to t = {:.6}, energy total {:.6e}, {} violations; output in {}",
                    outcome.steps,
                    outcome.final_state.t,
                    last.total,
                    outcome.violations.len(),
                    outcome.directory.display()
                );
            }
            Ok(outcome.violations.is_empty())
        }
        Command::Convergence {
            config,
            dts,
            dt_ref,
            theta,
            output_dir,
        } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let cfg = parse_config(&text).with_context(|| format!("in {}", config.display()))?;
            if dts.iter().any(|&dt| !(dt > 0.0)) {
                bail!("time steps must be positive");
            }
            let dt_min = dts.iter().cloned().fold(f64::INFINITY, f64::min);
            let rule = match theta {
                ThetaChoice::Dt => ThetaRule::EqualsDt,
                ThetaChoice::Fixed => ThetaRule::Fixed(cfg.scheme.theta),
            };
            let table = convergence_from_config(&cfg, &dts, dt_ref.unwrap_or(dt_min / 16.0), rule)?;
            let dir = output_dir.unwrap_or_else(|| cfg.output.directory.clone());
            fs::create_dir_all(&dir)?;
            write_convergence(&table, &dir.join("convergence.csv"))?;
            if !quiet {
                println!("dt          theta       |u - u_ref|   |rho - rho_ref|");
                for r in &table.rows {
                    println!(
                        "{:<11.4e} {:<11.4e} {:<13.4e} {:.4e}",
                        r.dt, r.theta, r.error_u, r.error_rho
                    );
                }
                println!(
                    "order u {:.3}, order rho {:.3}",
                    table.order_u, table.order_rho
                );
            }
            let stalled = table.rows.iter().map(|r| r.stalled_steps).sum::<usize>()
                + table.reference_stalled_steps;
            if stalled > 0 {
                eprintln!("{stalled} steps hit the fixed-point cap");
            }
            Ok(stalled == 0)
        }
        Command::Verify { seed } => {
            let checks = verification_suite(seed)?;
            for c in &checks {
                if !quiet || !c.passed {
                    println!(
                        "{} {}: {}",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.detail
                    );
                }
            }
            Ok(checks.iter().all(|c| c.passed))
        }
    }
}
