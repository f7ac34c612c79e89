use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afc_ocp::experiments::{run_convergence_study, run_layer_experiment, run_limiter_dump, ExperimentConfig};
use clap::{Parser, Subcommand};

/// Experiment runner for AFC-stabilized parabolic optimal control problems.
///
/// The number of worker threads is read from `AFC_OCP_WORKERS`.
#[derive(Parser)]
#[command(name = "afc-ocp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve every configured level; write VTK snapshots and an oscillation report.
    Run { config: PathBuf },
    /// Error tables with convergence orders for state, co-state and control.
    Convergence { config: PathBuf },
    /// Correction factors of the four flux families at the converged solution.
    LimiterDump { config: PathBuf },
}

fn execute(command: &Command) -> afc_ocp::Result<()> {
    let load = |p: &Path| ExperimentConfig::from_file(p);
    match command {
        Command::Run { config } => {
            let cfg = load(config)?;
            let report = run_layer_experiment(&cfg)?;
            for r in &report.runs {
                match r.state {
                    Some(s) => println!(
                        "M = {:>3}  k = {:.3e}  outer = {:>3}  state undershoot = {:.3e}  overshoot = {:.3e}",
                        r.m, r.k, r.report.iterations, s.undershoot, s.overshoot
                    ),
                    None => println!("M = {:>3}  k = {:.3e}  outer = {:>3}", r.m, r.k, r.report.iterations),
                }
            }
            println!("wrote {}", cfg.output.directory.display());
        }
        Command::Convergence { config } => {
            let cfg = load(config)?;
            let study = run_convergence_study(&cfg)?;
            println!("{:>10} {:>12} {:>8} {:>12} {:>8}", "h0", "state L2", "order", "costate L2", "order");
            for (s, c) in study.state.iter().zip(&study.costate) {
                let o = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
                println!(
                    "{:>10.6} {:>12.4e} {:>8} {:>12.4e} {:>8}",
                    s.h0,
                    s.err_l2,
                    o(s.order_l2),
                    c.err_l2,
                    o(c.order_l2)
                );
            }
            println!("wrote {}", cfg.output.directory.display());
        }
        Command::LimiterDump { config } => {
            let cfg = load(config)?;
            for p in run_limiter_dump(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            if e.is_convergence_failure() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
