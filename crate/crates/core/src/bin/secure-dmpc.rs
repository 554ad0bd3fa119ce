use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use secure_dmpc::sim::{self, output, Mode, ScenarioConfig};
use secure_dmpc::Error;

/// Distributed MPC of a shared heating budget, with attack detection.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the closed loop and write trace.csv, costs.csv and summary.txt.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario mode.
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Negotiate once at the initial state for a range of attack gains on
    /// the first agent and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tau_min: f64,
        #[arg(long)]
        tau_max: f64,
        #[arg(long)]
        tau_steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the centralized optimum at every step of a truthful run.
    Oracle {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run all three modes and write a side-by-side cost table.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Config(Error),
    Diverged(String),
    Other(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Other(e)
    }
}

fn load(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, Failure> {
    let mut cfg = sim::load_scenario(path).map_err(Failure::Config)?;
    if let Some(seed) = seed {
        cfg.scenario.seed = seed;
    }
    Ok(cfg)
}

fn simulate(
    config: &Path,
    out: &Path,
    mode: Option<Mode>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let mut cfg = load(config, seed)?;
    if let Some(mode) = mode {
        cfg.scenario.mode = mode;
    }
    let trace = sim::run_scenario(&cfg)?;
    let report = sim::accumulate_costs(&trace, &cfg)?;
    sim::write_outputs(&trace, &report, out)?;
    print!("{}", output::summary(&trace, &report));
    if trace.mode == Mode::Secured && trace.any_diverged() {
        return Err(Failure::Diverged(
            "negotiation diverged in secured mode".into(),
        ));
    }
    Ok(())
}

fn sweep(config: &Path, min: f64, max: f64, steps: usize, out: &Path) -> Result<(), Failure> {
    let cfg = load(config, None)?;
    let grid = sim::tau_grid(min, max, steps).map_err(Failure::Config)?;
    let report = sim::tau_sweep(&cfg, &grid)?;
    sim::write_sweep(&report, out)?;
    let converged = report.points.iter().filter(|p| p.converged).count();
    println!(
        "{} gains, {converged} converged, step size {}",
        report.points.len(),
        output::format_float(report.rho)
    );
    Ok(())
}

fn oracle(config: &Path) -> Result<(), Failure> {
    let cfg = load(config, None)?;
    let names = cfg.names();
    let mut text = String::from("k,agent,j,theta,lambda,J\n");
    for (k, sol) in sim::oracle_run(&cfg)?.iter().enumerate() {
        for (name, theta) in names.iter().zip(&sol.theta) {
            for (j, t) in theta.iter().enumerate() {
                let _ = writeln!(
                    text,
                    "{k},{name},{j},{},{},{}",
                    output::format_float(*t),
                    output::format_float(sol.lambda[j]),
                    output::format_float(sol.cost)
                );
            }
        }
    }
    // A closed pipe (e.g. `| head`) is not an error.
    let _ = std::io::stdout().write_all(text.as_bytes());
    Ok(())
}

fn compare(config: &Path, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load(config, seed)?;
    let mut reports = Vec::new();
    let mut secured_diverged = false;
    for mode in Mode::ALL {
        let trace = sim::run_in_mode(&cfg, mode)?;
        let report = sim::accumulate_costs(&trace, &cfg)?;
        sim::write_outputs(&trace, &report, out.join(mode.as_str()))?;
        secured_diverged |= mode == Mode::Secured && trace.any_diverged();
        reports.push((mode.as_str(), report));
    }
    let columns: Vec<_> = reports.iter().map(|(m, r)| (*m, r)).collect();
    let table = output::cost_table(cfg.scenario.steps, &columns);
    output::write_text(out, "summary.txt", &table)?;
    print!("{table}");
    if secured_diverged {
        return Err(Failure::Diverged(
            "negotiation diverged in secured mode".into(),
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate {
            config,
            out,
            mode,
            seed,
        } => simulate(config, out, *mode, *seed),
        Command::Sweep {
            config,
            tau_min,
            tau_max,
            tau_steps,
            out,
        } => sweep(config, *tau_min, *tau_max, *tau_steps, out),
        Command::Oracle { config } => oracle(config),
        Command::Compare { config, out, seed } => compare(config, out, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
