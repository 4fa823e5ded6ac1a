use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use continuity_lab::config::{parse_config, Stage};
use continuity_lab::pipeline::{run, write_outputs, EXIT_CONFIG, EXIT_FAIL};
use continuity_lab::report::Status;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    /// Hypotheses and bound constants only
    Check,
    /// Adds Monte Carlo paths and the Malliavin bound audit
    Simulate,
    /// Adds the kernel density estimate and the positivity check
    Density,
    /// Adds the Gaussian sandwich and envelope checks
    Sandwich,
    /// Everything, including the tail-decay check
    All,
}

impl From<Command> for Stage {
    fn from(c: Command) -> Stage {
        match c {
            Command::Check => Stage::Check,
            Command::Simulate => Stage::Simulate,
            Command::Density => Stage::Density,
            Command::Sandwich => Stage::Sandwich,
            Command::All => Stage::All,
        }
    }
}

/// Monte Carlo and Malliavin-calculus checks for the 1-D stochastic continuity equation.
#[derive(Debug, Parser)]
#[command(name = "continuity-lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration
    #[arg(long)]
    config: PathBuf,
    /// Overrides montecarlo.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides outputs.directory
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stage = Stage::from(cli.command);

    let text = match std::fs::read_to_string(&cli.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", cli.config.display());
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let mut config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if let Some(seed) = cli.seed {
        config.montecarlo.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.outputs.directory = out.display().to_string();
    }
    if let Err(e) = config.validate_for(stage) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG as u8);
    }
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }

    let outcome = match run(&config, stage) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_FAIL as u8);
        }
    };
    let dir = PathBuf::from(&config.outputs.directory);
    if let Err(e) = write_outputs(&outcome, &dir) {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_FAIL as u8);
    }

    let report = &outcome.report;
    for ev in &report.evaluations {
        for (name, v) in ev.verdicts() {
            if v.status != Status::NotApplicable {
                let tag = if v.status == Status::Pass {
                    "pass"
                } else {
                    "FAIL"
                };
                println!("t={} x={} {tag:4} {name}: {}", ev.t, ev.x, v.reason);
            }
        }
    }
    println!(
        "{} pass, {} fail, {} not applicable; outputs in {}",
        report.verdicts.pass,
        report.verdicts.fail,
        report.verdicts.not_applicable,
        dir.display()
    );
    ExitCode::from(report.exit_code as u8)
}
