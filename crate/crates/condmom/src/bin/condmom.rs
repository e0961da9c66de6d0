use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use condmom::config::{ExperimentConfig, Format};
use condmom::report::Report;
use condmom::{compare, registry, CliError};

#[derive(Parser)]
#[command(name = "condmom", version, about = "Efficiency bounds and efficient scores for conditional moment models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Report path; overrides output.path. Without either the report goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        format: Option<Format>,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// List built-in designs and families with config fragments.
    List,
    /// Max absolute differences between reports (JSON, or CSV by extension).
    Compare {
        #[arg(required = true, num_args = 2..)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        quiet: bool,
    },
}

fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            config,
            out,
            format,
            seed,
            quiet,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(f) = format {
                cfg.output.format = f;
            }
            if out.is_some() {
                cfg.output.path = out;
            }
            let report = condmom::run(&cfg)?;
            match &cfg.output.path {
                Some(p) => {
                    report.write(p, cfg.output.format)?;
                    if !quiet {
                        eprintln!("{} report written to {}", cfg.task.name(), p.display());
                    }
                }
                None => print!("{}", report.render(cfg.output.format)),
            }
        }
        Command::List => print!("{}", registry::list_builtins()),
        Command::Compare { reports, tol, quiet } => {
            let loaded = reports.iter().map(|p| Report::read(p)).collect::<Result<Vec<_>, _>>()?;
            let summary = compare::compare(&loaded, tol)?;
            if !quiet || summary.any_flagged() {
                print!("{}", summary.render());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::from(condmom::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
