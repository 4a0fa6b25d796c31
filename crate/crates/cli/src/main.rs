//! `hearthru` command-line front end.
//!
//! Exit codes: 0 success, 1 failed `eval --check`, 2 configuration error,
//! 3 data error, 4 numerical failure. Errors are printed to stderr as a
//! single line `error kind=<kind> code=<code> message=<json string>`.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::RSourceArg;
use config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "hearthru", about = "Individualized hear-through equalization", disable_version_flag = true)]
struct Cli {
    /// Print the version, file schema version and default configuration
    #[arg(long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic database
    Synth {
        #[command(flatten)]
        o: Overrides,
    },
    /// Train the eardrum-response estimator on a database
    Train {
        #[command(flatten)]
        o: Overrides,
    },
    /// Design an equalization filter for one measured set
    Design {
        /// Subject id, e.g. S01
        #[arg(long)]
        subject: String,
        /// Trial number of the set
        #[arg(long)]
        trial: u32,
        #[arg(long, value_enum, default_value = "pca")]
        r_source: RSourceArg,
        #[command(flatten)]
        o: Overrides,
    },
    /// Leave-one-out comparison of all equalization conditions
    Eval {
        /// Exit with code 1 unless every report invariant holds
        #[arg(long)]
        check: bool,
        #[command(flatten)]
        o: Overrides,
    },
}

/// Failures raised by the front end itself.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
}

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    if let Some(f) = err.downcast_ref::<Failure>() {
        return match f {
            Failure::Config(_) => ("config", 2),
            Failure::Data(_) => ("data", 3),
        };
    }
    if let Some(e) = err.downcast_ref::<hearthru::Error>() {
        if e.is_numerical() {
            return ("numerical", 4);
        }
        if e.is_config() {
            return ("config", 2);
        }
        return ("data", 3);
    }
    ("data", 3)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if cli.version {
        println!("hearthru {}", env!("CARGO_PKG_VERSION"));
        println!("schema_version {}", hearthru::io::SCHEMA_VERSION);
        println!("\n# defaults");
        print!("{}", RunConfig::default().to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    let Some(command) = cli.command else {
        return Err(Failure::Config("no subcommand given (see --help)".into()).into());
    };
    match command {
        Command::Synth { o } => commands::cmd_synth(&RunConfig::resolve(&o)?, o.force)?,
        Command::Train { o } => commands::cmd_train(&RunConfig::resolve(&o)?, o.force)?,
        Command::Design {
            subject,
            trial,
            r_source,
            o,
        } => commands::cmd_design(&RunConfig::resolve(&o)?, &subject, trial, r_source, o.force)?,
        Command::Eval { check, o } => {
            let checks = commands::cmd_eval(&RunConfig::resolve(&o)?, o.force)?;
            if check {
                for c in &checks {
                    println!("check {} {} {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail);
                }
                if checks.iter().any(|c| !c.passed) {
                    return Ok(ExitCode::from(1));
                }
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            let (kind, code) = classify(&err);
            let message = serde_json::to_string(&format!("{err:#}")).unwrap_or_default();
            eprintln!("error kind={kind} code={code} message={message}");
            ExitCode::from(code)
        }
    }
}
