//! Batch driver for the toy benchmark and the load-forecasting pipeline.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod plot;

use std::ffi::OsString;

use clap::{Arg, Command};

use config::{flag_name, RunConfig, KEYS, SUBCOMMANDS};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] adacnp::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use adacnp::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::Contract(_)) => 2,
            CliError::Core(E::Numerical(_)) => 4,
            CliError::Core(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn about(sub: &str) -> &'static str {
    match sub {
        "gen-toy" => "Sample phase-transition tasks and points from them",
        "gen-load" => "Write the synthetic hourly load fixture",
        "detect" => "Label extreme days with the DTW window detector",
        "train" => "Train a CNP or AdaCNP and write a checkpoint and loss curve",
        "eval" => "Evaluate a checkpoint or the GP baseline on held-out data",
        "forecast" => "Forecast one held-out day or toy task with a ±σ band",
        _ => "",
    }
}

pub fn command() -> Command {
    let mut root = Command::new("adacnp")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Conditional neural process forecasting toolkit")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sub in SUBCOMMANDS {
        let mut c = Command::new(sub).about(about(sub)).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("Plain-text `key = value` file; flags take precedence"),
        );
        for k in KEYS.iter().filter(|k| k.commands.contains(&sub)) {
            let default = if k.default.is_empty() { "none" } else { k.default };
            c = c.arg(
                Arg::new(k.name)
                    .long(flag_name(k.name))
                    .value_name("VALUE")
                    .help(format!("{} [default: {default}]", k.help)),
            );
        }
        root = root.subcommand(c);
    }
    root
}

/// Parses arguments and resolves the configuration of the chosen subcommand.
pub fn parse<I, T>(args: I) -> std::result::Result<RunConfig, ParseOutcome>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = command().try_get_matches_from(args).map_err(ParseOutcome::Clap)?;
    let (sub, m) = matches.subcommand().expect("subcommand is required");
    let file = match m.get_one::<String>("config") {
        Some(p) => Some(
            std::fs::read_to_string(p)
                .map_err(|e| ParseOutcome::Cli(CliError::Core(adacnp::Error::io(p, e))))?,
        ),
        None => None,
    };
    let flags: Vec<(String, String)> = KEYS
        .iter()
        .filter(|k| k.commands.contains(&sub))
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect();
    RunConfig::resolve(sub, file.as_deref(), &flags).map_err(ParseOutcome::Cli)
}

pub enum ParseOutcome {
    Clap(clap::Error),
    Cli(CliError),
}

/// Runs one invocation and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cfg = match parse(args) {
        Ok(cfg) => cfg,
        Err(ParseOutcome::Clap(e)) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
        Err(ParseOutcome::Cli(e)) => {
            eprintln!("adacnp: {e}");
            return e.exit_code();
        }
    };
    match commands::dispatch(&cfg) {
        Ok(written) => {
            for p in written {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("adacnp {}: {e}", cfg.subcommand);
            e.exit_code()
        }
    }
}
