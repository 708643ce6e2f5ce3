//! The `nego` command-line tool.
//!
//! Subcommands share one TOML [`config::RunConfig`]; every flag overrides the
//! matching file value. Exit status is 0 on success, 1 for usage and
//! configuration errors and 2 for failures while running.

pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

pub use commands::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Marks an error as the caller's fault (bad flag, bad config, missing input).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl fmt::Display) -> anyhow::Error {
    UsageError(msg.to_string()).into()
}

/// Exit status for an error: usage errors anywhere in the chain win.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let is_usage = err.chain().any(|e| {
        e.downcast_ref::<UsageError>().is_some()
            || e.downcast_ref::<nego_rl::RlError>().is_some_and(|e| e.is_config())
    });
    if is_usage {
        EXIT_USAGE
    } else {
        EXIT_RUNTIME
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    match cli.run() {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err)
        }
    }
}
