pub mod args;
mod commands;
mod config;
mod io;
mod manifest;

use std::panic::{catch_unwind, AssertUnwindSafe};

use clap::Parser;

use args::Cli;
use manifest::Recorder;

/// Runs the command line and returns the process exit code.
pub fn run() -> i32 {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let mut rec = Recorder::new(argv);
    if let Some(m) = &cli.manifest {
        rec.set_dest(m.clone());
    }
    let result = catch_unwind(AssertUnwindSafe(|| commands::dispatch(&cli, &mut rec)));
    let (code, message) = match result {
        Ok(Ok(())) => (0, None),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            (e.class().exit_code(), Some(e.to_string()))
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            eprintln!("internal error: {msg}");
            (5, Some(format!("internal error: {msg}")))
        }
    };
    if let Err(e) = rec.finish(code, message) {
        eprintln!("warning: could not write the run manifest: {e}");
    }
    code
}
