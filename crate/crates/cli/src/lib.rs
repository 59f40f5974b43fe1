//! Command-line front end: synthetic data, ingestion, dataset building,
//! training, evaluation, feature importance and result tables.

pub mod args;
pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::Parser;

pub use args::Cli;
pub use error::{CliError, Result, EXIT_DATA, EXIT_DIVERGENCE, EXIT_OK, EXIT_USAGE};

use commands::Ctx;
use config::Layers;

/// Runs a parsed invocation and returns its output directory.
pub fn run(cli: Cli) -> Result<PathBuf> {
    let name = cli.command.name();
    let layers = Layers::load(cli.config.as_deref(), name)?;
    let workers = layers.pick(cli.workers, |l| l.workers, 1);
    let ctx = Ctx::new(layers, workers, cli.quiet);
    let out = commands::out_dir(&ctx, &cli.command);
    let result = bldclass::graphgen::with_workers(workers, || commands::dispatch(&ctx, &cli.command));
    if out.is_dir() {
        let status = match &result {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("error (exit {}): {e}", e.exit_code()),
        };
        ctx.write_log(&out, name, &status)?;
    }
    result
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Keeps freed memory in the process instead of returning it to the
/// system after every batch; training allocates many short-lived buffers.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 256 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}
