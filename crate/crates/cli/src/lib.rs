//! `catkit` command-line interface.
//!
//! One subcommand per pipeline stage: `gen-toy` builds a deterministic
//! pseudo-synthesizer corpus, `prep` caches spectrograms, `train` fits a
//! classifier, `sweep` grid-searches the poly-1 epsilon, `eval` produces
//! closed- or open-set attribution reports, `embed` runs tSNE over model
//! latents, and `attribute` scores a single WAV file.
//!
//! Flags can also be supplied through a JSON config file (`--config`);
//! explicit command-line flags win. Every artifact records the fully
//! resolved configuration and seed.

mod commands;
mod opts;

use clap::Parser;

use opts::Cli;

/// Entry point shared by the binary and the integration tests.
/// Returns the process exit code: 0 on success, 1 on runtime errors,
/// 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    catkit_core::threads::init_from_env();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/usage text
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
