//! Command-line front end: dataset generation, training, sampling,
//! evaluation, and a built-in verification table, glued over the core crate
//! with TOML configuration files and stable exit codes.

pub mod cli;
pub mod commands;
pub mod config;

use ssb_core::SsbError;

/// Everything ran and reported success.
pub const EXIT_OK: i32 = 0;
/// The verification table had at least one failing check.
pub const EXIT_VERIFY_FAILED: i32 = 1;
/// Bad invocation: unusable arguments, configs, files, or datasets.
pub const EXIT_USAGE: i32 = 2;
/// The numbers went bad: domain violations or non-finite values mid-run.
pub const EXIT_NUMERIC: i32 = 3;

/// Map an error to the exit code contract above. Anything the caller could
/// have fixed before running is usage; anything that surfaced inside the
/// numerics is numeric.
pub fn exit_code_for(error: &SsbError) -> i32 {
    match error {
        SsbError::InvalidArgument(_)
        | SsbError::Io { .. }
        | SsbError::Dataset(_)
        | SsbError::Checkpoint(_) => EXIT_USAGE,
        SsbError::Domain(_) | SsbError::Generation { .. } | SsbError::NonFiniteLoss { .. } => {
            EXIT_NUMERIC
        }
    }
}

/// Apply the SSB_THREADS cap to the global worker pool before any parallel
/// work starts. Results are bit-identical at every thread count; the cap only
/// trades latency for niceness on shared machines.
pub fn init_threads() -> ssb_core::Result<()> {
    let Some(raw) = std::env::var_os("SSB_THREADS") else {
        return Ok(());
    };
    let text = raw.to_string_lossy();
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| {
            SsbError::InvalidArgument(format!(
                "SSB_THREADS must be a positive integer, got {text:?}"
            ))
        })?;
    match rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        Ok(()) => Ok(()),
        // A pool already exists (tests, embedding callers); the cap is advisory.
        Err(_) => Ok(()),
    }
}
