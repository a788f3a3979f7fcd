//! Command-line front end: JSON study configs, CSV/JSON reports and SVG
//! heatmaps for the `uniform_delta` diagnostics.

pub mod config;
pub mod error;
pub mod presets;
pub mod runner;
pub mod svg;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use runner::{run_config, run_study, worst_exit_code, Status, StudyOutcome};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "UNIFORM_DELTA_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`] when set.
pub fn init_thread_pool() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|t| *t > 0)
        .ok_or_else(|| CliError::config(THREADS_ENV, format!("expected a positive integer, got `{raw}`")))?;
    // a pool built earlier in the process stays in place
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}
