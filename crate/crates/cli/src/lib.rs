//! Experiment runner for the margin-dynamics laboratory: configuration,
//! subcommand pipelines, and run manifests.

pub mod config;
pub mod report;
pub mod run;

pub use config::ExperimentConfig;
pub use report::{Check, Report};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "PREFDYN_THREADS";

/// Sizes the global rayon pool from `PREFDYN_THREADS` when set.
pub fn init_thread_pool() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    anyhow::ensure!(threads > 0, "{THREADS_ENV} must be a positive integer, got {raw:?}");
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}
