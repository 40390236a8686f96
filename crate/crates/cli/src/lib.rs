//! Configuration-driven studies on top of `dgsipg_core`.

pub mod bench;
pub mod common;
pub mod config;
pub mod convergence;
pub mod symmetry;

use anyhow::Result;

pub use config::{RunConfig, Study};

/// Runs `study` on a thread pool sized from the config and returns the
/// files written.
pub fn run(study: Study, cfg: &RunConfig) -> Result<Vec<std::path::PathBuf>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build()?;
    pool.install(|| match study {
        Study::Symmetry => symmetry::run_symmetry_study(cfg).map(|o| o.files),
        Study::Convergence => convergence::run_convergence_study(cfg).map(|o| o.files),
        Study::Bench => bench::run_bench(cfg).map(|o| o.files),
    })
}
