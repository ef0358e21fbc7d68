//! Config-driven experiment runner for the `metamorph` solvers.
//!
//! Every run writes CSV (and for grids, PGM) artifacts plus a
//! `manifest.json` with the inputs, versions, summaries, wall time and the
//! SHA-256 of each artifact.

pub mod config;
pub mod error;
pub mod experiments;
pub mod manifest;
pub mod sweep;

pub use config::{ExperimentConfig, Kind};
pub use error::{CliError, Result};

/// Environment variable holding the root for relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "METAMORPH_OUT";

/// Every kind with its default config, in a stable order.
pub fn catalog() -> Vec<(Kind, String)> {
    Kind::ALL
        .into_iter()
        .map(|k| (k, ExperimentConfig::template(k).to_toml()))
        .collect()
}

/// The default config of the kind called `name`.
pub fn schema(name: &str) -> Result<String> {
    let kind: Kind = name.parse()?;
    Ok(ExperimentConfig::template(kind).to_toml())
}
