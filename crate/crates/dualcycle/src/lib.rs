//! File formats, experiment orchestration and the command-line front end
//! for the `dualcycle-core` editing pipeline.
//!
//! - [`config`]: JSON world and experiment configs.
//! - [`io`]: PNG/PNM images, PGM and JSON masks.
//! - [`harness`]: sweeps, mask averaging, edits, scoring, selection and
//!   the mode comparison.
//! - [`baselines`]: forward-noising and noise-contrast reference modes.
//! - [`report`]: CSV and image output of a run.

pub mod baselines;
pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod report;

pub use error::{Error, Result};

/// Environment variable naming the root that relative output directories
/// resolve against.
pub const OUTPUT_ROOT_VAR: &str = "DUALCYCLE_OUT";

/// Output location for `requested` (or `default` when absent): absolute
/// paths are kept, relative ones go under `$DUALCYCLE_OUT` when it is set
/// and under the working directory otherwise.
pub fn resolve_output(requested: Option<&std::path::Path>, default: &str) -> std::path::PathBuf {
    let path = requested.map_or_else(|| std::path::PathBuf::from(default), std::path::Path::to_path_buf);
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if path.is_relative() => std::path::PathBuf::from(root).join(path),
        _ => path,
    }
}
