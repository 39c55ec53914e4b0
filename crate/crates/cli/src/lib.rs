//! Experiment runner for the block-diffusion decoders.
//!
//! Four commands: `decode` writes per-step JSON lines for a single
//! configuration, `sweep` writes one CSV row per cell of a parameter grid,
//! and `verify-dist` / `oracle-khat` run the statistical checks on the
//! acceptance kernel and the expected-prefix estimator.
//!
//! Exit codes: `0` success, `1` runtime error or tolerance breach, `2`
//! configuration error.

pub mod config;
mod error;
pub mod oracles;
pub mod run;

pub use config::{Cell, Config};
pub use error::CliError;
pub use oracles::{cmd_oracle_khat, cmd_verify_dist, OracleKhatArgs, OracleOutcome, VerifyDistArgs};
pub use run::{cmd_decode, cmd_sweep, sweep_rows, RunOptions, SweepRow};
