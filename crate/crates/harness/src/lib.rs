//! Scenario harness for the equality-constrained filters in [`eqkf`].
//!
//! - [`config`]: scenario documents and their validation
//! - [`sim`]: ground-truth simulation
//! - [`run`]: side-by-side method runs
//! - [`report`]: CSV and structured output
//! - [`montecarlo`]: empirical covariance consistency
//! - [`checks`]: acceptance criteria and invariants
//! - [`scenarios`]: bundled scenarios

pub mod checks;
pub mod config;
pub mod montecarlo;
pub mod report;
pub mod run;
pub mod scenarios;
pub mod sim;
