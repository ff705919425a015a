//! Analysis toolkit for inference-aware language model alignment.
//!
//! The library works in *calibrated reward space*: every response is scored by
//! the probability that it beats a fresh sample from the base policy (ties at
//! one half), which maps any reward model onto `[0, 1]`. On top of that it
//! provides:
//!
//! - [`calibration`]: empirical per-prompt calibrated rewards built from
//!   offline rollouts, with distribution-free error bounds.
//! - [`transforms`]: reward transformation functions `Φ: [0,1] → ℝ`
//!   (identity, log, exponential tilting, tabulated).
//! - [`analytic`]: exact quadrature for the KL divergence and the
//!   inference-time win rate of the tilted policy `f ∝ exp(Φ(u)/β)` under
//!   Best-of-N, Worst-of-N, rewind-and-repeat and custom procedures.
//! - [`fixed_point`]: solver for the coupled equations characterizing the
//!   optimal transform for Best-of-N / Worst-of-N.
//! - [`mc_oracle`]: Monte Carlo estimators that validate every analytic
//!   quantity by literal sampling.
//! - [`discrete`]: exact enumeration oracles on small finite alphabets.
//! - [`suites`]: the reusable verification suites driven by the CLI and the
//!   acceptance tests.

pub mod analytic;
pub mod calibration;
pub mod discrete;
pub mod fixed_point;
pub mod mc_oracle;
pub mod quad;
pub mod stats;
pub mod suites;
pub mod transforms;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// No records exist for the requested prompt.
    #[error("no reward records for prompt `{0}`")]
    MissingPrompt(String),

    /// A reward value is NaN or infinite.
    #[error("non-finite reward{}: {value}", context_suffix(.context))]
    InvalidReward { value: f64, context: String },

    /// A duplicate (prompt_id, response_id) pair within one ingestion batch.
    #[error("duplicate record for prompt `{prompt_id}` response `{response_id}`")]
    DuplicateRecord {
        prompt_id: String,
        response_id: String,
    },

    /// A parameter is outside its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A calibrated-space argument lies outside `[0, 1]`.
    #[error("value {value} outside the domain [0, 1]")]
    Domain { value: f64 },

    /// A malformed input line (line numbers are 1-based).
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

pub type Result<T> = std::result::Result<T, Error>;
