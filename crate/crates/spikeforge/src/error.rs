//! Crate-wide error type.

use thiserror::Error;

/// Convenience alias used by every fallible API in the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A matrix or raster dimension does not match what the operation requires.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A value violates a documented invariant (range, sign, monotonicity, ...).
    #[error("invalid value: {0}")]
    Invalid(String),

    /// Simulation state or a parameter became non-finite.
    #[error("non-finite {what} at step {step} (neuron {neuron})")]
    NonFinite {
        what: &'static str,
        step: usize,
        neuron: usize,
    },

    /// The training loss diverged.
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: u32, loss: f64 },

    /// A network graph failed structural validation.
    #[error("invalid graph: {0}")]
    Graph(String),

    /// A hardware resource limit was exceeded during mapping.
    #[error("mapping failed: {limit} exceeded ({detail})")]
    Mapping { limit: &'static str, detail: String },

    /// A requested bias current falls outside the bias table range.
    #[error(
        "bias current {requested:.3e} A outside table range [{min:.3e}, {max:.3e}] A \
         (nearest representable: {nearest:.3e} A)"
    )]
    BiasRange {
        requested: f64,
        min: f64,
        max: f64,
        nearest: f64,
    },

    /// A device configuration failed validation.
    #[error("invalid device config: {0}")]
    Config(String),

    /// A text artifact (raster, AER stream, bias table CSV) failed to parse.
    #[error("parse error in {what} at line {line}: {detail}")]
    Parse {
        what: &'static str,
        line: usize,
        detail: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn dim(context: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::Dimension {
            context,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
