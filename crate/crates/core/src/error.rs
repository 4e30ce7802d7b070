use thiserror::Error;

use crate::empirical::Counterexample;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimension or shape disagreement between two objects.
    #[error("shape error: {0}")]
    Shape(String),

    /// Malformed network, scenario or report document.
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    /// A fault scenario that does not fit the network it targets.
    #[error("invalid scenario: {0}")]
    Scenario(String),

    /// A Byzantine policy that cannot be realised under the given capacity.
    #[error("invalid policy: {0}")]
    Policy(String),

    #[error("enumeration of {count} scenarios exceeds the cap of {cap}")]
    CapExceeded { count: u128, cap: u128 },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    /// An experiment observed an error larger than the bound it checks.
    #[error("bound violated: {0}")]
    Violation(Box<Counterexample>),

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),

    #[error("json output failed: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
