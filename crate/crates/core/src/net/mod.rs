//! Feed-forward networks and their exact evaluation.

mod activation;
mod network;

pub use activation::{ActivationKind, ActivationSpec};
pub use network::{InputVector, Layer, Metadata, Network, Trace};
