//! Fault-tolerance analysis for feed-forward neural networks.
//!
//! The crate evaluates networks of K-tuned squashing neurons exactly, injects
//! crash and Byzantine failures into neurons and synapses, computes the
//! forward error propagation bound (Fep) with the certificates built on it,
//! and checks those bounds empirically.
//!
//! ```
//! use neurofail::{certify_neurons, ActivationSpec, FaultDistribution, Network, NetworkProfile};
//!
//! let net = Network::from_weights(
//!     1,
//!     ActivationSpec::sigmoid(1.0).unwrap(),
//!     vec![vec![vec![2.0], vec![-1.0], vec![0.5]]],
//!     vec![0.02, 0.03, 0.01],
//! )
//! .unwrap();
//! let report = certify_neurons(
//!     &NetworkProfile::of(&net),
//!     &FaultDistribution::neurons(vec![1]),
//!     0.2,
//!     0.1,
//!     1.0,
//! )
//! .unwrap();
//! assert!(report.certified());
//! ```

pub mod boost;
pub mod bounds;
pub mod empirical;
pub mod error;
pub mod fault;
pub mod net;
pub mod seed;
pub mod target;
pub mod trainer;

pub use bounds::{
    certify_neurons, certify_synapses, crash_bound_single_layer, fep_neurons, fep_synapses,
    max_tolerable, quantization_bound, synapse_error_as_neuron_error, Certificate, Condition,
    FepReport, NetworkProfile, ToleranceFrontier,
};
pub use error::{Error, Result};
pub use fault::{
    adversarial_scenario, enumerate_scenarios, forward_faulty, random_scenario, ByzantinePolicy,
    Capacity, ClampMode, FaultDistribution, FaultKind, FaultMode, FaultScenario, Selection,
};
pub use net::{ActivationKind, ActivationSpec, InputVector, Layer, Network};
pub use target::{BuiltinTarget, FnTarget, Target};
