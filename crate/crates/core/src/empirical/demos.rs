use serde::{Deserialize, Serialize};

use super::{fep_for, utilization};
use crate::error::{Error, Result};
use crate::fault::{
    adversarial_scenario, forward_faulty, ByzantinePolicy, Capacity, FaultDistribution, FaultMode,
    FaultScenario, Selection,
};
use crate::net::{ActivationSpec, Network};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightnessConfig {
    pub n_neurons: usize,
    pub n_fail: usize,
    /// Every output weight.
    pub w_m: f64,
    /// Crashed neurons output at least `1 - alpha`.
    pub alpha: f64,
    pub activation: ActivationSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessOutcome {
    pub observed_error: f64,
    /// `N_fail w_m`.
    pub bound: f64,
    pub utilization: f64,
    pub network: Network,
    pub scenario: FaultScenario,
}

/// The worst case of the single-layer crash bound: one input fixed at 1, every
/// neuron driven to `1 - α/2` by its incoming weight, every output weight
/// `+w_m`, and the adversary crashing `N_fail` of them.
pub fn tightness_experiment(cfg: &TightnessConfig) -> Result<TightnessOutcome> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::Argument(format!(
            "alpha must lie in (0, 1), got {}",
            cfg.alpha
        )));
    }
    if cfg.n_neurons == 0 || cfg.n_fail > cfg.n_neurons {
        return Err(Error::Argument(format!(
            "cannot crash {} of {} neurons",
            cfg.n_fail, cfg.n_neurons
        )));
    }
    if !(cfg.w_m.is_finite() && cfg.w_m > 0.0) {
        return Err(Error::Argument(format!(
            "w_m must be positive, got {}",
            cfg.w_m
        )));
    }
    let incoming = cfg.activation.inverse(1.0 - cfg.alpha / 2.0)?;
    let net = Network::from_weights(
        1,
        cfg.activation,
        vec![vec![vec![incoming]; cfg.n_neurons]],
        vec![cfg.w_m; cfg.n_neurons],
    )?;
    let dist = FaultDistribution::neurons(vec![cfg.n_fail]);
    let scenario = adversarial_scenario(
        &net,
        &dist,
        Capacity::Bounded(cfg.activation.sup_abs()),
        &Selection::crash(),
    )?;
    let x = [1.0];
    let observed_error = (net.forward(&x)? - forward_faulty(&net, &x, &scenario)?).abs();
    let bound = cfg.n_fail as f64 * cfg.w_m;
    Ok(TightnessOutcome {
        observed_error,
        bound,
        utilization: utilization(observed_error, bound),
        network: net,
        scenario,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Outcome {
    pub scenario: FaultScenario,
    pub input: Vec<f64>,
    pub layer: usize,
    pub index: usize,
    pub nominal_output: f64,
    pub faulty_output: f64,
    pub observed_error: f64,
    pub eps: f64,
}

impl Lemma1Outcome {
    pub fn broken(&self) -> bool {
        self.observed_error > self.eps
    }

    /// The same fault with transmissions limited to `capacity`, and the bound
    /// it must respect.
    pub fn clamped(&self, net: &Network, capacity: f64) -> Result<(f64, f64)> {
        let scenario = self
            .scenario
            .clone()
            .with_capacity(Capacity::bounded(capacity)?);
        let err = (net.forward(&self.input)? - forward_faulty(net, &self.input, &scenario)?).abs();
        let bound = fep_for(net, &scenario.neuron_distribution(net), capacity)?;
        Ok((err, bound))
    }
}

/// One Byzantine neuron of the last layer with unlimited transmission breaks
/// any ε: it sends `sign(w) v` with
/// `v = (ε + 1 + |F_neu(x)| + |rest|) / |w|`, where `w` is its output weight
/// and `rest` the contribution of the other neurons. The output then moves by
/// at least `ε + 1`.
pub fn lemma1_demo(net: &Network, eps: f64, input: Option<&[f64]>) -> Result<Lemma1Outcome> {
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Argument(format!(
            "eps must be finite and non-negative, got {eps}"
        )));
    }
    let depth = net.depth();
    let (index, w) =
        net.output_weights
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, w)| {
                if w.abs() > best.1.abs() {
                    (i, w)
                } else {
                    best
                }
            });
    if w == 0.0 {
        return Err(Error::Argument(
            "every output weight is zero: no neuron can influence the output".into(),
        ));
    }
    let x = match input {
        Some(x) => x.to_vec(),
        None => vec![0.5; net.input_dim],
    };
    let trace = net.trace(&x)?;
    let nominal_output = trace.output;
    let rest = nominal_output - w * trace.outputs[depth][index];
    let v = (eps + 1.0 + nominal_output.abs() + rest.abs()) / w.abs();
    let scenario = FaultScenario::empty(Capacity::Unbounded).with_neuron(
        depth,
        index,
        FaultMode::Byzantine(ByzantinePolicy::Constant {
            value: w.signum() * v,
        }),
    );
    let faulty_output = forward_faulty(net, &x, &scenario)?;
    Ok(Lemma1Outcome {
        scenario,
        input: x,
        layer: depth,
        index,
        nominal_output,
        faulty_output,
        observed_error: (nominal_output - faulty_output).abs(),
        eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::empirical::random_network;

    fn cfg(n_fail: usize, w_m: f64) -> TightnessConfig {
        TightnessConfig {
            n_neurons: 5,
            n_fail,
            w_m,
            alpha: 0.01,
            activation: ActivationSpec::sigmoid(1.0).unwrap(),
        }
    }

    #[test]
    fn construction_reaches_the_bound() {
        let out = tightness_experiment(&cfg(2, 0.3)).unwrap();
        assert!(out.utilization >= 0.99, "{}", out.utilization);
        assert!(out.utilization <= 1.0);
        assert_eq!(out.bound, 0.6);
    }

    #[test]
    fn no_failures_no_error() {
        let out = tightness_experiment(&cfg(0, 0.3)).unwrap();
        assert_eq!(out.observed_error, 0.0);
        assert_eq!(out.utilization, 0.0);
    }

    #[test]
    fn error_is_linear_in_the_output_weight() {
        let a = tightness_experiment(&cfg(3, 0.3)).unwrap();
        let b = tightness_experiment(&cfg(3, 0.6)).unwrap();
        assert_eq!(b.observed_error, 2.0 * a.observed_error);
    }

    #[test]
    fn infeasible_parameters() {
        let mut c = cfg(1, 0.3);
        c.alpha = 1.0;
        assert!(tightness_experiment(&c).is_err());
        assert!(tightness_experiment(&cfg(6, 0.3)).is_err());
    }

    #[test]
    fn tanh_construction() {
        let mut c = cfg(4, 0.25);
        c.activation = ActivationSpec::tanh(2.0).unwrap();
        assert!(tightness_experiment(&c).unwrap().utilization >= 0.99);
    }

    #[test]
    fn one_unbounded_neuron_breaks_any_eps() {
        let net =
            random_network(2, &[3, 4], ActivationSpec::sigmoid(0.5).unwrap(), 1.0, 21).unwrap();
        for eps in [0.05, 1.0, 1e6] {
            let out = lemma1_demo(&net, eps, None).unwrap();
            assert!(out.broken(), "eps {eps}: {}", out.observed_error);
            let (err, bound) = out.clamped(&net, 1.0).unwrap();
            assert!(err <= bound + 1e-9);
        }
    }

    #[test]
    fn silent_network_cannot_be_broken() {
        let mut net =
            random_network(1, &[2], ActivationSpec::sigmoid(1.0).unwrap(), 1.0, 3).unwrap();
        net.output_weights = vec![0.0, 0.0];
        assert!(lemma1_demo(&net, 0.1, None).is_err());
    }
}
