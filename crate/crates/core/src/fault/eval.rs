use std::collections::HashMap;

use rand::Rng;

use super::{ByzantinePolicy, Capacity, ClampMode, FaultMode, FaultScenario};
use crate::error::Result;
use crate::net::Network;
use crate::seed::rng_for;

/// Result of evaluating a network under faults.
///
/// `outputs[l][j]` is what neuron `j` of layer `l` computes from the values it
/// received. Faulty neurons compute it too, even though they do not transmit it.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultyTrace {
    pub outputs: Vec<Vec<f64>>,
    pub output: f64,
}

/// `F_fail(x)`: the network output with the scenario's faults applied.
pub fn forward_faulty(net: &Network, x: &[f64], scenario: &FaultScenario) -> Result<f64> {
    Ok(evaluate_faulty(net, x, scenario)?.output)
}

const NEURON_STREAM: u64 = 0x6e65_7572;
const SYNAPSE_STREAM: u64 = 0x7379_6e61;

pub fn evaluate_faulty(net: &Network, x: &[f64], scenario: &FaultScenario) -> Result<FaultyTrace> {
    scenario.validate_for(net)?;
    let nominal = net.trace(x)?;
    let depth = net.depth();

    let mut neuron_modes: Vec<Vec<Option<FaultMode>>> =
        (0..=depth).map(|l| vec![None; net.width(l)]).collect();
    for n in &scenario.neurons {
        neuron_modes[n.layer][n.index] = Some(n.mode);
    }
    let synapse_modes: HashMap<(usize, usize, usize), FaultMode> = scenario
        .synapses
        .iter()
        .map(|s| ((s.layer, s.to, s.from), s.mode))
        .collect();

    let emitter = Emitter {
        capacity: scenario.capacity,
        clamp: scenario.clamp,
    };

    let mut outputs = Vec::with_capacity(depth + 1);
    outputs.push(nominal.outputs[0].clone());
    let mut output = 0.0;
    for l in 1..=depth + 1 {
        let prev = &outputs[l - 1];
        let senders = &neuron_modes[l - 1];
        let reference = &nominal.outputs[l - 1];
        let receivers = net.width(l);
        let mut next = Vec::with_capacity(receivers);
        for j in 0..receivers {
            if l <= depth && net.is_constant(l, j) {
                next.push(1.0);
                continue;
            }
            let mut s = 0.0;
            for i in 0..prev.len() {
                let w = net.synapse_weight(l, j, i);
                let mut v = match senders[i] {
                    None => prev[i],
                    Some(FaultMode::Crash) => 0.0,
                    Some(FaultMode::Byzantine(policy)) => emitter.emit(
                        &policy,
                        reference[i],
                        w,
                        [NEURON_STREAM, l as u64 - 1, i as u64, j as u64],
                    ),
                };
                if let Some(mode) = synapse_modes.get(&(l, j, i)) {
                    v = match mode {
                        FaultMode::Crash => 0.0,
                        FaultMode::Byzantine(policy) => emitter.emit(
                            policy,
                            v,
                            w,
                            [SYNAPSE_STREAM, l as u64, i as u64, j as u64],
                        ),
                    };
                }
                s += w * v;
            }
            if l <= depth {
                next.push(net.squash(s));
            } else {
                output = s;
            }
        }
        if l <= depth {
            outputs.push(next);
        }
    }
    Ok(FaultyTrace { outputs, output })
}

struct Emitter {
    capacity: Capacity,
    clamp: ClampMode,
}

impl Emitter {
    /// Value put on one synapse by a Byzantine unit whose nominal value on
    /// that synapse is `nominal`; `weight` is the synapse's weight.
    fn emit(&self, policy: &ByzantinePolicy, nominal: f64, weight: f64, tags: [u64; 4]) -> f64 {
        let sign = if weight >= 0.0 { 1.0 } else { -1.0 };
        let value = match (self.capacity, self.clamp) {
            (Capacity::Bounded(c), ClampMode::Deviation) => match *policy {
                ByzantinePolicy::WorstCaseSign => nominal + sign * c,
                ByzantinePolicy::Constant { value } => value.clamp(nominal - c, nominal + c),
                ByzantinePolicy::RandomInCapacity { seed } => {
                    nominal + rng_for(seed, &tags).random_range(-c..=c)
                }
                ByzantinePolicy::Offset { delta } => nominal + delta.clamp(-c, c),
            },
            (Capacity::Bounded(c), ClampMode::Absolute) => match *policy {
                ByzantinePolicy::WorstCaseSign => sign * c,
                ByzantinePolicy::Constant { value } => value.clamp(-c, c),
                ByzantinePolicy::RandomInCapacity { seed } => {
                    rng_for(seed, &tags).random_range(-c..=c)
                }
                ByzantinePolicy::Offset { delta } => (nominal + delta).clamp(-c, c),
            },
            // validate_for has already rejected the policies that need a bound
            (Capacity::Unbounded, _) => match *policy {
                ByzantinePolicy::Constant { value } => value,
                ByzantinePolicy::Offset { delta } => nominal + delta,
                _ => unreachable!("policy requires bounded capacity"),
            },
        };
        if let Capacity::Bounded(c) = self.capacity {
            let excess = match self.clamp {
                ClampMode::Deviation => (value - nominal).abs() - c,
                ClampMode::Absolute => value.abs() - c,
            };
            // rounding in `nominal ± c` can overshoot by an ulp
            debug_assert!(excess <= 1e-12 * (1.0 + c), "capacity exceeded by {excess}");
        }
        value
    }
}
