//! Fault distributions, concrete fault scenarios, and evaluation of a network
//! under a scenario.
//!
//! Layers are numbered from 1 as in the computation model: neuron faults live
//! in layers `1..=L`, synapse faults in synapse sets `1..=L+1`, where set `l`
//! feeds layer `l` and set `L+1` feeds the output node. Neuron and synapse
//! indices inside a layer start at 0.
//!
//! The transmission capacity `C` bounds, per synapse, how far a faulty
//! transmission may stray from the value the synapse would nominally carry
//! ([`ClampMode::Deviation`]). [`ClampMode::Absolute`] instead clamps the
//! transmitted value itself to `[-C, C]`; under that reading a faulty neuron
//! can deviate by up to `C + sup|φ|`, which the forward error propagation
//! bound does not cover.

mod eval;
mod select;

pub use eval::{evaluate_faulty, forward_faulty, FaultyTrace};
pub use select::{
    adversarial_scenario, enumerate_scenarios, random_scenario, scenario_count, ScenarioIter,
    Selection, DEFAULT_ENUMERATION_CAP,
};

use std::collections::HashSet;
use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::net::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Neuron,
    Synapse,
}

/// Number of faulty units per layer, `f_l`.
///
/// Neuron distributions have `L` entries; synapse distributions have `L + 1`,
/// the last one counting faulty synapses into the output node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultDistribution {
    pub kind: FaultKind,
    pub per_layer: Vec<usize>,
}

impl FaultDistribution {
    pub fn neurons(per_layer: Vec<usize>) -> Self {
        Self {
            kind: FaultKind::Neuron,
            per_layer,
        }
    }

    pub fn synapses(per_layer: Vec<usize>) -> Self {
        Self {
            kind: FaultKind::Synapse,
            per_layer,
        }
    }

    pub fn zeros(kind: FaultKind, net: &Network) -> Self {
        let len = match kind {
            FaultKind::Neuron => net.depth(),
            FaultKind::Synapse => net.depth() + 1,
        };
        Self {
            kind,
            per_layer: vec![0; len],
        }
    }

    /// Parses comma-separated per-layer counts such as `"1,0,2"`.
    pub fn parse(kind: FaultKind, text: &str) -> Result<Self> {
        let per_layer = text
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Argument(format!("bad fault count `{t}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { kind, per_layer })
    }

    pub fn is_zero(&self) -> bool {
        self.per_layer.iter().all(|&f| f == 0)
    }

    pub fn total(&self) -> usize {
        self.per_layer.iter().sum()
    }

    /// `f_l` for 1-based `l`; zero outside the distribution.
    pub fn get(&self, l: usize) -> usize {
        l.checked_sub(1)
            .and_then(|i| self.per_layer.get(i))
            .copied()
            .unwrap_or(0)
    }

    /// Checks length and the per-layer unit counts against `net`.
    pub fn validate_for(&self, net: &Network) -> Result<()> {
        let (len, what) = match self.kind {
            FaultKind::Neuron => (net.depth(), "layers"),
            FaultKind::Synapse => (net.depth() + 1, "synapse sets"),
        };
        if self.per_layer.len() != len {
            return Err(Error::Shape(format!(
                "{:?} distribution has {} entries, network has {len} {what}",
                self.kind,
                self.per_layer.len()
            )));
        }
        for (i, &f) in self.per_layer.iter().enumerate() {
            let l = i + 1;
            let units = match self.kind {
                FaultKind::Neuron => net.width(l),
                FaultKind::Synapse => net.width(l) * net.width(l - 1),
            };
            if f > units {
                return Err(Error::Shape(format!(
                    "f_{l} = {f} exceeds the {units} units available"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for FaultDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.per_layer.iter().map(usize::to_string).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Transmission capacity `C` of the synapses leaving a faulty unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacity {
    Bounded(f64),
    Unbounded,
}

impl Capacity {
    pub fn bounded(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 {
            Ok(Self::Bounded(c))
        } else {
            Err(Error::Argument(format!(
                "capacity must be positive and finite, got {c}"
            )))
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            Self::Bounded(c) => Some(*c),
            Self::Unbounded => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Self::Bounded(c) = self {
            Self::bounded(*c)?;
        }
        Ok(())
    }
}

impl Serialize for Capacity {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Bounded(c) => serializer.serialize_f64(*c),
            Self::Unbounded => serializer.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for Capacity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct CapacityVisitor;

        impl Visitor<'_> for CapacityVisitor {
            type Value = Capacity;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a positive number or \"unbounded\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Capacity, E> {
                Capacity::bounded(v).map_err(E::custom)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Capacity, E> {
                self.visit_f64(v as f64)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Capacity, E> {
                self.visit_f64(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Capacity, E> {
                match v {
                    "unbounded" => Ok(Capacity::Unbounded),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }

        deserializer.deserialize_any(CapacityVisitor)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampMode {
    /// `|transmitted - nominal| <= C` on every synapse.
    #[default]
    Deviation,
    /// `|transmitted| <= C` on every synapse.
    Absolute,
}

/// What a Byzantine unit transmits on each of its outgoing synapses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum ByzantinePolicy {
    /// Push every synapse to the capacity limit in the direction of its
    /// downstream weight (`+` for weights `>= 0`).
    WorstCaseSign,
    Constant {
        value: f64,
    },
    /// Uniform draw within the capacity, independently per synapse.
    RandomInCapacity {
        seed: u64,
    },
    /// Nominal value shifted by `delta`, then clamped.
    Offset {
        delta: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    Crash,
    Byzantine(ByzantinePolicy),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronFault {
    pub layer: usize,
    pub index: usize,
    pub mode: FaultMode,
}

/// A faulty synapse from neuron `from` of layer `layer - 1` into neuron `to`
/// of layer `layer` (`to = 0` when `layer = L + 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynapseFault {
    pub layer: usize,
    pub to: usize,
    pub from: usize,
    pub mode: FaultMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultScenario {
    pub capacity: Capacity,
    #[serde(default, skip_serializing_if = "is_default_clamp")]
    pub clamp: ClampMode,
    #[serde(default)]
    pub neurons: Vec<NeuronFault>,
    #[serde(default)]
    pub synapses: Vec<SynapseFault>,
}

fn is_default_clamp(mode: &ClampMode) -> bool {
    *mode == ClampMode::Deviation
}

impl FaultScenario {
    pub fn empty(capacity: Capacity) -> Self {
        Self {
            capacity,
            clamp: ClampMode::Deviation,
            neurons: Vec::new(),
            synapses: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.neurons.is_empty() && self.synapses.is_empty()
    }

    pub fn with_neuron(mut self, layer: usize, index: usize, mode: FaultMode) -> Self {
        self.neurons.push(NeuronFault { layer, index, mode });
        self
    }

    pub fn with_synapse(mut self, layer: usize, to: usize, from: usize, mode: FaultMode) -> Self {
        self.synapses.push(SynapseFault {
            layer,
            to,
            from,
            mode,
        });
        self
    }

    pub fn with_clamp(mut self, clamp: ClampMode) -> Self {
        self.clamp = clamp;
        self
    }

    /// Same faults under a different capacity.
    pub fn with_capacity(mut self, capacity: Capacity) -> Self {
        self.capacity = capacity;
        self
    }

    /// Faulty neuron count per layer.
    pub fn neuron_distribution(&self, net: &Network) -> FaultDistribution {
        let mut per_layer = vec![0; net.depth()];
        for n in &self.neurons {
            per_layer[n.layer - 1] += 1;
        }
        FaultDistribution::neurons(per_layer)
    }

    pub fn synapse_distribution(&self, net: &Network) -> FaultDistribution {
        let mut per_layer = vec![0; net.depth() + 1];
        for s in &self.synapses {
            per_layer[s.layer - 1] += 1;
        }
        FaultDistribution::synapses(per_layer)
    }

    /// Checks indices, duplicates and policies against `net`.
    pub fn validate_for(&self, net: &Network) -> Result<()> {
        self.capacity.validate()?;
        let mut seen = HashSet::new();
        for n in &self.neurons {
            if n.layer == 0 || n.layer > net.depth() || n.index >= net.width(n.layer) {
                return Err(Error::Scenario(format!(
                    "neuron ({}, {}) does not exist",
                    n.layer, n.index
                )));
            }
            if !seen.insert((n.layer, n.index)) {
                return Err(Error::Scenario(format!(
                    "neuron ({}, {}) listed twice",
                    n.layer, n.index
                )));
            }
            self.check_mode(&n.mode)?;
        }
        let mut seen = HashSet::new();
        for s in &self.synapses {
            if s.layer == 0
                || s.layer > net.depth() + 1
                || s.to >= net.width(s.layer)
                || s.from >= net.width(s.layer - 1)
            {
                return Err(Error::Scenario(format!(
                    "synapse {} -> {} into layer {} does not exist",
                    s.from, s.to, s.layer
                )));
            }
            if !seen.insert((s.layer, s.to, s.from)) {
                return Err(Error::Scenario(format!(
                    "synapse {} -> {} into layer {} listed twice",
                    s.from, s.to, s.layer
                )));
            }
            self.check_mode(&s.mode)?;
        }
        Ok(())
    }

    fn check_mode(&self, mode: &FaultMode) -> Result<()> {
        match (mode, self.capacity) {
            (FaultMode::Byzantine(ByzantinePolicy::WorstCaseSign), Capacity::Unbounded) => {
                Err(Error::Policy(
                    "worst_case_sign has no finite value under unbounded capacity".into(),
                ))
            }
            (
                FaultMode::Byzantine(ByzantinePolicy::RandomInCapacity { .. }),
                Capacity::Unbounded,
            ) => Err(Error::Policy(
                "random_in_capacity needs a bounded capacity to sample from".into(),
            )),
            (FaultMode::Byzantine(ByzantinePolicy::Constant { value }), _)
                if !value.is_finite() =>
            {
                Err(Error::Policy(format!(
                    "constant value {value} is not finite"
                )))
            }
            (FaultMode::Byzantine(ByzantinePolicy::Offset { delta }), _) if !delta.is_finite() => {
                Err(Error::Policy(format!("offset {delta} is not finite")))
            }
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(document: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(document);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_document_shape() {
        let s = FaultScenario::empty(Capacity::Bounded(1.5))
            .with_neuron(1, 0, FaultMode::Crash)
            .with_neuron(
                2,
                3,
                FaultMode::Byzantine(ByzantinePolicy::Offset { delta: -0.25 }),
            )
            .with_synapse(
                3,
                0,
                1,
                FaultMode::Byzantine(ByzantinePolicy::WorstCaseSign),
            );
        let v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        assert_eq!(v["capacity"], 1.5);
        assert_eq!(v["neurons"][0]["mode"], "crash");
        assert_eq!(v["neurons"][1]["mode"]["byzantine"]["strategy"], "offset");
        assert_eq!(
            v["synapses"][0]["mode"]["byzantine"]["strategy"],
            "worst_case_sign"
        );
        assert!(v.get("clamp").is_none());
        assert_eq!(FaultScenario::from_json(&s.to_json().unwrap()).unwrap(), s);
    }

    #[test]
    fn unbounded_capacity_round_trips() {
        let s = FaultScenario::empty(Capacity::Unbounded).with_neuron(
            1,
            0,
            FaultMode::Byzantine(ByzantinePolicy::Constant { value: 1e6 }),
        );
        let doc = s.to_json().unwrap();
        assert!(doc.contains("\"unbounded\""));
        assert_eq!(FaultScenario::from_json(&doc).unwrap(), s);
        assert!(FaultScenario::from_json(r#"{"capacity": -1}"#).is_err());
        assert!(FaultScenario::from_json(r#"{"capacity": "lots"}"#).is_err());
    }

    #[test]
    fn distribution_parsing() {
        let d = FaultDistribution::parse(FaultKind::Neuron, "1, 0,2").unwrap();
        assert_eq!(d.per_layer, vec![1, 0, 2]);
        assert_eq!(d.to_string(), "1,0,2");
        assert_eq!(d.get(3), 2);
        assert_eq!(d.get(4), 0);
        assert!(FaultDistribution::parse(FaultKind::Neuron, "1,x").is_err());
    }
}
