use std::cmp::Ordering;

use rand::seq::index::sample;

use super::{
    ByzantinePolicy, Capacity, FaultDistribution, FaultKind, FaultMode, FaultScenario, NeuronFault,
    SynapseFault,
};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::seed::rng_for;

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;

/// How selected units fail, and whether bias neurons are eligible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub mode: FaultMode,
    pub include_constant: bool,
}

impl Selection {
    pub fn crash() -> Self {
        Self {
            mode: FaultMode::Crash,
            include_constant: false,
        }
    }

    pub fn byzantine(policy: ByzantinePolicy) -> Self {
        Self {
            mode: FaultMode::Byzantine(policy),
            include_constant: false,
        }
    }

    pub fn including_constant(mut self, include: bool) -> Self {
        self.include_constant = include;
        self
    }
}

/// A unit that can be selected for failure: a neuron `(layer, index, 0)` or a
/// synapse `(layer, to, from)`.
type Unit = (usize, usize, usize);

/// Eligible units of layer (or synapse set) `l`, in index order.
fn candidates(net: &Network, kind: FaultKind, l: usize, include_constant: bool) -> Vec<Unit> {
    match kind {
        FaultKind::Neuron => (0..net.width(l))
            .filter(|&i| include_constant || !net.is_constant(l, i))
            .map(|i| (l, i, 0))
            .collect(),
        // synapses into a bias neuron carry nothing and are never candidates
        FaultKind::Synapse => (0..net.width(l))
            .filter(|&j| !net.is_constant(l, j))
            .flat_map(|j| (0..net.width(l - 1)).map(move |i| (l, j, i)))
            .collect(),
    }
}

fn layer_candidates(
    net: &Network,
    dist: &FaultDistribution,
    include_constant: bool,
) -> Result<Vec<Vec<Unit>>> {
    dist.validate_for(net)?;
    dist.per_layer
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let units = candidates(net, dist.kind, i + 1, include_constant);
            if f > units.len() {
                Err(Error::Shape(format!(
                    "f_{} = {f} exceeds the {} eligible units",
                    i + 1,
                    units.len()
                )))
            } else {
                Ok(units)
            }
        })
        .collect()
}

fn build(
    kind: FaultKind,
    capacity: Capacity,
    mode: FaultMode,
    units: impl IntoIterator<Item = Unit>,
) -> FaultScenario {
    let mut scenario = FaultScenario::empty(capacity);
    for (layer, a, b) in units {
        match kind {
            FaultKind::Neuron => scenario.neurons.push(NeuronFault {
                layer,
                index: a,
                mode,
            }),
            FaultKind::Synapse => scenario.synapses.push(SynapseFault {
                layer,
                to: a,
                from: b,
                mode,
            }),
        }
    }
    scenario
}

/// The adversary of the tightness argument: in every layer it fails the
/// `f_l` units with the heaviest synapses, lowest index first on ties.
///
/// Neurons are ranked by their largest absolute outgoing weight, synapses by
/// their own absolute weight. The default `selection` for Byzantine studies
/// is `Selection::byzantine(ByzantinePolicy::WorstCaseSign)`.
pub fn adversarial_scenario(
    net: &Network,
    dist: &FaultDistribution,
    capacity: Capacity,
    selection: &Selection,
) -> Result<FaultScenario> {
    let layers = layer_candidates(net, dist, selection.include_constant)?;
    let mut chosen = Vec::new();
    for (mut units, &f) in layers.into_iter().zip(&dist.per_layer) {
        let weight = |&(l, a, b): &Unit| match dist.kind {
            FaultKind::Neuron => net.max_outgoing_weight(l, a),
            FaultKind::Synapse => net.synapse_weight(l, a, b).abs(),
        };
        // stable sort keeps index order among equal weights
        units.sort_by(|u, v| weight(v).partial_cmp(&weight(u)).unwrap_or(Ordering::Equal));
        let mut picked: Vec<Unit> = units.into_iter().take(f).collect();
        picked.sort_unstable();
        chosen.extend(picked);
    }
    let scenario = build(dist.kind, capacity, selection.mode, chosen);
    scenario.validate_for(net)?;
    Ok(scenario)
}

/// Uniformly samples `f_l` distinct units per layer; a pure function of its
/// arguments.
pub fn random_scenario(
    net: &Network,
    dist: &FaultDistribution,
    capacity: Capacity,
    seed: u64,
    selection: &Selection,
) -> Result<FaultScenario> {
    let layers = layer_candidates(net, dist, selection.include_constant)?;
    let mut chosen = Vec::new();
    for (l, (units, &f)) in layers.iter().zip(&dist.per_layer).enumerate() {
        let mut rng = rng_for(seed, &[l as u64 + 1]);
        let mut picked = sample(&mut rng, units.len(), f).into_vec();
        picked.sort_unstable();
        chosen.extend(picked.into_iter().map(|i| units[i]));
    }
    let scenario = build(dist.kind, capacity, selection.mode, chosen);
    scenario.validate_for(net)?;
    Ok(scenario)
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // exact at every step: acc * (n - i) is divisible by (i + 1)
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// `Π_l C(eligible_l, f_l)`, saturating.
pub fn scenario_count(
    net: &Network,
    dist: &FaultDistribution,
    selection: &Selection,
) -> Result<u128> {
    let layers = layer_candidates(net, dist, selection.include_constant)?;
    Ok(layers
        .iter()
        .zip(&dist.per_layer)
        .fold(1u128, |acc, (units, &f)| {
            acc.saturating_mul(binomial(units.len(), f))
        }))
}

/// Every scenario of the distribution, each exactly once: the product of the
/// per-layer `f_l`-subsets in lexicographic order, last layer varying fastest.
pub fn enumerate_scenarios(
    net: &Network,
    dist: &FaultDistribution,
    capacity: Capacity,
    selection: &Selection,
    cap: u128,
) -> Result<ScenarioIter> {
    let count = scenario_count(net, dist, selection)?;
    if count > cap {
        return Err(Error::CapExceeded { count, cap });
    }
    let layers = layer_candidates(net, dist, selection.include_constant)?;
    let combos = dist.per_layer.iter().map(|&f| (0..f).collect()).collect();
    Ok(ScenarioIter {
        kind: dist.kind,
        capacity,
        mode: selection.mode,
        layers,
        combos,
        remaining: count,
    })
}

/// Restartable by cloning; see [`enumerate_scenarios`].
#[derive(Debug, Clone)]
pub struct ScenarioIter {
    kind: FaultKind,
    capacity: Capacity,
    mode: FaultMode,
    layers: Vec<Vec<Unit>>,
    combos: Vec<Vec<usize>>,
    remaining: u128,
}

/// Advances `combo` to the next k-subset of `0..n` in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for pos in (0..k).rev() {
        if combo[pos] < n - k + pos {
            combo[pos] += 1;
            for q in pos + 1..k {
                combo[q] = combo[q - 1] + 1;
            }
            return true;
        }
    }
    false
}

impl Iterator for ScenarioIter {
    type Item = FaultScenario;

    fn next(&mut self) -> Option<FaultScenario> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let units = self
            .combos
            .iter()
            .zip(&self.layers)
            .flat_map(|(combo, units)| combo.iter().map(move |&i| units[i]));
        let scenario = build(self.kind, self.capacity, self.mode, units);
        for l in (0..self.combos.len()).rev() {
            let n = self.layers[l].len();
            if next_combination(&mut self.combos[l], n) {
                break;
            }
            let k = self.combos[l].len();
            self.combos[l] = (0..k).collect();
        }
        Some(scenario)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = usize::try_from(self.remaining).unwrap_or(usize::MAX);
        (n, Some(n))
    }
}
