//! Discrete-event simulation of early cutoff: every layer starts computing
//! once all but `f_l` of the previous layer's signals have arrived, and the
//! stragglers are treated as crashed. A certified cut policy keeps the output
//! within ε of the target while the makespan shrinks.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{certify_neurons, FepReport, NetworkProfile};
use crate::empirical::Counterexample;
use crate::error::{Error, Result};
use crate::fault::{Capacity, FaultDistribution, FaultMode, FaultScenario};
use crate::net::Network;
use crate::seed::{derive_seed, rng_for};
use crate::target::Target;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatencyDistribution {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Exponential {
        mean: f64,
    },
    /// Exponential, multiplied by `straggler_factor` with probability
    /// `p_straggler`.
    HeavyTail {
        mean: f64,
        p_straggler: f64,
        straggler_factor: f64,
    },
}

/// Time from a neuron's start until its signal reaches the next layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub distribution: LatencyDistribution,
    pub seed: u64,
}

impl LatencyModel {
    pub fn new(distribution: LatencyDistribution, seed: u64) -> Result<Self> {
        let ok = match distribution {
            LatencyDistribution::Uniform { lo, hi } => lo > 0.0 && hi >= lo && hi.is_finite(),
            LatencyDistribution::Exponential { mean } => mean > 0.0 && mean.is_finite(),
            LatencyDistribution::HeavyTail {
                mean,
                p_straggler,
                straggler_factor,
            } => {
                mean > 0.0
                    && mean.is_finite()
                    && (0.0..=1.0).contains(&p_straggler)
                    && straggler_factor >= 1.0
                    && straggler_factor.is_finite()
            }
        };
        if !ok {
            return Err(Error::Argument(format!(
                "invalid latency parameters {distribution:?}"
            )));
        }
        Ok(Self { distribution, seed })
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }

    /// Latency of neuron `index` of layer `layer`; a pure function of the
    /// seed and the neuron.
    pub fn sample(&self, layer: usize, index: usize) -> f64 {
        let mut rng = rng_for(self.seed, &[layer as u64, index as u64]);
        let exp = |rng: &mut rand_chacha::ChaCha8Rng, mean: f64| {
            let u: f64 = rng.random();
            -mean * (1.0 - u).ln()
        };
        match self.distribution {
            LatencyDistribution::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..hi)
                }
            }
            LatencyDistribution::Exponential { mean } => exp(&mut rng, mean),
            LatencyDistribution::HeavyTail {
                mean,
                p_straggler,
                straggler_factor,
            } => {
                let base = exp(&mut rng, mean);
                if rng.random_bool(p_straggler) {
                    base * straggler_factor
                } else {
                    base
                }
            }
        }
    }
}

/// Per-layer drop counts `f_1, ..., f_L`, certified for one network as a
/// crash distribution (capacity 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostPolicy {
    cut_counts: Vec<usize>,
    profile: NetworkProfile,
    report: FepReport,
}

impl BoostPolicy {
    /// Refuses cut counts that are not certified for `(net, ε, ε')`.
    pub fn new(net: &Network, cut_counts: Vec<usize>, eps: f64, eps_prime: f64) -> Result<Self> {
        let profile = NetworkProfile::of(net);
        let dist = FaultDistribution::neurons(cut_counts.clone());
        dist.validate_for(net)?;
        let report = certify_neurons(&profile, &dist, eps, eps_prime, net.activation.sup_abs())?;
        if !report.certified() {
            return Err(Error::Policy(format!(
                "cut counts {dist} are not certified: Fep {} leaves slack {}",
                report.fep,
                report.slack().unwrap_or(f64::NAN)
            )));
        }
        Ok(Self {
            cut_counts,
            profile,
            report,
        })
    }

    /// The largest `f_l = ceil(fraction N_l)` pattern, shrunk layer by layer
    /// from the output side until it is certified.
    pub fn proportional(net: &Network, fraction: f64, eps: f64, eps_prime: f64) -> Result<Self> {
        let mut cuts: Vec<usize> = (1..=net.depth())
            .map(|l| ((fraction * net.width(l) as f64).ceil() as usize).min(net.width(l) - 1))
            .collect();
        loop {
            match Self::new(net, cuts.clone(), eps, eps_prime) {
                Ok(p) => return Ok(p),
                Err(Error::Policy(_)) => {
                    let Some(l) = cuts.iter().rposition(|&c| c > 0) else {
                        return Self::new(net, cuts, eps, eps_prime);
                    };
                    cuts[l] -= 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    pub fn cut_counts(&self) -> &[usize] {
        &self.cut_counts
    }

    pub fn report(&self) -> &FepReport {
        &self.report
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostOutcome {
    pub output: f64,
    pub nominal: f64,
    pub observed_error_vs_nominal: f64,
    /// `per_layer_dropped[l - 1]`: indices of layer `l` treated as crashed.
    pub per_layer_dropped: Vec<Vec<usize>>,
    pub makespan_boosted: f64,
    pub makespan_full: f64,
    /// The crash scenario the cut induces.
    pub scenario: FaultScenario,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Arrival {
    time: f64,
    layer: usize,
    index: usize,
}

impl Eq for Arrival {}

impl Ord for Arrival {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.layer.cmp(&other.layer))
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Arrival {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Completion time of the output node when waiting for every signal.
fn full_makespan(net: &Network, latency: &LatencyModel) -> f64 {
    let mut start = 0.0;
    for l in 1..=net.depth() {
        start = (0..net.width(l))
            .map(|i| start + latency.sample(l, i))
            .fold(f64::NEG_INFINITY, f64::max);
    }
    start
}

/// Runs one input through the network with early cutoff. Layer 1 starts at
/// time 0 on the input; every later layer and the output node start at the
/// arrival that completes the quota `N_l - f_l` of signals from layer `l`,
/// earlier arrivals first and lower indices first among equal times. All
/// receivers of a layer share the same dropped set.
pub fn simulate_boost(
    net: &Network,
    x: &[f64],
    latency: &LatencyModel,
    policy: &BoostPolicy,
) -> Result<BoostOutcome> {
    if policy.profile != NetworkProfile::of(net) {
        return Err(Error::Policy(
            "the cut policy was certified for a different network".into(),
        ));
    }
    let depth = net.depth();
    let nominal = net.forward(x)?;
    let mut heap = BinaryHeap::new();
    let mut values: Vec<Vec<f64>> = (0..=depth).map(|l| vec![0.0; net.width(l)]).collect();
    let mut arrived: Vec<Vec<bool>> = (0..=depth).map(|l| vec![false; net.width(l)]).collect();
    let mut counts = vec![0usize; depth + 1];
    let mut dropped = Vec::with_capacity(depth);

    let input = net.input_layer(x);
    let start_layer = |l: usize,
                       t: f64,
                       received: &[f64],
                       heap: &mut BinaryHeap<Reverse<Arrival>>,
                       values: &mut Vec<Vec<f64>>| {
        for (j, v) in values[l].iter_mut().enumerate() {
            *v = net.neuron_output(l, j, received);
            heap.push(Reverse(Arrival {
                time: t + latency.sample(l, j),
                layer: l,
                index: j,
            }));
        }
    };
    start_layer(1, 0.0, &input, &mut heap, &mut values);

    let mut output = 0.0;
    let mut makespan_boosted = 0.0;
    while let Some(Reverse(ev)) = heap.pop() {
        let l = ev.layer;
        let quota = net.width(l) - policy.cut_counts[l - 1];
        if counts[l] >= quota {
            continue;
        }
        arrived[l][ev.index] = true;
        counts[l] += 1;
        if counts[l] == quota {
            let received: Vec<f64> = (0..net.width(l))
                .map(|i| if arrived[l][i] { values[l][i] } else { 0.0 })
                .collect();
            dropped.push(
                (0..net.width(l))
                    .filter(|&i| !arrived[l][i])
                    .collect::<Vec<_>>(),
            );
            if l == depth {
                output = net.output_node(&received);
                makespan_boosted = ev.time;
                break;
            }
            start_layer(l + 1, ev.time, &received, &mut heap, &mut values);
        }
    }

    let mut scenario = FaultScenario::empty(Capacity::Bounded(net.activation.sup_abs()));
    for (l, set) in dropped.iter().enumerate() {
        for &i in set {
            scenario = scenario.with_neuron(l + 1, i, FaultMode::Crash);
        }
    }
    Ok(BoostOutcome {
        output,
        nominal,
        observed_error_vs_nominal: (output - nominal).abs(),
        per_layer_dropped: dropped,
        makespan_boosted,
        makespan_full: full_makespan(net, latency),
        scenario,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRow {
    pub trial: u64,
    pub output: f64,
    pub target: f64,
    pub abs_err: f64,
    pub eps: f64,
    pub makespan_full: f64,
    pub makespan_boost: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostCampaign {
    pub rows: Vec<CampaignRow>,
    pub mean_speedup: f64,
    pub max_abs_err: f64,
}

impl BoostCampaign {
    /// Rows as `trial,output,target,abs_err,eps,makespan_full,makespan_boost,speedup`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Random inputs and latency draws; every trial must satisfy
/// `|F(x) - output| <= ε`, otherwise the first failing trial is returned as a
/// violation.
pub fn boost_campaign(
    net: &Network,
    target: &dyn Target,
    eps: f64,
    latency: &LatencyModel,
    policy: &BoostPolicy,
    trials: usize,
    seed: u64,
) -> Result<BoostCampaign> {
    if trials == 0 {
        return Err(Error::Argument("at least one trial is required".into()));
    }
    if target.dim() != net.input_dim {
        return Err(Error::Shape(format!(
            "target has dimension {}, network {}",
            target.dim(),
            net.input_dim
        )));
    }
    let rows: Vec<Result<CampaignRow>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = rng_for(seed, &[trial]);
            let x: Vec<f64> = (0..net.input_dim)
                .map(|_| rng.random_range(0.0..=1.0))
                .collect();
            let lat = latency.with_seed(derive_seed(latency.seed, &[trial]));
            let out = simulate_boost(net, &x, &lat, policy)?;
            let t = target.eval(&x);
            let abs_err = (t - out.output).abs();
            if abs_err > eps {
                return Err(Error::Violation(Box::new(Counterexample {
                    context: format!("boost trial {trial}: target {t}"),
                    input: x,
                    scenario: out.scenario,
                    nominal_output: out.nominal,
                    faulty_output: out.output,
                    observed_error: abs_err,
                    bound: eps,
                    network: Some(net.clone()),
                })));
            }
            Ok(CampaignRow {
                trial,
                output: out.output,
                target: t,
                abs_err,
                eps,
                makespan_full: out.makespan_full,
                makespan_boost: out.makespan_boosted,
                speedup: if out.makespan_boosted > 0.0 {
                    out.makespan_full / out.makespan_boosted
                } else {
                    1.0
                },
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mean_speedup = rows.iter().map(|r| r.speedup).sum::<f64>() / rows.len() as f64;
    let max_abs_err = rows.iter().map(|r| r.abs_err).fold(0.0, f64::max);
    Ok(BoostCampaign {
        rows,
        mean_speedup,
        max_abs_err,
    })
}
