//! Experimental validation of the analytic bounds: approximation error on a
//! grid, Monte Carlo fault injection, exhaustive enumeration, and the
//! constructions that show the bounds are tight or necessary.

mod demos;
mod ksweep;

use std::fmt;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{fep_neurons, fep_synapses, quantization_bound, NetworkProfile};
use crate::error::{Error, Result};
use crate::fault::{
    adversarial_scenario, enumerate_scenarios, forward_faulty, random_scenario, ByzantinePolicy,
    Capacity, FaultDistribution, FaultKind, FaultMode, FaultScenario, Selection,
};
use crate::net::{ActivationSpec, Layer, Network};
use crate::seed::{derive_seed, rng_for};
use crate::target::{Grid, Target};
use crate::trainer::quantize;

pub use demos::{
    lemma1_demo, tightness_experiment, Lemma1Outcome, TightnessConfig, TightnessOutcome,
};
pub use ksweep::{fit_loglog_slope, k_sweep, KSweep, KSweepRow, LinearRegimeFamily};

/// Evidence that an observed error exceeded the bound it was checked against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub context: String,
    pub input: Vec<f64>,
    pub scenario: FaultScenario,
    pub nominal_output: f64,
    pub faulty_output: f64,
    pub observed_error: f64,
    pub bound: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<Network>,
}

impl Counterexample {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: observed error {} exceeds {} at input {:?}",
            self.context, self.observed_error, self.bound, self.input
        )
    }
}

/// `error / bound`, with `0 / 0 = 0`.
pub fn utilization(error: f64, bound: f64) -> f64 {
    if bound == 0.0 {
        if error == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        error / bound
    }
}

/// One fault-injection trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub scenario_id: u64,
    pub input: Vec<f64>,
    pub nominal_output: f64,
    pub faulty_output: f64,
    pub observed_error: f64,
    pub bound: f64,
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub trials: usize,
    pub max_error: f64,
    pub mean_error: f64,
    pub bound: f64,
    pub max_utilization: f64,
}

impl SweepRow {
    fn from_records(value: f64, bound: f64, records: &[ExperimentRecord]) -> Self {
        let trials = records.len();
        let max_error = records.iter().map(|r| r.observed_error).fold(0.0, f64::max);
        let total: f64 = records.iter().map(|r| r.observed_error).sum();
        Self {
            value,
            trials,
            max_error,
            mean_error: if trials == 0 {
                0.0
            } else {
                total / trials as f64
            },
            bound,
            max_utilization: records.iter().map(|r| r.utilization).fold(0.0, f64::max),
        }
    }
}

/// Aggregated trials, one row per value of the swept axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub rows: Vec<SweepRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<ExperimentRecord>,
}

#[derive(Serialize)]
struct RecordRow {
    trial: u64,
    observed: f64,
    bound: f64,
    utilization: f64,
}

impl SweepResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Per-trial records as `trial,observed,bound,utilization`.
    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(RecordRow {
                trial: r.scenario_id,
                observed: r.observed_error,
                bound: r.bound,
                utilization: r.utilization,
            })?;
        }
        if self.records.is_empty() {
            w.write_record(["trial", "observed", "bound", "utilization"])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Grid estimate of `sup_x |F(x) - F_neu(x)|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsPrime {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub grid_per_dim: usize,
    pub points: usize,
}

/// Maximum of `|F(x) - F_neu(x)|` over the uniform grid with `grid_per_dim`
/// points per axis. This is a lower estimate of the supremum over the cube.
pub fn measure_eps_prime(
    net: &Network,
    target: &dyn Target,
    grid_per_dim: usize,
) -> Result<EpsPrime> {
    if target.dim() != net.input_dim {
        return Err(Error::Shape(format!(
            "target has dimension {}, network {}",
            target.dim(),
            net.input_dim
        )));
    }
    let grid = Grid::new(net.input_dim, grid_per_dim)?;
    let points = grid.len();
    let mut best = EpsPrime {
        value: 0.0,
        argmax: vec![0.0; net.input_dim],
        grid_per_dim,
        points,
    };
    for x in grid {
        let err = (target.eval(&x) - net.forward(&x)?).abs();
        if err > best.value {
            best.value = err;
            best.argmax = x;
        }
    }
    Ok(best)
}

/// Where the faulty units of each trial come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioSource {
    Random,
    /// The heaviest-weight units, as in the tightness argument.
    Adversarial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    /// A fresh policy per trial: worst-case sign, constant, random or offset,
    /// plus crashes when the capacity covers the activation range.
    Mixed,
    Fixed(ByzantinePolicy),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub scenarios: ScenarioSource,
    pub policies: PolicySource,
    pub include_constant: bool,
    pub keep_records: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scenarios: ScenarioSource::Random,
            policies: PolicySource::Mixed,
            include_constant: false,
            keep_records: true,
        }
    }
}

const TRIAL_STREAM: u64 = 0x7472_6961;
pub const SOUNDNESS_TOLERANCE: f64 = 1e-9;

fn random_input(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(0.0..=1.0)).collect()
}

fn draw_mode(rng: &mut impl Rng, policies: PolicySource, c: f64, sup: f64) -> FaultMode {
    match policies {
        PolicySource::Fixed(p) => FaultMode::Byzantine(p),
        PolicySource::Mixed => {
            let choices = if c >= sup { 5 } else { 4 };
            match rng.random_range(0..choices) {
                0 => FaultMode::Byzantine(ByzantinePolicy::WorstCaseSign),
                1 => FaultMode::Byzantine(ByzantinePolicy::Constant {
                    value: rng.random_range(-(1.0 + 2.0 * c)..=1.0 + 2.0 * c),
                }),
                2 => FaultMode::Byzantine(ByzantinePolicy::RandomInCapacity { seed: rng.random() }),
                3 => FaultMode::Byzantine(ByzantinePolicy::Offset {
                    delta: rng.random_range(-2.0 * c..=2.0 * c),
                }),
                _ => FaultMode::Crash,
            }
        }
    }
}

/// The bound matching the distribution's kind.
pub fn fep_for(net: &Network, dist: &FaultDistribution, capacity: f64) -> Result<f64> {
    let profile = NetworkProfile::of(net);
    Ok(match dist.kind {
        FaultKind::Neuron => fep_neurons(&profile, dist, capacity)?.fep,
        FaultKind::Synapse => fep_synapses(&profile, dist, capacity)?.fep,
    })
}

/// Runs `trials` independent fault injections drawn from `dist` with the
/// given capacity and checks `|F_neu(x) - F_fail(x)| <= Fep` on each. The
/// first violating trial (in trial order) is returned as
/// [`Error::Violation`].
pub fn soundness_sweep(
    net: &Network,
    dist: &FaultDistribution,
    capacity: f64,
    trials: usize,
    seed: u64,
    config: &SweepConfig,
) -> Result<SweepResult> {
    if trials == 0 {
        return Err(Error::Argument("at least one trial is required".into()));
    }
    dist.validate_for(net)?;
    let bound = fep_for(net, dist, capacity)?;
    let cap = Capacity::bounded(capacity)?;
    let sup = net.activation.sup_abs();

    let outcomes: Vec<Result<ExperimentRecord>> = (0..trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = rng_for(seed, &[TRIAL_STREAM, trial]);
            let input = random_input(&mut rng, net.input_dim);
            let mode = draw_mode(&mut rng, config.policies, capacity, sup);
            let selection = Selection {
                mode,
                include_constant: config.include_constant,
            };
            let scenario = match config.scenarios {
                ScenarioSource::Random => {
                    random_scenario(net, dist, cap, rng.random(), &selection)?
                }
                ScenarioSource::Adversarial => adversarial_scenario(net, dist, cap, &selection)?,
            };
            let nominal_output = net.forward(&input)?;
            let faulty_output = forward_faulty(net, &input, &scenario)?;
            let observed_error = (nominal_output - faulty_output).abs();
            if observed_error > bound + SOUNDNESS_TOLERANCE {
                return Err(Error::Violation(Box::new(Counterexample {
                    context: format!("trial {trial} of a soundness sweep for {dist}"),
                    input,
                    scenario,
                    nominal_output,
                    faulty_output,
                    observed_error,
                    bound,
                    network: Some(net.clone()),
                })));
            }
            Ok(ExperimentRecord {
                scenario_id: trial,
                input,
                nominal_output,
                faulty_output,
                observed_error,
                bound,
                utilization: utilization(observed_error, bound),
            })
        })
        .collect();
    let records = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let row = SweepRow::from_records(dist.total() as f64, bound, &records);
    Ok(SweepResult {
        axis: "faults".into(),
        rows: vec![row],
        records: if config.keep_records {
            records
        } else {
            Vec::new()
        },
    })
}

/// Outcome of checking every scenario of a distribution on every grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForce {
    /// `max |F(x) - F_fail(x)| <= ε` over all scenarios and grid points.
    pub passed: bool,
    pub max_error: f64,
    pub scenarios: u128,
    pub points: usize,
    pub worst_input: Vec<f64>,
    pub worst_scenario: Option<FaultScenario>,
}

/// Ground truth for a certificate on a small network: enumerates every
/// scenario of `dist` (with the failure mode in `selection`) and every grid
/// input, and compares the faulty output with the target.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_certify(
    net: &Network,
    dist: &FaultDistribution,
    eps: f64,
    target: &dyn Target,
    capacity: Capacity,
    selection: &Selection,
    grid_per_dim: usize,
    cap: u128,
) -> Result<BruteForce> {
    if target.dim() != net.input_dim {
        return Err(Error::Shape(format!(
            "target has dimension {}, network {}",
            target.dim(),
            net.input_dim
        )));
    }
    let points: Vec<Vec<f64>> = Grid::new(net.input_dim, grid_per_dim)?.collect();
    let targets: Vec<f64> = points.iter().map(|x| target.eval(x)).collect();
    let scenarios: Vec<FaultScenario> =
        enumerate_scenarios(net, dist, capacity, selection, cap)?.collect();

    let worst: Vec<Result<(f64, usize)>> = scenarios
        .par_iter()
        .map(|s| {
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, (x, t)) in points.iter().zip(&targets).enumerate() {
                let err = (t - forward_faulty(net, x, s)?).abs();
                if err > best.0 {
                    best = (err, i);
                }
            }
            Ok(best)
        })
        .collect();
    let mut max_error = f64::NEG_INFINITY;
    let mut at = (0, 0);
    for (si, w) in worst.into_iter().enumerate() {
        let (err, pi) = w?;
        if err > max_error {
            max_error = err;
            at = (si, pi);
        }
    }
    Ok(BruteForce {
        passed: max_error <= eps,
        max_error,
        scenarios: scenarios.len() as u128,
        points: points.len(),
        worst_input: points[at.1].clone(),
        worst_scenario: scenarios.get(at.0).cloned(),
    })
}

/// A network with weights uniform in `[-scale, scale]`, deterministic in the
/// seed.
pub fn random_network(
    input_dim: usize,
    widths: &[usize],
    activation: ActivationSpec,
    scale: f64,
    seed: u64,
) -> Result<Network> {
    let mut rng = rng_for(seed, &[]);
    let mut prev = input_dim;
    let mut layers = Vec::with_capacity(widths.len());
    for &n in widths {
        let weights = (0..n)
            .map(|_| {
                (0..prev)
                    .map(|_| rng.random_range(-scale..=scale))
                    .collect()
            })
            .collect();
        layers.push(Layer::new(weights));
        prev = n;
    }
    let output = (0..prev)
        .map(|_| rng.random_range(-scale..=scale))
        .collect();
    let mut net = Network::new(input_dim, activation, layers, output)?;
    net.metadata
        .insert("seed".into(), derive_seed(seed, &[]).into());
    Ok(net)
}

/// The bound that applies to a single scenario: the Fep of its neuron
/// faults plus that of its synapse faults. `None` when capacity is unbounded.
pub fn scenario_bound(net: &Network, scenario: &FaultScenario) -> Result<Option<f64>> {
    let Capacity::Bounded(c) = scenario.capacity else {
        return Ok(None);
    };
    let mut bound = 0.0;
    if !scenario.neurons.is_empty() {
        bound += fep_for(net, &scenario.neuron_distribution(net), c)?;
    }
    if !scenario.synapses.is_empty() {
        bound += fep_for(net, &scenario.synapse_distribution(net), c)?;
    }
    Ok(Some(bound))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizationRow {
    pub bits: u32,
    pub lambda: f64,
    pub max_error: f64,
    pub bound: f64,
}

impl QuantizationRow {
    pub fn holds(&self) -> bool {
        self.max_error <= self.bound
    }
}

/// Rounds every neuron output to each precision in `bits` and compares the
/// worst grid deviation from the exact network against the precision bound.
pub fn quantization_sweep(
    net: &Network,
    bits: &[u32],
    grid_per_dim: usize,
) -> Result<Vec<QuantizationRow>> {
    let points: Vec<Vec<f64>> = Grid::new(net.input_dim, grid_per_dim)?.collect();
    let exact: Vec<f64> = points
        .iter()
        .map(|x| net.forward(x))
        .collect::<Result<_>>()?;
    let profile = NetworkProfile::of(net);
    bits.iter()
        .map(|&b| {
            let (q, lambdas) = quantize(net, b)?;
            let bound = quantization_bound(&profile, &lambdas)?;
            let mut max_error: f64 = 0.0;
            for (x, e) in points.iter().zip(&exact) {
                max_error = max_error.max((q.forward(x)? - e).abs());
            }
            Ok(QuantizationRow {
                bits: b,
                lambda: lambdas[0],
                max_error,
                bound,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::target::BuiltinTarget;

    fn small_net(seed: u64) -> Network {
        random_network(2, &[4, 3], ActivationSpec::sigmoid(1.0).unwrap(), 1.5, seed).unwrap()
    }

    #[test]
    fn scenario_bound_adds_both_kinds() {
        let net = small_net(4);
        let c = Capacity::bounded(0.5).unwrap();
        let s = FaultScenario::empty(c)
            .with_neuron(1, 0, FaultMode::Crash)
            .with_synapse(2, 1, 2, FaultMode::Crash);
        let n = fep_for(&net, &FaultDistribution::neurons(vec![1, 0]), 0.5).unwrap();
        let y = fep_for(&net, &FaultDistribution::synapses(vec![0, 1, 0]), 0.5).unwrap();
        assert!((scenario_bound(&net, &s).unwrap().unwrap() - (n + y)).abs() < 1e-15);
        let open = s.with_capacity(Capacity::Unbounded);
        assert_eq!(scenario_bound(&net, &open).unwrap(), None);
    }

    #[test]
    fn quantization_error_shrinks_with_bits_and_stays_bounded() {
        let net = small_net(5);
        let rows = quantization_sweep(&net, &[2, 6, 12], 9).unwrap();
        assert!(rows.iter().all(QuantizationRow::holds));
        assert!(rows[2].max_error < rows[0].max_error);
        assert_eq!(rows[1].lambda, 2f64.powi(-7));
    }

    #[test]
    fn eps_prime_of_a_net_against_itself_is_zero() {
        let net = small_net(1);
        let e = measure_eps_prime(&net, &net, 17).unwrap();
        assert_eq!(e.value, 0.0);
        assert_eq!(e.points, 289);
    }

    #[test]
    fn eps_prime_against_constant_with_silent_output() {
        let mut net =
            random_network(1, &[3], ActivationSpec::sigmoid(1.0).unwrap(), 1.0, 2).unwrap();
        net.output_weights = vec![0.0; 3];
        let e = measure_eps_prime(&net, &BuiltinTarget::Constant(0.5), 64).unwrap();
        assert_eq!(e.value, 0.5);
        assert!(measure_eps_prime(&net, &BuiltinTarget::Product, 8).is_err());
    }

    #[test]
    fn utilization_conventions() {
        assert_eq!(utilization(0.0, 0.0), 0.0);
        assert_eq!(utilization(0.5, 1.0), 0.5);
        assert!(utilization(0.1, 0.0).is_infinite());
    }

    #[test]
    fn zero_distribution_sweeps_to_zero() {
        let net = small_net(3);
        let dist = FaultDistribution::neurons(vec![0, 0]);
        let r = soundness_sweep(&net, &dist, 1.0, 50, 9, &SweepConfig::default()).unwrap();
        assert_eq!(r.rows[0].max_error, 0.0);
        assert_eq!(r.rows[0].bound, 0.0);
        assert!(r.records.iter().all(|rec| rec.utilization == 0.0));
    }

    #[test]
    fn sweep_is_sound_and_reproducible() {
        let net = small_net(4);
        let dist = FaultDistribution::neurons(vec![1, 2]);
        let a = soundness_sweep(&net, &dist, 0.5, 300, 11, &SweepConfig::default()).unwrap();
        let b = soundness_sweep(&net, &dist, 0.5, 300, 11, &SweepConfig::default()).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(a.rows[0].max_error <= a.rows[0].bound + SOUNDNESS_TOLERANCE);
        assert!(a.rows[0].max_error > 0.0);
        let mut csv = Vec::new();
        a.write_records_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("trial,observed,bound,utilization\n"));
        assert_eq!(text.lines().count(), 301);
    }

    #[test]
    fn synapse_sweep_is_sound() {
        let net = small_net(5);
        let dist = FaultDistribution::synapses(vec![2, 1, 1]);
        let r = soundness_sweep(&net, &dist, 1.0, 300, 12, &SweepConfig::default()).unwrap();
        assert!(r.rows[0].max_error <= r.rows[0].bound + SOUNDNESS_TOLERANCE);
    }

    #[test]
    fn absolute_clamp_is_not_covered_by_the_bound() {
        // one neuron near 1, Byzantine value -C on its only synapse: the
        // deviation is about 1 + C, more than the C the bound allows
        let net = Network::from_weights(
            1,
            ActivationSpec::sigmoid(1.0).unwrap(),
            vec![vec![vec![5.0]]],
            vec![1.0],
        )
        .unwrap();
        let c = 0.5;
        let scenario = FaultScenario::empty(Capacity::Bounded(c))
            .with_clamp(crate::fault::ClampMode::Absolute)
            .with_neuron(
                1,
                0,
                FaultMode::Byzantine(ByzantinePolicy::Constant { value: -c }),
            );
        let x = [1.0];
        let err = (net.forward(&x).unwrap() - forward_faulty(&net, &x, &scenario).unwrap()).abs();
        let bound = fep_for(&net, &FaultDistribution::neurons(vec![1]), c).unwrap();
        assert!(err > bound + 0.4, "{err} vs {bound}");
    }

    #[test]
    fn brute_force_with_no_faults_is_the_grid_error() {
        let net = random_network(1, &[3], ActivationSpec::sigmoid(1.0).unwrap(), 1.0, 6).unwrap();
        let target = BuiltinTarget::RidgeSine;
        let e = measure_eps_prime(&net, &target, 33).unwrap();
        let dist = FaultDistribution::neurons(vec![0]);
        let bf = brute_force_certify(
            &net,
            &dist,
            e.value,
            &target,
            Capacity::Bounded(1.0),
            &Selection::crash(),
            33,
            100,
        )
        .unwrap();
        assert!(bf.passed);
        assert_eq!(bf.max_error, e.value);
        assert_eq!(bf.scenarios, 1);
        let bf = brute_force_certify(
            &net,
            &dist,
            e.value * 0.99,
            &target,
            Capacity::Bounded(1.0),
            &Selection::crash(),
            33,
            100,
        )
        .unwrap();
        assert!(!bf.passed);
    }

    #[test]
    fn brute_force_counts_scenarios() {
        let net = small_net(7);
        let dist = FaultDistribution::neurons(vec![2, 1]);
        let bf = brute_force_certify(
            &net,
            &dist,
            10.0,
            &BuiltinTarget::Product,
            Capacity::Bounded(1.0),
            &Selection::crash(),
            5,
            1000,
        )
        .unwrap();
        assert_eq!(bf.scenarios, 18);
        assert_eq!(bf.points, 25);
        assert!(bf.passed);
        let err = brute_force_certify(
            &net,
            &dist,
            10.0,
            &BuiltinTarget::Product,
            Capacity::Bounded(1.0),
            &Selection::crash(),
            5,
            10,
        );
        assert!(matches!(
            err,
            Err(Error::CapExceeded { count: 18, cap: 10 })
        ));
    }

    #[test]
    fn random_networks_are_seeded() {
        assert_eq!(small_net(8), small_net(8));
        assert_ne!(small_net(8), small_net(9));
        let net = small_net(8);
        assert!(net.max_weights().iter().all(|w| *w <= 1.5));
    }
}
