use neurofail::boost::{simulate_boost, BoostPolicy, LatencyDistribution, LatencyModel};
use neurofail::*;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

#[derive(Debug, Clone)]
struct Spec {
    activation: ActivationSpec,
    input_dim: usize,
    // weights[l][j] = (incoming weights, bias)
    layers: Vec<Vec<(Vec<f64>, f64)>>,
    output: (Vec<f64>, f64),
}

fn phi(a: &ActivationSpec, x: f64) -> f64 {
    match a.kind {
        ActivationKind::Sigmoid => 1.0 / (1.0 + (-4.0 * a.k() * x).exp()),
        ActivationKind::Tanh => (a.k() * x).tanh(),
    }
}

fn reference(spec: &Spec, x: &[f64], with_bias: bool) -> f64 {
    let mut y = x.to_vec();
    for layer in &spec.layers {
        y = layer
            .iter()
            .map(|(w, b)| {
                let s: f64 = w.iter().zip(&y).map(|(w, v)| w * v).sum();
                phi(&spec.activation, if with_bias { s + b } else { s })
            })
            .collect();
    }
    let s: f64 = spec.output.0.iter().zip(&y).map(|(w, v)| w * v).sum();
    if with_bias {
        s + spec.output.1
    } else {
        s
    }
}

fn plain(spec: &Spec) -> Network {
    Network::from_weights(
        spec.input_dim,
        spec.activation,
        spec.layers
            .iter()
            .map(|l| l.iter().map(|(w, _)| w.clone()).collect())
            .collect(),
        spec.output.0.clone(),
    )
    .unwrap()
}

/// The same network with every bias carried by a constant neuron at index 0
/// of each layer, and by a constant input for layer 1.
fn biased(spec: &Spec) -> Network {
    let mut layers = Vec::new();
    for (l, layer) in spec.layers.iter().enumerate() {
        let fan_in = if l == 0 {
            spec.input_dim + 1
        } else {
            spec.layers[l - 1].len() + 1
        };
        let mut rows = vec![vec![0.0; fan_in]];
        for (w, b) in layer {
            rows.push(if l == 0 {
                w.iter().copied().chain([*b]).collect()
            } else {
                [*b].into_iter().chain(w.iter().copied()).collect()
            });
        }
        layers.push(Layer::new(rows).with_constant_neuron(0));
    }
    let output = [spec.output.1]
        .into_iter()
        .chain(spec.output.0.iter().copied())
        .collect();
    let net = Network {
        input_dim: spec.input_dim,
        activation: spec.activation,
        layers,
        output_weights: output,
        metadata: Default::default(),
        input_constant: true,
        fractional_bits: None,
    };
    net.validate().unwrap();
    net
}

fn activation() -> impl Strategy<Value = ActivationSpec> {
    (prop::bool::ANY, 0.25f64..4.0).prop_map(|(tanh, k)| {
        if tanh {
            ActivationSpec::tanh(k).unwrap()
        } else {
            ActivationSpec::sigmoid(k).unwrap()
        }
    })
}

fn row(n: usize) -> impl Strategy<Value = (Vec<f64>, f64)> {
    (prop::collection::vec(-3.0f64..3.0, n), -2.0f64..2.0)
}

fn spec() -> impl Strategy<Value = Spec> {
    (
        activation(),
        1usize..=3,
        prop::collection::vec(1usize..=8, 1..=4),
    )
        .prop_flat_map(|(activation, input_dim, widths)| {
            let mut fan_in = input_dim;
            let layers: Vec<_> = widths
                .iter()
                .map(|&n| {
                    let s = prop::collection::vec(row(fan_in), n);
                    fan_in = n;
                    s
                })
                .collect();
            (Just(activation), Just(input_dim), layers, row(fan_in)).prop_map(
                |(activation, input_dim, layers, output)| Spec {
                    activation,
                    input_dim,
                    layers,
                    output,
                },
            )
        })
}

fn input(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, dim)
}

fn spec_and_input() -> impl Strategy<Value = (Spec, Vec<f64>)> {
    spec().prop_flat_map(|s| {
        let d = s.input_dim;
        (Just(s), input(d))
    })
}

fn scenario_mode() -> impl Strategy<Value = Selection> {
    prop_oneof![
        Just(Selection::crash()),
        Just(Selection::byzantine(ByzantinePolicy::WorstCaseSign)),
        any::<u64>()
            .prop_map(|seed| Selection::byzantine(ByzantinePolicy::RandomInCapacity { seed })),
        (-2.0f64..2.0).prop_map(|value| Selection::byzantine(ByzantinePolicy::Constant { value })),
        (-3.0f64..3.0).prop_map(|delta| Selection::byzantine(ByzantinePolicy::Offset { delta })),
    ]
}

fn counts(widths: Vec<usize>) -> impl Strategy<Value = Vec<usize>> {
    widths.into_iter().map(|n| 0..=n).collect::<Vec<_>>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn forward_matches_a_naive_evaluator((s, x) in spec_and_input()) {
        let got = plain(&s).forward(&x).unwrap();
        prop_assert!((got - reference(&s, &x, false)).abs() <= 1e-12);
    }

    #[test]
    fn constant_neurons_act_as_biases((s, x) in spec_and_input()) {
        let got = biased(&s).forward(&x).unwrap();
        prop_assert!((got - reference(&s, &x, true)).abs() <= 1e-12);
    }

    #[test]
    fn byzantine_deviation_never_exceeds_capacity(
        (s, x) in spec_and_input(),
        mode in scenario_mode(),
        c in 0.01f64..2.0,
        pick in any::<prop::sample::Index>(),
    ) {
        // a single fault in the last hidden layer moves the output by
        // exactly w_i times the deviation it transmits
        let mut s = s;
        s.layers.truncate(1);
        let n = s.layers[0].len();
        s.output.0.truncate(n);
        s.output.0.resize(n, 1.0);
        let net = plain(&s);
        let i = pick.index(n);
        let w = net.output_weights[i];
        prop_assume!(w.abs() > 1e-3);
        let scenario = FaultScenario::empty(Capacity::bounded(c).unwrap())
            .with_neuron(1, i, mode.mode);
        let diff = forward_faulty(&net, &x, &scenario).unwrap() - net.forward(&x).unwrap();
        let deviation = (diff / w).abs();
        if matches!(mode.mode, FaultMode::Byzantine(_)) {
            prop_assert!(deviation <= c * (1.0 + 1e-9));
        }
    }

    #[test]
    fn crashed_neuron_equals_zero_outgoing_weights(
        (s, x) in spec_and_input(),
        layer in any::<prop::sample::Index>(),
        unit in any::<prop::sample::Index>(),
    ) {
        let net = plain(&s);
        let l = layer.index(net.depth()) + 1;
        let i = unit.index(net.width(l));
        let scenario = FaultScenario::empty(Capacity::Bounded(1.0)).with_neuron(l, i, FaultMode::Crash);
        let mut zeroed = net.clone();
        if l == net.depth() {
            zeroed.output_weights[i] = 0.0;
        } else {
            for row in &mut zeroed.layers[l].weights {
                row[i] = 0.0;
            }
        }
        let a = forward_faulty(&net, &x, &scenario).unwrap();
        prop_assert!((a - zeroed.forward(&x).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn crashed_synapse_equals_zero_weight(
        (s, x) in spec_and_input(),
        layer in any::<prop::sample::Index>(),
        to in any::<prop::sample::Index>(),
        from in any::<prop::sample::Index>(),
    ) {
        let net = plain(&s);
        let l = layer.index(net.depth() + 1) + 1;
        let j = to.index(net.width(l));
        let i = from.index(net.width(l - 1));
        let scenario = FaultScenario::empty(Capacity::Bounded(1.0)).with_synapse(l, j, i, FaultMode::Crash);
        let mut zeroed = net.clone();
        if l == net.depth() + 1 {
            zeroed.output_weights[i] = 0.0;
        } else {
            zeroed.layers[l - 1].weights[j][i] = 0.0;
        }
        let a = forward_faulty(&net, &x, &scenario).unwrap();
        prop_assert!((a - zeroed.forward(&x).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn neuron_faults_stay_within_fep(
        (s, x, f) in spec_and_input().prop_flat_map(|(s, x)| {
            let w: Vec<usize> = s.layers.iter().map(Vec::len).collect();
            (Just(s), Just(x), counts(w))
        }),
        mode in scenario_mode(),
        c in 0.01f64..2.0,
        seed in any::<u64>(),
    ) {
        let net = plain(&s);
        let dist = FaultDistribution::neurons(f);
        // a crash deviates by up to the activation maximum
        let c = match mode.mode {
            FaultMode::Crash => c.max(net.activation.sup_abs()),
            FaultMode::Byzantine(_) => c,
        };
        let capacity = Capacity::bounded(c).unwrap();
        let scenario = random_scenario(&net, &dist, capacity, seed, &mode).unwrap();
        let err = (forward_faulty(&net, &x, &scenario).unwrap() - net.forward(&x).unwrap()).abs();
        let bound = fep_neurons(&NetworkProfile::of(&net), &dist, c).unwrap().fep;
        prop_assert!(err <= bound + 1e-9, "error {err} above bound {bound}");
    }

    #[test]
    fn synapse_faults_stay_within_fep(
        (s, x, f) in spec_and_input().prop_flat_map(|(s, x)| {
            let mut fan_in = s.input_dim;
            let mut sizes = Vec::new();
            for layer in &s.layers {
                sizes.push(layer.len() * fan_in);
                fan_in = layer.len();
            }
            sizes.push(fan_in);
            (Just(s), Just(x), counts(sizes))
        }),
        mode in scenario_mode(),
        c in 0.01f64..2.0,
        seed in any::<u64>(),
    ) {
        let net = plain(&s);
        let dist = FaultDistribution::synapses(f);
        // a crash deviates by up to the activation maximum
        let c = match mode.mode {
            FaultMode::Crash => c.max(net.activation.sup_abs()),
            FaultMode::Byzantine(_) => c,
        };
        let capacity = Capacity::bounded(c).unwrap();
        let scenario = random_scenario(&net, &dist, capacity, seed, &mode).unwrap();
        let err = (forward_faulty(&net, &x, &scenario).unwrap() - net.forward(&x).unwrap()).abs();
        let bound = fep_synapses(&NetworkProfile::of(&net), &dist, c).unwrap().fep;
        prop_assert!(err <= bound + 1e-9, "error {err} above bound {bound}");
    }

    #[test]
    fn random_scenarios_are_pure(
        s in spec(),
        seed in any::<u64>(),
        mode in scenario_mode(),
    ) {
        let net = plain(&s);
        let dist = FaultDistribution::neurons(net.widths().iter().map(|n| n / 2).collect());
        let a = random_scenario(&net, &dist, Capacity::Bounded(1.0), seed, &mode).unwrap();
        let b = random_scenario(&net, &dist, Capacity::Bounded(1.0), seed, &mode).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn boosted_output_is_the_induced_crash_output(
        (s, x, cuts) in spec_and_input().prop_flat_map(|(s, x)| {
            let w: Vec<usize> = s.layers.iter().map(|l| l.len() - 1).collect();
            (Just(s), Just(x), counts(w))
        }),
        seed in any::<u64>(),
    ) {
        let net = plain(&s);
        let profile = NetworkProfile::of(&net);
        let fep = fep_neurons(&profile, &FaultDistribution::neurons(cuts.clone()), 1.0).unwrap().fep;
        let policy = BoostPolicy::new(&net, cuts, fep + 1.0, 0.5).unwrap();
        let latency = LatencyModel::new(LatencyDistribution::Exponential { mean: 1.0 }, seed).unwrap();
        let out = simulate_boost(&net, &x, &latency, &policy).unwrap();
        let replay = forward_faulty(&net, &x, &out.scenario).unwrap();
        prop_assert_eq!(out.output.to_bits(), replay.to_bits());
        prop_assert!(out.makespan_boosted <= out.makespan_full);
        prop_assert_eq!(out, simulate_boost(&net, &x, &latency, &policy).unwrap());
    }
}

#[test]
fn adversarial_choice_dominates_random_on_single_layer_nets() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = spec().prop_map(|mut s| {
        s.layers.truncate(1);
        let n = s.layers[0].len();
        s.output.0.resize(n, 0.5);
        s
    });
    for _ in 0..100 {
        let s = strategy.new_tree(&mut runner).unwrap().current();
        let net = plain(&s);
        let n = net.width(1);
        let dist = FaultDistribution::neurons(vec![n.div_ceil(2)]);
        let capacity = Capacity::Bounded(0.5);
        let worst = Selection::byzantine(ByzantinePolicy::WorstCaseSign);
        let adversarial = adversarial_scenario(&net, &dist, capacity, &worst).unwrap();
        for k in 0..5 {
            let x: Vec<f64> = (0..s.input_dim)
                .map(|i| ((i + k) as f64 * 0.37) % 1.0)
                .collect();
            let nominal = net.forward(&x).unwrap();
            let a = (forward_faulty(&net, &x, &adversarial).unwrap() - nominal).abs();
            for seed in 0..20 {
                let r = random_scenario(&net, &dist, capacity, seed, &worst).unwrap();
                let e = (forward_faulty(&net, &x, &r).unwrap() - nominal).abs();
                assert!(a >= e - 1e-12, "random {e} beat adversarial {a}");
            }
        }
    }
}
