use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use neurofail::boost::{boost_campaign, BoostPolicy, LatencyDistribution, LatencyModel};
use neurofail::empirical::{
    brute_force_certify, k_sweep, lemma1_demo, measure_eps_prime, quantization_sweep,
    soundness_sweep, tightness_experiment, Counterexample, LinearRegimeFamily, PolicySource,
    QuantizationRow, ScenarioSource, SweepConfig, TightnessConfig,
};
use neurofail::fault::DEFAULT_ENUMERATION_CAP;
use neurofail::target::default_grid;
use neurofail::trainer::{quantize, train, Optimizer, TrainConfig};
use neurofail::*;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "neurofail",
    version,
    about = "Fault-tolerance bounds and experiments for feed-forward networks"
)]
struct Cli {
    /// Master seed for every random choice.
    #[arg(long, global = true, env = "NEUROFAIL_SEED", default_value_t = 0)]
    seed: u64,

    /// Where counterexamples are written when a check fails.
    #[arg(long, global = true, default_value = "counterexample.json")]
    counterexample: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network on a built-in target.
    Train(TrainArgs),
    /// Compute Fep for a fault distribution.
    Analyze(AnalyzeArgs),
    /// Certify a fault distribution against ε and ε'.
    Certify(CertifyArgs),
    /// Evaluate one fault scenario, or a Monte Carlo soundness sweep.
    Inject(InjectArgs),
    /// Sweep the Lipschitz constant on the linear-regime family.
    SweepK(SweepKArgs),
    /// Compare quantized and exact outputs with the precision bound.
    Quantize(QuantizeArgs),
    /// Simulate early cutoff with random latencies.
    Boost(BoostArgs),
    /// Check a distribution by enumerating every scenario.
    BruteCheck(BruteArgs),
    /// Break a network with one unbounded Byzantine neuron.
    Lemma1Demo(Lemma1Args),
    /// Run the worst-case single-layer crash construction.
    Tightness(TightnessArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Neuron,
    Synapse,
}

impl From<Kind> for FaultKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Neuron => FaultKind::Neuron,
            Kind::Synapse => FaultKind::Synapse,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Activation {
    Sigmoid,
    Tanh,
}

impl From<Activation> for ActivationKind {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Sigmoid => ActivationKind::Sigmoid,
            Activation::Tanh => ActivationKind::Tanh,
        }
    }
}

#[derive(Args)]
struct DistArgs {
    /// Faults per layer, comma separated.
    #[arg(long)]
    dist: String,
    #[arg(long, value_enum, default_value = "neuron")]
    kind: Kind,
    /// Transmission capacity C; the activation's maximum (crash faults) if omitted.
    #[arg(long)]
    capacity: Option<f64>,
}

impl DistArgs {
    fn distribution(&self) -> anyhow::Result<FaultDistribution> {
        Ok(FaultDistribution::parse(self.kind.into(), &self.dist)?)
    }

    fn capacity_for(&self, net: &Network) -> f64 {
        self.capacity.unwrap_or_else(|| net.activation.sup_abs())
    }
}

#[derive(Args)]
struct TrainArgs {
    /// ridge_sine, smooth_xor, product or constant:<c>
    #[arg(long)]
    target: BuiltinTarget,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    layers: Vec<usize>,
    #[arg(long, value_enum, default_value = "sigmoid")]
    activation: Activation,
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    /// Clip weights into layers 2..=L+1 to this magnitude.
    #[arg(long)]
    weight_cap: Option<f64>,
    #[arg(long, default_value_t = 256)]
    samples: usize,
    /// Stop once the grid error reaches this value.
    #[arg(long)]
    target_eps_prime: Option<f64>,
    /// Plain gradient descent instead of Adam.
    #[arg(long)]
    sgd: bool,
    #[arg(long)]
    no_bias: bool,
    #[arg(long)]
    out: PathBuf,
    /// Training log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    net: PathBuf,
    #[command(flatten)]
    dist: DistArgs,
    /// With --eps-prime, also list the maximal tolerable neuron distributions.
    #[arg(long, requires = "eps_prime")]
    eps: Option<f64>,
    #[arg(long)]
    eps_prime: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    net: PathBuf,
    #[command(flatten)]
    dist: DistArgs,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    eps_prime: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InjectArgs {
    #[arg(long)]
    net: PathBuf,
    /// Scenario document to evaluate at --input.
    #[arg(long, conflicts_with = "dist")]
    scenario: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    input: Option<Vec<f64>>,
    /// Faults per layer for a soundness sweep.
    #[arg(long)]
    dist: Option<String>,
    #[arg(long, value_enum, default_value = "neuron")]
    kind: Kind,
    #[arg(long)]
    capacity: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    /// Use the heaviest-weight units with worst-case values.
    #[arg(long)]
    adversarial: bool,
    /// Per-trial CSV of the sweep.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepKArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,4")]
    k: Vec<f64>,
    /// Layer whose neurons fail.
    #[arg(long, default_value_t = 1)]
    layer: usize,
    #[arg(long, default_value_t = 1)]
    faults: usize,
    #[arg(long, value_delimiter = ',', default_value = "4,4,4")]
    widths: Vec<usize>,
    #[arg(long, value_enum, default_value = "tanh")]
    activation: Activation,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "4,6,8,10")]
    bits: Vec<u32>,
    /// Grid points per input axis.
    #[arg(long)]
    grid: Option<usize>,
    /// Save the network quantized to the last --bits value.
    #[arg(long)]
    save: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Latency {
    Uniform,
    Exponential,
    HeavyTail,
}

#[derive(Args)]
struct BoostArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    target: BuiltinTarget,
    #[arg(long)]
    eps: f64,
    /// Measured on the default grid if omitted.
    #[arg(long)]
    eps_prime: Option<f64>,
    /// Drops per layer, comma separated.
    #[arg(long, conflicts_with = "fraction")]
    cuts: Option<String>,
    /// Largest certified ceil(fraction N_l) cut.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long, value_enum, default_value = "heavy-tail")]
    latency: Latency,
    #[arg(long, default_value_t = 1.0)]
    mean: f64,
    #[arg(long, default_value_t = 0.2)]
    p_straggler: f64,
    #[arg(long, default_value_t = 10.0)]
    straggler_factor: f64,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BruteArgs {
    #[arg(long)]
    net: PathBuf,
    #[command(flatten)]
    dist: DistArgs,
    #[arg(long)]
    target: BuiltinTarget,
    #[arg(long)]
    eps: f64,
    #[arg(long)]
    grid: Option<usize>,
    /// Byzantine worst-case-sign faults instead of crashes.
    #[arg(long)]
    byzantine: bool,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP)]
    cap: u128,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Lemma1Args {
    #[arg(long)]
    net: PathBuf,
    #[arg(long)]
    eps: f64,
    #[arg(long, value_delimiter = ',')]
    input: Option<Vec<f64>>,
    /// Scenario document output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TightnessArgs {
    #[arg(long, default_value_t = 10)]
    neurons: usize,
    #[arg(long, default_value_t = 2)]
    fail: usize,
    #[arg(long, default_value_t = 0.3)]
    w_m: f64,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    k: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Verdict {
    Pass,
    Fail,
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => std::fs::write(p, format!("{text}\n"))
            .with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = io::stdout().lock();
            writeln!(stdout, "{text}")?;
            Ok(())
        }
    }
}

fn create(path: &Path) -> anyhow::Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn load(path: &Path) -> anyhow::Result<Network> {
    Network::load(path).with_context(|| format!("loading {}", path.display()))
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn run_train(a: &TrainArgs, seed: u64) -> anyhow::Result<Verdict> {
    let cfg = TrainConfig {
        layer_sizes: a.layers.clone(),
        activation: ActivationSpec::new(a.activation.into(), a.k)?,
        bias: !a.no_bias,
        learning_rate: a.lr,
        epochs: a.epochs,
        samples: a.samples,
        seed,
        target_eps_prime: a.target_eps_prime,
        weight_decay: a.weight_decay,
        weight_cap: a.weight_cap,
        optimizer: if a.sgd {
            Optimizer::Sgd
        } else {
            TrainConfig::default().optimizer
        },
        ..Default::default()
    };
    let out = train(&a.target, &cfg)?;
    out.network.save(&a.out)?;
    if let Some(log) = &a.log {
        out.write_log_csv(create(log)?)?;
    }
    emit(
        None,
        &serde_json::to_string_pretty(&json!({
            "target": a.target.to_string(),
            "eps_prime": out.eps_prime.value,
            "argmax": out.eps_prime.argmax,
            "grid_per_dim": out.eps_prime.grid_per_dim,
            "max_weights": out.network.max_weights(),
        }))?,
    )?;
    Ok(Verdict::Pass)
}

fn report_for(
    net: &Network,
    dist: &DistArgs,
    eps: Option<(f64, f64)>,
) -> anyhow::Result<FepReport> {
    let profile = NetworkProfile::of(net);
    let d = dist.distribution()?;
    d.validate_for(net)?;
    let c = dist.capacity_for(net);
    Ok(match (d.kind, eps) {
        (FaultKind::Neuron, None) => fep_neurons(&profile, &d, c)?,
        (FaultKind::Synapse, None) => fep_synapses(&profile, &d, c)?,
        (FaultKind::Neuron, Some((e, ep))) => certify_neurons(&profile, &d, e, ep, c)?,
        (FaultKind::Synapse, Some((e, ep))) => certify_synapses(&profile, &d, e, ep, c)?,
    })
}

fn run_analyze(a: &AnalyzeArgs) -> anyhow::Result<Verdict> {
    let net = load(&a.net)?;
    let report = report_for(&net, &a.dist, None)?;
    let mut doc = serde_json::to_value(&report)?;
    if let (Some(eps), Some(eps_prime)) = (a.eps, a.eps_prime) {
        let frontier = max_tolerable(
            &NetworkProfile::of(&net),
            eps,
            eps_prime,
            a.dist.capacity_for(&net),
            bounds::DEFAULT_SEARCH_CAP,
        )?;
        doc["max_tolerable"] = serde_json::to_value(&frontier)?;
    }
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&doc)?)?;
    Ok(Verdict::Pass)
}

fn run_certify(a: &CertifyArgs) -> anyhow::Result<Verdict> {
    let net = load(&a.net)?;
    let report = report_for(&net, &a.dist, Some((a.eps, a.eps_prime)))?;
    emit(a.out.as_deref(), &report.to_json()?)?;
    Ok(verdict(report.certified()))
}

fn run_inject(a: &InjectArgs, seed: u64, counterexample: &Path) -> anyhow::Result<Verdict> {
    let net = load(&a.net)?;
    if let Some(path) = &a.scenario {
        let doc =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let scenario = FaultScenario::from_json(&doc)?;
        let x = a.input.clone().unwrap_or_else(|| vec![0.5; net.input_dim]);
        InputVector::new(x.clone())?;
        let nominal = net.forward(&x)?;
        let faulty = forward_faulty(&net, &x, &scenario)?;
        let error = (nominal - faulty).abs();
        let bound = empirical::scenario_bound(&net, &scenario)?;
        emit(
            a.out.as_deref(),
            &serde_json::to_string_pretty(&json!({
                "input": x,
                "nominal_output": nominal,
                "faulty_output": faulty,
                "observed_error": error,
                "bound": bound,
            }))?,
        )?;
        if let Some(b) = bound {
            if scenario.clamp == ClampMode::Deviation && error > b + empirical::SOUNDNESS_TOLERANCE
            {
                let cx = Counterexample {
                    context: "single injected scenario".into(),
                    input: x,
                    scenario,
                    nominal_output: nominal,
                    faulty_output: faulty,
                    observed_error: error,
                    bound: b,
                    network: Some(net),
                };
                std::fs::write(counterexample, cx.to_json()?)?;
                return Ok(Verdict::Fail);
            }
        }
        return Ok(Verdict::Pass);
    }
    let Some(dist) = &a.dist else {
        bail!("either --scenario or --dist is required");
    };
    let dist = FaultDistribution::parse(a.kind.into(), dist)?;
    let c = a.capacity.unwrap_or_else(|| net.activation.sup_abs());
    let config = if a.adversarial {
        SweepConfig {
            scenarios: ScenarioSource::Adversarial,
            policies: PolicySource::Fixed(ByzantinePolicy::WorstCaseSign),
            ..Default::default()
        }
    } else {
        SweepConfig::default()
    };
    let sweep = soundness_sweep(&net, &dist, c, a.trials, seed, &config)?;
    if let Some(path) = &a.csv {
        sweep.write_records_csv(create(path)?)?;
    }
    let summary = json!({ "axis": sweep.axis, "rows": sweep.rows });
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&summary)?)?;
    Ok(Verdict::Pass)
}

fn run_sweep_k(a: &SweepKArgs, seed: u64) -> anyhow::Result<Verdict> {
    let family = LinearRegimeFamily {
        kind: a.activation.into(),
        widths: a.widths.clone(),
        ..Default::default()
    };
    if a.layer == 0 || a.layer > a.widths.len() {
        bail!("--layer must be between 1 and {}", a.widths.len());
    }
    let mut f = vec![0; a.widths.len()];
    f[a.layer - 1] = a.faults;
    let sweep = k_sweep(
        &family,
        &FaultDistribution::neurons(f),
        &a.k,
        a.trials,
        seed,
    )?;
    match &a.out {
        Some(p) => sweep.write_csv(create(p)?)?,
        None => sweep.write_csv(io::stdout().lock())?,
    }
    eprintln!(
        "fep slope {:.6}, error slope {:.6}",
        sweep.fep_slope, sweep.error_slope
    );
    Ok(Verdict::Pass)
}

fn run_quantize(a: &QuantizeArgs) -> anyhow::Result<Verdict> {
    let net = load(&a.net)?;
    let grid = a.grid.unwrap_or_else(|| default_grid(net.input_dim));
    let rows = quantization_sweep(&net, &a.bits, grid)?;
    if let (Some(path), Some(&bits)) = (&a.save, a.bits.last()) {
        quantize(&net, bits)?.0.save(path)?;
    }
    emit(
        a.out.as_deref(),
        &serde_json::to_string_pretty(&json!({ "grid_per_dim": grid, "rows": rows }))?,
    )?;
    Ok(verdict(rows.iter().all(QuantizationRow::holds)))
}
fn run_boost(a: &BoostArgs, seed: u64) -> anyhow::Result<Verdict> {
    let net = load(&a.net)?;
    let eps_prime = match a.eps_prime {
        Some(e) => e,
        None => measure_eps_prime(&net, &a.target, default_grid(net.input_dim))?.value,
    };
    let policy = match (&a.cuts, a.fraction) {
        (Some(c), _) => BoostPolicy::new(
            &net,
            FaultDistribution::parse(FaultKind::Neuron, c)?.per_layer,
            a.eps,
            eps_prime,
        )?,
        (None, Some(f)) => BoostPolicy::proportional(&net, f, a.eps, eps_prime)?,
        (None, None) => bail!("one of --cuts or --fraction is required"),
    };
    let distribution = match a.latency {
        Latency::Uniform => LatencyDistribution::Uniform {
            lo: a.mean / 2.0,
            hi: 1.5 * a.mean,
        },
        Latency::Exponential => LatencyDistribution::Exponential { mean: a.mean },
        Latency::HeavyTail => LatencyDistribution::HeavyTail {
            mean: a.mean,
            p_straggler: a.p_straggler,
            straggler_factor: a.straggler_factor,
        },
    };
    let latency = LatencyModel::new(distribution, seed)?;
    let campaign = boost_campaign(&net, &a.target, a.eps, &latency, &policy, a.trials, seed)?;
    match &a.out {
        Some(p) => campaign.write_csv(create(p)?)?,
        None => campaign.write_csv(io::stdout().lock())?,
    }
    eprintln!(
        "cuts {:?}, mean speedup {:.4}, max error {:.6}",
        policy.cut_counts(),
        campaign.mean_speedup,
        campaign.max_abs_err
    );
    Ok(Verdict::Pass)
}

fn run_brute(a: &BruteArgs) -> anyhow::Result<Verdict> {
    let net = load(&a.net)?;
    let d = a.dist.distribution()?;
    let grid = a
        .grid
        .unwrap_or_else(|| default_grid(net.input_dim).min(65));
    let selection = if a.byzantine {
        Selection::byzantine(ByzantinePolicy::WorstCaseSign)
    } else {
        Selection::crash()
    };
    let capacity = Capacity::bounded(a.dist.capacity_for(&net))?;
    let bf = brute_force_certify(
        &net, &d, a.eps, &a.target, capacity, &selection, grid, a.cap,
    )?;
    emit(a.out.as_deref(), &serde_json::to_string_pretty(&bf)?)?;
    Ok(verdict(bf.passed))
}

fn run_lemma1(a: &Lemma1Args) -> anyhow::Result<Verdict> {
    let net = load(&a.net)?;
    let demo = lemma1_demo(&net, a.eps, a.input.as_deref())?;
    if let Some(p) = &a.out {
        std::fs::write(p, demo.scenario.to_json()? + "\n")?;
    }
    emit(
        None,
        &serde_json::to_string_pretty(&json!({
            "layer": demo.layer,
            "index": demo.index,
            "input": demo.input,
            "nominal_output": demo.nominal_output,
            "faulty_output": demo.faulty_output,
            "observed_error": demo.observed_error,
            "eps": demo.eps,
            "broken": demo.broken(),
        }))?,
    )?;
    Ok(verdict(demo.broken()))
}

fn run_tightness(a: &TightnessArgs) -> anyhow::Result<Verdict> {
    let out = tightness_experiment(&TightnessConfig {
        n_neurons: a.neurons,
        n_fail: a.fail,
        w_m: a.w_m,
        alpha: a.alpha,
        activation: ActivationSpec::sigmoid(a.k)?,
    })?;
    emit(
        a.out.as_deref(),
        &serde_json::to_string_pretty(&json!({
            "observed_error": out.observed_error,
            "bound": out.bound,
            "utilization": out.utilization,
        }))?,
    )?;
    Ok(verdict(
        a.fail == 0 || out.utilization >= 1.0 - a.alpha - 1e-6,
    ))
}

fn run(cli: &Cli) -> anyhow::Result<Verdict> {
    match &cli.command {
        Command::Train(a) => run_train(a, cli.seed),
        Command::Analyze(a) => run_analyze(a),
        Command::Certify(a) => run_certify(a),
        Command::Inject(a) => run_inject(a, cli.seed, &cli.counterexample),
        Command::SweepK(a) => run_sweep_k(a, cli.seed),
        Command::Quantize(a) => run_quantize(a),
        Command::Boost(a) => run_boost(a, cli.seed),
        Command::BruteCheck(a) => run_brute(a),
        Command::Lemma1Demo(a) => run_lemma1(a),
        Command::Tightness(a) => run_tightness(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Verdict::Pass) => ExitCode::SUCCESS,
        Ok(Verdict::Fail) => ExitCode::from(1),
        Err(e) => {
            if let Some(Error::Violation(cx)) = e.downcast_ref::<Error>() {
                eprintln!("error: {cx}");
                match cx
                    .to_json()
                    .map(|doc| std::fs::write(&cli.counterexample, doc))
                {
                    Ok(Ok(())) => {
                        eprintln!("counterexample written to {}", cli.counterexample.display())
                    }
                    _ => eprintln!("could not write {}", cli.counterexample.display()),
                }
                return ExitCode::from(1);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
