//! Gradient-descent training of approximating networks, output quantization,
//! and the over-provisioning loop that widens a network until it both fits
//! its target and carries a robustness certificate.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{fep_neurons, Certificate, FepReport, NetworkProfile};
use crate::empirical::{measure_eps_prime, EpsPrime};
use crate::error::{Error, Result};
use crate::fault::{FaultDistribution, FaultKind};
use crate::net::{ActivationSpec, Layer, Network};
use crate::seed::rng_for;
use crate::target::{default_grid, Grid, Target};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Momentum { beta: f64 },
    Adam { beta1: f64, beta2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLayout {
    /// A uniform grid with about `samples` points.
    Grid,
    /// `samples` uniform random points.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Neurons per layer, not counting bias neurons.
    pub layer_sizes: Vec<usize>,
    pub activation: ActivationSpec,
    /// Adds a constant input and a bias neuron (the last index) to every layer.
    pub bias: bool,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Full batch when `None`.
    pub batch_size: Option<usize>,
    pub samples: usize,
    pub layout: SampleLayout,
    pub seed: u64,
    /// Stop as soon as the grid error is at most this.
    pub target_eps_prime: Option<f64>,
    /// Coefficient of `1/2 Σ w²` in the loss.
    pub weight_decay: f64,
    /// After every step, weights into layers `2..=L+1` (output weights
    /// included) are clipped to `[-cap, cap]`. Layer 1 is never clipped: its
    /// weights do not enter the neuron-failure bound.
    pub weight_cap: Option<f64>,
    pub optimizer: Optimizer,
    /// Layer-1 weights start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Train the output weights only.
    pub freeze_hidden: bool,
    /// Epochs between log rows and stopping checks.
    pub log_every: usize,
    /// Points per axis for the grid error; the default resolution when `None`.
    pub grid: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            layer_sizes: vec![16],
            activation: ActivationSpec {
                kind: crate::net::ActivationKind::Sigmoid,
                lipschitz_k: 1.0,
            },
            bias: true,
            learning_rate: 0.01,
            epochs: 2000,
            batch_size: None,
            samples: 256,
            layout: SampleLayout::Grid,
            seed: 0,
            target_eps_prime: None,
            weight_decay: 0.0,
            weight_cap: None,
            optimizer: Optimizer::Adam {
                beta1: 0.9,
                beta2: 0.999,
            },
            init_scale: 6.0,
            freeze_hidden: false,
            log_every: 100,
            grid: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.layer_sizes.is_empty() || self.layer_sizes.contains(&0) {
            return Err(Error::Argument(
                "every layer needs at least one neuron".into(),
            ));
        }
        if dim == 0 {
            return Err(Error::Argument("input dimension must be positive".into()));
        }
        if !positive(self.learning_rate) || !positive(self.init_scale) {
            return Err(Error::Argument(
                "learning rate and init scale must be positive".into(),
            ));
        }
        if self.samples == 0 || self.batch_size == Some(0) || self.log_every == 0 {
            return Err(Error::Argument(
                "samples, batch size and log interval must be positive".into(),
            ));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Argument("weight decay must be non-negative".into()));
        }
        if self.weight_cap.is_some_and(|c| !positive(c)) {
            return Err(Error::Argument("weight cap must be positive".into()));
        }
        if self.grid.is_some_and(|g| g < 2) {
            return Err(Error::Argument(
                "grid needs at least 2 points per axis".into(),
            ));
        }
        self.activation.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub loss: f64,
    pub grid_eps_prime: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub network: Network,
    pub log: Vec<LogRow>,
    pub eps_prime: EpsPrime,
}

impl TrainOutcome {
    /// The log as `epoch,loss,grid_eps_prime`.
    pub fn write_log_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.log {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Gradient of the loss, shaped like the network's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<Vec<Vec<f64>>>,
    pub output: Vec<f64>,
}

/// Trainable weights in a fixed order: layer by layer, row by row, then the
/// output weights. Rows of bias neurons are skipped.
pub fn parameters(net: &Network) -> Vec<f64> {
    let mut p = Vec::new();
    for layer in &net.layers {
        for (j, row) in layer.weights.iter().enumerate() {
            if !layer.is_constant(j) {
                p.extend_from_slice(row);
            }
        }
    }
    p.extend_from_slice(&net.output_weights);
    p
}

pub fn set_parameters(net: &mut Network, p: &[f64]) {
    let mut it = p.iter().copied();
    for layer in &mut net.layers {
        let constant = layer.constant_neuron;
        for (j, row) in layer.weights.iter_mut().enumerate() {
            if constant != Some(j) {
                row.iter_mut()
                    .for_each(|w| *w = it.next().expect("parameter count"));
            }
        }
    }
    net.output_weights
        .iter_mut()
        .for_each(|w| *w = it.next().expect("parameter count"));
}

impl Gradient {
    pub fn flatten(&self, net: &Network) -> Vec<f64> {
        let mut g = Vec::new();
        for (layer, rows) in net.layers.iter().zip(&self.layers) {
            for (j, row) in rows.iter().enumerate() {
                if !layer.is_constant(j) {
                    g.extend_from_slice(row);
                }
            }
        }
        g.extend_from_slice(&self.output);
        g
    }
}

/// `mean (F(x) - t)^2 + weight_decay / 2 Σ w^2` and its gradient by
/// backpropagation.
pub fn loss_and_gradient(
    net: &Network,
    xs: &[Vec<f64>],
    ts: &[f64],
    weight_decay: f64,
) -> Result<(f64, Gradient)> {
    if xs.len() != ts.len() || xs.is_empty() {
        return Err(Error::Shape(format!(
            "{} inputs for {} targets",
            xs.len(),
            ts.len()
        )));
    }
    let depth = net.depth();
    let mut grad = Gradient {
        layers: net
            .layers
            .iter()
            .map(|l| l.weights.iter().map(|r| vec![0.0; r.len()]).collect())
            .collect(),
        output: vec![0.0; net.output_weights.len()],
    };
    let n = xs.len() as f64;
    let mut loss = 0.0;
    for (x, &t) in xs.iter().zip(ts) {
        let trace = net.trace(x)?;
        let diff = trace.output - t;
        loss += diff * diff / n;
        let d_out = 2.0 * diff / n;
        for (g, y) in grad.output.iter_mut().zip(&trace.outputs[depth]) {
            *g += d_out * y;
        }
        let mut delta: Vec<f64> = (0..net.width(depth))
            .map(|i| {
                if net.is_constant(depth, i) {
                    0.0
                } else {
                    d_out
                        * net.output_weights[i]
                        * net
                            .activation
                            .derivative_from_output(trace.outputs[depth][i])
                }
            })
            .collect();
        for l in (1..=depth).rev() {
            let prev = &trace.outputs[l - 1];
            let layer = &net.layers[l - 1];
            for (j, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (g, y) in grad.layers[l - 1][j].iter_mut().zip(prev) {
                        *g += d * y;
                    }
                }
            }
            if l > 1 {
                delta = (0..net.width(l - 1))
                    .map(|i| {
                        if net.is_constant(l - 1, i) {
                            return 0.0;
                        }
                        let back: f64 = delta
                            .iter()
                            .zip(&layer.weights)
                            .map(|(d, row)| d * row[i])
                            .sum();
                        back * net.activation.derivative_from_output(prev[i])
                    })
                    .collect();
            }
        }
    }
    if weight_decay > 0.0 {
        let mut norm = 0.0;
        for (layer, rows) in net.layers.iter().zip(grad.layers.iter_mut()) {
            for (w_row, g_row) in layer.weights.iter().zip(rows.iter_mut()) {
                for (w, g) in w_row.iter().zip(g_row.iter_mut()) {
                    norm += w * w;
                    *g += weight_decay * w;
                }
            }
        }
        for (w, g) in net.output_weights.iter().zip(grad.output.iter_mut()) {
            norm += w * w;
            *g += weight_decay * w;
        }
        loss += 0.5 * weight_decay * norm;
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    /// `(parameter index, analytic, numeric, relative error)`.
    pub entries: Vec<(usize, f64, f64, f64)>,
    pub max_relative_error: f64,
}

/// Compares the analytic gradient with central differences of step `h` on
/// `count` parameters drawn without replacement. The relative error is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn gradient_check(
    net: &Network,
    xs: &[Vec<f64>],
    ts: &[f64],
    weight_decay: f64,
    count: usize,
    h: f64,
    seed: u64,
) -> Result<GradientCheck> {
    let (_, grad) = loss_and_gradient(net, xs, ts, weight_decay)?;
    let analytic = grad.flatten(net);
    let params = parameters(net);
    let count = count.min(params.len());
    let mut rng = rng_for(seed, &[]);
    let mut picked = rand::seq::index::sample(&mut rng, params.len(), count).into_vec();
    picked.sort_unstable();
    let mut probe = net.clone();
    let mut entries = Vec::with_capacity(count);
    for idx in picked {
        let mut p = params.clone();
        p[idx] = params[idx] + h;
        set_parameters(&mut probe, &p);
        let up = loss_and_gradient(&probe, xs, ts, weight_decay)?.0;
        p[idx] = params[idx] - h;
        set_parameters(&mut probe, &p);
        let down = loss_and_gradient(&probe, xs, ts, weight_decay)?.0;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        entries.push((idx, a, numeric, rel));
    }
    let max_relative_error = entries.iter().map(|e| e.3).fold(0.0, f64::max);
    Ok(GradientCheck {
        entries,
        max_relative_error,
    })
}

/// Initial network for `cfg` on inputs of dimension `dim`.
pub fn initial_network(dim: usize, cfg: &TrainConfig) -> Result<Network> {
    cfg.validate(dim)?;
    let mut rng = rng_for(cfg.seed, &[0x696e_6974]);
    let mut prev = dim + usize::from(cfg.bias);
    let mut layers = Vec::with_capacity(cfg.layer_sizes.len());
    for (i, &n) in cfg.layer_sizes.iter().enumerate() {
        let scale = if i == 0 {
            cfg.init_scale
        } else {
            1.0 / (prev as f64).sqrt()
        };
        let mut weights: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..prev)
                    .map(|_| rng.random_range(-scale..=scale))
                    .collect()
            })
            .collect();
        let mut layer = if cfg.bias {
            weights.push(vec![0.0; prev]);
            Layer::new(weights).with_constant_neuron(n)
        } else {
            Layer::new(weights)
        };
        if i > 0 {
            clip(&mut layer.weights, cfg.weight_cap);
        }
        layers.push(layer);
        prev = n + usize::from(cfg.bias);
    }
    let scale = 1.0 / (prev as f64).sqrt();
    let mut output: Vec<f64> = (0..prev)
        .map(|_| rng.random_range(-scale..=scale))
        .collect();
    if let Some(cap) = cfg.weight_cap {
        output.iter_mut().for_each(|w| *w = w.clamp(-cap, cap));
    }
    let net = Network {
        input_dim: dim,
        activation: cfg.activation,
        layers,
        output_weights: output,
        metadata: Default::default(),
        input_constant: cfg.bias,
        fractional_bits: None,
    };
    net.validate()?;
    Ok(net)
}

fn clip(rows: &mut [Vec<f64>], cap: Option<f64>) {
    if let Some(cap) = cap {
        rows.iter_mut()
            .flatten()
            .for_each(|w| *w = w.clamp(-cap, cap));
    }
}

fn training_set(target: &dyn Target, cfg: &TrainConfig) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let dim = target.dim();
    let xs: Vec<Vec<f64>> = match cfg.layout {
        SampleLayout::Grid => {
            let per_dim = ((cfg.samples as f64).powf(1.0 / dim as f64).round() as usize).max(2);
            Grid::new(dim, per_dim)?.collect()
        }
        SampleLayout::Random => {
            let mut rng = rng_for(cfg.seed, &[0x7361_6d70]);
            (0..cfg.samples)
                .map(|_| (0..dim).map(|_| rng.random_range(0.0..=1.0)).collect())
                .collect()
        }
    };
    let ts = xs.iter().map(|x| target.eval(x)).collect();
    Ok((xs, ts))
}

/// Minimises the squared error to `target` from the seeded initial network.
/// Deterministic in `cfg`; the returned network's metadata records the
/// target, seed and achieved grid error.
pub fn train(target: &dyn Target, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let net = initial_network(target.dim(), cfg)?;
    train_from(net, target, cfg)
}

/// Continues training an existing network.
pub fn train_from(
    mut net: Network,
    target: &dyn Target,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate(target.dim())?;
    if net.input_dim != target.dim() {
        return Err(Error::Shape(format!(
            "network takes {} inputs, target {}",
            net.input_dim,
            target.dim()
        )));
    }
    let grid = cfg.grid.unwrap_or_else(|| default_grid(target.dim()));
    let (xs, ts) = training_set(target, cfg)?;
    let hidden_count = parameters(&net).len() - net.output_weights.len();
    let mut params = parameters(&net);
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut log = Vec::new();
    let mut step = 0i32;

    for epoch in 1..=cfg.epochs {
        let batch = cfg.batch_size.unwrap_or(xs.len()).min(xs.len());
        if batch < xs.len() {
            order.shuffle(&mut rng_for(cfg.seed, &[0x7368_7566, epoch as u64]));
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let bt: Vec<f64> = chunk.iter().map(|&i| ts[i]).collect();
            let (loss, grad) = loss_and_gradient(&net, &bx, &bt, cfg.weight_decay)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64 / xs.len() as f64;
            let g = grad.flatten(&net);
            step += 1;
            let start = if cfg.freeze_hidden { hidden_count } else { 0 };
            for i in start..params.len() {
                let update = match cfg.optimizer {
                    Optimizer::Sgd => g[i],
                    Optimizer::Momentum { beta } => {
                        m[i] = beta * m[i] + g[i];
                        m[i]
                    }
                    Optimizer::Adam { beta1, beta2 } => {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mh = m[i] / (1.0 - beta1.powi(step));
                        let vh = v[i] / (1.0 - beta2.powi(step));
                        mh / (vh.sqrt() + 1e-8)
                    }
                };
                params[i] -= cfg.learning_rate * update;
            }
            set_parameters(&mut net, &params);
            if cfg.weight_cap.is_some() {
                for layer in net.layers.iter_mut().skip(1) {
                    clip(&mut layer.weights, cfg.weight_cap);
                }
                let cap = cfg.weight_cap.unwrap_or(f64::INFINITY);
                net.output_weights
                    .iter_mut()
                    .for_each(|w| *w = w.clamp(-cap, cap));
                params = parameters(&net);
            }
        }
        if !params.iter().all(|p| p.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                loss: f64::NAN,
            });
        }
        if epoch % cfg.log_every == 0 || epoch == cfg.epochs {
            let e = measure_eps_prime(&net, target, grid)?;
            log.push(LogRow {
                epoch,
                loss: epoch_loss,
                grid_eps_prime: e.value,
            });
            if cfg.target_eps_prime.is_some_and(|t| e.value <= t) {
                break;
            }
        }
    }
    let eps_prime = measure_eps_prime(&net, target, grid)?;
    net.metadata.insert("target".into(), target.name().into());
    net.metadata.insert("seed".into(), cfg.seed.into());
    net.metadata
        .insert("grid_eps_prime".into(), eps_prime.value.into());
    net.metadata.insert("grid_per_dim".into(), grid.into());
    if let Some(last) = log.last() {
        net.metadata.insert("epochs".into(), last.epoch.into());
    }
    Ok(TrainOutcome {
        network: net,
        log,
        eps_prime,
    })
}

/// Half an ulp of a `bits`-bit fraction: `2^-(bits+1)`.
pub fn rounding_error(bits: u32) -> f64 {
    (-(bits as f64) - 1.0).exp2()
}

/// The network with every neuron output rounded to `bits` fractional bits,
/// and the per-layer output error budgets that rounding introduces.
pub fn quantize(net: &Network, bits: u32) -> Result<(Network, Vec<f64>)> {
    if bits == 0 {
        return Err(Error::Argument(
            "at least one fractional bit is required".into(),
        ));
    }
    if bits > 1000 {
        return Err(Error::Argument(format!(
            "{bits} fractional bits is beyond f64 range"
        )));
    }
    let mut q = net.clone();
    q.fractional_bits = Some(bits);
    Ok((q, vec![rounding_error(bits); net.depth()]))
}

/// Width schedule and budget for [`overprovision_pair`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overprovision {
    /// Multiplier applied to `layer_sizes` on the first attempt.
    pub start_factor: usize,
    /// Largest neuron count (bias excluded) of any layer.
    pub max_width: usize,
    /// Fraction of `ε - ε'` the weight cap leaves to Fep.
    pub budget_share: f64,
}

impl Default for Overprovision {
    fn default() -> Self {
        Self {
            start_factor: 1,
            max_width: 256,
            budget_share: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub layer_sizes: Vec<usize>,
    pub weight_cap: Option<f64>,
    pub eps_prime: f64,
    pub fep: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverprovisionOutcome {
    pub network: Network,
    pub report: FepReport,
    pub eps_prime: f64,
    /// Both `ε'` reached and the certificate holds.
    pub success: bool,
    pub attempts: Vec<Attempt>,
}

/// Uniform cap `c` on `w_m^{(2)}, ..., w_m^{(L+1)}` with
/// `Fep(c) = budget`, by bisection (Fep grows with `c`).
fn cap_for_budget(
    widths: &[usize],
    dim: usize,
    k: f64,
    dist: &FaultDistribution,
    capacity: f64,
    budget: f64,
) -> Result<f64> {
    let fep_at = |c: f64| -> Result<f64> {
        let mut w = vec![c; widths.len() + 1];
        w[0] = 1.0;
        let p = NetworkProfile::new(dim, widths.to_vec(), w, k)?;
        Ok(fep_neurons(&p, dist, capacity)?.fep)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while fep_at(hi)? < budget {
        hi *= 2.0;
        if hi > 1e12 {
            return Ok(hi);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if fep_at(mid)? < budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Widens the network of `base` (doubling every layer) and retrains until the
/// grid error is at most `eps_prime` and the neuron-failure certificate for
/// `dist` holds with that measured error, or the widths exceed the schedule's
/// cap. Wider layers raise Fep, so the weights into layers `2..=L+1` are
/// clipped to the largest uniform value whose Fep uses a fixed share of the
/// slack. A failed search returns its last attempt with `success = false`.
pub fn overprovision_pair(
    target: &dyn Target,
    eps: f64,
    eps_prime: f64,
    dist: &FaultDistribution,
    capacity: f64,
    base: &TrainConfig,
    schedule: &Overprovision,
) -> Result<OverprovisionOutcome> {
    if !(eps_prime > 0.0 && eps_prime < eps) {
        return Err(Error::Argument(format!(
            "need 0 < eps' < eps, got eps = {eps}, eps' = {eps_prime}"
        )));
    }
    if dist.kind != FaultKind::Neuron || dist.per_layer.len() != base.layer_sizes.len() {
        return Err(Error::Argument(
            "expected a neuron distribution with one entry per layer".into(),
        ));
    }
    if !(schedule.budget_share > 0.0 && schedule.budget_share < 1.0) || schedule.start_factor == 0 {
        return Err(Error::Argument("invalid over-provisioning schedule".into()));
    }
    let dim = target.dim();
    let mut factor = schedule.start_factor;
    let mut attempts = Vec::new();
    let mut last = None;
    loop {
        let sizes: Vec<usize> = base.layer_sizes.iter().map(|n| n * factor).collect();
        if sizes.iter().any(|&n| n > schedule.max_width) {
            break;
        }
        let widths: Vec<usize> = sizes.iter().map(|n| n + usize::from(base.bias)).collect();
        if dist.per_layer.iter().zip(&widths).any(|(f, n)| f >= n) {
            factor *= 2;
            continue;
        }
        let weight_cap = if dist.is_zero() {
            base.weight_cap
        } else {
            let budget = schedule.budget_share * (eps - eps_prime);
            let cap = cap_for_budget(&widths, dim, base.activation.k(), dist, capacity, budget)?;
            Some(base.weight_cap.map_or(cap, |c| c.min(cap)))
        };
        let cfg = TrainConfig {
            layer_sizes: sizes.clone(),
            weight_cap,
            target_eps_prime: Some(eps_prime),
            ..base.clone()
        };
        let out = train(target, &cfg)?;
        let measured = out.eps_prime.value;
        let mut report = fep_neurons(&NetworkProfile::of(&out.network), dist, capacity)?;
        let slack = (eps - measured) - report.fep;
        let below_width = (1..=out.network.depth()).all(|l| dist.get(l) < out.network.width(l));
        let certified = below_width && slack > 0.0;
        report.certificate = Some(Certificate {
            eps,
            eps_prime: measured,
            slack,
            certified,
        });
        attempts.push(Attempt {
            layer_sizes: sizes,
            weight_cap,
            eps_prime: measured,
            fep: report.fep,
            certified,
        });
        let success = certified && measured <= eps_prime;
        last = Some((out.network, report, measured));
        if success {
            break;
        }
        factor *= 2;
    }
    let (network, report, measured) = last.ok_or_else(|| {
        Error::Argument(format!(
            "no width up to {} can host the distribution {dist}",
            schedule.max_width
        ))
    })?;
    let success = report.certified() && measured <= eps_prime;
    Ok(OverprovisionOutcome {
        network,
        report,
        eps_prime: measured,
        success,
        attempts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::quantization_bound;
    use crate::empirical::random_network;
    use crate::target::BuiltinTarget;

    fn data(dim: usize, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = rng_for(seed, &[]);
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(0.0..=1.0)).collect())
            .collect();
        let ts = xs
            .iter()
            .map(|x| x.iter().sum::<f64>() / dim as f64)
            .collect();
        (xs, ts)
    }

    #[test]
    fn parameters_round_trip() {
        let cfg = TrainConfig {
            layer_sizes: vec![3, 2],
            ..Default::default()
        };
        let net = initial_network(2, &cfg).unwrap();
        let p = parameters(&net);
        // (3 x 3) + (2 x 4) + 3 output weights
        assert_eq!(p.len(), 9 + 8 + 3);
        let mut copy = net.clone();
        set_parameters(&mut copy, &p);
        assert_eq!(copy, net);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for (kind, seed) in [
            (ActivationSpec::sigmoid(1.0), 1),
            (ActivationSpec::tanh(0.7), 2),
        ] {
            let cfg = TrainConfig {
                layer_sizes: vec![4, 3],
                activation: kind.unwrap(),
                init_scale: 2.0,
                seed,
                ..Default::default()
            };
            let net = initial_network(2, &cfg).unwrap();
            let (xs, ts) = data(2, 30, seed);
            let check = gradient_check(&net, &xs, &ts, 0.01, 20, 1e-5, seed).unwrap();
            assert_eq!(check.entries.len(), 20);
            assert!(check.max_relative_error <= 1e-4, "{:?}", check);
        }
    }

    #[test]
    fn training_is_deterministic_and_fits_a_constant() {
        let cfg = TrainConfig {
            layer_sizes: vec![4],
            epochs: 2000,
            seed: 5,
            ..Default::default()
        };
        let target = BuiltinTarget::Constant(0.5);
        let a = train(&target, &cfg).unwrap();
        let b = train(&target, &cfg).unwrap();
        assert_eq!(a.network.to_json().unwrap(), b.network.to_json().unwrap());
        assert!(a.eps_prime.value <= 0.02, "{}", a.eps_prime.value);
        assert_eq!(a.network.metadata["target"], "constant:0.5");
    }

    #[test]
    fn output_only_training_does_not_increase_loss() {
        let cfg = TrainConfig {
            layer_sizes: vec![6],
            optimizer: Optimizer::Sgd,
            learning_rate: 0.05,
            freeze_hidden: true,
            epochs: 300,
            log_every: 1,
            seed: 3,
            ..Default::default()
        };
        let out = train(&BuiltinTarget::RidgeSine, &cfg).unwrap();
        assert_eq!(out.log.len(), 300);
        assert!(out.log.windows(2).all(|w| w[1].loss <= w[0].loss + 1e-15));
        let init = initial_network(1, &cfg).unwrap();
        assert_eq!(init.layers, out.network.layers);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig {
            layer_sizes: vec![4],
            optimizer: Optimizer::Sgd,
            learning_rate: 1e200,
            epochs: 50,
            ..Default::default()
        };
        let err = train(&BuiltinTarget::RidgeSine, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
    }

    #[test]
    fn weight_cap_holds() {
        let cfg = TrainConfig {
            layer_sizes: vec![8, 4],
            weight_cap: Some(0.1),
            epochs: 200,
            ..Default::default()
        };
        let out = train(&BuiltinTarget::Product, &cfg).unwrap();
        let w = out.network.max_weights();
        assert!(w[1] <= 0.1 && w[2] <= 0.1);
    }

    #[test]
    fn log_csv() {
        let cfg = TrainConfig {
            epochs: 20,
            log_every: 10,
            ..Default::default()
        };
        let out = train(&BuiltinTarget::RidgeSine, &cfg).unwrap();
        let mut buf = Vec::new();
        out.write_log_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,loss,grid_eps_prime\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn quantization_budgets() {
        let net =
            random_network(2, &[5, 4], ActivationSpec::sigmoid(1.0).unwrap(), 1.0, 1).unwrap();
        let (q, lambdas) = quantize(&net, 8).unwrap();
        assert_eq!(lambdas, vec![0.001953125; 2]);
        assert!(quantize(&net, 0).is_err());
        let bound = quantization_bound(&NetworkProfile::of(&net), &lambdas).unwrap();
        for x in Grid::new(2, 20).unwrap() {
            let diff = (net.forward(&x).unwrap() - q.forward(&x).unwrap()).abs();
            assert!(diff <= bound, "{diff} > {bound}");
        }
        let (fine, _) = quantize(&net, 52).unwrap();
        for x in Grid::new(2, 5).unwrap() {
            assert!((net.forward(&x).unwrap() - fine.forward(&x).unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn overprovision_without_faults_is_plain_training() {
        let base = TrainConfig {
            layer_sizes: vec![4],
            epochs: 1500,
            ..Default::default()
        };
        let out = overprovision_pair(
            &BuiltinTarget::Constant(0.5),
            0.1,
            0.05,
            &FaultDistribution::neurons(vec![0]),
            1.0,
            &base,
            &Overprovision::default(),
        )
        .unwrap();
        assert!(out.success);
        assert_eq!(out.attempts.len(), 1);
        assert_eq!(out.report.fep, 0.0);
    }

    #[test]
    fn overprovision_failure_is_flagged() {
        let base = TrainConfig {
            layer_sizes: vec![4],
            epochs: 200,
            ..Default::default()
        };
        let out = overprovision_pair(
            &BuiltinTarget::RidgeSine,
            0.15,
            0.1,
            &FaultDistribution::neurons(vec![3]),
            1.0,
            &base,
            &Overprovision {
                max_width: 8,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!out.success);
        assert!(!out.attempts.is_empty());
    }
}
