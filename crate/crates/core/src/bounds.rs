//! Analytic error bounds: forward error propagation (Fep) for neuron and
//! synapse failures, the single-layer crash count, robustness certificates,
//! the per-neuron precision (quantization) bound, and a search for the
//! maximal tolerable fault distributions.
//!
//! Everything here depends on the network only through its [`NetworkProfile`]:
//! the layer widths `N_l`, the maximal absolute incoming weights `w_m^{(l)}`
//! and the Lipschitz constant `K`. Layer `L + 1` is the output node, with
//! `N_{L+1} = 1` and no faulty neurons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fault::{Capacity, FaultDistribution, FaultKind};
use crate::net::{ActivationSpec, Network};

/// The quantities the bounds are computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkProfile {
    /// Columns of layer 1 (`N_0`).
    pub input_width: usize,
    /// `N_1 ..= N_L`.
    pub widths: Vec<usize>,
    /// `w_m^{(1)} ..= w_m^{(L+1)}`.
    pub max_weights: Vec<f64>,
    pub k: f64,
}

impl NetworkProfile {
    pub fn new(
        input_width: usize,
        widths: Vec<usize>,
        max_weights: Vec<f64>,
        k: f64,
    ) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || input_width == 0 {
            return Err(Error::Argument(
                "every layer needs at least one neuron".into(),
            ));
        }
        if max_weights.len() != widths.len() + 1 {
            return Err(Error::Shape(format!(
                "{} max weights for {} layers, expected L + 1",
                max_weights.len(),
                widths.len()
            )));
        }
        if max_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Argument(
                "max weights must be finite and non-negative".into(),
            ));
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::Argument(format!("K must be positive, got {k}")));
        }
        Ok(Self {
            input_width,
            widths,
            max_weights,
            k,
        })
    }

    pub fn of(net: &Network) -> Self {
        Self {
            input_width: net.input_width(),
            widths: net.widths(),
            max_weights: net.max_weights(),
            k: net.activation.k(),
        }
    }

    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    /// `N_l` for `l` in `0..=L+1`.
    pub fn n(&self, l: usize) -> usize {
        match l {
            0 => self.input_width,
            l if l <= self.depth() => self.widths[l - 1],
            _ => 1,
        }
    }

    /// `w_m^{(l)}` for `l` in `1..=L+1`.
    pub fn w(&self, l: usize) -> f64 {
        self.max_weights[l - 1]
    }

    /// `Q_l = K^{L-l} Π_{l'=l}^{L} N_{l'} w_m^{(l'+1)}`: the worst output shift
    /// per unit of error added to the output of every neuron of layer `l`.
    pub fn propagation_coefficients(&self) -> Vec<f64> {
        let depth = self.depth();
        let mut coeffs = vec![0.0; depth];
        let mut tail = 1.0;
        for l in (1..=depth).rev() {
            tail *= self.n(l) as f64 * self.w(l + 1);
            coeffs[l - 1] = self.k.powi((depth - l) as i32) * tail;
        }
        coeffs
    }
}

impl From<&Network> for NetworkProfile {
    fn from(net: &Network) -> Self {
        Self::of(net)
    }
}

/// Which robustness condition a report certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// Byzantine or crashed neurons.
    #[serde(rename = "Thm3")]
    Neurons,
    /// Byzantine or crashed synapses.
    #[serde(rename = "Thm4")]
    Synapses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub eps: f64,
    pub eps_prime: f64,
    /// `ε - ε' - Fep`.
    pub slack: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FepReport {
    pub fep: f64,
    #[serde(rename = "per_layer")]
    pub per_layer_terms: Vec<f64>,
    pub condition: Condition,
    pub capacity: f64,
    pub distribution: FaultDistribution,
    pub max_weights: Vec<f64>,
    pub widths: Vec<usize>,
    pub k: f64,
    #[serde(flatten)]
    pub certificate: Option<Certificate>,
}

impl FepReport {
    pub fn certified(&self) -> bool {
        self.certificate.as_ref().is_some_and(|c| c.certified)
    }

    pub fn slack(&self) -> Option<f64> {
        self.certificate.as_ref().map(|c| c.slack)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn check_capacity(capacity: f64) -> Result<()> {
    if capacity.is_finite() && capacity > 0.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "capacity must be positive and finite, got {capacity}"
        )))
    }
}

fn check_eps(eps: f64, eps_prime: f64) -> Result<()> {
    if !(eps_prime > 0.0 && eps_prime <= eps && eps.is_finite()) {
        return Err(Error::Argument(format!(
            "need 0 < eps' <= eps, got eps = {eps}, eps' = {eps_prime}"
        )));
    }
    Ok(())
}

fn check_distribution(
    profile: &NetworkProfile,
    dist: &FaultDistribution,
    kind: FaultKind,
) -> Result<()> {
    if dist.kind != kind {
        return Err(Error::Argument(format!("expected a {kind:?} distribution")));
    }
    let len = match kind {
        FaultKind::Neuron => profile.depth(),
        FaultKind::Synapse => profile.depth() + 1,
    };
    if dist.per_layer.len() != len {
        return Err(Error::Shape(format!(
            "distribution has {} entries, expected {len}",
            dist.per_layer.len()
        )));
    }
    for (i, &f) in dist.per_layer.iter().enumerate() {
        let l = i + 1;
        let units = match kind {
            FaultKind::Neuron => profile.n(l),
            FaultKind::Synapse => profile.n(l) * profile.n(l - 1),
        };
        if f > units {
            return Err(Error::Shape(format!("f_{l} = {f} exceeds {units} units")));
        }
    }
    Ok(())
}

/// Per-layer terms of
/// `Fep = C Σ_l f_l K^{L-l} w_m^{(L+1)} Π_{l'=l+1}^{L} (N_{l'} - f_{l'}) w_m^{(l')}`.
fn neuron_terms(profile: &NetworkProfile, f: &[usize], capacity: f64) -> Vec<f64> {
    let depth = profile.depth();
    (1..=depth)
        .map(|l| {
            let fl = f[l - 1];
            if fl == 0 {
                return 0.0;
            }
            let product: f64 = (l + 1..=depth)
                .map(|m| (profile.n(m) - f[m - 1]) as f64 * profile.w(m))
                .product();
            capacity
                * fl as f64
                * profile.k.powi((depth - l) as i32)
                * profile.w(depth + 1)
                * product
        })
        .collect()
}

fn report(
    profile: &NetworkProfile,
    dist: &FaultDistribution,
    capacity: f64,
    condition: Condition,
    per_layer_terms: Vec<f64>,
) -> FepReport {
    FepReport {
        fep: per_layer_terms.iter().sum(),
        per_layer_terms,
        condition,
        capacity,
        distribution: dist.clone(),
        max_weights: profile.max_weights.clone(),
        widths: profile.widths.clone(),
        k: profile.k,
        certificate: None,
    }
}

/// Worst-case output error when `f_l` neurons of every layer `l` transmit
/// values off by at most `capacity` on each synapse. For crash failures use
/// the activation's supremum (1) as the capacity.
pub fn fep_neurons(
    profile: &NetworkProfile,
    dist: &FaultDistribution,
    capacity: f64,
) -> Result<FepReport> {
    check_capacity(capacity)?;
    check_distribution(profile, dist, FaultKind::Neuron)?;
    let terms = neuron_terms(profile, &dist.per_layer, capacity);
    Ok(report(profile, dist, capacity, Condition::Neurons, terms))
}

/// Certifies a neuron fault distribution: every `f_l < N_l` and
/// `Fep < ε - ε'` (strict).
pub fn certify_neurons(
    profile: &NetworkProfile,
    dist: &FaultDistribution,
    eps: f64,
    eps_prime: f64,
    capacity: f64,
) -> Result<FepReport> {
    check_eps(eps, eps_prime)?;
    let mut rep = fep_neurons(profile, dist, capacity)?;
    let slack = (eps - eps_prime) - rep.fep;
    let below_width = (1..=profile.depth()).all(|l| dist.get(l) < profile.n(l));
    rep.certificate = Some(Certificate {
        eps,
        eps_prime,
        slack,
        certified: below_width && slack > 0.0,
    });
    Ok(rep)
}

/// Largest number of crashed neurons a single-layer network provably
/// tolerates: `floor((ε - ε') / w_m)`, capped at `N_1`, where `w_m` is the
/// largest absolute output weight.
pub fn crash_bound_single_layer(
    profile: &NetworkProfile,
    eps: f64,
    eps_prime: f64,
) -> Result<usize> {
    if profile.depth() != 1 {
        return Err(Error::Argument(format!(
            "single-layer bound needs L = 1, network has {} layers",
            profile.depth()
        )));
    }
    check_eps(eps, eps_prime)?;
    let n = profile.n(1);
    let w_m = profile.w(2);
    if w_m == 0.0 {
        return Ok(n);
    }
    let count = ((eps - eps_prime) / w_m).floor();
    Ok(if count >= n as f64 { n } else { count as usize })
}

/// Worst-case output error for `f_l` faulty synapses into each layer
/// `l = 1..=L+1`, each carrying a value off by at most `capacity`:
///
/// `C Σ_{l=1}^{L+1} f_l K^{L+1-l} w_m^{(l)} Π_{l'=l}^{L} N_{l'} w_m^{(l'+1)}`.
///
/// A faulty synapse into layer `l <= L` shifts one received sum by at most
/// `w_m^{(l)} C`, hence that neuron's output by `K w_m^{(l)} C`; the shift then
/// spreads through every downstream neuron, faulty synapses or not, which is
/// why no `f` is subtracted from the widths.
pub fn fep_synapses(
    profile: &NetworkProfile,
    dist: &FaultDistribution,
    capacity: f64,
) -> Result<FepReport> {
    check_capacity(capacity)?;
    check_distribution(profile, dist, FaultKind::Synapse)?;
    let depth = profile.depth();
    let coeffs = profile.propagation_coefficients();
    let terms = (1..=depth + 1)
        .map(|l| {
            let fl = dist.get(l) as f64;
            if l == depth + 1 {
                capacity * fl * profile.w(l)
            } else {
                capacity * fl * profile.k * profile.w(l) * coeffs[l - 1]
            }
        })
        .collect();
    Ok(report(profile, dist, capacity, Condition::Synapses, terms))
}

/// Certifies a synapse fault distribution with the strict `Fep < ε - ε'`.
pub fn certify_synapses(
    profile: &NetworkProfile,
    dist: &FaultDistribution,
    eps: f64,
    eps_prime: f64,
    capacity: f64,
) -> Result<FepReport> {
    check_eps(eps, eps_prime)?;
    let mut rep = fep_synapses(profile, dist, capacity)?;
    let slack = (eps - eps_prime) - rep.fep;
    rep.certificate = Some(Certificate {
        eps,
        eps_prime,
        slack,
        certified: slack > 0.0,
    });
    Ok(rep)
}

/// Output error of a neuron whose received sum is off by `lambda`: at most
/// `K |λ|`, and `K C` at the capacity limit.
pub fn synapse_error_as_neuron_error(
    lambda: f64,
    spec: &ActivationSpec,
    capacity: Capacity,
) -> Result<f64> {
    if !lambda.is_finite() {
        return Err(Error::Argument(format!("λ = {lambda} is not finite")));
    }
    if let Capacity::Bounded(c) = capacity {
        if lambda.abs() > c {
            return Err(Error::Argument(format!(
                "|λ| = {} exceeds capacity {c}",
                lambda.abs()
            )));
        }
    }
    Ok(spec.k() * lambda.abs())
}

/// Output error when every neuron of layer `l` is off by at most `λ_l`:
/// `Σ_l K^{L-l} λ_l Π_{l'=l}^{L} N_{l'} w_m^{(l'+1)}`.
pub fn quantization_bound(profile: &NetworkProfile, lambdas: &[f64]) -> Result<f64> {
    if lambdas.len() != profile.depth() {
        return Err(Error::Shape(format!(
            "{} error budgets for {} layers",
            lambdas.len(),
            profile.depth()
        )));
    }
    if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::Argument(format!(
            "error budget {l} must be non-negative"
        )));
    }
    Ok(profile
        .propagation_coefficients()
        .iter()
        .zip(lambdas)
        .map(|(q, l)| q * l)
        .sum())
}

pub const DEFAULT_SEARCH_CAP: u128 = 1_000_000;

/// Maximal certified neuron fault distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceFrontier {
    /// Lexicographically ordered.
    pub distributions: Vec<FaultDistribution>,
    /// False when the box `Π_l [0, N_l)` was larger than the search cap and
    /// only its first `examined` points were visited.
    pub complete: bool,
    pub examined: u128,
}

/// Every distribution `f` with `f_l < N_l` and `Fep(f) < ε - ε'` such that no
/// single `f_l` can be incremented without losing the certificate.
///
/// Fep is not monotone in the `f_l` (turning a neuron Byzantine caps its
/// deviation at `C`, which can be below what it would otherwise propagate),
/// so the whole box is scanned rather than pruned.
pub fn max_tolerable(
    profile: &NetworkProfile,
    eps: f64,
    eps_prime: f64,
    capacity: f64,
    cap: u128,
) -> Result<ToleranceFrontier> {
    check_eps(eps, eps_prime)?;
    check_capacity(capacity)?;
    let slack = eps - eps_prime;
    let depth = profile.depth();
    let feasible = |f: &[usize]| {
        let fep: f64 = neuron_terms(profile, f, capacity).iter().sum();
        fep < slack
    };
    let total = (1..=depth).fold(1u128, |acc, l| acc.saturating_mul(profile.n(l) as u128));
    let budget = total.min(cap);
    let mut distributions = Vec::new();
    let mut f = vec![0usize; depth];
    let mut probe = vec![0usize; depth];
    let mut examined = 0u128;
    while examined < budget {
        examined += 1;
        if feasible(&f) {
            let maximal = (0..depth).all(|i| {
                if f[i] + 1 >= profile.n(i + 1) {
                    return true;
                }
                probe.copy_from_slice(&f);
                probe[i] += 1;
                !feasible(&probe)
            });
            if maximal {
                distributions.push(FaultDistribution::neurons(f.clone()));
            }
        }
        // odometer, last layer fastest
        for i in (0..depth).rev() {
            f[i] += 1;
            if f[i] < profile.n(i + 1) {
                break;
            }
            f[i] = 0;
        }
    }
    Ok(ToleranceFrontier {
        distributions,
        complete: examined == total,
        examined,
    })
}
