use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{soundness_sweep, PolicySource, ScenarioSource, SweepConfig};
use crate::error::{Error, Result};
use crate::fault::{ByzantinePolicy, FaultDistribution};
use crate::net::{ActivationKind, ActivationSpec, Layer, Network};

/// Networks whose neurons all operate near the centre of the activation,
/// where its slope is `K`, so that small errors propagate almost linearly.
///
/// Every hidden and output weight is `+weight` and every input weight is
/// `+input_weight`. For the sigmoid, whose centre value is 1/2, each layer
/// except the last gets a bias neuron at index 0 whose weight
/// `-(N - 1) weight / 2` cancels the 1/2 offsets, so `widths` then counts that
/// bias neuron too.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRegimeFamily {
    pub kind: ActivationKind,
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub input_weight: f64,
    pub weight: f64,
    /// Byzantine transmission capacity; small enough to stay linear.
    pub capacity: f64,
}

impl Default for LinearRegimeFamily {
    fn default() -> Self {
        Self {
            kind: ActivationKind::Tanh,
            input_dim: 2,
            widths: vec![4, 4, 4],
            input_weight: 0.01,
            weight: 0.05,
            capacity: 0.01,
        }
    }
}

impl LinearRegimeFamily {
    fn biased(&self) -> bool {
        self.kind == ActivationKind::Sigmoid
    }

    pub fn build(&self, k: f64) -> Result<Network> {
        if self.widths.is_empty() {
            return Err(Error::Argument(
                "the family needs at least one layer".into(),
            ));
        }
        let activation = ActivationSpec::new(self.kind, k)?;
        let depth = self.widths.len();
        let mut layers = Vec::with_capacity(depth);
        let mut prev = self.input_dim;
        for (i, &n) in self.widths.iter().enumerate() {
            let l = i + 1;
            let prev_has_bias = self.biased() && l > 1;
            let has_bias = self.biased() && l < depth;
            if has_bias && n < 2 {
                return Err(Error::Argument(format!(
                    "layer {l} needs room for its bias neuron"
                )));
            }
            let row: Vec<f64> = if l == 1 {
                vec![self.input_weight; prev]
            } else if prev_has_bias {
                let mut row = vec![self.weight; prev];
                row[0] = -((prev - 1) as f64) * self.weight / 2.0;
                row
            } else {
                vec![self.weight; prev]
            };
            let mut weights = vec![row; n];
            layers.push(if has_bias {
                weights[0] = vec![0.0; prev];
                Layer::new(weights).with_constant_neuron(0)
            } else {
                Layer::new(weights)
            });
            prev = n;
        }
        Network::new(self.input_dim, activation, layers, vec![self.weight; prev])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: f64,
    pub fep: f64,
    pub max_err: f64,
    pub mean_err: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweep {
    pub rows: Vec<KSweepRow>,
    /// Least-squares slope of `ln Fep` against `ln K`.
    pub fep_slope: f64,
    pub error_slope: f64,
}

impl KSweep {
    /// Rows as `k,fep,max_err,mean_err,trials`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Slope of the least-squares line through `(ln x, ln y)`; NaN when a value
/// is not positive or fewer than two points are given.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| *v <= 0.0) {
        return f64::NAN;
    }
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Re-tunes the family to each `K`, injects the same worst-case-sign
/// Byzantine faults with the same inputs (same seed for every `K`), and
/// records the observed error next to Fep.
pub fn k_sweep(
    family: &LinearRegimeFamily,
    dist: &FaultDistribution,
    k_values: &[f64],
    trials: usize,
    seed: u64,
) -> Result<KSweep> {
    if k_values.is_empty() {
        return Err(Error::Argument("no K values given".into()));
    }
    if k_values.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
        return Err(Error::Argument("K values must be positive".into()));
    }
    if k_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument(
            "K values must be strictly increasing".into(),
        ));
    }
    let config = SweepConfig {
        scenarios: ScenarioSource::Random,
        policies: PolicySource::Fixed(ByzantinePolicy::WorstCaseSign),
        include_constant: false,
        keep_records: false,
    };
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let net = family.build(k)?;
        let sweep = soundness_sweep(&net, dist, family.capacity, trials, seed, &config)?;
        let row = &sweep.rows[0];
        rows.push(KSweepRow {
            k,
            fep: row.bound,
            max_err: row.max_error,
            mean_err: row.mean_error,
            trials: row.trials,
        });
    }
    let ks: Vec<f64> = rows.iter().map(|r| r.k).collect();
    let feps: Vec<f64> = rows.iter().map(|r| r.fep).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.max_err).collect();
    Ok(KSweep {
        fep_slope: fit_loglog_slope(&ks, &feps),
        error_slope: fit_loglog_slope(&ks, &errs),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const KS: [f64; 4] = [0.25, 0.5, 1.0, 2.0];

    #[test]
    fn slope_of_a_power_law() {
        let ys: Vec<f64> = KS.iter().map(|k| 3.0 * k * k).collect();
        assert!((fit_loglog_slope(&KS, &ys) - 2.0).abs() < 1e-12);
        assert!(fit_loglog_slope(&KS, &[1.0, 0.0, 1.0, 1.0]).is_nan());
    }

    #[test]
    fn last_layer_faults_do_not_depend_on_k() {
        let fam = LinearRegimeFamily::default();
        let r = k_sweep(&fam, &FaultDistribution::neurons(vec![0, 0, 1]), &KS, 20, 1).unwrap();
        assert!(r.rows.windows(2).all(|w| w[0].fep == w[1].fep));
        assert!(r.fep_slope.abs() < 1e-9);
    }

    #[test]
    fn first_layer_faults_scale_with_k_squared() {
        let fam = LinearRegimeFamily::default();
        let r = k_sweep(
            &fam,
            &FaultDistribution::neurons(vec![1, 0, 0]),
            &[1.0, 2.0],
            20,
            2,
        )
        .unwrap();
        assert!((r.rows[1].fep / r.rows[0].fep - 4.0).abs() < 1e-12);
    }

    #[test]
    fn observed_error_follows_the_bound() {
        for kind in [ActivationKind::Tanh, ActivationKind::Sigmoid] {
            let fam = LinearRegimeFamily {
                kind,
                ..Default::default()
            };
            for l in 0..3 {
                let mut f = vec![0, 0, 0];
                f[l] = 1;
                let r = k_sweep(&fam, &FaultDistribution::neurons(f), &KS, 50, 3).unwrap();
                let expect = (2 - l) as f64;
                assert!(
                    (r.fep_slope - expect).abs() < 1e-9,
                    "{kind:?} l={l}: {}",
                    r.fep_slope
                );
                assert!(
                    r.error_slope <= expect + 1e-9,
                    "{kind:?} l={l}: {}",
                    r.error_slope
                );
                assert!(
                    r.error_slope >= 0.8 * expect,
                    "{kind:?} l={l}: {}",
                    r.error_slope
                );
                assert!(r
                    .rows
                    .windows(2)
                    .all(|w| w[0].max_err <= w[1].max_err + 1e-15));
            }
        }
    }

    #[test]
    fn sigmoid_family_is_centred() {
        let fam = LinearRegimeFamily {
            kind: ActivationKind::Sigmoid,
            ..Default::default()
        };
        let net = fam.build(1.0).unwrap();
        let trace = net.trace(&[0.3, 0.9]).unwrap();
        assert_eq!(trace.outputs[1][0], 1.0);
        for l in 2..=3 {
            let start = if l < 3 { 1 } else { 0 };
            for y in &trace.outputs[l][start..] {
                assert!((y - 0.5).abs() < 0.01, "layer {l}: {y}");
            }
        }
    }

    #[test]
    fn csv_header() {
        let fam = LinearRegimeFamily::default();
        let r = k_sweep(&fam, &FaultDistribution::neurons(vec![1, 0, 0]), &KS, 5, 4).unwrap();
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("k,fep,max_err,mean_err,trials\n"));
        assert_eq!(text.lines().count(), 5);
        assert!(k_sweep(
            &fam,
            &FaultDistribution::neurons(vec![1, 0, 0]),
            &[1.0, 0.5],
            5,
            4
        )
        .is_err());
    }
}
