use std::collections::BTreeMap;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use super::activation::ActivationSpec;
use crate::error::{Error, Result};

/// One layer of neurons: `weights[j][i]` is the weight of the synapse from
/// neuron `i` of the previous layer (or input `i`) to neuron `j` of this one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    /// Index of the bias neuron, whose output is pinned to 1. Its incoming
    /// row must be all zeros.
    #[serde(rename = "constant_neuron", default)]
    pub constant_neuron: Option<usize>,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>) -> Self {
        Self {
            weights,
            constant_neuron: None,
        }
    }

    pub fn with_constant_neuron(mut self, index: usize) -> Self {
        self.constant_neuron = Some(index);
        self
    }

    pub fn width(&self) -> usize {
        self.weights.len()
    }

    pub fn is_constant(&self, neuron: usize) -> bool {
        self.constant_neuron == Some(neuron)
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.weights
            .iter()
            .flatten()
            .fold(0.0_f64, |m, w| m.max(w.abs()))
    }
}

/// Free-form provenance attached to a network (training seed, target...).
pub type Metadata = BTreeMap<String, serde_json::Value>;

/// A feed-forward network with `L` layers of K-tuned neurons and a linear
/// output node. The output node itself is the client of the network, but the
/// weights feeding it (`output_weights`, the `(L+1)`-th synapse set) belong to
/// the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input_dim: usize,
    pub activation: ActivationSpec,
    pub layers: Vec<Layer>,
    pub output_weights: Vec<f64>,
    #[serde(default)]
    pub metadata: Metadata,
    /// Appends a constant 1 to every input, which acts as the bias neuron of
    /// layer 0. Layer 1 then has `input_dim + 1` columns.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub input_constant: bool,
    /// When set, every neuron output is rounded to the nearest multiple of
    /// `2^-fractional_bits`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fractional_bits: Option<u32>,
}

/// A point of the input domain `[0,1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InputVector(Vec<f64>);

impl InputVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::Domain(format!(
                "input component {i} = {v} is outside [0, 1]"
            )));
        }
        Ok(Self(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for InputVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Outputs of every layer for one input; `outputs[0]` is the (possibly
/// augmented) input, `outputs[l]` the outputs of layer `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub outputs: Vec<Vec<f64>>,
    pub output: f64,
}

impl Network {
    pub fn new(
        input_dim: usize,
        activation: ActivationSpec,
        layers: Vec<Layer>,
        output_weights: Vec<f64>,
    ) -> Result<Self> {
        let net = Self {
            input_dim,
            activation,
            layers,
            output_weights,
            metadata: Metadata::new(),
            input_constant: false,
            fractional_bits: None,
        };
        net.validate()?;
        Ok(net)
    }

    /// Shorthand for networks without bias neurons.
    pub fn from_weights(
        input_dim: usize,
        activation: ActivationSpec,
        layers: Vec<Vec<Vec<f64>>>,
        output_weights: Vec<f64>,
    ) -> Result<Self> {
        Self::new(
            input_dim,
            activation,
            layers.into_iter().map(Layer::new).collect(),
            output_weights,
        )
    }

    pub fn with_input_constant(mut self, enabled: bool) -> Result<Self> {
        self.input_constant = enabled;
        self.validate()?;
        Ok(self)
    }

    /// Checks every structural invariant, reporting the offending field path.
    pub fn validate(&self) -> Result<()> {
        let parse = |path: String, message: String| Error::Parse { path, message };
        if self.input_dim == 0 {
            return Err(parse("input_dim".into(), "must be at least 1".into()));
        }
        self.activation
            .validate()
            .map_err(|e| parse("activation.k".into(), e.to_string()))?;
        if self.layers.is_empty() {
            return Err(parse(
                "layers".into(),
                "at least one layer is required".into(),
            ));
        }
        if self.fractional_bits == Some(0) {
            return Err(parse("fractional_bits".into(), "must be at least 1".into()));
        }
        let mut fan_in = self.input_width();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weights.is_empty() {
                return Err(parse(
                    format!("layers[{l}].weights"),
                    "layer has no neurons".into(),
                ));
            }
            for (j, row) in layer.weights.iter().enumerate() {
                if row.len() != fan_in {
                    return Err(parse(
                        format!("layers[{l}].weights[{j}]"),
                        format!(
                            "layer {} row has {} entries, expected {fan_in}",
                            l + 1,
                            row.len()
                        ),
                    ));
                }
                if let Some(i) = row.iter().position(|w| !w.is_finite()) {
                    return Err(parse(
                        format!("layers[{l}].weights[{j}][{i}]"),
                        "weight is not finite".into(),
                    ));
                }
            }
            if let Some(c) = layer.constant_neuron {
                if c >= layer.width() {
                    return Err(parse(
                        format!("layers[{l}].constant_neuron"),
                        format!("index {c} out of range for {} neurons", layer.width()),
                    ));
                }
                if layer.weights[c].iter().any(|w| *w != 0.0) {
                    return Err(parse(
                        format!("layers[{l}].weights[{c}]"),
                        "constant neuron must have an all-zero incoming row".into(),
                    ));
                }
            }
            fan_in = layer.width();
        }
        if self.output_weights.len() != fan_in {
            return Err(parse(
                "output_weights".into(),
                format!(
                    "has {} entries, expected {fan_in}",
                    self.output_weights.len()
                ),
            ));
        }
        if let Some(i) = self.output_weights.iter().position(|w| !w.is_finite()) {
            return Err(parse(
                format!("output_weights[{i}]"),
                "weight is not finite".into(),
            ));
        }
        Ok(())
    }

    /// Number of layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `N_l` for `l` in `1..=L`; `N_0` is the input width and `N_{L+1} = 1`.
    pub fn width(&self, l: usize) -> usize {
        match l {
            0 => self.input_width(),
            l if l <= self.depth() => self.layers[l - 1].width(),
            _ => 1,
        }
    }

    /// `(N_1, ..., N_L)`.
    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::width).collect()
    }

    /// Columns of layer 1: `d`, plus one with an input constant.
    pub fn input_width(&self) -> usize {
        self.input_dim + usize::from(self.input_constant)
    }

    /// Layer `l` (1-based).
    pub fn layer(&self, l: usize) -> &Layer {
        &self.layers[l - 1]
    }

    pub fn is_constant(&self, l: usize, neuron: usize) -> bool {
        l >= 1 && l <= self.depth() && self.layers[l - 1].is_constant(neuron)
    }

    /// Weight of the synapse from neuron `from` of layer `l - 1` into neuron
    /// `to` of layer `l`, for `l` in `1..=L+1`.
    pub fn synapse_weight(&self, l: usize, to: usize, from: usize) -> f64 {
        if l == self.depth() + 1 {
            debug_assert_eq!(to, 0);
            self.output_weights[from]
        } else {
            self.layers[l - 1].weights[to][from]
        }
    }

    /// Largest absolute weight among the synapses leaving neuron `i` of
    /// layer `l`.
    pub fn max_outgoing_weight(&self, l: usize, i: usize) -> f64 {
        if l == self.depth() {
            self.output_weights[i].abs()
        } else {
            self.layers[l]
                .weights
                .iter()
                .fold(0.0_f64, |m, row| m.max(row[i].abs()))
        }
    }

    /// `w_m^{(l)}` for `l = 1..=L+1`: the largest absolute weight entering
    /// each layer, the last entry covering the output weights.
    pub fn max_weights(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(Layer::max_abs_weight)
            .chain(std::iter::once(
                self.output_weights
                    .iter()
                    .fold(0.0_f64, |m, w| m.max(w.abs())),
            ))
            .collect()
    }

    /// Total number of neurons `Σ N_l`.
    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(Layer::width).sum()
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "input has {} components, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("input component is not finite: {v}")));
        }
        Ok(())
    }

    /// Layer-0 outputs: the input, with the constant appended if enabled.
    pub(crate) fn input_layer(&self, x: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.input_width());
        y.extend_from_slice(x);
        if self.input_constant {
            y.push(1.0);
        }
        y
    }

    /// Applies the activation, and the output rounding if configured.
    #[inline]
    pub(crate) fn squash(&self, s: f64) -> f64 {
        let y = self.activation.eval(s);
        match self.fractional_bits {
            Some(bits) => round_to_bits(y, bits),
            None => y,
        }
    }

    /// Output of neuron `j` of layer `l` given what it received from the
    /// previous layer.
    #[inline]
    pub(crate) fn neuron_output(&self, l: usize, j: usize, received: &[f64]) -> f64 {
        let layer = &self.layers[l - 1];
        if layer.is_constant(j) {
            return 1.0;
        }
        let mut s = 0.0;
        for (w, y) in layer.weights[j].iter().zip(received) {
            s += w * y;
        }
        self.squash(s)
    }

    #[inline]
    pub(crate) fn output_node(&self, received: &[f64]) -> f64 {
        let mut out = 0.0;
        for (w, y) in self.output_weights.iter().zip(received) {
            out += w * y;
        }
        out
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let mut outputs = Vec::with_capacity(self.depth() + 1);
        outputs.push(self.input_layer(x));
        for l in 1..=self.depth() {
            let prev = &outputs[l - 1];
            let next: Vec<f64> = (0..self.width(l))
                .map(|j| self.neuron_output(l, j, prev))
                .collect();
            outputs.push(next);
        }
        let output = self.output_node(&outputs[self.depth()]);
        Ok(Trace { outputs, output })
    }

    /// `F_neu(x)`: the linear combination of the last layer's outputs.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.trace(x)?.output)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(document: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(document);
        let net: Network = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        net.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn round_to_bits(y: f64, bits: u32) -> f64 {
    let scale = (bits as f64).exp2();
    (y * scale).round() / scale
}
