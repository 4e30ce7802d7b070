use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Sigmoid,
    Tanh,
}

/// A squashing function tuned so that its Lipschitz constant is exactly `k`.
///
/// The sigmoid variant evaluates `x -> sigmoid(4 k x)`, the tanh variant
/// `x -> tanh(k x)`. Both have their steepest slope, equal to `k`, at the
/// origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    #[serde(rename = "k")]
    pub lipschitz_k: f64,
}

impl ActivationSpec {
    pub fn new(kind: ActivationKind, lipschitz_k: f64) -> Result<Self> {
        let spec = Self { kind, lipschitz_k };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sigmoid(lipschitz_k: f64) -> Result<Self> {
        Self::new(ActivationKind::Sigmoid, lipschitz_k)
    }

    pub fn tanh(lipschitz_k: f64) -> Result<Self> {
        Self::new(ActivationKind::Tanh, lipschitz_k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz_k.is_finite() && self.lipschitz_k > 0.0) {
            return Err(Error::Domain(format!(
                "Lipschitz constant must be positive and finite, got {}",
                self.lipschitz_k
            )));
        }
        Ok(())
    }

    pub fn k(&self) -> f64 {
        self.lipschitz_k
    }

    /// Same kind, different Lipschitz constant.
    pub fn with_k(&self, lipschitz_k: f64) -> Result<Self> {
        Self::new(self.kind, lipschitz_k)
    }

    /// Supremum of |φ| over the real line. Crashed units deviate from their
    /// nominal output by at most this much.
    pub fn sup_abs(&self) -> f64 {
        1.0
    }

    pub fn activate(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain(format!(
                "activation input is not finite: {x}"
            )));
        }
        Ok(self.eval(x))
    }

    /// Unchecked evaluation for the hot paths, where inputs come from finite
    /// weights and bounded activations.
    #[inline]
    pub(crate) fn eval(&self, x: f64) -> f64 {
        match self.kind {
            ActivationKind::Sigmoid => logistic(4.0 * self.lipschitz_k * x),
            ActivationKind::Tanh => (self.lipschitz_k * x).tanh(),
        }
    }

    /// Derivative expressed through the output value `y = φ(x)`.
    #[inline]
    pub(crate) fn derivative_from_output(&self, y: f64) -> f64 {
        match self.kind {
            ActivationKind::Sigmoid => 4.0 * self.lipschitz_k * y * (1.0 - y),
            ActivationKind::Tanh => self.lipschitz_k * (1.0 - y * y),
        }
    }

    /// Inverse on the open range of the activation.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        let k = self.lipschitz_k;
        match self.kind {
            ActivationKind::Sigmoid if y > 0.0 && y < 1.0 => Ok((y / (1.0 - y)).ln() / (4.0 * k)),
            ActivationKind::Tanh if y > -1.0 && y < 1.0 => Ok(y.atanh() / k),
            _ => Err(Error::Domain(format!(
                "{y} is outside the open range of {:?}",
                self.kind
            ))),
        }
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}
