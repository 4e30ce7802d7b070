//! Target functions `F: [0,1]^d -> [0,1]` and the uniform evaluation grids
//! used to estimate approximation errors.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::Network;

pub trait Target: Send + Sync {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinTarget {
    /// `(sin(2πx) + 1) / 2` on `[0,1]`.
    RidgeSine,
    /// `x1 + x2 - 2 x1 x2`: 0 on the diagonal corners, 1 on the others.
    SmoothXor,
    Product,
    Constant(f64),
}

impl BuiltinTarget {
    pub fn constant(c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::Argument(format!(
                "constant target {c} is outside [0, 1]"
            )));
        }
        Ok(Self::Constant(c))
    }
}

impl Target for BuiltinTarget {
    fn name(&self) -> String {
        self.to_string()
    }

    fn dim(&self) -> usize {
        match self {
            Self::RidgeSine | Self::Constant(_) => 1,
            Self::SmoothXor | Self::Product => 2,
        }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Self::RidgeSine => ((2.0 * PI * x[0]).sin() + 1.0) / 2.0,
            Self::SmoothXor => x[0] + x[1] - 2.0 * x[0] * x[1],
            Self::Product => x[0] * x[1],
            Self::Constant(c) => c,
        }
    }
}

impl fmt::Display for BuiltinTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RidgeSine => write!(f, "ridge_sine"),
            Self::SmoothXor => write!(f, "smooth_xor"),
            Self::Product => write!(f, "product"),
            Self::Constant(c) => write!(f, "constant:{c}"),
        }
    }
}

impl FromStr for BuiltinTarget {
    type Err = Error;

    /// `ridge_sine`, `smooth_xor`, `product` or `constant:<c>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ridge_sine" => Ok(Self::RidgeSine),
            "smooth_xor" => Ok(Self::SmoothXor),
            "product" => Ok(Self::Product),
            other => match other.strip_prefix("constant:") {
                Some(c) => {
                    let c = c
                        .parse::<f64>()
                        .map_err(|e| Error::Argument(format!("bad constant `{c}`: {e}")))?;
                    Self::constant(c)
                }
                None => Err(Error::Argument(format!(
                    "unknown target `{other}` (expected ridge_sine, smooth_xor, product or constant:<c>)"
                ))),
            },
        }
    }
}

type Evaluator = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A user-supplied target; its range is checked on a grid when it is built.
pub struct FnTarget {
    name: String,
    dim: usize,
    f: Evaluator,
}

impl FnTarget {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("target dimension must be positive".into()));
        }
        let name = name.into();
        let per_dim = check_grid(dim);
        for x in Grid::new(dim, per_dim)? {
            let y = f(&x);
            if !(0.0..=1.0).contains(&y) {
                return Err(Error::Domain(format!(
                    "target `{name}` evaluates to {y} at {x:?}, outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            name,
            dim,
            f: Box::new(f),
        })
    }
}

impl fmt::Debug for FnTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnTarget")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl Target for FnTarget {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// A network as its own target. Panics on inputs of the wrong length.
impl Target for Network {
    fn name(&self) -> String {
        "network".into()
    }

    fn dim(&self) -> usize {
        self.input_dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.forward(x)
            .expect("input checked against the network dimension")
    }
}

fn check_grid(dim: usize) -> usize {
    // about 10^4 points at most
    ((10_000f64).powf(1.0 / dim as f64).floor() as usize).clamp(2, 101)
}

/// Default resolution for error estimates: 512 points for `d = 1`, `64^2` for
/// `d = 2`, about 4096 points beyond.
pub fn default_grid(dim: usize) -> usize {
    match dim {
        1 => 512,
        2 => 64,
        d => ((4096f64).powf(1.0 / d as f64).floor() as usize).max(2),
    }
}

/// The points `(i_1, ..., i_d) / (n - 1)` of `[0,1]^d`, first coordinate
/// varying slowest.
#[derive(Debug, Clone)]
pub struct Grid {
    dim: usize,
    per_dim: usize,
    next: Option<Vec<usize>>,
}

impl Grid {
    pub fn new(dim: usize, per_dim: usize) -> Result<Self> {
        if per_dim < 2 {
            return Err(Error::Argument(format!(
                "grid needs at least 2 points per dimension, got {per_dim}"
            )));
        }
        if dim == 0 {
            return Err(Error::Argument("grid dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            per_dim,
            next: Some(vec![0; dim]),
        })
    }

    pub fn len(&self) -> usize {
        self.per_dim.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

impl Iterator for Grid {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        let idx = self.next.take()?;
        let step = (self.per_dim - 1) as f64;
        let point = idx.iter().map(|&i| i as f64 / step).collect();
        let mut idx = idx;
        for pos in (0..self.dim).rev() {
            idx[pos] += 1;
            if idx[pos] < self.per_dim {
                self.next = Some(idx);
                break;
            }
            idx[pos] = 0;
        }
        Some(point)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse_and_evaluate() {
        let t: BuiltinTarget = "ridge_sine".parse().unwrap();
        assert!((t.eval(&[0.25]) - 1.0).abs() < 1e-15);
        assert!((t.eval(&[0.75]) - 0.0).abs() < 1e-15);
        let t: BuiltinTarget = "smooth_xor".parse().unwrap();
        assert_eq!(t.eval(&[1.0, 0.0]), 1.0);
        assert_eq!(t.eval(&[1.0, 1.0]), 0.0);
        assert_eq!(t.eval(&[0.5, 0.5]), 0.5);
        let t: BuiltinTarget = "constant:0.25".parse().unwrap();
        assert_eq!(t.eval(&[0.9]), 0.25);
        assert_eq!(t.to_string(), "constant:0.25");
        assert!("constant:2".parse::<BuiltinTarget>().is_err());
        assert!("cosine".parse::<BuiltinTarget>().is_err());
    }

    #[test]
    fn builtins_stay_in_range() {
        for t in [
            BuiltinTarget::RidgeSine,
            BuiltinTarget::SmoothXor,
            BuiltinTarget::Product,
        ] {
            for x in Grid::new(t.dim(), 41).unwrap() {
                let y = t.eval(&x);
                assert!((0.0..=1.0).contains(&y), "{t} at {x:?} = {y}");
            }
        }
    }

    #[test]
    fn custom_targets_are_range_checked() {
        assert!(FnTarget::new("half", 2, |x| (x[0] + x[1]) / 2.0).is_ok());
        let err = FnTarget::new("double", 1, |x| 2.0 * x[0]).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn grid_covers_the_cube() {
        let pts: Vec<_> = Grid::new(2, 3).unwrap().collect();
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[0], vec![0.0, 0.0]);
        assert_eq!(pts[1], vec![0.0, 0.5]);
        assert_eq!(pts[8], vec![1.0, 1.0]);
        assert!(Grid::new(1, 1).is_err());
        assert_eq!(default_grid(1), 512);
        assert_eq!(default_grid(2), 64);
    }
}
