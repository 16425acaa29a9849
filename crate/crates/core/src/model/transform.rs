use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bijection between a parameter's natural support and the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    /// Positive parameters: `theta = exp(x)`.
    Log,
    /// Interval `(lo, hi)`: `theta = lo + (hi - lo) * logistic(x)`.
    ScaledLogit {
        lo: f64,
        hi: f64,
    },
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Transform {
    pub fn to_constrained(&self, x: f64) -> f64 {
        match *self {
            Transform::Identity => x,
            Transform::Log => x.exp(),
            Transform::ScaledLogit { lo, hi } => {
                let s = if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                };
                lo + (hi - lo) * s
            }
        }
    }

    pub fn to_unconstrained(&self, theta: f64) -> Result<f64> {
        match *self {
            Transform::Identity => Ok(theta),
            Transform::Log if theta > 0.0 => Ok(theta.ln()),
            Transform::ScaledLogit { lo, hi } if theta > lo && theta < hi => {
                let p = (theta - lo) / (hi - lo);
                Ok(p.ln() - (-p).ln_1p())
            }
            _ => Err(Error::invalid(format!(
                "value {theta} outside the support of {self:?}"
            ))),
        }
    }

    /// `log |d theta / d x|` at unconstrained `x`.
    pub fn log_jacobian(&self, x: f64) -> f64 {
        match *self {
            Transform::Identity => 0.0,
            Transform::Log => x,
            Transform::ScaledLogit { lo, hi } => (hi - lo).ln() - softplus(x) - softplus(-x),
        }
    }
}
