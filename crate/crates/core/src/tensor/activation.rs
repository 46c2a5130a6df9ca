use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Default negative-side slope for [`Activation::LeakyRelu`].
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Elementwise nonlinearity applied after each affine map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "slope", rename_all = "kebab-case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
            Activation::LeakyRelu(s) => {
                if z >= T::zero() {
                    z
                } else {
                    T::of(s) * z
                }
            }
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation. ReLU-family kinks take
    /// the right-hand derivative at zero.
    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (T::one() - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
            Activation::Relu => {
                if z >= T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(s) => {
                if z >= T::zero() {
                    T::one()
                } else {
                    T::of(s)
                }
            }
            Activation::Identity => T::one(),
        }
    }

    /// `(B_σ, B_σ′)`: sup |σ| (None when unbounded) and sup |σ′|.
    pub fn bounds(self) -> (Option<f64>, f64) {
        match self {
            Activation::Sigmoid => (Some(1.0), 0.25),
            Activation::Tanh => (Some(1.0), 1.0),
            Activation::Relu | Activation::Identity => (None, 1.0),
            Activation::LeakyRelu(s) => (None, s.abs().max(1.0)),
        }
    }

    /// Magnitude bound on the output given a magnitude bound on the input.
    /// Every supported activation satisfies `|σ(z)| ≤ max(|z|, sup|σ|)`.
    pub fn output_bound(self, input_bound: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0,
            Activation::Tanh => input_bound.min(1.0),
            Activation::Relu | Activation::Identity => input_bound,
            Activation::LeakyRelu(s) => input_bound * s.abs().max(1.0),
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Relu => f.write_str("relu"),
            Activation::LeakyRelu(s) => write!(f, "leaky-relu({s})"),
            Activation::Identity => f.write_str("identity"),
        }
    }
}

impl FromStr for Activation {
    type Err = String;

    /// Accepts `sigmoid`, `tanh`, `relu`, `identity`, `leaky-relu` and
    /// `leaky-relu(0.1)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            "leaky-relu" | "leaky_relu" | "lrelu" => Ok(Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE)),
            other => {
                let inner = other
                    .strip_prefix("leaky-relu(")
                    .or_else(|| other.strip_prefix("leaky_relu("))
                    .and_then(|r| r.strip_suffix(')'));
                match inner.map(str::parse::<f64>) {
                    Some(Ok(slope)) if slope.is_finite() => Ok(Activation::LeakyRelu(slope)),
                    _ => Err(format!(
                        "unknown activation `{other}` (expected sigmoid, tanh, relu, leaky-relu[(slope)], identity)"
                    )),
                }
            }
        }
    }
}
