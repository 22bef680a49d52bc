use core::fmt;
use core::str::FromStr;

use crate::error::Error;

/// `max(0, v)²`.
#[inline]
pub fn squared_relu(v: f64) -> f64 {
    let r = v.max(0.0);
    r * r
}

/// `2·max(0, v)`; zero at the kink.
#[inline]
pub fn squared_relu_derivative(v: f64) -> f64 {
    2.0 * v.max(0.0)
}

#[inline]
fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + libm::exp(-v))
    } else {
        let e = libm::exp(v);
        e / (1.0 + e)
    }
}

/// `v·sigmoid(v)`.
#[inline]
pub fn swish(v: f64) -> f64 {
    v * sigmoid(v)
}

#[inline]
pub fn swish_derivative(v: f64) -> f64 {
    let s = sigmoid(v);
    s + v * s * (1.0 - s)
}

/// Nonlinearity shared by the encoder and the joint network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    SquaredRelu,
    Swish,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::SquaredRelu => squared_relu(v),
            Activation::Swish => swish(v),
        }
    }

    #[inline]
    pub fn derivative(self, v: f64) -> f64 {
        match self {
            Activation::SquaredRelu => squared_relu_derivative(v),
            Activation::Swish => swish_derivative(v),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::SquaredRelu => "squared_relu",
            Activation::Swish => "swish",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "squared_relu" => Ok(Self::SquaredRelu),
            "swish" => Ok(Self::Swish),
            other => Err(Error::InvalidParameter(alloc::format!(
                "unknown activation `{other}`"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn squared_relu_examples() {
        assert_eq!(squared_relu(-1.0), 0.0);
        assert_eq!(squared_relu(2.0), 4.0);
        assert_eq!(squared_relu(0.0), 0.0);
        assert_eq!(squared_relu_derivative(0.0), 0.0);
    }

    #[test]
    fn swish_examples() {
        assert_eq!(swish(0.0), 0.0);
        assert!((swish(40.0) - 40.0).abs() < 1e-12);
        assert!((swish(1.0) - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-15);
        assert!((swish(1.0) - 0.7311).abs() < 1e-4);
        assert!(swish(-800.0).is_finite());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for i in 0..100 {
            // Avoid the squared-ReLU kink straddling a stencil.
            let v = -4.0 + 8.0 * (i as f64 + 0.5) / 100.0;
            for act in [Activation::SquaredRelu, Activation::Swish] {
                let fd = (act.apply(v + h) - act.apply(v - h)) / (2.0 * h);
                assert!((fd - act.derivative(v)).abs() <= 1e-8, "{act} at {v}");
            }
        }
    }
}
