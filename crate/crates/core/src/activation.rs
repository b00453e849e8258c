//! Elementwise activation functions and their derivatives.

use crate::matrix::Matrix;

/// Negative-side slope of the leaky relu.
pub const LRELU_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Tanh,
    /// `max(x, 0.2 x)`.
    LRelu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(x),
            Activation::LRelu => {
                if x > 0.0 {
                    x
                } else {
                    LRELU_SLOPE * x
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative at `x`. The leaky relu uses slope 0.2 at exactly zero.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = libm::tanh(x);
                1.0 - t * t
            }
            Activation::LRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LRELU_SLOPE
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn apply(self, s: &Matrix) -> Matrix {
        match self {
            Activation::Identity => s.clone(),
            _ => s.map(|x| self.eval(x)),
        }
    }

    /// `g'(S)` elementwise.
    pub fn derivative_matrix(self, s: &Matrix) -> Matrix {
        s.map(|x| self.derivative(x))
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::LRelu => "lrelu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "lrelu" => Some(Activation::LRelu),
            "identity" | "linear" => Some(Activation::Identity),
            _ => None,
        }
    }
}
