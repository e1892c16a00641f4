use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn forward(self, x: &Matrix) -> Matrix {
        match self {
            Activation::Tanh => x.map(f64::tanh),
            Activation::Relu => x.map(|v| v.max(0.0)),
        }
    }

    /// Backward pass expressed through the forward *output* `y`.
    ///
    /// ReLU's gate is `y > 0`, so the subgradient at exactly zero is 0.
    pub fn backward(self, y: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        match self {
            Activation::Tanh => y.zip_map(upstream, |y, g| (1.0 - y * y) * g),
            Activation::Relu => y.zip_map(upstream, |y, g| if y > 0.0 { g } else { 0.0 }),
        }
    }
}
