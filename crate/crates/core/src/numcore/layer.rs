use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::rng::Rng;
use crate::error::{Error, Result};

/// Affine map `W · x + b` with accumulated gradients and RMSProp state.
///
/// A layer built with [`LinearLayer::without_bias`] keeps `b` at zero and never
/// accumulates a bias gradient.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(into = "LayerParams", try_from = "LayerParams")]
pub struct LinearLayer {
    pub w: Matrix,
    pub b: Matrix,
    pub grad_w: Matrix,
    pub grad_b: Matrix,
    pub rms_cache_w: Matrix,
    pub rms_cache_b: Matrix,
    has_bias: bool,
}

/// Serialized form: parameters only.
#[derive(Clone, Serialize, Deserialize)]
struct LayerParams {
    w: Matrix,
    b: Matrix,
    has_bias: bool,
}

impl From<LinearLayer> for LayerParams {
    fn from(l: LinearLayer) -> Self {
        Self {
            w: l.w,
            b: l.b,
            has_bias: l.has_bias,
        }
    }
}

impl TryFrom<LayerParams> for LinearLayer {
    type Error = Error;

    fn try_from(p: LayerParams) -> Result<Self> {
        LinearLayer::from_parts(p.w, p.b, p.has_bias)
    }
}

/// Compares parameters only.
impl PartialEq for LinearLayer {
    fn eq(&self, other: &Self) -> bool {
        self.w == other.w && self.b == other.b && self.has_bias == other.has_bias
    }
}

impl LinearLayer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self::from_parts(Matrix::zeros(out_dim, in_dim), Matrix::zeros(out_dim, 1), true).expect("consistent shapes")
    }

    /// Weights uniform in ±1/√fan_in, biases zero.
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut Rng) -> Self {
        let mut layer = Self::zeros(out_dim, in_dim);
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        for w in layer.w.as_mut_slice() {
            *w = rng.gen_range(-bound..bound);
        }
        layer
    }

    pub fn without_bias(mut self) -> Self {
        self.has_bias = false;
        self.b.fill(0.0);
        self
    }

    pub fn from_parts(w: Matrix, b: Matrix, has_bias: bool) -> Result<Self> {
        if b.shape() != (w.rows(), 1) {
            return Err(Error::shape(
                "LinearLayer::from_parts",
                format!("bias {}x1", w.rows()),
                format!("bias {}x{}", b.rows(), b.cols()),
            ));
        }
        if !has_bias && b.as_slice().iter().any(|&v| v != 0.0) {
            return Err(Error::Param("bias-free layer with nonzero bias".into()));
        }
        let (r, c) = w.shape();
        Ok(Self {
            grad_w: Matrix::zeros(r, c),
            grad_b: Matrix::zeros(r, 1),
            rms_cache_w: Matrix::zeros(r, c),
            rms_cache_b: Matrix::zeros(r, 1),
            w,
            b,
            has_bias,
        })
    }

    pub fn has_bias(&self) -> bool {
        self.has_bias
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + if self.has_bias { self.b.len() } else { 0 }
    }

    /// Returns `W · x + b`, the bias broadcast across the columns of `x`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.w.cols() {
            return Err(Error::shape(
                "linear_forward",
                format!("input rows = {} (layer in_dim)", self.w.cols()),
                format!("input rows = {}", x.rows()),
            ));
        }
        let mut y = self.w.matmul(x)?;
        if self.has_bias {
            for i in 0..y.rows() {
                let bi = self.b[(i, 0)];
                y.row_mut(i).iter_mut().for_each(|v| *v += bi);
            }
        }
        Ok(y)
    }

    /// Accumulates `grad_W += G · xᵀ` and `grad_b += rowsum(G)`; returns `Wᵀ · G`.
    pub fn backward(&mut self, x: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
        if x.rows() != self.w.cols() || grad_out.rows() != self.w.rows() || x.cols() != grad_out.cols() {
            return Err(Error::shape(
                "linear_backward",
                format!("x {}xB and grad_out {}xB", self.w.cols(), self.w.rows()),
                format!("x {}x{}, grad_out {}x{}", x.rows(), x.cols(), grad_out.rows(), grad_out.cols()),
            ));
        }
        let gw = grad_out.matmul_t(x)?;
        self.grad_w.add_assign(&gw)?;
        if self.has_bias {
            for (g, s) in self.grad_b.as_mut_slice().iter_mut().zip(grad_out.row_sums()) {
                *g += s;
            }
        }
        self.w.t_matmul(grad_out)
    }

    pub fn zero_grad(&mut self) {
        self.grad_w.fill(0.0);
        self.grad_b.fill(0.0);
    }

    /// Flat parameter access used by the gradient checker: indices
    /// `0..w.len()` address `W`, the rest address `b`.
    pub(crate) fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let nw = self.w.len();
        if idx < nw {
            &mut self.w.as_mut_slice()[idx]
        } else {
            &mut self.b.as_mut_slice()[idx - nw]
        }
    }

    pub(crate) fn grad_at(&self, idx: usize) -> f64 {
        let nw = self.w.len();
        if idx < nw {
            self.grad_w.as_slice()[idx]
        } else {
            self.grad_b.as_slice()[idx - nw]
        }
    }
}
