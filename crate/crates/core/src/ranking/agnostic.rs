use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::rng::Rng;
use crate::numcore::{dot, l2_norm, GradCheckable, LinearLayer, Matrix};

use super::loss::ranking_loss_and_grad;

/// The QA-free baseline: `t_I = W x_I / ‖W x_I‖`, `t_C = x_C / ‖x_C‖`,
/// scored by `⟨t_I, t_C⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgnosticEmbedder {
    /// `D_xC × D_xI`, no bias.
    pub proj_image: LinearLayer,
}

/// Image-side forward values kept for backprop.
#[derive(Clone, Debug)]
pub struct AgnosticForward {
    pub projected: Matrix,
    pub norms: Vec<f64>,
    pub t: Matrix,
}

/// Normalizes every column to unit length; zero columns are an error.
pub fn unit_columns(x: &Matrix, what: &str) -> Result<(Matrix, Vec<f64>)> {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.cols());
    for j in 0..x.cols() {
        let col = x.col(j);
        let n = l2_norm(&col);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Degenerate(format!("{what} column {j} has norm {n}")));
        }
        out.set_col(j, &col.iter().map(|v| v / n).collect::<Vec<_>>());
        norms.push(n);
    }
    Ok((out, norms))
}

impl AgnosticEmbedder {
    /// Default dims: 4096-d image features into a 1024-d caption space.
    pub fn new(caption_dim: usize, image_dim: usize, rng: &mut Rng) -> Self {
        Self {
            proj_image: LinearLayer::init(caption_dim, image_dim, rng).without_bias(),
        }
    }

    pub fn image_dim(&self) -> usize {
        self.proj_image.in_dim()
    }

    pub fn caption_dim(&self) -> usize {
        self.proj_image.out_dim()
    }

    pub fn forward_images(&self, x_img: &Matrix) -> Result<AgnosticForward> {
        let projected = self.proj_image.forward(x_img)?;
        let (t, norms) = unit_columns(&projected, "projected image")?;
        Ok(AgnosticForward { projected, norms, t })
    }

    pub fn embed_images(&self, x_img: &Matrix) -> Result<Matrix> {
        Ok(self.forward_images(x_img)?.t)
    }

    pub fn embed_captions(&self, x_cap: &Matrix) -> Result<Matrix> {
        if x_cap.rows() != self.caption_dim() {
            return Err(Error::shape(
                "embed_captions",
                format!("caption dim {}", self.caption_dim()),
                format!("caption dim {}", x_cap.rows()),
            ));
        }
        Ok(unit_columns(x_cap, "caption")?.0)
    }

    /// `∂L/∂t_I → ∂L/∂W`, through the normalization.
    pub fn backward_images(&mut self, x_img: &Matrix, fwd: &AgnosticForward, grad_t: &Matrix) -> Result<()> {
        let mut grad_y = grad_t.clone();
        for j in 0..grad_t.cols() {
            let t = fwd.t.col(j);
            let g = grad_t.col(j);
            let proj = dot(&t, &g);
            let n = fwd.norms[j];
            let col: Vec<f64> = g.iter().zip(&t).map(|(gi, ti)| (gi - ti * proj) / n).collect();
            grad_y.set_col(j, &col);
        }
        self.proj_image.backward(x_img, &grad_y)?;
        Ok(())
    }

    /// `S_t` matrix, `images × captions`.
    pub fn scores(&self, x_img: &Matrix, x_cap: &Matrix) -> Result<Matrix> {
        self.embed_images(x_img)?.t_matmul(&self.embed_captions(x_cap)?)
    }

    /// Ranking loss on an aligned batch, with gradients accumulated into `W`.
    pub fn batch_backprop(&mut self, x_img: &Matrix, x_cap: &Matrix) -> Result<f64> {
        let fwd = self.forward_images(x_img)?;
        let t_cap = self.embed_captions(x_cap)?;
        let s = fwd.t.t_matmul(&t_cap)?;
        let (loss, g) = ranking_loss_and_grad(&s)?;
        let grad_t = t_cap.matmul_t(&g)?;
        self.backward_images(x_img, &fwd, &grad_t)?;
        Ok(loss)
    }
}

/// `S_t(I, C) = ⟨t_I, t_C⟩` for a single pair.
pub fn agnostic_score(emb: &AgnosticEmbedder, x_img: &[f64], x_cap: &[f64]) -> Result<f64> {
    Ok(emb.scores(&Matrix::column(x_img), &Matrix::column(x_cap))?[(0, 0)])
}

/// Fixed-batch objective for gradient checking the baseline.
pub struct AgnosticObjective {
    pub model: AgnosticEmbedder,
    pub x_img: Matrix,
    pub x_cap: Matrix,
}

impl GradCheckable for AgnosticObjective {
    fn loss(&self) -> Result<f64> {
        super::loss::ranking_loss(&self.model.scores(&self.x_img, &self.x_cap)?)
    }

    fn backprop(&mut self) -> Result<f64> {
        self.model.proj_image.zero_grad();
        self.model.batch_backprop(&self.x_img, &self.x_cap)
    }

    fn layers_mut(&mut self) -> Vec<(String, &mut LinearLayer)> {
        vec![("agnostic.proj_image".into(), &mut self.model.proj_image)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::rng;
    use crate::numcore::{gradient_check, GradCheckConfig};
    use rand::Rng as _;

    fn rand_mat(r: &mut Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identical_directions_score_one() {
        let emb = AgnosticEmbedder {
            proj_image: LinearLayer::from_parts(Matrix::identity(3), Matrix::zeros(3, 1), false).unwrap(),
        };
        let s = agnostic_score(&emb, &[1.0, 2.0, 2.0], &[2.0, 4.0, 4.0]).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        let s = agnostic_score(&emb, &[1.0, 0.0, 0.0], &[0.0, 3.0, 0.0]).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn zero_norm_is_degenerate() {
        let emb = AgnosticEmbedder {
            proj_image: LinearLayer::zeros(2, 2).without_bias(),
        };
        assert!(matches!(agnostic_score(&emb, &[1.0, 1.0], &[1.0, 0.0]), Err(Error::Degenerate(_))));
        let emb = AgnosticEmbedder {
            proj_image: LinearLayer::from_parts(Matrix::identity(2), Matrix::zeros(2, 1), false).unwrap(),
        };
        assert!(matches!(agnostic_score(&emb, &[1.0, 1.0], &[0.0, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn matches_normalize_then_dot_oracle() {
        let mut r = rng(1);
        let emb = AgnosticEmbedder::new(4, 6, &mut r);
        let x: Vec<f64> = (0..6).map(|_| r.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..4).map(|i| (0..6).map(|k| emb.proj_image.w[(i, k)] * x[k]).sum()).collect();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nc = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let expected: f64 = y.iter().zip(&c).map(|(a, b)| a / ny * b / nc).sum();
        assert!((agnostic_score(&emb, &x, &c).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let mut r = rng(2);
        let emb = AgnosticEmbedder::new(5, 7, &mut r);
        let t = emb.embed_images(&rand_mat(&mut r, 7, 9)).unwrap();
        for j in 0..9 {
            assert!((l2_norm(&t.col(j)) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_check_through_normalization() {
        let mut r = rng(3);
        let mut obj = AgnosticObjective {
            model: AgnosticEmbedder::new(6, 8, &mut r),
            x_img: rand_mat(&mut r, 8, 5),
            x_cap: rand_mat(&mut r, 6, 5),
        };
        let report = gradient_check(&mut obj, &GradCheckConfig::default()).unwrap();
        assert!(report.passed, "{report}");
    }
}
