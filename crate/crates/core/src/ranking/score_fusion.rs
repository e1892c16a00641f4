use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{project_v, GroundedVector, GroundingProjection, ProjectionForward};
use crate::numcore::rng::Rng;
use crate::numcore::{dot, DropoutSite, GradCheckable, LinearLayer, Matrix, Mode};

use super::agnostic::AgnosticEmbedder;
use super::loss::{ranking_loss, ranking_loss_and_grad};
use super::{RankTrainable, Scorer, SideInputs, CAPTION_V_SITE, IMAGE_V_SITE};

/// `S = α·S_t + β·S_v`, with `S_t` from a frozen agnostic embedder and
/// `S_v = ⟨v_I, v_C⟩` from two grounding projections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreFusionModel {
    pub agnostic: AgnosticEmbedder,
    pub proj_v_image: GroundingProjection,
    pub proj_v_caption: GroundingProjection,
    pub alpha: f64,
    pub beta: f64,
}

pub(crate) struct GroundedForward {
    image: ProjectionForward,
    caption: ProjectionForward,
}

impl ScoreFusionModel {
    /// Fresh projections `N_I → D_v` and `N_C → D_v`, with `α = 0, β = 1`
    /// until the weights are fitted.
    pub fn new(agnostic: AgnosticEmbedder, image_bank: usize, caption_bank: usize, v_dim: usize, keep_prob: f64, rng: &mut Rng) -> Self {
        Self {
            agnostic,
            proj_v_image: GroundingProjection::new(v_dim, image_bank, keep_prob, IMAGE_V_SITE, rng),
            proj_v_caption: GroundingProjection::new(v_dim, caption_bank, keep_prob, CAPTION_V_SITE, rng),
            alpha: 0.0,
            beta: 1.0,
        }
    }

    fn grounded_forward(&self, images: &SideInputs, captions: &SideInputs, mode: &Mode) -> Result<GroundedForward> {
        Ok(GroundedForward {
            image: self.proj_v_image.forward(images.u("image")?, mode)?,
            caption: self.proj_v_caption.forward(captions.u("caption")?, mode)?,
        })
    }

    /// `S_v` matrix, `images × captions`.
    pub fn grounded_scores(&self, images: &SideInputs, captions: &SideInputs, mode: &Mode) -> Result<Matrix> {
        let f = self.grounded_forward(images, captions, mode)?;
        f.image.out.t_matmul(&f.caption.out)
    }

    /// `S_t` matrix, `images × captions`.
    pub fn agnostic_scores(&self, images: &SideInputs, captions: &SideInputs) -> Result<Matrix> {
        self.agnostic.scores(&images.x, &captions.x)
    }
}

pub fn grounded_score(model: &ScoreFusionModel, u_img: &GroundedVector, u_cap: &GroundedVector, mode: &Mode) -> Result<f64> {
    let v_i = project_v(&model.proj_v_image, u_img, mode)?;
    let v_c = project_v(&model.proj_v_caption, u_cap, mode)?;
    if v_i.len() != v_c.len() {
        return Err(Error::shape(
            "grounded_score",
            format!("v_C of length {}", v_i.len()),
            format!("length {}", v_c.len()),
        ));
    }
    Ok(dot(&v_i, &v_c))
}

pub fn fused_score(model: &ScoreFusionModel, s_t: f64, s_v: f64) -> f64 {
    model.alpha * s_t + model.beta * s_v
}

impl Scorer for ScoreFusionModel {
    fn score_matrix(&self, images: &SideInputs, captions: &SideInputs, mode: &Mode) -> Result<Matrix> {
        let mut s = Matrix::zeros(images.len(), captions.len());
        if self.alpha != 0.0 {
            s = self.agnostic_scores(images, captions)?.scale(self.alpha);
        }
        if self.beta != 0.0 {
            s.add_assign(&self.grounded_scores(images, captions, mode)?.scale(self.beta))?;
        }
        Ok(s)
    }

    fn dropout_sites(&self) -> Vec<DropoutSite> {
        if self.beta == 0.0 {
            return Vec::new();
        }
        [self.proj_v_image.dropout_site(), self.proj_v_caption.dropout_site()]
            .into_iter()
            .flatten()
            .collect()
    }
}

impl RankTrainable for ScoreFusionModel {
    /// Trains the projections on `S_v` alone.
    fn batch_backprop(&mut self, images: &SideInputs, captions: &SideInputs, mode: &Mode) -> Result<f64> {
        let f = self.grounded_forward(images, captions, mode)?;
        let s = f.image.out.t_matmul(&f.caption.out)?;
        let (loss, g) = ranking_loss_and_grad(&s)?;
        let grad_vi = f.caption.out.matmul_t(&g)?;
        let grad_vc = f.image.out.matmul(&g)?;
        self.proj_v_image.backward(images.u("image")?, &f.image, &grad_vi)?;
        self.proj_v_caption.backward(captions.u("caption")?, &f.caption, &grad_vc)?;
        Ok(loss)
    }

    fn trainable_layers(&mut self) -> Vec<(String, &mut LinearLayer)> {
        vec![
            ("proj_v_image".into(), &mut self.proj_v_image.layer),
            ("proj_v_caption".into(), &mut self.proj_v_caption.layer),
        ]
    }
}

/// Fixed-batch objective over the grounded score.
pub struct ScoreFusionObjective {
    pub model: ScoreFusionModel,
    pub images: SideInputs,
    pub captions: SideInputs,
}

impl GradCheckable for ScoreFusionObjective {
    fn loss(&self) -> Result<f64> {
        ranking_loss(&self.model.grounded_scores(&self.images, &self.captions, &Mode::Infer)?)
    }

    fn backprop(&mut self) -> Result<f64> {
        for (_, l) in self.model.trainable_layers() {
            l.zero_grad();
        }
        self.model.batch_backprop(&self.images, &self.captions, &Mode::Infer)
    }

    fn layers_mut(&mut self) -> Vec<(String, &mut LinearLayer)> {
        self.model.trainable_layers()
    }
}
