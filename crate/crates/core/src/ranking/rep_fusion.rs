use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::{GroundingProjection, ProjectionForward};
use crate::numcore::rng::Rng;
use crate::numcore::{apply_site, dot, Activation, DropoutMask, DropoutSite, GradCheckable, LinearLayer, Matrix, Mode};

use super::agnostic::AgnosticEmbedder;
use super::loss::{ranking_loss, ranking_loss_and_grad};
use super::{RankTrainable, Scorer, SideInputs, CAPTION_R_SITE, CAPTION_V_SITE, IMAGE_R_SITE, IMAGE_V_SITE};

/// Which grounded paths feed the fused representations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Full,
    CaptionOnly,
    ImageOnly,
    AgnosticDeeper,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::Full,
        FusionMode::CaptionOnly,
        FusionMode::ImageOnly,
        FusionMode::AgnosticDeeper,
    ];

    pub fn uses_image_v(self) -> bool {
        matches!(self, FusionMode::Full | FusionMode::ImageOnly)
    }

    pub fn uses_caption_v(self) -> bool {
        matches!(self, FusionMode::Full | FusionMode::CaptionOnly)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Full => "full",
            FusionMode::CaptionOnly => "caption_only",
            FusionMode::ImageOnly => "image_only",
            FusionMode::AgnosticDeeper => "agnostic_deeper",
        }
    }
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "full" => Ok(FusionMode::Full),
            "caption_only" => Ok(FusionMode::CaptionOnly),
            "image_only" => Ok(FusionMode::ImageOnly),
            "agnostic_deeper" => Ok(FusionMode::AgnosticDeeper),
            other => Err(Error::Param(format!(
                "unknown fusion mode {other:?} (expected full, caption_only, image_only or agnostic_deeper)"
            ))),
        }
    }
}

/// One side of the fused stack: `r = dropout(relu(W_t t + W_v v + b_r))`
/// with `v = dropout(relu(W_u u + b_u))`. A disabled grounded path is absent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepSide {
    pub grounding: Option<GroundingProjection>,
    /// Carries `b_r`.
    pub w_t: LinearLayer,
    /// No bias.
    pub w_v: Option<LinearLayer>,
    pub keep_prob: f64,
    pub site: u32,
}

#[derive(Clone, Debug)]
pub(crate) struct SideForward {
    v: Option<ProjectionForward>,
    activated: Matrix,
    mask: DropoutMask,
    r: Matrix,
}

impl RepSide {
    fn new(t_dim: usize, u_dim: Option<usize>, v_dim: usize, r_dim: usize, keep_prob: f64, sites: (u32, u32), rng: &mut Rng) -> Self {
        let w_t = LinearLayer::init(r_dim, t_dim, rng);
        let (grounding, w_v) = match u_dim {
            Some(n) => (
                Some(GroundingProjection::new(v_dim, n, keep_prob, sites.0, rng)),
                Some(LinearLayer::init(r_dim, v_dim, rng).without_bias()),
            ),
            None => (None, None),
        };
        Self {
            grounding,
            w_t,
            w_v,
            keep_prob,
            site: sites.1,
        }
    }

    pub fn r_dim(&self) -> usize {
        self.w_t.out_dim()
    }

    fn fuse(&self, t: &Matrix, v: Option<&Matrix>, mode: &Mode) -> Result<(Matrix, DropoutMask, Matrix)> {
        let mut pre = self.w_t.forward(t)?;
        if let (Some(w_v), Some(v)) = (&self.w_v, v) {
            pre.add_assign(&w_v.forward(v)?)?;
        }
        let activated = Activation::Relu.forward(&pre);
        let (r, mask) = apply_site(&activated, self.keep_prob, mode, self.site)?;
        Ok((activated, mask, r))
    }

    pub(crate) fn forward(&self, t: &Matrix, u: Option<&Matrix>, what: &str, mode: &Mode) -> Result<SideForward> {
        let v = match &self.grounding {
            Some(g) => {
                let u = u.ok_or_else(|| Error::Data(format!("{what} grounded features are required by this fusion mode")))?;
                Some(g.forward(u, mode)?)
            }
            None => None,
        };
        let (activated, mask, r) = self.fuse(t, v.as_ref().map(|f| &f.out), mode)?;
        Ok(SideForward { v, activated, mask, r })
    }

    pub(crate) fn backward(&mut self, t: &Matrix, u: Option<&Matrix>, fwd: &SideForward, grad_r: &Matrix) -> Result<()> {
        let g = fwd.mask.backward(grad_r);
        let g = Activation::Relu.backward(&fwd.activated, &g)?;
        self.w_t.backward(t, &g)?;
        if let (Some(w_v), Some(grounding), Some(vf), Some(u)) = (&mut self.w_v, &mut self.grounding, &fwd.v, u) {
            let grad_v = w_v.backward(&vf.out, &g)?;
            grounding.backward(u, vf, &grad_v)?;
        }
        Ok(())
    }

    fn sites(&self) -> Vec<DropoutSite> {
        let mut out: Vec<DropoutSite> = self.grounding.iter().filter_map(|g| g.dropout_site()).collect();
        if self.keep_prob < 1.0 {
            out.push(DropoutSite {
                id: self.site,
                units: self.r_dim(),
                keep_prob: self.keep_prob,
            });
        }
        out
    }

    fn layers_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut LinearLayer)>) {
        if let Some(g) = &mut self.grounding {
            out.push((format!("{prefix}.proj_v"), &mut g.layer));
        }
        out.push((format!("{prefix}.w_t"), &mut self.w_t));
        if let Some(w) = &mut self.w_v {
            out.push((format!("{prefix}.w_v"), w));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepFusionDims {
    pub image_bank: usize,
    pub caption_bank: usize,
    pub v_dim: usize,
    pub r_dim: usize,
}

impl RepFusionDims {
    pub fn with_bank(bank: usize, v_dim: usize, r_dim: usize) -> Self {
        Self {
            image_bank: bank,
            caption_bank: bank,
            v_dim,
            r_dim,
        }
    }
}

/// `S = ⟨r_I, r_C⟩` over VQA-aware representations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepFusionModel {
    /// Frozen; supplies `t_I`, `t_C`.
    pub agnostic: AgnosticEmbedder,
    pub fusion_mode: FusionMode,
    pub image: RepSide,
    pub caption: RepSide,
}

pub(crate) struct RepForward {
    t_img: Matrix,
    t_cap: Matrix,
    image: SideForward,
    caption: SideForward,
}

impl RepFusionModel {
    pub fn new(agnostic: AgnosticEmbedder, fusion_mode: FusionMode, dims: RepFusionDims, keep_prob: f64, rng: &mut Rng) -> Self {
        let t_dim = agnostic.caption_dim();
        let image = RepSide::new(
            t_dim,
            fusion_mode.uses_image_v().then_some(dims.image_bank),
            dims.v_dim,
            dims.r_dim,
            keep_prob,
            (IMAGE_V_SITE, IMAGE_R_SITE),
            rng,
        );
        let caption = RepSide::new(
            t_dim,
            fusion_mode.uses_caption_v().then_some(dims.caption_bank),
            dims.v_dim,
            dims.r_dim,
            keep_prob,
            (CAPTION_V_SITE, CAPTION_R_SITE),
            rng,
        );
        Self {
            agnostic,
            fusion_mode,
            image,
            caption,
        }
    }

    fn forward(&self, images: &SideInputs, captions: &SideInputs, mode: &Mode) -> Result<RepForward> {
        let t_img = self.agnostic.embed_images(&images.x)?;
        let t_cap = self.agnostic.embed_captions(&captions.x)?;
        let image = self.image.forward(&t_img, images.u.as_ref(), "image", mode)?;
        let caption = self.caption.forward(&t_cap, captions.u.as_ref(), "caption", mode)?;
        Ok(RepForward {
            t_img,
            t_cap,
            image,
            caption,
        })
    }

    /// `r_I` for every image column.
    pub fn image_representations(&self, images: &SideInputs, mode: &Mode) -> Result<Matrix> {
        let t = self.agnostic.embed_images(&images.x)?;
        Ok(self.image.forward(&t, images.u.as_ref(), "image", mode)?.r)
    }

    pub fn caption_representations(&self, captions: &SideInputs, mode: &Mode) -> Result<Matrix> {
        let t = self.agnostic.embed_captions(&captions.x)?;
        Ok(self.caption.forward(&t, captions.u.as_ref(), "caption", mode)?.r)
    }
}

/// Scores one pair from precomputed `t` and `v`. `v` inputs of a disabled
/// path are ignored.
pub fn rep_fusion_score(model: &RepFusionModel, t_img: &[f64], v_img: &[f64], t_cap: &[f64], v_cap: &[f64], mode: &Mode) -> Result<f64> {
    let side = |s: &RepSide, t: &[f64], v: &[f64]| -> Result<Vec<f64>> {
        let v = s.w_v.as_ref().map(|_| Matrix::column(v));
        Ok(s.fuse(&Matrix::column(t), v.as_ref(), mode)?.2.into_vec())
    };
    let r_i = side(&model.image, t_img, v_img)?;
    let r_c = side(&model.caption, t_cap, v_cap)?;
    Ok(dot(&r_i, &r_c))
}

impl Scorer for RepFusionModel {
    fn score_matrix(&self, images: &SideInputs, captions: &SideInputs, mode: &Mode) -> Result<Matrix> {
        let f = self.forward(images, captions, mode)?;
        f.image.r.t_matmul(&f.caption.r)
    }

    fn dropout_sites(&self) -> Vec<DropoutSite> {
        let mut out = self.image.sites();
        out.extend(self.caption.sites());
        out
    }
}

impl RankTrainable for RepFusionModel {
    fn batch_backprop(&mut self, images: &SideInputs, captions: &SideInputs, mode: &Mode) -> Result<f64> {
        let f = self.forward(images, captions, mode)?;
        let s = f.image.r.t_matmul(&f.caption.r)?;
        let (loss, g) = ranking_loss_and_grad(&s)?;
        let grad_ri = f.caption.r.matmul_t(&g)?;
        let grad_rc = f.image.r.matmul(&g)?;
        self.image.backward(&f.t_img, images.u.as_ref(), &f.image, &grad_ri)?;
        self.caption.backward(&f.t_cap, captions.u.as_ref(), &f.caption, &grad_rc)?;
        Ok(loss)
    }

    fn trainable_layers(&mut self) -> Vec<(String, &mut LinearLayer)> {
        let mut out = Vec::new();
        self.image.layers_mut("image", &mut out);
        self.caption.layers_mut("caption", &mut out);
        out
    }
}

/// Fixed-batch objective over the full fused stack.
pub struct RepFusionObjective {
    pub model: RepFusionModel,
    pub images: SideInputs,
    pub captions: SideInputs,
}

impl GradCheckable for RepFusionObjective {
    fn loss(&self) -> Result<f64> {
        ranking_loss(&self.model.score_matrix(&self.images, &self.captions, &Mode::Infer)?)
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
