//! Image-caption rankers and their training.

pub mod agnostic;
pub mod loss;
pub mod rep_fusion;
pub mod score_fusion;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{DropoutSite, LinearLayer, Matrix, Mode};

pub use agnostic::{agnostic_score, AgnosticEmbedder, AgnosticObjective};
pub use loss::{ranking_loss, ranking_loss_and_grad, retrieval_probabilities, RetrievalDirection};
pub use rep_fusion::{rep_fusion_score, FusionMode, RepFusionDims, RepFusionModel, RepFusionObjective, RepSide};
pub use score_fusion::{fused_score, grounded_score, ScoreFusionModel, ScoreFusionObjective};
pub use train::{
    alpha_beta_grid, fit_alpha_beta, fit_score_fusion_weights, train_agnostic, train_ranker, train_rep_fusion, train_score_fusion,
    AlphaBetaFit, RankTracePoint, RankerTrainConfig, TrainOutcome,
};

pub const IMAGE_V_SITE: u32 = 0x20;
pub const CAPTION_V_SITE: u32 = 0x21;
pub const IMAGE_R_SITE: u32 = 0x30;
pub const CAPTION_R_SITE: u32 = 0x31;

/// Per-item inputs for one modality, one item per column: raw features `x`
/// and, when available, grounded features `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct SideInputs {
    pub x: Matrix,
    pub u: Option<Matrix>,
}

impl SideInputs {
    pub fn new(x: Matrix, u: Option<Matrix>) -> Self {
        Self { x, u }
    }

    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn u(&self, what: &str) -> Result<&Matrix> {
        self.u
            .as_ref()
            .ok_or_else(|| Error::Data(format!("{what} grounded features are required by this model")))
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_cols(idx),
            u: self.u.as_ref().map(|u| u.select_cols(idx)),
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if let Some(u) = &self.u {
            if u.cols() != self.x.cols() {
                return Err(Error::shape(
                    "SideInputs",
                    format!("{} {what} grounded columns", self.x.cols()),
                    format!("{}", u.cols()),
                ));
            }
        }
        Ok(())
    }
}

/// One split for ranking: images, captions, and which image owns each caption.
#[derive(Clone, Debug, PartialEq)]
pub struct RankingSplit {
    pub images: SideInputs,
    pub captions: SideInputs,
    pub caption_image: Vec<usize>,
    pub image_ids: Vec<String>,
    pub caption_ids: Vec<String>,
}

impl RankingSplit {
    pub fn new(images: SideInputs, captions: SideInputs, caption_image: Vec<usize>) -> Result<Self> {
        let image_ids = (0..images.len()).map(|i| format!("img{i}")).collect();
        let caption_ids = (0..captions.len()).map(|c| format!("cap{c}")).collect();
        Self::with_ids(images, captions, caption_image, image_ids, caption_ids)
    }

    pub fn with_ids(
        images: SideInputs,
        captions: SideInputs,
        caption_image: Vec<usize>,
        image_ids: Vec<String>,
        caption_ids: Vec<String>,
    ) -> Result<Self> {
        images.validate("image")?;
        captions.validate("caption")?;
        if caption_image.len() != captions.len() || caption_ids.len() != captions.len() || image_ids.len() != images.len() {
            return Err(Error::Data(format!(
                "split has {} images, {} captions, {} caption owners, {} image ids, {} caption ids",
                images.len(),
                captions.len(),
                caption_image.len(),
                image_ids.len(),
                caption_ids.len()
            )));
        }
        if let Some((c, &i)) = caption_image.iter().enumerate().find(|(_, &i)| i >= images.len()) {
            return Err(Error::Data(format!("caption {} refers to missing image index {i}", caption_ids[c])));
        }
        Ok(Self {
            images,
            captions,
            caption_image,
            image_ids,
            caption_ids,
        })
    }

    pub fn n_images(&self) -> usize {
        self.images.len()
    }

    pub fn n_captions(&self) -> usize {
        self.captions.len()
    }

    /// Caption indices owned by each image.
    pub fn image_captions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_images()];
        for (c, &i) in self.caption_image.iter().enumerate() {
            out[i].push(c);
        }
        out
    }
}

/// Anything that scores every image against every caption.
pub trait Scorer {
    /// `images × captions` score matrix.
    fn score_matrix(&self, images: &SideInputs, captions: &SideInputs, mode: &Mode) -> Result<Matrix>;

    /// Dropout sites reachable from `score_matrix`.
    fn dropout_sites(&self) -> Vec<DropoutSite> {
        Vec::new()
    }
}

/// A ranker trained on the in-batch ranking loss.
pub trait RankTrainable: Scorer + Clone {
    /// Accumulates gradients of the loss on an aligned batch (column `j` of
    /// both sides is a ground-truth pair); returns the loss.
    fn batch_backprop(&mut self, images: &SideInputs, captions: &SideInputs, mode: &Mode) -> Result<f64>;

    fn trainable_layers(&mut self) -> Vec<(String, &mut LinearLayer)>;
}

impl Scorer for AgnosticEmbedder {
    fn score_matrix(&self, images: &SideInputs, captions: &SideInputs, _mode: &Mode) -> Result<Matrix> {
        self.scores(&images.x, &captions.x)
    }
}

impl RankTrainable for AgnosticEmbedder {
    fn batch_backprop(&mut self, images: &SideInputs, captions: &SideInputs, _mode: &Mode) -> Result<f64> {
        AgnosticEmbedder::batch_backprop(self, &images.x, &captions.x)
    }

    fn trainable_layers(&mut self) -> Vec<(String, &mut LinearLayer)> {
        vec![("proj_image".into(), &mut self.proj_image)]
    }
}

/// Any trained ranker, as stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ranker {
    Agnostic(AgnosticEmbedder),
    ScoreFusion(ScoreFusionModel),
    RepFusion(RepFusionModel),
}

impl Ranker {
    pub fn kind(&self) -> &'static str {
        match self {
            Ranker::Agnostic(_) => "agnostic",
            Ranker::ScoreFusion(_) => "score_fusion",
            Ranker::RepFusion(_) => "rep_fusion",
        }
    }

    pub fn needs_grounding(&self) -> bool {
        match self {
            Ranker::Agnostic(_) => false,
            Ranker::ScoreFusion(m) => m.beta != 0.0,
            Ranker::RepFusion(m) => m.fusion_mode != FusionMode::AgnosticDeeper,
        }
    }
}

impl Scorer for Ranker {
    fn score_matrix(&self, images: &SideInputs, captions: &SideInputs, mode: &Mode) -> Result<Matrix> {
        match self {
            Ranker::Agnostic(m) => m.score_matrix(images, captions, mode),
            Ranker::ScoreFusion(m) => m.score_matrix(images, captions, mode),
            Ranker::RepFusion(m) => m.score_matrix(images, captions, mode),
        }
    }

    fn dropout_sites(&self) -> Vec<DropoutSite> {
        match self {
            Ranker::Agnostic(m) => m.dropout_sites(),
            Ranker::ScoreFusion(m) => m.dropout_sites(),
            Ranker::RepFusion(m) => m.dropout_sites(),
        }
    }
}
