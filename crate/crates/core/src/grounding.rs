//! VQA-grounded features: the QA bank, per-fact log-probability vectors `u`
//! and their learned ReLU embeddings `v`.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::features::Fnv1a;
use crate::error::{Error, Result};
use crate::heads::{HeadKind, QaPair, VqaHead, HEAD_HIDDEN_SITE};
use crate::numcore::rng::{derive_seed, rng, Rng};
use crate::numcore::{apply_site, Activation, DropoutMask, DropoutSite, LinearLayer, Matrix, Mode};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Default embedding width of the grounded projection.
pub const DEFAULT_GROUNDED_DIM: usize = 4096;

/// Ordered fact bank; entry `i` defines dimension `i` of every `u` vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QaBank {
    pub pairs: Vec<QaPair>,
}

/// The QA pairs available for one image, in manifest order.
#[derive(Clone, Debug)]
pub struct ImageQas {
    pub image_id: String,
    pub pairs: Vec<QaPair>,
}

impl QaBank {
    pub fn new(pairs: Vec<QaPair>) -> Self {
        Self { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Question features as a `d_q × N` matrix.
    pub fn question_matrix(&self) -> Result<Matrix> {
        let cols: Vec<&[f64]> = self.pairs.iter().map(|p| p.question_features.as_slice()).collect();
        Matrix::from_columns(&cols)
    }

    pub fn answers(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.answer_index).collect()
    }

    /// FNV-1a over ids, answers and feature bits; identifies the bank a
    /// cached `u` file was computed against.
    pub fn content_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write(&(self.pairs.len() as u64).to_le_bytes());
        for p in &self.pairs {
            h.write(p.question_id.as_bytes());
            h.write(&[0]);
            h.write(p.source_image_id.as_bytes());
            h.write(&[0]);
            h.write(&(p.answer_index as u64).to_le_bytes());
            for v in &p.question_features {
                h.write(&v.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }
}

/// Samples `num_images` images, then `per_image` of each image's QA pairs.
/// Pairs are ordered by image sample order, then question sample order.
pub fn build_qa_bank(candidates: &[ImageQas], per_image: usize, num_images: usize, seed: u64) -> Result<QaBank> {
    if per_image == 0 || num_images == 0 {
        return Err(Error::Param("per_image and num_images must be positive".into()));
    }
    if candidates.len() < num_images {
        return Err(Error::Data(format!(
            "QA bank needs {num_images} images, only {} available",
            candidates.len()
        )));
    }
    let mut r: Rng = rng(derive_seed(seed, 0xba4c));
    let images = sample(&mut r, candidates.len(), num_images).into_vec();
    let mut pairs = Vec::with_capacity(per_image * num_images);
    for i in images {
        let img = &candidates[i];
        if img.pairs.len() < per_image {
            return Err(Error::Data(format!(
                "image {} has {} QA pairs, {per_image} required",
                img.image_id,
                img.pairs.len()
            )));
        }
        for q in sample(&mut r, img.pairs.len(), per_image) {
            pairs.push(img.pairs[q].clone());
        }
    }
    Ok(QaBank { pairs })
}

/// `u` for one image or caption: entry `i` is `log max(P(A_i | Q_i, ·), floor)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundedVector {
    pub values: Vec<f64>,
    pub subject_id: String,
}

/// Bank questions already pushed through the head's question projection.
pub struct BankEncoding {
    z_q: Matrix,
    answers: Vec<usize>,
}

impl BankEncoding {
    pub fn new(head: &VqaHead, bank: &QaBank) -> Result<Self> {
        if bank.is_empty() {
            return Err(Error::Data("empty QA bank".into()));
        }
        let m = head.num_answers();
        if let Some(p) = bank.pairs.iter().find(|p| p.answer_index >= m) {
            return Err(Error::Param(format!(
                "bank question {} has answer {} but the head has {m} answers",
                p.question_id, p.answer_index
            )));
        }
        let xq = bank.question_matrix()?;
        let z_q = Activation::Tanh.forward(&head.proj_question.forward(&xq)?);
        Ok(Self {
            z_q,
            answers: bank.answers(),
        })
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }
}

/// Log-probabilities of every bank fact for every input column
/// (`N × n_inputs`). All inputs in one call share `mode`'s dropout draw.
pub fn fact_log_probs(head: &VqaHead, bank: &BankEncoding, inputs: &Matrix, mode: &Mode) -> Result<Matrix> {
    let z_in = head.hidden_features(inputs)?;
    let mut out = Matrix::zeros(bank.len(), inputs.cols());
    for c in 0..inputs.cols() {
        let mut hidden = bank.z_q.clone();
        for i in 0..hidden.rows() {
            let zi = z_in[(i, c)];
            hidden.row_mut(i).iter_mut().for_each(|v| *v *= zi);
        }
        let hidden = if head.hidden_keep_prob < 1.0 {
            apply_site(&hidden, head.hidden_keep_prob, mode, HEAD_HIDDEN_SITE)?.0
        } else {
            hidden
        };
        let logits = crate::numcore::log_softmax_cols(&head.answer_layer.forward(&hidden)?);
        for (i, &a) in bank.answers.iter().enumerate() {
            out[(i, c)] = logits[(a, i)];
        }
    }
    Ok(out)
}

/// [`fact_log_probs`] floored at `ln PROB_FLOOR`.
pub fn u_matrix(head: &VqaHead, bank: &BankEncoding, inputs: &Matrix, mode: &Mode) -> Result<Matrix> {
    let floor = PROB_FLOOR.ln();
    Ok(fact_log_probs(head, bank, inputs, mode)?.map(|v| v.max(floor)))
}

fn compute_u(head: &VqaHead, kind: HeadKind, bank: &QaBank, x: &[f64], subject_id: &str, mode: &Mode) -> Result<GroundedVector> {
    if head.kind != kind {
        return Err(Error::Param(format!("expected a {kind:?} head, got {:?}", head.kind)));
    }
    if x.len() != head.dims().input {
        return Err(Error::shape(
            "compute_u",
            format!("input dim {}", head.dims().input),
            format!("input dim {}", x.len()),
        ));
    }
    let enc = BankEncoding::new(head, bank)?;
    let u = u_matrix(head, &enc, &Matrix::column(x), mode)?;
    Ok(GroundedVector {
        values: u.into_vec(),
        subject_id: subject_id.to_string(),
    })
}

/// `u_I` for one image under the image head.
pub fn compute_u_image(head: &VqaHead, bank: &QaBank, x_img: &[f64], image_id: &str, mode: &Mode) -> Result<GroundedVector> {
    compute_u(head, HeadKind::Image, bank, x_img, image_id, mode)
}

/// `u_C` for one bag-of-words caption under the caption head.
pub fn compute_u_caption(head: &VqaHead, bank: &QaBank, x_cap_bow: &[f64], caption_id: &str, mode: &Mode) -> Result<GroundedVector> {
    compute_u(head, HeadKind::Caption, bank, x_cap_bow, caption_id, mode)
}

/// Which head output feeds the grounded projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSource {
    /// Per-fact log-probabilities, `N` dims.
    #[default]
    QaLogProbs,
    /// The head's input projection `z`, `d_mm` dims.
    HiddenActivations,
}

impl std::str::FromStr for FeatureSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qa_log_probs" => Ok(Self::QaLogProbs),
            "hidden_activations" => Ok(Self::HiddenActivations),
            other => Err(Error::Param(format!(
                "unknown feature source {other:?} (expected qa_log_probs or hidden_activations)"
            ))),
        }
    }
}

/// `z_I` (or `z_C`) for one input.
pub fn extract_hidden_features(head: &VqaHead, x: &[f64]) -> Result<Vec<f64>> {
    Ok(head.hidden_features(&Matrix::column(x))?.into_vec())
}

/// `v = dropout(relu(W u + b))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingProjection {
    pub layer: LinearLayer,
    pub keep_prob: f64,
    pub site: u32,
}

#[derive(Clone, Debug)]
pub struct ProjectionForward {
    pub activated: Matrix,
    pub mask: DropoutMask,
    pub out: Matrix,
}

impl GroundingProjection {
    pub fn new(out_dim: usize, in_dim: usize, keep_prob: f64, site: u32, rng: &mut Rng) -> Self {
        Self {
            layer: LinearLayer::init(out_dim, in_dim, rng),
            keep_prob,
            site,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layer.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layer.out_dim()
    }

    pub fn dropout_site(&self) -> Option<DropoutSite> {
        (self.keep_prob < 1.0).then_some(DropoutSite {
            id: self.site,
            units: self.out_dim(),
            keep_prob: self.keep_prob,
        })
    }

    pub fn forward(&self, u: &Matrix, mode: &Mode) -> Result<ProjectionForward> {
        let activated = Activation::Relu.forward(&self.layer.forward(u)?);
        let (out, mask) = apply_site(&activated, self.keep_prob, mode, self.site)?;
        Ok(ProjectionForward { activated, mask, out })
    }

    /// Accumulates gradients from `∂L/∂v`; returns `∂L/∂u`.
    pub fn backward(&mut self, u: &Matrix, fwd: &ProjectionForward, grad_out: &Matrix) -> Result<Matrix> {
        let g = fwd.mask.backward(grad_out);
        let g = Activation::Relu.backward(&fwd.activated, &g)?;
        self.layer.backward(u, &g)
    }
}

/// Single-vector projection.
pub fn project_v(proj: &GroundingProjection, u: &GroundedVector, mode: &Mode) -> Result<Vec<f64>> {
    if u.values.len() != proj.in_dim() {
        return Err(Error::shape(
            "project_v",
            format!("u of length {}", proj.in_dim()),
            format!("u of length {}", u.values.len()),
        ));
    }
    Ok(proj.forward(&Matrix::column(&u.values), mode)?.out.into_vec())
}
