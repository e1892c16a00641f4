//! Finite-difference gradient checks over every trainable architecture.

use rand::Rng as _;

use crate::error::Result;
use crate::heads::{HeadDims, HeadKind, HeadObjective, VqaHead};
use crate::numcore::rng::{derive_seed, rng, Rng};
use crate::numcore::{gradient_check, GradCheckConfig, GradCheckReport, Matrix};
use crate::ranking::{
    AgnosticEmbedder, FusionMode, RepFusionDims, RepFusionModel, RepFusionObjective, ScoreFusionModel, ScoreFusionObjective, SideInputs,
};

pub const ARCHITECTURES: [&str; 4] = ["vqa_head", "vqacaption_head", "score_fusion", "rep_fusion"];

fn rand_mat(r: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| r.gen_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Dims are chosen so every layer holds at least 200 parameters.
fn head_objective(kind: HeadKind, r: &mut Rng) -> HeadObjective {
    let dims = HeadDims {
        input: 16,
        question: 12,
        multimodal: 16,
        answers: 14,
    };
    let head = VqaHead::new(kind, dims, r).with_dropout(0.5);
    let batch = 6;
    let x_in = match kind {
        HeadKind::Image => rand_mat(r, dims.input, batch),
        HeadKind::Caption => rand_mat(r, dims.input, batch).map(|v| f64::from(u8::from(v > 0.3))),
    };
    HeadObjective {
        x_q: rand_mat(r, dims.question, batch),
        answers: (0..batch).map(|_| r.gen_range(0..dims.answers)).collect(),
        head,
        x_in,
    }
}

const BANK: usize = 20;
const IMG_DIM: usize = 10;
const CAP_DIM: usize = 12;

fn ranking_batch(r: &mut Rng) -> (SideInputs, SideInputs) {
    let k = 6;
    let images = SideInputs::new(rand_mat(r, IMG_DIM, k), Some(rand_mat(r, BANK, k).map(|v| 2.0 * v - 2.0)));
    let captions = SideInputs::new(rand_mat(r, CAP_DIM, k), Some(rand_mat(r, BANK, k).map(|v| 2.0 * v - 2.0)));
    (images, captions)
}

/// Runs the check on one named architecture with randomly drawn
/// parameters and inputs. Dropout is in inference mode throughout.
pub fn gradcheck_architecture(name: &str, seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut r = rng(derive_seed(seed, 0x6c));
    match name {
        "vqa_head" => gradient_check(&mut head_objective(HeadKind::Image, &mut r), cfg),
        "vqacaption_head" => gradient_check(&mut head_objective(HeadKind::Caption, &mut r), cfg),
        "score_fusion" => {
            let agnostic = AgnosticEmbedder::new(CAP_DIM, IMG_DIM, &mut r);
            let model = ScoreFusionModel::new(agnostic, BANK, BANK, 12, 0.5, &mut r);
            let (images, captions) = ranking_batch(&mut r);
            gradient_check(&mut ScoreFusionObjective { model, images, captions }, cfg)
        }
        "rep_fusion" => {
            let agnostic = AgnosticEmbedder::new(CAP_DIM, IMG_DIM, &mut r);
            let dims = RepFusionDims::with_bank(BANK, 14, 16);
            let model = RepFusionModel::new(agnostic, FusionMode::Full, dims, 0.5, &mut r);
            let (images, captions) = ranking_batch(&mut r);
            gradient_check(&mut RepFusionObjective { model, images, captions }, cfg)
        }
        other => Err(crate::Error::Param(format!(
            "unknown architecture {other:?} (one of {})",
            ARCHITECTURES.join(", ")
        ))),
    }
}

/// Every architecture in [`ARCHITECTURES`], in order.
pub fn gradcheck_suite(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<(String, GradCheckReport)>> {
    ARCHITECTURES
        .iter()
        .map(|&a| Ok((a.to_string(), gradcheck_architecture(a, seed, cfg)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_architecture_passes_with_full_samples() {
        let cfg = GradCheckConfig::default();
        for (name, report) in gradcheck_suite(3, &cfg).unwrap() {
            assert!(report.passed, "{name}\n{report}");
            for l in &report.layers {
                assert!(l.checked >= 200, "{name}/{}: {} checked", l.name, l.checked);
            }
        }
    }

    #[test]
    fn unknown_architecture_is_an_error() {
        assert!(gradcheck_architecture("lstm", 0, &GradCheckConfig::default()).is_err());
    }
}
