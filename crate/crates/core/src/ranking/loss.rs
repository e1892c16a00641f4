//! Retrieval probabilities over a candidate set and the symmetric NLL
//! objective trained by every ranker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{log_softmax_cols, log_softmax_rows, softmax_cols, softmax_rows, Matrix};

/// Scores are laid out `images × captions`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalDirection {
    /// `P_im(I | C)`: a distribution over images for every caption column.
    ImageGivenCaption,
    /// `P_cap(C | I)`: a distribution over captions for every image row.
    CaptionGivenImage,
}

pub fn retrieval_probabilities(scores: &Matrix, direction: RetrievalDirection) -> Matrix {
    match direction {
        RetrievalDirection::ImageGivenCaption => softmax_cols(scores),
        RetrievalDirection::CaptionGivenImage => softmax_rows(scores),
    }
}

fn check_square(scores: &Matrix) -> Result<()> {
    if scores.rows() != scores.cols() || scores.rows() == 0 {
        return Err(Error::shape(
            "ranking_loss",
            "a non-empty square KxK score matrix",
            format!("{}x{}", scores.rows(), scores.cols()),
        ));
    }
    Ok(())
}

/// Mean over the `K` ground-truth pairs on the diagonal of
/// `−log P_im(I_j | C_j) − log P_cap(C_j | I_j)`.
pub fn ranking_loss(scores: &Matrix) -> Result<f64> {
    check_square(scores)?;
    let by_image = log_softmax_cols(scores);
    let by_caption = log_softmax_rows(scores);
    let k = scores.rows();
    // Running mean, exact when every term is equal.
    let mut mean = 0.0;
    for j in 0..k {
        let term = -by_image[(j, j)] - by_caption[(j, j)];
        mean += (term - mean) / (j + 1) as f64;
    }
    Ok(mean)
}

/// Loss and `∂L/∂S`: `((P_row − I) + (P_col − I)) / K`.
pub fn ranking_loss_and_grad(scores: &Matrix) -> Result<(f64, Matrix)> {
    let loss = ranking_loss(scores)?;
    let k = scores.rows();
    let mut grad = softmax_rows(scores).add(&softmax_cols(scores))?;
    for j in 0..k {
        grad[(j, j)] -= 2.0;
    }
    Ok((loss, grad.scale(1.0 / k as f64)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn uniform_scores() {
        let p = retrieval_probabilities(&Matrix::filled(4, 4, 0.7), RetrievalDirection::CaptionGivenImage);
        assert!(p.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let k = 10;
        let l = ranking_loss(&Matrix::filled(k, k, -3.0)).unwrap();
        assert!((l - 2.0 * (k as f64).ln()).abs() < 1e-12);
        assert!((l - 4.605170).abs() < 1e-6);
    }

    #[test]
    fn single_candidate_is_certain() {
        let m = Matrix::filled(1, 1, 5.0);
        for d in [RetrievalDirection::CaptionGivenImage, RetrievalDirection::ImageGivenCaption] {
            assert_eq!(retrieval_probabilities(&m, d)[(0, 0)], 1.0);
        }
    }

    #[test]
    fn saturated_diagonal() {
        let mut s = Matrix::zeros(6, 6);
        for i in 0..6 {
            s[(i, i)] = 100.0;
        }
        assert!(ranking_loss(&s).unwrap() < 1e-10);
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(matches!(ranking_loss(&Matrix::zeros(3, 4)), Err(Error::Shape { .. })));
    }

    #[test]
    fn probabilities_match_brute_force() {
        let mut r = rng(21);
        let s = Matrix::from_vec(6, 6, (0..36).map(|_| r.gen_range(-4.0..4.0)).collect()).unwrap();
        let by_img = retrieval_probabilities(&s, RetrievalDirection::ImageGivenCaption);
        let by_cap = retrieval_probabilities(&s, RetrievalDirection::CaptionGivenImage);
        for i in 0..6 {
            for c in 0..6 {
                let col: f64 = (0..6).map(|i2| s[(i2, c)].exp()).sum();
                let row: f64 = (0..6).map(|c2| s[(i, c2)].exp()).sum();
                assert!((by_img[(i, c)] - s[(i, c)].exp() / col).abs() < 1e-12);
                assert!((by_cap[(i, c)] - s[(i, c)].exp() / row).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(22);
        let s = Matrix::from_vec(5, 5, (0..25).map(|_| r.gen_range(-2.0..2.0)).collect()).unwrap();
        let (_, g) = ranking_loss_and_grad(&s).unwrap();
        let h = 1e-6;
        for idx in 0..25 {
            let mut p = s.clone();
            p.as_mut_slice()[idx] += h;
            let mut m = s.clone();
            m.as_mut_slice()[idx] -= h;
            let num = (ranking_loss(&p).unwrap() - ranking_loss(&m).unwrap()) / (2.0 * h);
            assert!((num - g.as_slice()[idx]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn shift_invariance_and_nonnegativity(vals in proptest::collection::vec(-30.0f64..30.0, 16), c in -50.0f64..50.0) {
            let s = Matrix::from_vec(4, 4, vals).unwrap();
            let shifted = s.map(|v| v + c);
            for d in [RetrievalDirection::CaptionGivenImage, RetrievalDirection::ImageGivenCaption] {
                let a = retrieval_probabilities(&s, d);
                let b = retrieval_probabilities(&shifted, d);
                prop_assert!(a.max_abs_diff(&b) < 1e-12);
            }
            prop_assert!(ranking_loss(&s).unwrap() >= 0.0);
        }
    }
}
