//! Recall@k retrieval protocol.
//!
//! Ranks are 0-based internally. Candidates with equal scores are ordered by
//! ascending index, so every rank is deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, Mode};
use crate::ranking::{RankingSplit, Scorer};

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalDirection {
    /// Image query, caption candidates.
    CaptionRetrieval,
    /// Caption query, image candidates.
    ImageRetrieval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    /// `n_images × n_captions`.
    pub scores: Matrix,
    pub image_ids: Vec<String>,
    pub caption_ids: Vec<String>,
    pub caption_to_image: Vec<usize>,
}

impl ScoreMatrix {
    pub fn new(scores: Matrix, image_ids: Vec<String>, caption_ids: Vec<String>, caption_to_image: Vec<usize>) -> Result<Self> {
        let (ni, nc) = scores.shape();
        if image_ids.len() != ni || caption_ids.len() != nc || caption_to_image.len() != nc {
            return Err(Error::shape(
                "ScoreMatrix",
                format!("{ni} image ids and {nc} caption ids/owners"),
                format!(
                    "{} image ids, {} caption ids, {} owners",
                    image_ids.len(),
                    caption_ids.len(),
                    caption_to_image.len()
                ),
            ));
        }
        scores.check_finite("score matrix")?;
        let mut owned = vec![false; ni];
        for (c, &i) in caption_to_image.iter().enumerate() {
            if i >= ni {
                return Err(Error::Data(format!("caption {} maps to missing image index {i}", caption_ids[c])));
            }
            owned[i] = true;
        }
        if let Some(i) = owned.iter().position(|o| !o) {
            return Err(Error::Data(format!("image {} has no ground-truth caption", image_ids[i])));
        }
        Ok(Self {
            scores,
            image_ids,
            caption_ids,
            caption_to_image,
        })
    }

    /// Anonymous ids, for tests and tools.
    pub fn from_scores(scores: Matrix, caption_to_image: Vec<usize>) -> Result<Self> {
        let image_ids = (0..scores.rows()).map(|i| format!("img{i}")).collect();
        let caption_ids = (0..scores.cols()).map(|c| format!("cap{c}")).collect();
        Self::new(scores, image_ids, caption_ids, caption_to_image)
    }

    pub fn n_images(&self) -> usize {
        self.scores.rows()
    }

    pub fn n_captions(&self) -> usize {
        self.scores.cols()
    }

    pub fn image_captions(&self) -> Vec<Vec<usize>> {
        owners_to_lists(&self.caption_to_image, self.n_images())
    }

    fn candidates(&self, direction: EvalDirection) -> usize {
        match direction {
            EvalDirection::CaptionRetrieval => self.n_captions(),
            EvalDirection::ImageRetrieval => self.n_images(),
        }
    }
}

fn owners_to_lists(caption_to_image: &[usize], n_images: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_images];
    for (c, &i) in caption_to_image.iter().enumerate() {
        out[i].push(c);
    }
    out
}

/// Position of candidate `target` in `row` sorted by descending score.
#[inline]
fn rank_in(row: impl Iterator<Item = f64>, target: usize, target_score: f64) -> usize {
    row.enumerate()
        .filter(|&(j, s)| s > target_score || (s == target_score && j < target))
        .count()
}

/// Best rank of any relevant candidate for each query row of a
/// `queries × candidates` matrix.
pub fn query_ranks(scores: &Matrix, relevant: &[Vec<usize>]) -> Vec<usize> {
    (0..scores.rows())
        .map(|q| {
            let row = scores.row(q);
            relevant[q]
                .iter()
                .map(|&t| rank_in(row.iter().copied(), t, row[t]))
                .min()
                .unwrap_or(usize::MAX)
        })
        .collect()
}

/// 0-based best rank of a correct item for every query in `direction`.
pub fn ranks(sm: &ScoreMatrix, direction: EvalDirection) -> Vec<usize> {
    match direction {
        EvalDirection::CaptionRetrieval => query_ranks(&sm.scores, &sm.image_captions()),
        EvalDirection::ImageRetrieval => sm
            .caption_to_image
            .iter()
            .enumerate()
            .map(|(c, &i)| {
                let target = sm.scores[(i, c)];
                rank_in((0..sm.n_images()).map(|i2| sm.scores[(i2, c)]), i, target)
            })
            .collect(),
    }
}

fn recall_from_ranks(ranks: &[usize], k: usize) -> f64 {
    ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len().max(1) as f64
}

pub fn recall_at_k(sm: &ScoreMatrix, k: usize, direction: EvalDirection) -> Result<f64> {
    let n = sm.candidates(direction);
    if k == 0 || k > n {
        return Err(Error::Param(format!("recall@{k} needs 1 <= k <= {n} candidates")));
    }
    Ok(recall_from_ranks(&ranks(sm, direction), k))
}

/// 1-based median rank; the mean of the two middle ranks for even counts.
pub fn median_rank(ranks: &[usize]) -> f64 {
    if ranks.is_empty() {
        return f64::NAN;
    }
    let mut r: Vec<usize> = ranks.to_vec();
    r.sort_unstable();
    let n = r.len();
    if n % 2 == 1 {
        (r[n / 2] + 1) as f64
    } else {
        (r[n / 2 - 1] + r[n / 2] + 2) as f64 / 2.0
    }
}

/// Fast recall@1 for both directions: `(caption, image)`.
pub fn recall_at_1_pair(scores: &Matrix, caption_to_image: &[usize]) -> (f64, f64) {
    let (ni, nc) = scores.shape();
    let mut row_best = vec![(f64::NEG_INFINITY, 0usize); ni];
    let mut col_best = vec![(f64::NEG_INFINITY, 0usize); nc];
    for (i, best) in row_best.iter_mut().enumerate() {
        for (c, &s) in scores.row(i).iter().enumerate() {
            if s > best.0 {
                *best = (s, c);
            }
            if s > col_best[c].0 {
                col_best[c] = (s, i);
            }
        }
    }
    let cap_hits = (0..ni).filter(|&i| caption_to_image[row_best[i].1] == i).count();
    let img_hits = (0..nc).filter(|&c| col_best[c].1 == caption_to_image[c]).count();
    (cap_hits as f64 / ni.max(1) as f64, img_hits as f64 / nc.max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub n_images: usize,
    pub n_captions: usize,
    /// Recall at 1, 5, 10.
    pub caption_recall: [f64; 3],
    pub image_recall: [f64; 3],
    /// Not part of the recall protocol; reported as an extra.
    pub caption_median_rank: f64,
    pub image_median_rank: f64,
}

impl RetrievalReport {
    pub fn from_scores(sm: &ScoreMatrix) -> Self {
        let cr = ranks(sm, EvalDirection::CaptionRetrieval);
        let ir = ranks(sm, EvalDirection::ImageRetrieval);
        Self {
            n_images: sm.n_images(),
            n_captions: sm.n_captions(),
            caption_recall: RECALL_KS.map(|k| recall_from_ranks(&cr, k)),
            image_recall: RECALL_KS.map(|k| recall_from_ranks(&ir, k)),
            caption_median_rank: median_rank(&cr),
            image_median_rank: median_rank(&ir),
        }
    }

    /// Mean of caption and image recall@1.
    pub fn mean_r1(&self) -> f64 {
        (self.caption_recall[0] + self.image_recall[0]) / 2.0
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{} images x {} captions\n", self.n_images, self.n_captions);
        s.push_str(&format!(
            "{:<18} {:>7} {:>7} {:>7} {:>12}\n",
            "direction", "R@1", "R@5", "R@10", "med_rank*"
        ));
        for (name, r, m) in [
            ("caption_retrieval", &self.caption_recall, self.caption_median_rank),
            ("image_retrieval", &self.image_recall, self.image_median_rank),
        ] {
            s.push_str(&format!(
                "{:<18} {:>7.2} {:>7.2} {:>7.2} {:>12.1}\n",
                name,
                100.0 * r[0],
                100.0 * r[1],
                100.0 * r[2],
                m
            ));
        }
        s.push_str("* median rank (1-based) is an extra metric\n");
        s
    }

    /// `key=value` lines with fixed precision.
    pub fn to_kv(&self) -> String {
        let mut s = format!("n_images={}\nn_captions={}\n", self.n_images, self.n_captions);
        for (dir, r) in [("caption", &self.caption_recall), ("image", &self.image_recall)] {
            for (k, v) in RECALL_KS.iter().zip(r) {
                s.push_str(&format!("{dir}_recall@{k}={v:.6}\n"));
            }
        }
        s.push_str(&format!("extra.caption_median_rank={:.1}\n", self.caption_median_rank));
        s.push_str(&format!("extra.image_median_rank={:.1}\n", self.image_median_rank));
        s
    }
}

pub fn compute_score_matrix(model: &dyn Scorer, split: &RankingSplit, mode: &Mode) -> Result<ScoreMatrix> {
    let scores = model.score_matrix(&split.images, &split.captions, mode)?;
    ScoreMatrix::new(
        scores,
        split.image_ids.clone(),
        split.caption_ids.clone(),
        split.caption_image.clone(),
    )
}

pub fn evaluate(model: &dyn Scorer, split: &RankingSplit) -> Result<RetrievalReport> {
    if split.n_images() == 0 || split.n_captions() == 0 {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    Ok(RetrievalReport::from_scores(&compute_score_matrix(model, split, &Mode::Infer)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_sm(seed: u64, ni: usize, per: usize, quantize: bool) -> ScoreMatrix {
        let mut r = rng(seed);
        let nc = ni * per;
        let vals = (0..ni * nc)
            .map(|_| {
                let v: f64 = r.gen_range(-1.0..1.0);
                if quantize {
                    (v * 3.0).round()
                } else {
                    v
                }
            })
            .collect();
        ScoreMatrix::from_scores(Matrix::from_vec(ni, nc, vals).unwrap(), (0..nc).map(|c| c / per).collect()).unwrap()
    }

    #[test]
    fn identity_diagonal_is_perfect() {
        let sm = ScoreMatrix::from_scores(Matrix::identity(6), (0..6).collect()).unwrap();
        for d in [EvalDirection::CaptionRetrieval, EvalDirection::ImageRetrieval] {
            assert_eq!(recall_at_k(&sm, 1, d).unwrap(), 1.0);
        }
        assert_eq!(recall_at_1_pair(&sm.scores, &sm.caption_to_image), (1.0, 1.0));
    }

    #[test]
    fn k_equal_to_candidates_is_one() {
        let sm = random_sm(1, 10, 5, false);
        assert_eq!(recall_at_k(&sm, 50, EvalDirection::CaptionRetrieval).unwrap(), 1.0);
        assert_eq!(recall_at_k(&sm, 10, EvalDirection::ImageRetrieval).unwrap(), 1.0);
        assert!(recall_at_k(&sm, 0, EvalDirection::ImageRetrieval).is_err());
        assert!(recall_at_k(&sm, 11, EvalDirection::ImageRetrieval).is_err());
    }

    #[test]
    fn ties_break_toward_lower_index() {
        let sm = ScoreMatrix::from_scores(Matrix::filled(3, 3, 0.5), vec![0, 1, 2]).unwrap();
        assert_eq!(ranks(&sm, EvalDirection::CaptionRetrieval), vec![0, 1, 2]);
        assert_eq!(ranks(&sm, EvalDirection::ImageRetrieval), vec![0, 1, 2]);
        assert_eq!(recall_at_1_pair(&sm.scores, &sm.caption_to_image), (1.0 / 3.0, 1.0 / 3.0));
    }

    #[test]
    fn invalid_matrices_are_rejected() {
        assert!(ScoreMatrix::from_scores(Matrix::zeros(2, 2), vec![0, 0]).is_err());
        assert!(ScoreMatrix::from_scores(Matrix::zeros(2, 2), vec![0, 2]).is_err());
        let mut m = Matrix::zeros(1, 1);
        m[(0, 0)] = f64::NAN;
        assert!(ScoreMatrix::from_scores(m, vec![0]).is_err());
    }

    #[test]
    fn median_rank_values() {
        assert_eq!(median_rank(&[0, 4, 2]), 3.0);
        assert_eq!(median_rank(&[0, 1, 2, 5]), 2.5);
    }

    #[test]
    fn fast_recall_at_1_agrees() {
        for seed in 0..30 {
            let sm = random_sm(seed, 12, 3, seed % 2 == 0);
            let (c, i) = recall_at_1_pair(&sm.scores, &sm.caption_to_image);
            assert_eq!(c, recall_at_k(&sm, 1, EvalDirection::CaptionRetrieval).unwrap());
            assert_eq!(i, recall_at_k(&sm, 1, EvalDirection::ImageRetrieval).unwrap());
        }
    }

    #[test]
    fn transpose_swaps_directions() {
        for seed in 0..10 {
            let sm = random_sm(100 + seed, 8, 4, true);
            let t = sm.scores.transpose();
            let owners: Vec<Vec<usize>> = sm.caption_to_image.iter().map(|&i| vec![i]).collect();
            assert_eq!(query_ranks(&t, &owners), ranks(&sm, EvalDirection::ImageRetrieval));
        }
    }

    #[test]
    fn report_formats_are_stable() {
        let sm = ScoreMatrix::from_scores(
            Matrix::from_rows(&[vec![0.9, 0.1, 0.8, 0.0], vec![0.2, 0.7, 0.95, 0.5]]),
            vec![0, 0, 1, 1],
        )
        .unwrap();
        let r = RetrievalReport::from_scores(&sm);
        let golden = "n_images=2\nn_captions=4\n\
caption_recall@1=1.000000\ncaption_recall@5=1.000000\ncaption_recall@10=1.000000\n\
image_recall@1=0.750000\nimage_recall@5=1.000000\nimage_recall@10=1.000000\n\
extra.caption_median_rank=1.0\nextra.image_median_rank=1.0\n";
        assert_eq!(r.to_kv(), golden);
        let table = r.to_table();
        assert!(table.contains("caption_retrieval   100.00  100.00  100.00          1.0"), "{table}");
        assert!(table.contains("image_retrieval      75.00  100.00  100.00          1.0"), "{table}");
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(seed in any::<u64>()) {
            let sm = random_sm(seed, 6, 2, false);
            let mut warped = sm.clone();
            warped.scores = sm.scores.map(|v| (3.0 * v).exp() - 7.0);
            prop_assert_eq!(RetrievalReport::from_scores(&sm), RetrievalReport::from_scores(&warped));
        }

        #[test]
        fn recall_is_nested(seed in any::<u64>()) {
            let r = RetrievalReport::from_scores(&random_sm(seed, 12, 5, seed % 3 == 0));
            for rec in [r.caption_recall, r.image_recall] {
                prop_assert!(rec[0] <= rec[1] && rec[1] <= rec[2]);
            }
        }

        #[test]
        fn joint_permutation_invariance(seed in any::<u64>()) {
            let sm = random_sm(seed, 7, 3, false);
            let mut r = rng(seed ^ 0x55);
            let mut ip: Vec<usize> = (0..7).collect();
            let mut cp: Vec<usize> = (0..21).collect();
            rand::seq::SliceRandom::shuffle(ip.as_mut_slice(), &mut r);
            rand::seq::SliceRandom::shuffle(cp.as_mut_slice(), &mut r);
            let mut inv = vec![0; 7];
            for (new, &old) in ip.iter().enumerate() {
                inv[old] = new;
            }
            let scores = Matrix::from_vec(7, 21, (0..7).flat_map(|i| cp.iter().map(move |&c| (i, c))).map(|(i, c)| sm.scores[(ip[i], c)]).collect()).unwrap();
            let owners = cp.iter().map(|&c| inv[sm.caption_to_image[c]]).collect();
            let permuted = ScoreMatrix::from_scores(scores, owners).unwrap();
            prop_assert_eq!(RetrievalReport::from_scores(&sm), RetrievalReport::from_scores(&permuted));
        }
    }
}
