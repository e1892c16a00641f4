use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::recall_at_1_pair;
use crate::heads::BatchSampler;
use crate::numcore::rng::derive_seed;
use crate::numcore::{rmsprop_step, Matrix, Mode, RmsPropConfig};

use super::{AgnosticEmbedder, RankTrainable, RankingSplit, RepFusionModel, ScoreFusionModel, Scorer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankerTrainConfig {
    pub rmsprop: RmsPropConfig,
    /// Candidate-set size `K`.
    pub batch_size: usize,
    pub iterations: u64,
    /// Validation recall@1 is checked this often; the best model is kept.
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for RankerTrainConfig {
    fn default() -> Self {
        Self {
            rmsprop: RmsPropConfig::with_learning_rate(1e-4),
            batch_size: 1000,
            iterations: 100_000,
            eval_every: 1000,
            seed: 0,
        }
    }
}

impl RankerTrainConfig {
    pub fn score_fusion() -> Self {
        Self {
            rmsprop: RmsPropConfig::with_learning_rate(1e-5),
            ..Self::default()
        }
    }

    pub fn rep_fusion() -> Self {
        Self::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTracePoint {
    pub iteration: u64,
    /// Mean training loss since the previous point; the first point is the
    /// loss of the very first batch.
    pub loss: f64,
    pub val_caption_r1: Option<f64>,
    pub val_image_r1: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    pub model: M,
    pub trace: Vec<RankTracePoint>,
    /// Iteration count of the returned model.
    pub best_iteration: u64,
}

impl<M> TrainOutcome<M> {
    /// CSV rows `iteration,loss,val_caption_r1,val_image_r1`.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iteration,loss,val_caption_r1,val_image_r1\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for p in &self.trace {
            s.push_str(&format!(
                "{},{:.6},{},{}\n",
                p.iteration,
                p.loss,
                opt(p.val_caption_r1),
                opt(p.val_image_r1)
            ));
        }
        s
    }
}

fn val_recalls<M: Scorer>(model: &M, val: &RankingSplit) -> Result<(f64, f64)> {
    let s = model.score_matrix(&val.images, &val.captions, &Mode::Infer)?;
    s.check_finite("validation scores")?;
    Ok(recall_at_1_pair(&s, &val.caption_image))
}

/// Minimizes the in-batch ranking loss with RMSProp. Each batch holds `K`
/// distinct images, each paired with one of its captions; the other pairs
/// are its negatives. With a validation split, the model with the best
/// recall@1 sum is returned.
pub fn train_ranker<M: RankTrainable>(
    mut model: M,
    train: &RankingSplit,
    val: Option<&RankingSplit>,
    cfg: &RankerTrainConfig,
) -> Result<TrainOutcome<M>> {
    cfg.rmsprop.validate()?;
    let owners = train.image_captions();
    let usable: Vec<usize> = (0..train.n_images()).filter(|&i| !owners[i].is_empty()).collect();
    if usable.len() < 2 {
        return Err(Error::Data(format!(
            "ranking needs at least 2 images with captions, training split has {}",
            usable.len()
        )));
    }
    if cfg.batch_size < 2 {
        return Err(Error::Param(format!("batch size K must be at least 2, got {}", cfg.batch_size)));
    }
    let val = val.filter(|v| v.n_images() > 0 && v.n_captions() > 0);
    let eval_every = cfg.eval_every.max(1);

    let mut sampler = BatchSampler::new(usable.len(), derive_seed(cfg.seed, 2));
    let mut trace = Vec::new();
    let mut best: Option<(f64, u64, M)> = None;
    let (mut window, mut window_n) = (0.0, 0u64);
    for (_, l) in model.trainable_layers() {
        l.zero_grad();
    }
    for it in 0..cfg.iterations {
        let picks = sampler.next_batch(cfg.batch_size);
        let images: Vec<usize> = picks.iter().map(|&p| usable[p]).collect();
        let captions: Vec<usize> = images
            .iter()
            .map(|&i| owners[i][sampler.rng().gen_range(0..owners[i].len())])
            .collect();
        let mode = Mode::Train {
            seed: derive_seed(cfg.seed, 2_000_000 + it),
        };
        let loss = model.batch_backprop(&train.images.select(&images), &train.captions.select(&captions), &mode)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("ranking loss at iteration {it}")));
        }
        if it == 0 {
            trace.push(RankTracePoint {
                iteration: 0,
                loss,
                val_caption_r1: None,
                val_image_r1: None,
            });
        }
        for (_, l) in model.trainable_layers() {
            rmsprop_step(l, &cfg.rmsprop, it);
        }
        window += loss;
        window_n += 1;
        let done = it + 1;
        if done % eval_every == 0 || done == cfg.iterations {
            let mut point = RankTracePoint {
                iteration: done,
                loss: window / window_n as f64,
                val_caption_r1: None,
                val_image_r1: None,
            };
            (window, window_n) = (0.0, 0);
            if let Some(v) = val {
                let (c, i) = val_recalls(&model, v)?;
                point.val_caption_r1 = Some(c);
                point.val_image_r1 = Some(i);
                if best.as_ref().map_or(true, |(b, _, _)| c + i > *b) {
                    best = Some((c + i, done, model.clone()));
                }
            }
            trace.push(point);
        }
    }
    let (model, best_iteration) = match best {
        Some((_, it, m)) => (m, it),
        None => (model, cfg.iterations),
    };
    Ok(TrainOutcome {
        model,
        trace,
        best_iteration,
    })
}

pub fn train_agnostic(
    model: AgnosticEmbedder,
    train: &RankingSplit,
    val: Option<&RankingSplit>,
    cfg: &RankerTrainConfig,
) -> Result<TrainOutcome<AgnosticEmbedder>> {
    train_ranker(model, train, val, cfg)
}

pub fn train_rep_fusion(
    model: RepFusionModel,
    train: &RankingSplit,
    val: Option<&RankingSplit>,
    cfg: &RankerTrainConfig,
) -> Result<TrainOutcome<RepFusionModel>> {
    train_ranker(model, train, val, cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaBetaFit {
    pub alpha: f64,
    pub beta: f64,
    /// Mean of caption and image recall@1 on the fitting split.
    pub mean_r1: f64,
}

/// Grid values `0, 0.05, …, 1`.
pub fn alpha_beta_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 / 20.0).collect()
}

/// Exhaustive search over the grid (without `(0, 0)`) for the weights that
/// maximize mean recall@1. Ties go to the larger `α`, then the smaller `β`.
pub fn fit_alpha_beta(s_t: &Matrix, s_v: &Matrix, caption_image: &[usize]) -> Result<AlphaBetaFit> {
    s_t.check_same_shape("fit_alpha_beta", s_v)?;
    if s_t.rows() == 0 || s_t.cols() == 0 {
        return Err(Error::Data("cannot fit alpha and beta on an empty validation split".into()));
    }
    let grid = alpha_beta_grid();
    let mut best: Option<AlphaBetaFit> = None;
    for &alpha in grid.iter().rev() {
        for &beta in &grid {
            if alpha == 0.0 && beta == 0.0 {
                continue;
            }
            let fused = s_t.zip_map(s_v, |t, v| alpha * t + beta * v)?;
            let (c, i) = recall_at_1_pair(&fused, caption_image);
            let mean_r1 = (c + i) / 2.0;
            if best.map_or(true, |b| mean_r1 > b.mean_r1) {
                best = Some(AlphaBetaFit { alpha, beta, mean_r1 });
            }
        }
    }
    Ok(best.expect("grid is non-empty"))
}

/// Stage 1 trains the grounding projections on `S_v` alone; stage 2 fits
/// `α, β` on the validation split.
pub fn train_score_fusion(
    mut model: ScoreFusionModel,
    train: &RankingSplit,
    val: &RankingSplit,
    cfg: &RankerTrainConfig,
) -> Result<(TrainOutcome<ScoreFusionModel>, AlphaBetaFit)> {
    if val.n_images() == 0 || val.n_captions() == 0 {
        return Err(Error::Data("cannot fit alpha and beta on an empty validation split".into()));
    }
    model.alpha = 0.0;
    model.beta = 1.0;
    let mut outcome = train_ranker(model, train, Some(val), cfg)?;
    let fit = fit_score_fusion_weights(&mut outcome.model, val)?;
    Ok((outcome, fit))
}

/// Stage 2 alone: fits `α, β` on `val` and stores them in the model.
pub fn fit_score_fusion_weights(model: &mut ScoreFusionModel, val: &RankingSplit) -> Result<AlphaBetaFit> {
    let s_t = model.agnostic_scores(&val.images, &val.captions)?;
    let s_v = model.grounded_scores(&val.images, &val.captions, &Mode::Infer)?;
    let fit = fit_alpha_beta(&s_t, &s_v, &val.caption_image)?;
    model.alpha = fit.alpha;
    model.beta = fit.beta;
    Ok(fit)
}
