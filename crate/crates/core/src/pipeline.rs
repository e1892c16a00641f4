//! End-to-end stages: heads → grounding → rankers → evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::dataset::Dataset;
use crate::data::manifest::Split;
use crate::data::synth::{generate_synthetic_world, SyntheticWorldConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, RetrievalReport};
use crate::grounding::{build_qa_bank, u_matrix, BankEncoding, QaBank};
use crate::heads::{accuracy, train_vqa_head, HeadDataset, HeadDims, HeadKind, HeadTrainConfig, TracePoint, VqaHead};
use crate::numcore::rng::{derive_seed, rng};
use crate::numcore::{Matrix, Mode, RmsPropConfig};
use crate::ranking::{
    train_agnostic, train_rep_fusion, train_score_fusion, AgnosticEmbedder, AlphaBetaFit, FusionMode, RankerTrainConfig, RankingSplit,
    RepFusionDims, RepFusionModel, ScoreFusionModel, TrainOutcome,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeadStageConfig {
    pub multimodal_dim: usize,
    pub hidden_keep_prob: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub log_every: u64,
}

impl Default for HeadStageConfig {
    fn default() -> Self {
        Self {
            multimodal_dim: 64,
            hidden_keep_prob: 0.8,
            learning_rate: 3e-3,
            batch_size: 100,
            iterations: 3000,
            log_every: 250,
        }
    }
}

impl HeadStageConfig {
    pub fn train_config(&self, seed: u64) -> HeadTrainConfig {
        HeadTrainConfig {
            rmsprop: RmsPropConfig::with_learning_rate(self.learning_rate),
            batch_size: self.batch_size,
            iterations: self.iterations,
            log_every: self.log_every,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BankConfig {
    pub per_image: usize,
    pub num_images: usize,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            per_image: 3,
            num_images: 40,
        }
    }
}

/// Shared settings of the three ranker families; each has its own
/// learning rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerStageConfig {
    pub v_dim: usize,
    pub r_dim: usize,
    pub keep_prob: f64,
    pub batch_size: usize,
    pub iterations: u64,
    pub eval_every: u64,
    pub agnostic_learning_rate: f64,
    pub score_fusion_learning_rate: f64,
    pub rep_fusion_learning_rate: f64,
}

impl Default for RankerStageConfig {
    fn default() -> Self {
        Self {
            v_dim: 64,
            r_dim: 64,
            keep_prob: 0.8,
            batch_size: 100,
            iterations: 3000,
            eval_every: 250,
            agnostic_learning_rate: 1e-3,
            score_fusion_learning_rate: 1e-3,
            rep_fusion_learning_rate: 1e-3,
        }
    }
}

impl RankerStageConfig {
    pub fn train_config(&self, learning_rate: f64, seed: u64) -> RankerTrainConfig {
        RankerTrainConfig {
            rmsprop: RmsPropConfig::with_learning_rate(learning_rate),
            batch_size: self.batch_size,
            iterations: self.iterations,
            eval_every: self.eval_every,
            seed,
        }
    }
}

/// Full desk-scale experiment. `seed` drives the world and every stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub world: SyntheticWorldConfig,
    pub image_head: HeadStageConfig,
    pub caption_head: HeadStageConfig,
    pub bank: BankConfig,
    pub ranker: RankerStageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: SyntheticWorldConfig::default(),
            image_head: HeadStageConfig::default(),
            caption_head: HeadStageConfig::default(),
            bank: BankConfig::default(),
            ranker: RankerStageConfig::default(),
        }
    }
}

/// Stream ids for [`derive_seed`], one per stage.
pub mod streams {
    pub const WORLD: u64 = 100;
    pub const IMAGE_HEAD: u64 = 101;
    pub const CAPTION_HEAD: u64 = 102;
    pub const BANK: u64 = 103;
    pub const AGNOSTIC: u64 = 104;
    pub const SCORE_FUSION: u64 = 105;
    pub const REP_FUSION: u64 = 110;
}

#[derive(Clone, Debug)]
pub struct TrainedHead {
    pub head: VqaHead,
    pub trace: Vec<TracePoint>,
    /// Arg-max accuracy on the validation split, or test when there is none.
    pub heldout_accuracy: f64,
}

fn heldout_split(ds: &Dataset) -> Split {
    if ds.manifest.images_in(Split::Val).next().is_some() {
        Split::Val
    } else {
        Split::Test
    }
}

/// Trains an image or caption head on the training split.
pub fn train_head(ds: &Dataset, kind: HeadKind, cfg: &HeadStageConfig, seed: u64) -> Result<TrainedHead> {
    let (inputs, triples, held) = match kind {
        HeadKind::Image => (&ds.images, ds.image_triples(Split::Train)?, ds.image_triples(heldout_split(ds))?),
        HeadKind::Caption => (&ds.bow, ds.caption_triples(Split::Train), ds.caption_triples(heldout_split(ds))),
    };
    let dims = HeadDims {
        input: inputs.rows(),
        question: ds.questions.rows(),
        multimodal: cfg.multimodal_dim,
        answers: ds.num_answers(),
    };
    let mut head = VqaHead::new(kind, dims, &mut rng(derive_seed(seed, 1))).with_dropout(cfg.hidden_keep_prob);
    let train_cfg = cfg.train_config(seed);
    let data = HeadDataset {
        inputs,
        questions: &ds.questions,
        triples: &triples,
    };
    let trace = train_vqa_head(&mut head, &data, &train_cfg)?;
    let heldout_accuracy = if held.is_empty() {
        f64::NAN
    } else {
        accuracy(
            &head,
            &HeadDataset {
                inputs,
                questions: &ds.questions,
                triples: &held,
            },
        )?
    };
    Ok(TrainedHead {
        head,
        trace,
        heldout_accuracy,
    })
}

pub fn build_bank(ds: &Dataset, cfg: &BankConfig, seed: u64) -> Result<QaBank> {
    build_qa_bank(&ds.image_qas(Split::Train), cfg.per_image, cfg.num_images, seed)
}

/// `u` for every column of `inputs` (image rows or bag-of-words rows), in
/// chunks so memory stays flat.
pub fn extract_u(head: &VqaHead, bank: &QaBank, inputs: &Matrix) -> Result<Matrix> {
    let enc = BankEncoding::new(head, bank)?;
    let mut out = Matrix::zeros(bank.len(), inputs.cols());
    let all: Vec<usize> = (0..inputs.cols()).collect();
    for chunk in all.chunks(1024) {
        let u = u_matrix(head, &enc, &inputs.select_cols(chunk), &Mode::Infer)?;
        for (k, &c) in chunk.iter().enumerate() {
            out.set_col(c, &u.col(k));
        }
    }
    Ok(out)
}

/// The ranking splits with grounding attached.
pub struct Splits {
    pub train: RankingSplit,
    pub val: RankingSplit,
    pub test: RankingSplit,
}

pub fn ranking_splits(ds: &Dataset, u_images: Option<&Matrix>, u_captions: Option<&Matrix>) -> Result<Splits> {
    Ok(Splits {
        train: ds.ranking_split(Split::Train, u_images, u_captions)?,
        val: ds.ranking_split(Split::Val, u_images, u_captions)?,
        test: ds.ranking_split(Split::Test, u_images, u_captions)?,
    })
}

pub fn agnostic_config(cfg: &RankerStageConfig, seed: u64) -> RankerTrainConfig {
    cfg.train_config(cfg.agnostic_learning_rate, derive_seed(seed, streams::AGNOSTIC))
}

pub fn new_agnostic(ds_caption_dim: usize, ds_image_dim: usize, seed: u64) -> AgnosticEmbedder {
    AgnosticEmbedder::new(ds_caption_dim, ds_image_dim, &mut rng(derive_seed(seed, streams::AGNOSTIC + 1000)))
}

pub fn fit_score_fusion(
    agnostic: &AgnosticEmbedder,
    bank_len: usize,
    splits: &Splits,
    cfg: &RankerStageConfig,
    seed: u64,
) -> Result<(ScoreFusionModel, AlphaBetaFit)> {
    let s = derive_seed(seed, streams::SCORE_FUSION);
    let model = ScoreFusionModel::new(
        agnostic.clone(),
        bank_len,
        bank_len,
        cfg.v_dim,
        cfg.keep_prob,
        &mut rng(derive_seed(s, 1)),
    );
    let train_cfg = cfg.train_config(cfg.score_fusion_learning_rate, s);
    let (outcome, fit) = train_score_fusion(model, &splits.train, &splits.val, &train_cfg)?;
    Ok((outcome.model, fit))
}

pub fn fit_rep_fusion(
    agnostic: &AgnosticEmbedder,
    mode: FusionMode,
    bank_len: usize,
    splits: &Splits,
    cfg: &RankerStageConfig,
    seed: u64,
) -> Result<RepFusionModel> {
    Ok(train_rep_fusion_outcome(agnostic, mode, bank_len, splits, cfg, seed)?.model)
}

/// As [`fit_rep_fusion`], keeping the training trace.
pub fn train_rep_fusion_outcome(
    agnostic: &AgnosticEmbedder,
    mode: FusionMode,
    bank_len: usize,
    splits: &Splits,
    cfg: &RankerStageConfig,
    seed: u64,
) -> Result<TrainOutcome<RepFusionModel>> {
    let idx = FusionMode::ALL.iter().position(|&m| m == mode).expect("listed mode") as u64;
    let s = derive_seed(seed, streams::REP_FUSION + idx);
    let dims = RepFusionDims::with_bank(bank_len, cfg.v_dim, cfg.r_dim);
    let model = RepFusionModel::new(agnostic.clone(), mode, dims, cfg.keep_prob, &mut rng(derive_seed(s, 1)));
    train_rep_fusion(
        model,
        &splits.train,
        Some(&splits.val),
        &cfg.train_config(cfg.rep_fusion_learning_rate, s),
    )
}

/// Test-split reports of every ranker, keyed by model name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub image_head_accuracy: f64,
    pub caption_head_accuracy: f64,
    pub alpha_beta: AlphaBetaFit,
    pub reports: BTreeMap<String, RetrievalReport>,
}

impl ExperimentReport {
    pub fn mean_r1(&self, model: &str) -> Option<f64> {
        self.reports.get(model).map(RetrievalReport::mean_r1)
    }

    /// One tab-separated line per model, sorted by name.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("model\tcaption_r1\tcaption_r5\tcaption_r10\timage_r1\timage_r5\timage_r10\n");
        for (name, r) in &self.reports {
            s.push_str(&format!(
                "{name}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                r.caption_recall[0], r.caption_recall[1], r.caption_recall[2], r.image_recall[0], r.image_recall[1], r.image_recall[2]
            ));
        }
        s
    }
}

pub fn rep_model_name(mode: FusionMode) -> String {
    format!("rep_fusion_{}", mode.as_str())
}

/// Generates the world, then trains and evaluates every ranker.
pub fn run_experiment(cfg: &PipelineConfig) -> Result<ExperimentReport> {
    let world_cfg = SyntheticWorldConfig {
        seed: derive_seed(cfg.seed, streams::WORLD),
        ..cfg.world.clone()
    };
    let world = generate_synthetic_world(&world_cfg)?;
    run_on_dataset(&world.dataset, cfg)
}

pub fn run_on_dataset(ds: &Dataset, cfg: &PipelineConfig) -> Result<ExperimentReport> {
    let seed = cfg.seed;
    let img = train_head(ds, HeadKind::Image, &cfg.image_head, derive_seed(seed, streams::IMAGE_HEAD))?;
    let cap = train_head(ds, HeadKind::Caption, &cfg.caption_head, derive_seed(seed, streams::CAPTION_HEAD))?;
    let bank = build_bank(ds, &cfg.bank, derive_seed(seed, streams::BANK))?;
    let u_img = extract_u(&img.head, &bank, &ds.images)?;
    let u_cap = extract_u(&cap.head, &bank, &ds.bow)?;
    let splits = ranking_splits(ds, Some(&u_img), Some(&u_cap))?;
    if splits.val.n_images() == 0 {
        return Err(Error::Data("the experiment needs a validation split".into()));
    }

    let mut reports = BTreeMap::new();
    let agnostic = train_agnostic(
        new_agnostic(ds.captions.rows(), ds.images.rows(), seed),
        &splits.train,
        Some(&splits.val),
        &agnostic_config(&cfg.ranker, seed),
    )?
    .model;
    reports.insert("agnostic".to_string(), evaluate(&agnostic, &splits.test)?);

    let (score, alpha_beta) = fit_score_fusion(&agnostic, bank.len(), &splits, &cfg.ranker, seed)?;
    reports.insert("score_fusion".to_string(), evaluate(&score, &splits.test)?);

    for mode in FusionMode::ALL {
        let model = fit_rep_fusion(&agnostic, mode, bank.len(), &splits, &cfg.ranker, seed)?;
        reports.insert(rep_model_name(mode), evaluate(&model, &splits.test)?);
    }
    Ok(ExperimentReport {
        seed,
        image_head_accuracy: img.heldout_accuracy,
        caption_head_accuracy: cap.heldout_accuracy,
        alpha_beta,
        reports,
    })
}
