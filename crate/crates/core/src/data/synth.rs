//! Desk-scale synthetic scenes with latent binary facts.
//!
//! Each scene draws a fact vector `f`. Image features are `A_img·f` plus a
//! per-scene nuisance term `B·z` and noise. Every caption mentions each true
//! fact unless it is omitted; its dense features are `A_cap·m + ε` for the
//! mention vector `m`, and its bag of words holds one word per mentioned
//! fact plus random filler words. Questions ask about one fact; the answer
//! to "fact q?" is `2q + f_q`.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::manifest::{CaptionRecord, ImageRecord, Manifest, QaRecord, Split};
use crate::error::{Error, Result};
use crate::numcore::rng::{derive_seed, rng, Rng};
use crate::numcore::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticWorldConfig {
    pub n_facts: usize,
    /// Probability that a fact holds in a scene.
    pub fact_prob: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub captions_per_image: usize,
    /// Chance that a true fact is left out of a caption.
    pub caption_omission_rate: f64,
    pub noise_sigma: f64,
    pub answer_vocab_size: usize,
    pub image_dim: usize,
    /// Width of the per-scene nuisance term in image features.
    pub nuisance_dims: usize,
    pub caption_dim: usize,
    pub question_dim: usize,
    pub filler_words: usize,
    pub filler_rate: f64,
    pub qas_per_image: usize,
    pub seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            n_facts: 24,
            fact_prob: 0.5,
            n_train: 2000,
            n_val: 500,
            n_test: 500,
            captions_per_image: 5,
            caption_omission_rate: 0.4,
            noise_sigma: 0.2,
            answer_vocab_size: 48,
            image_dim: 48,
            nuisance_dims: 8,
            caption_dim: 16,
            question_dim: 16,
            filler_words: 16,
            filler_rate: 0.2,
            qas_per_image: 6,
            seed: 0,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Param(m));
        if self.n_facts == 0 {
            return bad("n_facts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.caption_omission_rate) {
            return bad(format!("caption_omission_rate {} outside [0, 1)", self.caption_omission_rate));
        }
        if !(self.fact_prob > 0.0 && self.fact_prob < 1.0) {
            return bad(format!("fact_prob {} outside (0, 1)", self.fact_prob));
        }
        if !(0.0..=1.0).contains(&self.filler_rate) {
            return bad(format!("filler_rate {} outside [0, 1]", self.filler_rate));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma {} must be finite and non-negative", self.noise_sigma));
        }
        if self.answer_vocab_size < 2 * self.n_facts {
            return bad(format!(
                "answer_vocab_size {} is below 2·n_facts = {}",
                self.answer_vocab_size,
                2 * self.n_facts
            ));
        }
        if self.qas_per_image == 0 || self.qas_per_image > self.n_facts {
            return bad(format!("qas_per_image must be in 1..={}", self.n_facts));
        }
        if self.captions_per_image == 0 {
            return bad("captions_per_image must be positive".into());
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive".into());
        }
        if self.image_dim == 0 || self.caption_dim == 0 || self.question_dim == 0 {
            return bad("feature dims must be positive".into());
        }
        Ok(())
    }

    pub fn n_scenes(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    pub fn vocab_size(&self) -> usize {
        self.n_facts + self.filler_words
    }
}

/// Answer index of "does fact `q` hold?".
pub fn answer_index(fact: usize, value: bool) -> usize {
    2 * fact + usize::from(value)
}

pub fn fact_word(fact: usize) -> String {
    format!("fact{fact:02}")
}

/// Generated features (one column per item, rows of the manifest) plus the
/// latent facts of every scene.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub config: SyntheticWorldConfig,
    pub dataset: Dataset,
    pub facts: Vec<Vec<bool>>,
    /// Fact queried by each question row.
    pub question_facts: Vec<usize>,
}

fn normal(r: &mut Rng) -> f64 {
    StandardNormal.sample(r)
}

fn gaussian(r: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * normal(r)).collect::<Vec<f64>>();
    Matrix::from_vec(rows, cols, data).expect("sized buffer")
}

/// Rounds to the stored 32-bit precision so in-memory and on-disk worlds agree.
fn f32_round(v: f64) -> f64 {
    v as f32 as f64
}

pub fn generate_synthetic_world(cfg: &SyntheticWorldConfig) -> Result<SyntheticWorld> {
    cfg.validate()?;
    let nf = cfg.n_facts;
    let mut maps = rng(derive_seed(cfg.seed, 0x5e01));
    let a_img = gaussian(&mut maps, cfg.image_dim, nf, (1.0 / nf as f64).sqrt());
    let b_img = gaussian(&mut maps, cfg.image_dim, cfg.nuisance_dims, (1.0 / nf as f64).sqrt());
    let a_cap = gaussian(&mut maps, cfg.caption_dim, nf, (1.0 / nf as f64).sqrt());
    let mut e_q = gaussian(&mut maps, cfg.question_dim, nf, 1.0);
    for j in 0..nf {
        let c = e_q.col(j);
        let n = crate::numcore::l2_norm(&c);
        e_q.set_col(j, &c.iter().map(|v| v / n).collect::<Vec<_>>());
    }

    let mut r = rng(derive_seed(cfg.seed, 0x5e02));
    let n_scenes = cfg.n_scenes();
    let n_caps = n_scenes * cfg.captions_per_image;
    let n_qas = n_scenes * cfg.qas_per_image;
    let mut images = Matrix::zeros(cfg.image_dim, n_scenes);
    let mut captions = Matrix::zeros(cfg.caption_dim, n_caps);
    let mut bow = Matrix::zeros(cfg.vocab_size(), n_caps);
    let mut questions = Matrix::zeros(cfg.question_dim, n_qas);
    let mut manifest = Manifest::default();
    let mut facts = Vec::with_capacity(n_scenes);
    let mut question_facts = Vec::with_capacity(n_qas);

    for s in 0..n_scenes {
        let split = if s < cfg.n_train {
            Split::Train
        } else if s < cfg.n_train + cfg.n_val {
            Split::Val
        } else {
            Split::Test
        };
        let f: Vec<bool> = (0..nf).map(|_| r.gen_bool(cfg.fact_prob)).collect();
        let z: Vec<f64> = (0..cfg.nuisance_dims).map(|_| normal(&mut r)).collect();
        let image_id = format!("img{s}");
        for d in 0..cfg.image_dim {
            let mut v = 0.0;
            for (j, &on) in f.iter().enumerate() {
                if on {
                    v += a_img[(d, j)];
                }
            }
            for (k, zk) in z.iter().enumerate() {
                v += b_img[(d, k)] * zk;
            }
            let eps = normal(&mut r);
            images[(d, s)] = f32_round(v + cfg.noise_sigma * eps);
        }
        manifest.images.push(ImageRecord {
            id: image_id.clone(),
            split,
            row: s,
        });

        for c in 0..cfg.captions_per_image {
            let row = s * cfg.captions_per_image + c;
            let m: Vec<bool> = f.iter().map(|&on| on && !r.gen_bool(cfg.caption_omission_rate)).collect();
            for d in 0..cfg.caption_dim {
                let mut v = 0.0;
                for (j, &on) in m.iter().enumerate() {
                    if on {
                        v += a_cap[(d, j)];
                    }
                }
                let eps = normal(&mut r);
                captions[(d, row)] = f32_round(v + cfg.noise_sigma * eps);
            }
            let mut words = Vec::new();
            for (j, &on) in m.iter().enumerate() {
                if on {
                    bow[(j, row)] = 1.0;
                    words.push(fact_word(j));
                }
            }
            for k in 0..cfg.filler_words {
                if r.gen_bool(cfg.filler_rate) {
                    bow[(nf + k, row)] = 1.0;
                    words.push(format!("word{k:02}"));
                }
            }
            manifest.captions.push(CaptionRecord {
                id: format!("cap{row}"),
                split,
                row,
                bow_row: row,
                image_id: image_id.clone(),
                text: words.join(" "),
            });
        }

        for (k, q) in sample(&mut r, nf, cfg.qas_per_image).into_iter().enumerate() {
            let row = s * cfg.qas_per_image + k;
            for d in 0..cfg.question_dim {
                questions[(d, row)] = f32_round(e_q[(d, q)]);
            }
            question_facts.push(q);
            manifest.qas.push(QaRecord {
                id: format!("qa{row}"),
                split,
                row,
                image_id: image_id.clone(),
                answer: answer_index(q, f[q]),
                text: format!("is {} present", fact_word(q)),
            });
        }
        facts.push(f);
    }
    for a in 0..cfg.answer_vocab_size {
        let text = if a < 2 * nf {
            format!("{}:{}", fact_word(a / 2), if a % 2 == 1 { "yes" } else { "no" })
        } else {
            format!("unused{a}")
        };
        manifest.answers.insert(a, text);
    }

    let dataset = Dataset::new(manifest, images, captions, bow, questions)?;
    Ok(SyntheticWorld {
        config: cfg.clone(),
        dataset,
        facts,
        question_facts,
    })
}

impl SyntheticWorld {
    /// Writes the dataset files plus `world.json` echoing the config.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.dataset.write(dir)?;
        let path = dir.join("world.json");
        let json = serde_json::to_string_pretty(&self.config).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}
