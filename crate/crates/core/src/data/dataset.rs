//! A dataset directory: four feature files plus the manifest.

use std::collections::HashMap;
use std::path::Path;

use super::features::{read_features, write_features};
use super::manifest::{FeatureCounts, Manifest, Split};
use crate::error::{Error, Result};
use crate::grounding::ImageQas;
use crate::heads::{QaPair, Triple};
use crate::numcore::Matrix;
use crate::ranking::{RankingSplit, SideInputs};

pub const IMAGES_FILE: &str = "images.mmft";
pub const CAPTIONS_FILE: &str = "captions.mmft";
pub const BOW_FILE: &str = "captions_bow.mmft";
pub const QUESTIONS_FILE: &str = "questions.mmft";
pub const MANIFEST_FILE: &str = "manifest.tsv";

/// Features are held one column per item, indexed by the manifest's rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub images: Matrix,
    pub captions: Matrix,
    pub bow: Matrix,
    pub questions: Matrix,
}

impl Dataset {
    pub fn new(manifest: Manifest, images: Matrix, captions: Matrix, bow: Matrix, questions: Matrix) -> Result<Self> {
        manifest.validate(&FeatureCounts {
            images: images.cols(),
            captions: captions.cols(),
            bow: bow.cols(),
            questions: questions.cols(),
        })?;
        Ok(Self {
            manifest,
            images,
            captions,
            bow,
            questions,
        })
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = Manifest::read(dir.join(MANIFEST_FILE))?;
        let read = |name: &str| read_features(dir.join(name)).map(|m| m.transpose());
        let ds = Self::new(
            manifest,
            read(IMAGES_FILE)?,
            read(CAPTIONS_FILE)?,
            read(BOW_FILE)?,
            read(QUESTIONS_FILE)?,
        );
        ds.map_err(|e| Error::Data(format!("{}: {e}", dir.join(MANIFEST_FILE).display())))
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_features(dir.join(IMAGES_FILE), &self.images.transpose())?;
        write_features(dir.join(CAPTIONS_FILE), &self.captions.transpose())?;
        write_features(dir.join(BOW_FILE), &self.bow.transpose())?;
        write_features(dir.join(QUESTIONS_FILE), &self.questions.transpose())?;
        self.manifest.write(dir.join(MANIFEST_FILE))
    }

    /// Number of answers: one past the largest answer the manifest knows of.
    pub fn num_answers(&self) -> usize {
        let table = self.manifest.answers.keys().next_back().map_or(0, |&a| a + 1);
        let used = self.manifest.qas.iter().map(|q| q.answer + 1).max().unwrap_or(0);
        table.max(used)
    }

    /// Image-head triples: each QA with its image's feature row.
    pub fn image_triples(&self, split: Split) -> Result<Vec<Triple>> {
        let rows = self.image_rows();
        self.manifest
            .qas_in(split)
            .map(|q| {
                Ok(Triple {
                    input: rows[q.image_id.as_str()],
                    question: q.row,
                    answer: q.answer,
                })
            })
            .collect()
    }

    /// Caption-head triples: every caption paired with each QA of its image.
    pub fn caption_triples(&self, split: Split) -> Vec<Triple> {
        let mut by_image: HashMap<&str, Vec<(usize, usize)>> = HashMap::new();
        for q in self.manifest.qas_in(split) {
            by_image.entry(q.image_id.as_str()).or_default().push((q.row, q.answer));
        }
        let mut out = Vec::new();
        for c in self.manifest.captions_in(split) {
            for &(question, answer) in by_image.get(c.image_id.as_str()).map_or(&[][..], Vec::as_slice) {
                out.push(Triple {
                    input: c.bow_row,
                    question,
                    answer,
                });
            }
        }
        out
    }

    fn image_rows(&self) -> HashMap<&str, usize> {
        self.manifest.images.iter().map(|r| (r.id.as_str(), r.row)).collect()
    }

    /// Bank candidates of a split, one entry per image in manifest order.
    pub fn image_qas(&self, split: Split) -> Vec<ImageQas> {
        let mut out: Vec<ImageQas> = self
            .manifest
            .images_in(split)
            .map(|r| ImageQas {
                image_id: r.id.clone(),
                pairs: Vec::new(),
            })
            .collect();
        let pos: HashMap<String, usize> = out.iter().enumerate().map(|(i, q)| (q.image_id.clone(), i)).collect();
        for q in self.manifest.qas_in(split) {
            out[pos[&q.image_id]].pairs.push(QaPair {
                question_id: q.id.clone(),
                question_features: self.questions.col(q.row),
                answer_index: q.answer,
                source_image_id: q.image_id.clone(),
            });
        }
        out
    }

    /// Ranking inputs of a split. `u_images`/`u_captions` hold one column per
    /// feature row (as written by grounding extraction).
    pub fn ranking_split(&self, split: Split, u_images: Option<&Matrix>, u_captions: Option<&Matrix>) -> Result<RankingSplit> {
        let imgs: Vec<_> = self.manifest.images_in(split).collect();
        let caps: Vec<_> = self.manifest.captions_in(split).collect();
        if imgs.is_empty() || caps.is_empty() {
            return Err(Error::Data(format!("split {split} has no images or no captions")));
        }
        let pos: HashMap<&str, usize> = imgs.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
        let img_rows: Vec<usize> = imgs.iter().map(|r| r.row).collect();
        let cap_rows: Vec<usize> = caps.iter().map(|r| r.row).collect();
        let bow_rows: Vec<usize> = caps.iter().map(|r| r.bow_row).collect();
        let pick = |u: Option<&Matrix>, rows: &[usize], n: usize, what: &str| -> Result<Option<Matrix>> {
            match u {
                None => Ok(None),
                Some(u) if u.cols() != n => Err(Error::Data(format!(
                    "{what} grounding has {} columns, dataset has {n} rows",
                    u.cols()
                ))),
                Some(u) => Ok(Some(u.select_cols(rows))),
            }
        };
        let images = SideInputs::new(
            self.images.select_cols(&img_rows),
            pick(u_images, &img_rows, self.images.cols(), "image")?,
        );
        let captions = SideInputs::new(
            self.captions.select_cols(&cap_rows),
            pick(u_captions, &bow_rows, self.bow.cols(), "caption")?,
        );
        let caption_image = caps.iter().map(|c| pos[c.image_id.as_str()]).collect();
        RankingSplit::with_ids(
            images,
            captions,
            caption_image,
            imgs.iter().map(|r| r.id.clone()).collect(),
            caps.iter().map(|r| r.id.clone()).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic_world, SyntheticWorldConfig};

    fn world() -> Dataset {
        generate_synthetic_world(&SyntheticWorldConfig {
            n_train: 12,
            n_val: 4,
            n_test: 6,
            seed: 2,
            ..Default::default()
        })
        .unwrap()
        .dataset
    }

    #[test]
    fn triples_point_at_matching_rows() {
        let d = world();
        let t = d.image_triples(Split::Train).unwrap();
        assert_eq!(t.len(), 12 * 6);
        assert!(t.iter().all(|t| t.input < 12));
        let c = d.caption_triples(Split::Test);
        assert_eq!(c.len(), 6 * 5 * 6);
        assert_eq!(d.num_answers(), 48);
    }

    #[test]
    fn ranking_split_groups_captions_by_image() {
        let d = world();
        let s = d.ranking_split(Split::Val, None, None).unwrap();
        assert_eq!(s.n_images(), 4);
        assert_eq!(s.n_captions(), 20);
        assert_eq!(s.image_ids[0], "img12");
        assert_eq!(s.caption_image[..6], [0, 0, 0, 0, 0, 1]);
        let u_img = Matrix::zeros(3, d.images.cols());
        let u_cap = Matrix::zeros(3, d.bow.cols());
        let s = d.ranking_split(Split::Val, Some(&u_img), Some(&u_cap)).unwrap();
        assert_eq!(s.images.u.as_ref().unwrap().shape(), (3, 4));
        assert!(d.ranking_split(Split::Val, Some(&Matrix::zeros(3, 2)), None).is_err());
    }

    #[test]
    fn bank_candidates_cover_each_image() {
        let d = world();
        let c = d.image_qas(Split::Train);
        assert_eq!(c.len(), 12);
        assert!(c
            .iter()
            .all(|i| i.pairs.len() == 6 && i.pairs.iter().all(|p| p.source_image_id == i.image_id)));
    }

    #[test]
    fn load_names_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        world().write(dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(BOW_FILE)).unwrap();
        let err = Dataset::load(dir.path()).unwrap_err().to_string();
        assert!(err.contains(BOW_FILE), "{err}");
    }
}
