//! Dataset manifest: UTF-8, one tab-separated record per line.
//!
//! ```text
//! kind    id      split   row     bow_row image_id        answer  text
//! image   img0    train   0       -       -       -       -
//! caption cap0    train   0       0       img0    -       fact03 fact11 the
//! qa      qa0     train   0       -       img0    7       is fact03 there
//! answer  7       -       -       -       -       -       fact03:yes
//! ```
//!
//! `-` marks a field that does not apply. `row` indexes the record's
//! feature file (images, captions or questions); `bow_row` indexes the
//! caption bag-of-words file. Answer records map an answer index to text.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: &str = "kind\tid\tsplit\trow\tbow_row\timage_id\tanswer\ttext";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?} (train, val or test)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub split: Split,
    pub row: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionRecord {
    pub id: String,
    pub split: Split,
    pub row: usize,
    pub bow_row: usize,
    pub image_id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QaRecord {
    pub id: String,
    pub split: Split,
    /// Row in the question feature file.
    pub row: usize,
    pub image_id: String,
    pub answer: usize,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub images: Vec<ImageRecord>,
    pub captions: Vec<CaptionRecord>,
    pub qas: Vec<QaRecord>,
    /// Answer index → text.
    pub answers: BTreeMap<usize, String>,
}

/// Item counts of the feature files a manifest points into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureCounts {
    pub images: usize,
    pub captions: usize,
    pub bow: usize,
    pub questions: usize,
}

fn na(s: &str) -> Option<&str> {
    (s != "-").then_some(s)
}

fn field<T: FromStr>(line: usize, name: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Data(format!("manifest line {line}: bad {name} {v:?}")))
}

fn check_text(id: &str, text: &str) -> Result<()> {
    if text.contains(['\t', '\n', '\r']) {
        return Err(Error::Data(format!("text of {id} contains a tab or newline")));
    }
    Ok(())
}

impl Manifest {
    pub fn parse(src: &str) -> Result<Self> {
        let mut lines = src.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == HEADER => {}
            Some((_, h)) => return Err(Error::Data(format!("manifest header is {h:?}, expected {HEADER:?}"))),
            None => return Err(Error::Data("empty manifest".into())),
        }
        let mut m = Manifest::default();
        for (i, line) in lines {
            let ln = i + 1;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 8 {
                return Err(Error::Data(format!("manifest line {ln}: expected 8 fields, found {}", f.len())));
            }
            let need = |idx: usize, name: &str| {
                na(f[idx]).ok_or_else(|| Error::Data(format!("manifest line {ln}: {} record {} needs {name}", f[0], f[1])))
            };
            match f[0] {
                "image" => m.images.push(ImageRecord {
                    id: f[1].to_string(),
                    split: need(2, "split")?.parse()?,
                    row: field(ln, "row", need(3, "row")?)?,
                }),
                "caption" => m.captions.push(CaptionRecord {
                    id: f[1].to_string(),
                    split: need(2, "split")?.parse()?,
                    row: field(ln, "row", need(3, "row")?)?,
                    bow_row: field(ln, "bow_row", need(4, "bow_row")?)?,
                    image_id: need(5, "image_id")?.to_string(),
                    text: na(f[7]).unwrap_or("").to_string(),
                }),
                "qa" => m.qas.push(QaRecord {
                    id: f[1].to_string(),
                    split: need(2, "split")?.parse()?,
                    row: field(ln, "row", need(3, "row")?)?,
                    image_id: need(5, "image_id")?.to_string(),
                    answer: field(ln, "answer", need(6, "answer")?)?,
                    text: na(f[7]).unwrap_or("").to_string(),
                }),
                "answer" => {
                    let idx: usize = field(ln, "answer index", f[1])?;
                    if m.answers.insert(idx, na(f[7]).unwrap_or("").to_string()).is_some() {
                        return Err(Error::Data(format!("manifest line {ln}: duplicate answer {idx}")));
                    }
                }
                other => return Err(Error::Data(format!("manifest line {ln}: unknown record kind {other:?}"))),
            }
        }
        Ok(m)
    }

    pub fn to_tsv(&self) -> Result<String> {
        let mut s = String::from(HEADER);
        s.push('\n');
        let text = |t: &str| if t.is_empty() { "-".to_string() } else { t.to_string() };
        for r in &self.images {
            s.push_str(&format!("image\t{}\t{}\t{}\t-\t-\t-\t-\n", r.id, r.split, r.row));
        }
        for r in &self.captions {
            check_text(&r.id, &r.text)?;
            s.push_str(&format!(
                "caption\t{}\t{}\t{}\t{}\t{}\t-\t{}\n",
                r.id,
                r.split,
                r.row,
                r.bow_row,
                r.image_id,
                text(&r.text)
            ));
        }
        for r in &self.qas {
            check_text(&r.id, &r.text)?;
            s.push_str(&format!(
                "qa\t{}\t{}\t{}\t-\t{}\t{}\t{}\n",
                r.id,
                r.split,
                r.row,
                r.image_id,
                r.answer,
                text(&r.text)
            ));
        }
        for (idx, t) in &self.answers {
            check_text(&idx.to_string(), t)?;
            s.push_str(&format!("answer\t{idx}\t-\t-\t-\t-\t-\t{}\n", text(t)));
        }
        Ok(s)
    }

    /// Referential integrity: unique ids, rows inside their files, every
    /// caption and QA tied to an existing image of the same split, and
    /// answers inside the answer table when one is present.
    pub fn validate(&self, counts: &FeatureCounts) -> Result<()> {
        let mut seen = HashSet::new();
        let ids = self
            .images
            .iter()
            .map(|r| &r.id)
            .chain(self.captions.iter().map(|r| &r.id))
            .chain(self.qas.iter().map(|r| &r.id));
        for id in ids {
            if id.is_empty() || id == "-" || id.contains(char::is_whitespace) {
                return Err(Error::Data(format!("invalid id {id:?}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Data(format!("duplicate id {id}")));
            }
        }
        let splits: BTreeMap<&str, Split> = self.images.iter().map(|r| (r.id.as_str(), r.split)).collect();
        let row_check = |id: &str, what: &str, row: usize, count: usize| {
            if row >= count {
                Err(Error::Data(format!("{id}: {what} {row} out of range ({count} rows)")))
            } else {
                Ok(())
            }
        };
        let owner_check = |id: &str, image_id: &str, split: Split| match splits.get(image_id) {
            None => Err(Error::Data(format!("{id}: refers to missing image {image_id}"))),
            Some(&s) if s != split => Err(Error::Data(format!("{id}: split {split} differs from image {image_id} ({s})"))),
            Some(_) => Ok(()),
        };
        for r in &self.images {
            row_check(&r.id, "row", r.row, counts.images)?;
        }
        for r in &self.captions {
            row_check(&r.id, "row", r.row, counts.captions)?;
            row_check(&r.id, "bow_row", r.bow_row, counts.bow)?;
            owner_check(&r.id, &r.image_id, r.split)?;
        }
        for r in &self.qas {
            row_check(&r.id, "row", r.row, counts.questions)?;
            owner_check(&r.id, &r.image_id, r.split)?;
            if !self.answers.is_empty() && !self.answers.contains_key(&r.answer) {
                return Err(Error::Data(format!("{}: answer {} is not in the answer table", r.id, r.answer)));
            }
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&src).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()?).map_err(|e| Error::io(path, e))
    }

    pub fn images_in(&self, split: Split) -> impl Iterator<Item = &ImageRecord> {
        self.images.iter().filter(move |r| r.split == split)
    }

    pub fn captions_in(&self, split: Split) -> impl Iterator<Item = &CaptionRecord> {
        self.captions.iter().filter(move |r| r.split == split)
    }

    pub fn qas_in(&self, split: Split) -> impl Iterator<Item = &QaRecord> {
        self.qas.iter().filter(move |r| r.split == split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Manifest {
        let mut answers = BTreeMap::new();
        answers.insert(0, "no".to_string());
        answers.insert(1, "yes".to_string());
        Manifest {
            images: vec![
                ImageRecord {
                    id: "img0".into(),
                    split: Split::Train,
                    row: 0,
                },
                ImageRecord {
                    id: "img1".into(),
                    split: Split::Test,
                    row: 1,
                },
            ],
            captions: vec![CaptionRecord {
                id: "cap0".into(),
                split: Split::Train,
                row: 0,
                bow_row: 0,
                image_id: "img0".into(),
                text: "a red ball".into(),
            }],
            qas: vec![QaRecord {
                id: "qa0".into(),
                split: Split::Test,
                row: 0,
                image_id: "img1".into(),
                answer: 1,
                text: "is it red".into(),
            }],
            answers,
        }
    }

    const COUNTS: FeatureCounts = FeatureCounts {
        images: 2,
        captions: 1,
        bow: 1,
        questions: 1,
    };

    #[test]
    fn round_trips_through_text() {
        let m = sample();
        let text = m.to_tsv().unwrap();
        assert!(text.starts_with(HEADER));
        assert!(text.contains("caption\tcap0\ttrain\t0\t0\timg0\t-\ta red ball\n"));
        let back = Manifest::parse(&text).unwrap();
        assert_eq!(back, m);
        back.validate(&COUNTS).unwrap();
    }

    #[test]
    fn dangling_references_name_the_id() {
        let mut m = sample();
        m.captions[0].image_id = "img9".into();
        let err = m.validate(&COUNTS).unwrap_err().to_string();
        assert!(err.contains("cap0") && err.contains("img9"), "{err}");

        let mut m = sample();
        m.images[1].row = 2;
        assert!(m.validate(&COUNTS).unwrap_err().to_string().contains("img1"));

        let mut m = sample();
        m.captions[0].bow_row = 5;
        assert!(m.validate(&COUNTS).unwrap_err().to_string().contains("cap0"));

        let mut m = sample();
        m.qas[0].answer = 4;
        assert!(m.validate(&COUNTS).unwrap_err().to_string().contains("qa0"));

        let mut m = sample();
        m.qas[0].split = Split::Train;
        assert!(m.validate(&COUNTS).unwrap_err().to_string().contains("qa0"));

        let mut m = sample();
        m.captions[0].id = "img0".into();
        assert!(m.validate(&COUNTS).unwrap_err().to_string().contains("duplicate id img0"));
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(Manifest::parse("").is_err());
        assert!(Manifest::parse("kind\tid\n").is_err());
        let bad_fields = format!("{HEADER}\nimage\timg0\ttrain\n");
        assert!(Manifest::parse(&bad_fields).unwrap_err().to_string().contains("line 2"));
        let bad_kind = format!("{HEADER}\nvideo\tv0\ttrain\t0\t-\t-\t-\t-\n");
        assert!(Manifest::parse(&bad_kind).is_err());
        let bad_row = format!("{HEADER}\nimage\timg0\ttrain\tx\t-\t-\t-\t-\n");
        assert!(Manifest::parse(&bad_row).is_err());
        let bad_split = format!("{HEADER}\nimage\timg0\tdev\t0\t-\t-\t-\t-\n");
        assert!(Manifest::parse(&bad_split).is_err());
    }

    #[test]
    fn text_with_tabs_cannot_be_written() {
        let mut m = sample();
        m.captions[0].text = "a\tb".into();
        assert!(m.to_tsv().is_err());
    }
}
