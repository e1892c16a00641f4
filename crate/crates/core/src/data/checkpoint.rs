//! Model checkpoints.
//!
//! Layout (integers little-endian):
//!
//! | field        | size      |                                            |
//! |--------------|-----------|--------------------------------------------|
//! | magic        | 4         | `MMCK`                                     |
//! | version      | 4         | `u32` = 1                                  |
//! | header_len   | 4         | `u32`                                      |
//! | header       | header_len| UTF-8 JSON                                 |
//! | param_count  | 8         | `u64`                                      |
//! | params       | 8 · count | `f64`                                      |
//! | checksum     | 8         | FNV-1a 64 of everything after the magic    |
//!
//! The header holds the kind tag, the model structure with every matrix's
//! values replaced by an offset into `params`, a map of matrix shapes, and
//! the training metadata.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::features::fnv1a64;
use crate::error::{Error, Result};
use crate::heads::{HeadKind, VqaHead};
use crate::ranking::Ranker;

pub const MAGIC: [u8; 4] = *b"MMCK";
pub const VERSION: u32 = 1;

/// A model type that can be checkpointed.
pub trait CheckpointModel: Serialize + DeserializeOwned {
    fn checkpoint_kind(&self) -> String;

    /// Kinds this type loads from.
    fn accepted_kinds() -> &'static [&'static str];
}

impl CheckpointModel for Ranker {
    fn checkpoint_kind(&self) -> String {
        self.kind().to_string()
    }

    fn accepted_kinds() -> &'static [&'static str] {
        &["agnostic", "score_fusion", "rep_fusion"]
    }
}

impl CheckpointModel for VqaHead {
    fn checkpoint_kind(&self) -> String {
        match self.kind {
            HeadKind::Image => "vqa_head_image".into(),
            HeadKind::Caption => "vqa_head_caption".into(),
        }
    }

    fn accepted_kinds() -> &'static [&'static str] {
        &["vqa_head_image", "vqa_head_caption"]
    }
}

/// Training metadata stored next to the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: Value,
    pub seed: u64,
    pub iteration: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<M> {
    pub kind: String,
    pub model: M,
    pub meta: CheckpointMeta,
    /// Shape of every stored matrix, keyed by its path in the model.
    pub dims: BTreeMap<String, [usize; 2]>,
}

fn is_matrix(obj: &Map<String, Value>) -> bool {
    obj.len() == 3 && obj.contains_key("rows") && obj.contains_key("cols") && obj.get("data").is_some_and(Value::is_array)
}

fn extract(v: &mut Value, path: &str, params: &mut Vec<f64>, dims: &mut BTreeMap<String, [usize; 2]>) -> Result<()> {
    match v {
        Value::Object(obj) if is_matrix(obj) => {
            let data = obj.remove("data").expect("checked");
            let offset = params.len();
            for x in data.as_array().expect("checked") {
                params.push(
                    x.as_f64()
                        .ok_or_else(|| Error::Checkpoint(format!("non-numeric value in {path}")))?,
                );
            }
            let rows = obj["rows"].as_u64().unwrap_or(0) as usize;
            let cols = obj["cols"].as_u64().unwrap_or(0) as usize;
            obj.insert("offset".into(), json!(offset));
            dims.insert(path.to_string(), [rows, cols]);
        }
        Value::Object(obj) => {
            for (k, child) in obj.iter_mut() {
                extract(child, &format!("{path}.{k}"), params, dims)?;
            }
        }
        Value::Array(items) => {
            for (i, child) in items.iter_mut().enumerate() {
                extract(child, &format!("{path}[{i}]"), params, dims)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn restore(v: &mut Value, params: &[f64], used: &mut usize) -> Result<()> {
    match v {
        Value::Object(obj) if obj.len() == 3 && obj.contains_key("offset") && obj.contains_key("rows") => {
            let rows = obj["rows"].as_u64().ok_or_else(|| Error::Checkpoint("bad matrix rows".into()))? as usize;
            let cols = obj["cols"].as_u64().ok_or_else(|| Error::Checkpoint("bad matrix cols".into()))? as usize;
            let offset = obj["offset"]
                .as_u64()
                .ok_or_else(|| Error::Checkpoint("bad matrix offset".into()))? as usize;
            let len = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Checkpoint("matrix size overflows".into()))?;
            let end = offset
                .checked_add(len)
                .filter(|&e| e <= params.len())
                .ok_or_else(|| Error::Checkpoint(format!("matrix at offset {offset} runs past {} parameters", params.len())))?;
            obj.remove("offset");
            let data = params[offset..end]
                .iter()
                .map(|&x| serde_json::Number::from_f64(x).map(Value::Number))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::Checkpoint("non-finite parameter".into()))?;
            obj.insert("data".into(), Value::Array(data));
            *used += len;
        }
        Value::Object(obj) => {
            for child in obj.values_mut() {
                restore(child, params, used)?;
            }
        }
        Value::Array(items) => {
            for child in items {
                restore(child, params, used)?;
            }
        }
        _ => {}
    }
    Ok(())
}

pub fn encode_checkpoint<M: CheckpointModel>(model: &M, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut tree = serde_json::to_value(model).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut params = Vec::new();
    let mut dims = BTreeMap::new();
    extract(&mut tree, "model", &mut params, &mut dims)?;
    if let Some(x) = params.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("parameter {x} cannot be checkpointed")));
    }
    let header = json!({
        "kind": model.checkpoint_kind(),
        "model": tree,
        "dims": dims,
        "meta": meta,
    });
    let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let header_len = u32::try_from(header.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let mut out = Vec::with_capacity(28 + header.len() + 8 * params.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in &params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let sum = fnv1a64(&out[4..]);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len()).ok_or_else(|| {
        Error::Checkpoint(format!(
            "truncated while reading {what}: need {n} bytes at offset {at}, file has {}",
            bytes.len()
        ))
    })?;
    let out = &bytes[*at..end];
    *at = end;
    Ok(out)
}

pub fn decode_checkpoint<M: CheckpointModel>(bytes: &[u8]) -> Result<Checkpoint<M>> {
    let mut at = 0;
    let magic = take(bytes, &mut at, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}, expected \"MMCK\"")));
    }
    if bytes.len() < 4 + 8 {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().expect("8 bytes"));
    let computed = fnv1a64(&bytes[4..bytes.len() - 8]);
    if stored != computed {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:#018x}, computed {computed:#018x}"
        )));
    }
    let body = &bytes[..bytes.len() - 8];
    let version = u32::from_le_bytes(take(body, &mut at, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (supported: {VERSION})"
        )));
    }
    let header_len = u32::from_le_bytes(take(body, &mut at, 4, "header length")?.try_into().expect("4 bytes")) as usize;
    let header: Value =
        serde_json::from_slice(take(body, &mut at, header_len, "header")?).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let count = u64::from_le_bytes(take(body, &mut at, 8, "parameter count")?.try_into().expect("8 bytes"));
    let count = usize::try_from(count).map_err(|_| Error::Checkpoint("parameter count overflows".into()))?;
    let raw = take(
        body,
        &mut at,
        count
            .checked_mul(8)
            .ok_or_else(|| Error::Checkpoint("parameter count overflows".into()))?,
        "parameters",
    )?;
    if at != body.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes after parameters", body.len() - at)));
    }
    let params: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();

    let kind = header["kind"]
        .as_str()
        .ok_or_else(|| Error::Checkpoint("header has no kind".into()))?
        .to_string();
    if !M::accepted_kinds().contains(&kind.as_str()) {
        return Err(Error::Checkpoint(format!(
            "kind mismatch: checkpoint holds a {kind:?} model, expected one of {:?}",
            M::accepted_kinds()
        )));
    }
    let mut tree = header["model"].clone();
    let mut used = 0;
    restore(&mut tree, &params, &mut used)?;
    if used != params.len() {
        return Err(Error::Checkpoint(format!(
            "{} of {} parameters are unreferenced",
            params.len() - used,
            params.len()
        )));
    }
    let model: M = serde_json::from_value(tree).map_err(|e| Error::Checkpoint(format!("model does not match its kind: {e}")))?;
    if model.checkpoint_kind() != kind {
        return Err(Error::Checkpoint(format!(
            "header kind {kind:?} disagrees with the stored {:?} model",
            model.checkpoint_kind()
        )));
    }
    let meta: CheckpointMeta =
        serde_json::from_value(header["meta"].clone()).map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    let dims: BTreeMap<String, [usize; 2]> =
        serde_json::from_value(header["dims"].clone()).map_err(|e| Error::Checkpoint(format!("bad dims: {e}")))?;
    Ok(Checkpoint { kind, model, meta, dims })
}

pub fn save_checkpoint<M: CheckpointModel>(path: impl AsRef<Path>, model: &M, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(model, meta)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<M: CheckpointModel>(path: impl AsRef<Path>) -> Result<Checkpoint<M>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::HeadDims;
    use crate::numcore::rng::rng;
    use crate::ranking::{AgnosticEmbedder, FusionMode, RepFusionDims, RepFusionModel, ScoreFusionModel};

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            config: json!({"lr": 1e-4, "batch": 100}),
            seed: 7,
            iteration: 1234,
        }
    }

    fn rankers() -> Vec<Ranker> {
        let mut r = rng(1);
        let agn = AgnosticEmbedder::new(5, 6, &mut r);
        let mut sf = ScoreFusionModel::new(agn.clone(), 8, 8, 4, 0.5, &mut r);
        sf.alpha = 0.35;
        sf.beta = 0.1;
        vec![
            Ranker::Agnostic(agn.clone()),
            Ranker::ScoreFusion(sf),
            Ranker::RepFusion(RepFusionModel::new(
                agn.clone(),
                FusionMode::Full,
                RepFusionDims::with_bank(8, 4, 7),
                0.5,
                &mut r,
            )),
            Ranker::RepFusion(RepFusionModel::new(
                agn,
                FusionMode::CaptionOnly,
                RepFusionDims::with_bank(8, 4, 7),
                1.0,
                &mut r,
            )),
        ]
    }

    #[test]
    fn rankers_round_trip_byte_identically() {
        for m in rankers() {
            let bytes = encode_checkpoint(&m, &meta()).unwrap();
            let back: Checkpoint<Ranker> = decode_checkpoint(&bytes).unwrap();
            assert_eq!(back.model, m);
            assert_eq!(back.meta, meta());
            assert_eq!(back.kind, m.kind());
            assert_eq!(encode_checkpoint(&back.model, &back.meta).unwrap(), bytes);
        }
    }

    #[test]
    fn heads_round_trip_and_record_dims() {
        let dims = HeadDims {
            input: 6,
            question: 4,
            multimodal: 5,
            answers: 9,
        };
        let head = VqaHead::new(HeadKind::Caption, dims, &mut rng(2)).with_dropout(0.5);
        let bytes = encode_checkpoint(&head, &CheckpointMeta::default()).unwrap();
        let back: Checkpoint<VqaHead> = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.model, head);
        assert_eq!(back.kind, "vqa_head_caption");
        assert_eq!(back.dims["model.answer_layer.w"], [9, 5]);
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let head = VqaHead::zeros(
            HeadKind::Image,
            HeadDims {
                input: 2,
                question: 2,
                multimodal: 2,
                answers: 2,
            },
        );
        let bytes = encode_checkpoint(&head, &meta()).unwrap();
        let err = decode_checkpoint::<Ranker>(&bytes).unwrap_err().to_string();
        assert!(err.contains("kind mismatch"), "{err}");
        let bytes = encode_checkpoint(&rankers()[0], &meta()).unwrap();
        assert!(decode_checkpoint::<VqaHead>(&bytes).is_err());
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_checkpoint(&rankers()[2], &meta()).unwrap();
        for i in (0..bytes.len()).step_by(37) {
            let mut bad = bytes.clone();
            bad[i] ^= 0x10;
            assert!(decode_checkpoint::<Ranker>(&bad).is_err(), "flip at {i} accepted");
        }
        for cut in [0, 3, 11, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_checkpoint::<Ranker>(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&p, &rankers()[1], &meta()).unwrap();
        let back: Checkpoint<Ranker> = load_checkpoint(&p).unwrap();
        assert_eq!(back.model, rankers()[1]);
        let err = load_checkpoint::<Ranker>(dir.path().join("missing.ckpt")).unwrap_err().to_string();
        assert!(err.contains("missing.ckpt"));
    }
}
