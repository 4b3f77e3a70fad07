//! JSON-lines datasets and vocabulary files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{EditOp, EditPlan, Provenance, VideoTextPair};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::types::{AlignmentSegmentation, FeatureRole, FeatureSequence, GlossVocabulary, Segment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub op: String,
    pub position: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gloss: Option<String>,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub id: String,
    pub frames: Vec<Vec<f64>>,
    pub glosses: Vec<String>,
    #[serde(default)]
    pub segments: Vec<(String, usize, usize)>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub is_pseudo: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit_plan: Option<Vec<EditRecord>>,
}

fn name(vocab: &GlossVocabulary, id: usize) -> Result<String> {
    vocab
        .name(id)
        .map(str::to_owned)
        .ok_or_else(|| Error::Format(format!("gloss id {id} is outside the vocabulary")))
}

fn id(vocab: &GlossVocabulary, name: &str) -> Result<usize> {
    vocab.id(name).ok_or_else(|| Error::Format(format!("unknown gloss {name:?}")))
}

pub fn to_record(pair: &VideoTextPair, vocab: &GlossVocabulary) -> Result<PairRecord> {
    let segments = pair
        .segmentation
        .segments
        .iter()
        .map(|s| Ok((name(vocab, s.gloss)?, s.start, s.end)))
        .collect::<Result<_>>()?;
    let edit_plan = match &pair.provenance {
        Some(p) => Some(
            p.plan
                .ops
                .iter()
                .map(|op| {
                    Ok(match *op {
                        EditOp::Substitute { position, gloss } => EditRecord {
                            op: "substitute".into(),
                            position,
                            gloss: Some(name(vocab, gloss)?),
                        },
                        EditOp::Delete { position } => EditRecord {
                            op: "delete".into(),
                            position,
                            gloss: None,
                        },
                        EditOp::Insert { position, gloss } => EditRecord {
                            op: "insert".into(),
                            position,
                            gloss: Some(name(vocab, gloss)?),
                        },
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    Ok(PairRecord {
        id: pair.id.clone(),
        frames: pair.features.frames().row_iter().map(<[f64]>::to_vec).collect(),
        glosses: vocab.decode(&pair.label),
        segments,
        is_pseudo: pair.is_pseudo,
        source_id: pair.provenance.as_ref().map(|p| p.source_id.clone()),
        edit_plan,
    })
}

pub fn from_record(rec: PairRecord, vocab: &GlossVocabulary) -> Result<VideoTextPair> {
    let frames = Matrix::from_rows(&rec.frames)
        .ok_or_else(|| Error::Format(format!("{}: frames are empty or ragged", rec.id)))?;
    let features = FeatureSequence::new(frames, FeatureRole::RawVideo)?;
    let label = vocab.encode(&rec.glosses)?;
    let segments = rec
        .segments
        .iter()
        .map(|(g, start, end)| {
            Ok(Segment {
                gloss: id(vocab, g)?,
                start: *start,
                end: *end,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let provenance = match (rec.source_id, rec.edit_plan) {
        (Some(source_id), Some(ops)) => {
            let ops = ops
                .iter()
                .map(|r| {
                    let gloss = || {
                        r.gloss
                            .as_deref()
                            .ok_or_else(|| Error::Format(format!("{} edit lacks a gloss", r.op)))
                            .and_then(|g| id(vocab, g))
                    };
                    Ok(match r.op.as_str() {
                        "substitute" => EditOp::Substitute {
                            position: r.position,
                            gloss: gloss()?,
                        },
                        "delete" => EditOp::Delete { position: r.position },
                        "insert" => EditOp::Insert {
                            position: r.position,
                            gloss: gloss()?,
                        },
                        other => return Err(Error::Format(format!("unknown edit op {other:?}"))),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Some(Provenance {
                source_id,
                plan: EditPlan { ops },
            })
        }
        (None, None) => None,
        _ => return Err(Error::Format(format!("{}: source_id and edit_plan go together", rec.id))),
    };
    let pair = VideoTextPair {
        id: rec.id,
        features,
        label,
        segmentation: AlignmentSegmentation::new(segments),
        is_pseudo: rec.is_pseudo,
        provenance,
    };
    if !pair.segmentation.is_empty() {
        pair.validate()?;
    }
    Ok(pair)
}

pub fn write_pairs(path: impl AsRef<Path>, pairs: &[VideoTextPair], vocab: &GlossVocabulary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut w, &to_record(p, vocab)?)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: impl AsRef<Path>, vocab: &GlossVocabulary) -> Result<Vec<VideoTextPair>> {
    let path = path.as_ref();
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PairRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(from_record(rec, vocab)?);
    }
    Ok(out)
}

pub fn write_vocab(path: impl AsRef<Path>, vocab: &GlossVocabulary) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, vocab)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_vocab(path: impl AsRef<Path>) -> Result<GlossVocabulary> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Serializes each item as one JSON line.
pub fn write_jsonl<T: Serialize>(mut w: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
