//! Canonical per-token scoring records.
//!
//! A record holds, for tokens `1..T` of a document, the negative
//! log-likelihood (in nats) of each token given its prefix and whether the
//! model's most probable next token was the actual one. Every memorization
//! metric is computed from these two sequences, so the audit never needs a
//! model runtime.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::CorpusManifest;
use crate::error::{Error, Location, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringRecord {
    pub doc_id: String,
    pub model_id: String,
    /// NLL in nats of token `i + 1` given tokens `0..=i`.
    pub nll: Vec<f64>,
    #[serde(serialize_with = "hits_out", deserialize_with = "hits_in")]
    pub argmax_hit: Vec<bool>,
}

fn hits_out<S: Serializer>(hits: &[bool], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(hits.iter().map(|&h| u8::from(h)))
}

fn hits_in<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<bool>, D::Error> {
    let raw = Vec::<u8>::deserialize(d)?;
    raw.into_iter()
        .map(|v| match v {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(serde::de::Error::custom(format!(
                "argmax_hit entries must be 0 or 1, got {other}"
            ))),
        })
        .collect()
}

impl ScoringRecord {
    pub fn len(&self) -> usize {
        self.nll.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nll.is_empty()
    }

    /// Checks the record-local invariants: finite nonnegative NLLs and
    /// parallel flag/NLL sequences.
    pub fn validate(&self, location: &Location) -> Result<()> {
        if let Some((position, &value)) = self.nll.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidNll {
                location: location.clone(),
                doc: self.doc_id.clone(),
                position,
                value,
            });
        }
        if self.argmax_hit.len() != self.nll.len() {
            return Err(Error::Malformed {
                location: location.clone(),
                message: format!(
                    "record {:?} has {} nll values but {} argmax flags",
                    self.doc_id,
                    self.nll.len(),
                    self.argmax_hit.len()
                ),
            });
        }
        Ok(())
    }
}

pub type ScoreSet = BTreeMap<String, ScoringRecord>;

/// Loads and validates a scoring file. When a manifest is given, every record
/// must name a manifest document and cover exactly `tokens.len() - 1`
/// positions.
pub fn load_scores(path: &Path, manifest: Option<&CorpusManifest>) -> Result<ScoreSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(BufReader::new(file), path, manifest)
}

pub fn read_scores<R: BufRead>(reader: R, path: &Path, manifest: Option<&CorpusManifest>) -> Result<ScoreSet> {
    let doc_lens = manifest.map(|m| {
        m.documents
            .iter()
            .map(|d| (d.id.as_str(), d.tokens.len()))
            .collect::<std::collections::HashMap<_, _>>()
    });
    let mut out = ScoreSet::new();
    for (i, line) in reader.lines().enumerate() {
        let location = Location {
            path: path.to_path_buf(),
            line: i + 1,
        };
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoringRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            location: location.clone(),
            message: e.to_string(),
        })?;
        record.validate(&location)?;
        if let Some(lens) = &doc_lens {
            let n_tokens = *lens.get(record.doc_id.as_str()).ok_or_else(|| Error::Malformed {
                location: location.clone(),
                message: format!("record for unknown document {:?}", record.doc_id),
            })?;
            let expected = n_tokens.saturating_sub(1);
            if record.len() != expected {
                return Err(Error::LengthMismatch {
                    location,
                    doc: record.doc_id,
                    expected,
                    got: record.nll.len(),
                });
            }
        }
        if out.contains_key(&record.doc_id) {
            return Err(Error::DuplicateId {
                location,
                kind: "scoring record",
                id: record.doc_id,
            });
        }
        out.insert(record.doc_id.clone(), record);
    }
    Ok(out)
}

pub fn write_scores<'a>(path: &Path, records: impl IntoIterator<Item = &'a ScoringRecord>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_scores_to(&mut out, records).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Serializes one record per line. Floats use the shortest representation
/// that parses back to the identical value.
pub fn write_scores_to<'a, W: Write>(
    out: &mut W,
    records: impl IntoIterator<Item = &'a ScoringRecord>,
) -> std::io::Result<()> {
    for record in records {
        serde_json::to_writer(&mut *out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
