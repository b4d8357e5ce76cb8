//! Corpus data model: dataset components, documents with train/test labels,
//! the line-delimited manifest format, seeded document sampling and the
//! snippetizer used by the density index.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Location, Result};
use crate::rng::rng_for;

/// Default snippet width in model tokens.
pub const DEFAULT_SNIPPET_LEN: usize = 50;
/// Default snippet stride; consecutive snippets share `len - stride` tokens.
pub const DEFAULT_SNIPPET_STRIDE: usize = 40;
/// Default per-dataset, per-split document cap.
pub const DEFAULT_DOC_CAP: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetComponent {
    pub id: String,
    pub name: String,
    /// Number of epochs the component was seen during training.
    pub upweight: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// Treatment indicator used by the train/test regression.
    pub fn indicator(self) -> f64 {
        match self {
            Split::Train => 1.0,
            Split::Test => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    #[serde(rename = "dataset")]
    pub dataset_id: String,
    pub split: Split,
    pub tokens: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_texts: Option<Vec<String>>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub datasets: Vec<DatasetComponent>,
    pub documents: Vec<Document>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    datasets: Vec<DatasetComponent>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestLine {
    Header(Header),
    Document(Document),
}

impl CorpusManifest {
    pub fn dataset(&self, id: &str) -> Option<&DatasetComponent> {
        self.datasets.iter().find(|d| d.id == id)
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Documents of one dataset and split, in manifest order.
    pub fn documents_in<'a>(&'a self, dataset_id: &'a str, split: Split) -> impl Iterator<Item = &'a Document> + 'a {
        self.documents
            .iter()
            .filter(move |d| d.dataset_id == dataset_id && d.split == split)
    }

    /// Checks the invariants a loaded manifest must satisfy. Line numbers in
    /// errors refer to the serialized layout (header on line 1).
    pub fn validate(&self, path: &Path) -> Result<()> {
        let loc = |line| Location {
            path: path.to_path_buf(),
            line,
        };
        let mut ids = HashSet::new();
        for ds in &self.datasets {
            if !ids.insert(ds.id.as_str()) {
                return Err(Error::DuplicateId {
                    location: loc(1),
                    kind: "dataset",
                    id: ds.id.clone(),
                });
            }
            if ds.upweight < 1 {
                return Err(Error::Malformed {
                    location: loc(1),
                    message: format!("dataset {:?} has upweight 0", ds.id),
                });
            }
        }
        let mut doc_ids = HashSet::new();
        for (i, doc) in self.documents.iter().enumerate() {
            validate_document(doc, &ids, &mut doc_ids, loc(i + 2))?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let header = Header {
            datasets: self.datasets.clone(),
        };
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        for doc in &self.documents {
            serde_json::to_writer(&mut *out, doc)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn validate_document<'a>(
    doc: &'a Document,
    datasets: &HashSet<&str>,
    seen: &mut HashSet<&'a str>,
    location: Location,
) -> Result<()> {
    if !seen.insert(doc.id.as_str()) {
        return Err(Error::DuplicateId {
            location,
            kind: "document",
            id: doc.id.clone(),
        });
    }
    if !datasets.contains(doc.dataset_id.as_str()) {
        return Err(Error::DanglingDataset {
            location,
            doc: doc.id.clone(),
            dataset: doc.dataset_id.clone(),
        });
    }
    if doc.tokens.is_empty() {
        return Err(Error::Malformed {
            location,
            message: format!("document {:?} has no tokens", doc.id),
        });
    }
    if let Some(texts) = &doc.token_texts {
        if texts.len() != doc.tokens.len() {
            return Err(Error::Malformed {
                location,
                message: format!(
                    "document {:?} has {} tokens but {} token_texts",
                    doc.id,
                    doc.tokens.len(),
                    texts.len()
                ),
            });
        }
    }
    Ok(())
}

/// Reads and validates a line-delimited JSON manifest.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(BufReader::new(file), path)
}

/// Parses a manifest from any reader; `path` is used only for error locations.
pub fn read_manifest<R: BufRead>(reader: R, path: &Path) -> Result<CorpusManifest> {
    let loc = |line| Location {
        path: path.to_path_buf(),
        line,
    };
    let mut header: Option<(Vec<DatasetComponent>, usize)> = None;
    let mut docs: Vec<(Document, usize)> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            location: loc(lineno),
            message: e.to_string(),
        })?;
        match parsed {
            ManifestLine::Header(h) => {
                if header.is_some() {
                    return Err(Error::Malformed {
                        location: loc(lineno),
                        message: "second dataset header".into(),
                    });
                }
                header = Some((h.datasets, lineno));
            }
            ManifestLine::Document(d) => docs.push((d, lineno)),
        }
    }
    let (datasets, header_line) = header.ok_or_else(|| Error::Malformed {
        location: loc(1),
        message: "missing {\"datasets\": [...]} header".into(),
    })?;

    let mut ids = HashSet::new();
    for ds in &datasets {
        if !ids.insert(ds.id.as_str()) {
            return Err(Error::DuplicateId {
                location: loc(header_line),
                kind: "dataset",
                id: ds.id.clone(),
            });
        }
        if ds.upweight < 1 {
            return Err(Error::Malformed {
                location: loc(header_line),
                message: format!("dataset {:?} has upweight 0", ds.id),
            });
        }
    }
    let mut seen = HashSet::new();
    for (doc, lineno) in &docs {
        validate_document(doc, &ids, &mut seen, loc(*lineno))?;
    }
    Ok(CorpusManifest {
        datasets,
        documents: docs.into_iter().map(|(d, _)| d).collect(),
    })
}

/// A window of a document in model-token space.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub doc_id: String,
    pub dataset_id: String,
    pub start: usize,
    pub length: usize,
    pub text: String,
}

/// Cuts a document into windows of `length` tokens every `stride` tokens.
///
/// Full windows start at `0, stride, 2*stride, ...`. After the last full
/// window one shorter trailing window is emitted when at least `stride`
/// tokens remain from its start; shorter remainders are dropped.
pub fn snippetize(doc: &Document, length: usize, stride: usize) -> Result<Vec<Snippet>> {
    if length == 0 || stride == 0 || stride > length {
        return Err(Error::InvalidArgument(format!(
            "snippet length {length} and stride {stride} must satisfy 0 < stride <= length"
        )));
    }
    let texts = doc
        .token_texts
        .as_ref()
        .ok_or_else(|| Error::MissingTokenTexts(doc.id.clone()))?;
    Ok(window_offsets(texts.len(), length, stride)
        .into_iter()
        .map(|(start, len)| Snippet {
            doc_id: doc.id.clone(),
            dataset_id: doc.dataset_id.clone(),
            start,
            length: len,
            text: texts[start..start + len].join(" "),
        })
        .collect())
}

/// `(start, length)` pairs produced by [`snippetize`] for a document of
/// `n_tokens` tokens.
pub fn window_offsets(n_tokens: usize, length: usize, stride: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start + length <= n_tokens {
        out.push((start, length));
        start += stride;
    }
    if start < n_tokens && n_tokens - start >= stride && n_tokens - start < length {
        out.push((start, n_tokens - start));
    }
    out
}

/// Uniform sample without replacement of up to `cap` documents from one
/// dataset and split. The result is sorted by document id and depends only on
/// the manifest contents (not its line order), the arguments and `seed`.
pub fn sample_documents<'a>(
    manifest: &'a CorpusManifest,
    dataset_id: &str,
    split: Split,
    cap: usize,
    seed: u64,
) -> Result<Vec<&'a Document>> {
    if cap == 0 {
        return Err(Error::InvalidArgument("sample cap must be positive".into()));
    }
    if manifest.dataset(dataset_id).is_none() {
        return Err(Error::UnknownDataset(dataset_id.to_string()));
    }
    let mut pool: Vec<&Document> = manifest
        .documents
        .iter()
        .filter(|d| d.dataset_id == dataset_id && d.split == split)
        .collect();
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    if pool.len() <= cap {
        return Ok(pool);
    }
    let mut rng = rng_for(seed, &["sample", dataset_id, split.as_str()]);
    let mut picked = index::sample(&mut rng, pool.len(), cap).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i]).collect())
}

/// Uniform sample of `fraction` of all documents (rounded up, at least one
/// when the manifest is nonempty), sorted by id. Used to index only part of a
/// large training corpus.
pub fn sample_fraction(manifest: &CorpusManifest, fraction: f64, seed: u64) -> Result<Vec<&Document>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling fraction {fraction} must lie in (0, 1]"
        )));
    }
    let mut pool: Vec<&Document> = manifest.documents.iter().collect();
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    let want = ((fraction * pool.len() as f64).ceil() as usize).min(pool.len());
    if want == pool.len() {
        return Ok(pool);
    }
    let mut rng = rng_for(seed, &["fraction"]);
    let mut picked = index::sample(&mut rng, pool.len(), want).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i]).collect())
}

/// Document-id lookup for a manifest.
pub fn document_map(manifest: &CorpusManifest) -> HashMap<&str, &Document> {
    manifest.documents.iter().map(|d| (d.id.as_str(), d)).collect()
}
