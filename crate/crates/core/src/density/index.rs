//! Inverted index over snippets with Okapi BM25 scoring.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Snippet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite() && (0.0..=1.0).contains(&self.b)) {
            return Err(Error::InvalidArgument(format!(
                "BM25 parameters out of range: k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

/// Whitespace tokenization with lowercasing; shared by indexing and querying.
pub fn analyze(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|t| t.to_lowercase())
}

/// `ln((N - df + 0.5) / (df + 0.5) + 1)`; always positive.
pub fn idf(n_snippets: usize, df: usize) -> f64 {
    let n = n_snippets as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Contribution of one query term occurrence to a snippet's score.
#[inline]
pub fn term_score(idf: f64, tf: f64, len: f64, avg_len: f64, params: &Bm25Params) -> f64 {
    idf * (tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * len / avg_len)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnippetRef {
    pub doc_id: String,
    pub start: u32,
    /// Snippet width in model tokens.
    pub width: u32,
    /// Position in [`SnippetIndex::datasets`].
    pub dataset: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub snippet: u32,
    pub tf: u32,
}

/// Immutable BM25 index. Snippet ids are assigned in insertion order and
/// postings lists are sorted by snippet id.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetIndex {
    params: Bm25Params,
    datasets: Vec<String>,
    snippets: Vec<SnippetRef>,
    /// Analyzed term count of each snippet.
    lengths: Vec<u32>,
    avg_len: f64,
    terms: Vec<String>,
    term_ids: HashMap<String, u32>,
    offsets: Vec<usize>,
    postings: Vec<Posting>,
    skipped_empty: usize,
    by_key: HashMap<(String, u32), Vec<u32>>,
}

/// Builds an index from a snippet stream. Tokenization runs in parallel;
/// postings are merged in stream order, so the result (and its serialized
/// bytes) depends only on the stream.
///
/// `datasets` lists labels that get a matrix row/column even when they
/// contribute no snippets; labels seen only in the stream are added.
pub fn build_index(snippets: &[Snippet], params: Bm25Params, datasets: &[String]) -> Result<SnippetIndex> {
    params.validate()?;
    let mut labels: Vec<String> = datasets.to_vec();
    labels.extend(snippets.iter().map(|s| s.dataset_id.clone()));
    labels.sort();
    labels.dedup();
    let label_ids: HashMap<&str, u32> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i as u32)).collect();

    let analyzed: Vec<(u32, Vec<(String, u32)>)> = snippets
        .par_iter()
        .map(|s| {
            let mut tf: HashMap<String, u32> = HashMap::new();
            let mut len = 0u32;
            for term in analyze(&s.text) {
                len += 1;
                *tf.entry(term).or_insert(0) += 1;
            }
            let mut tf: Vec<(String, u32)> = tf.into_iter().collect();
            tf.sort_unstable();
            (len, tf)
        })
        .collect();

    let mut refs = Vec::with_capacity(snippets.len());
    let mut lengths = Vec::with_capacity(snippets.len());
    let mut lists: HashMap<String, Vec<Posting>> = HashMap::new();
    let mut skipped_empty = 0;
    for (s, (len, tf)) in snippets.iter().zip(analyzed) {
        if len == 0 {
            skipped_empty += 1;
            continue;
        }
        let id = refs.len() as u32;
        refs.push(SnippetRef {
            doc_id: s.doc_id.clone(),
            start: s.start as u32,
            width: s.length as u32,
            dataset: label_ids[s.dataset_id.as_str()],
        });
        lengths.push(len);
        for (term, count) in tf {
            lists.entry(term).or_default().push(Posting { snippet: id, tf: count });
        }
    }
    let mut terms: Vec<String> = lists.keys().cloned().collect();
    terms.sort_unstable();
    let mut offsets = Vec::with_capacity(terms.len() + 1);
    let mut postings = Vec::new();
    offsets.push(0);
    for t in &terms {
        postings.extend_from_slice(&lists[t]);
        offsets.push(postings.len());
    }
    Ok(SnippetIndex::assemble(
        params,
        labels,
        refs,
        lengths,
        terms,
        offsets,
        postings,
        skipped_empty,
    ))
}

impl SnippetIndex {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        params: Bm25Params,
        datasets: Vec<String>,
        snippets: Vec<SnippetRef>,
        lengths: Vec<u32>,
        terms: Vec<String>,
        offsets: Vec<usize>,
        postings: Vec<Posting>,
        skipped_empty: usize,
    ) -> Self {
        let total: u64 = lengths.iter().map(|&l| l as u64).sum();
        let avg_len = if lengths.is_empty() {
            0.0
        } else {
            total as f64 / lengths.len() as f64
        };
        let term_ids = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let mut by_key: HashMap<(String, u32), Vec<u32>> = HashMap::new();
        for (i, s) in snippets.iter().enumerate() {
            by_key.entry((s.doc_id.clone(), s.start)).or_default().push(i as u32);
        }
        SnippetIndex {
            params,
            datasets,
            snippets,
            lengths,
            avg_len,
            terms,
            term_ids,
            offsets,
            postings,
            skipped_empty,
            by_key,
        }
    }

    pub fn params(&self) -> &Bm25Params {
        &self.params
    }

    pub fn datasets(&self) -> &[String] {
        &self.datasets
    }

    pub fn dataset_index(&self, label: &str) -> Option<usize> {
        self.datasets.binary_search_by(|d| d.as_str().cmp(label)).ok()
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    pub fn snippet(&self, id: usize) -> &SnippetRef {
        &self.snippets[id]
    }

    pub fn snippets(&self) -> &[SnippetRef] {
        &self.snippets
    }

    pub fn snippet_len(&self, id: usize) -> u32 {
        self.lengths[id]
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    pub fn skipped_empty(&self) -> usize {
        self.skipped_empty
    }

    /// Postings of an analyzed term; empty when the term is not indexed.
    pub fn postings(&self, term: &str) -> &[Posting] {
        match self.term_ids.get(term) {
            Some(&id) => {
                let id = id as usize;
                &self.postings[self.offsets[id]..self.offsets[id + 1]]
            }
            None => &[],
        }
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    /// Ids of indexed snippets with this document id and start offset.
    pub fn snippets_at(&self, doc_id: &str, start: u32) -> &[u32] {
        self.by_key
            .get(&(doc_id.to_string(), start))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// BM25 score of one indexed snippet for an analyzed query. Each query
    /// token occurrence contributes separately, in query order.
    pub fn bm25_score(&self, query_terms: &[String], candidate: usize) -> f64 {
        let len = self.lengths[candidate] as f64;
        let mut score = 0.0;
        for term in query_terms {
            let list = self.postings(term);
            if let Ok(pos) = list.binary_search_by_key(&(candidate as u32), |p| p.snippet) {
                let w = idf(self.len(), list.len());
                score += term_score(w, list[pos].tf as f64, len, self.avg_len, &self.params);
            }
        }
        score
    }

    /// Scores every indexed snippet sharing a term with the query, calling
    /// `visit(snippet_id, score)` once per such snippet in increasing id order.
    /// Accumulation follows query token order, matching [`Self::bm25_score`]
    /// bit for bit.
    pub fn score_all(&self, query_terms: &[String], scratch: &mut ScoreScratch, mut visit: impl FnMut(usize, f64)) {
        scratch.reset(self.len());
        let n = self.len();
        for term in query_terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let w = idf(n, list.len());
            for p in list {
                let id = p.snippet as usize;
                let len = self.lengths[id] as f64;
                if !scratch.seen[id] {
                    scratch.seen[id] = true;
                    scratch.touched.push(p.snippet);
                }
                scratch.acc[id] += term_score(w, p.tf as f64, len, self.avg_len, &self.params);
            }
        }
        scratch.touched.sort_unstable();
        for &id in &scratch.touched {
            visit(id as usize, scratch.acc[id as usize]);
        }
    }
}

/// Reusable per-thread accumulator for [`SnippetIndex::score_all`].
#[derive(Debug, Default)]
pub struct ScoreScratch {
    acc: Vec<f64>,
    seen: Vec<bool>,
    touched: Vec<u32>,
}

impl ScoreScratch {
    fn reset(&mut self, n: usize) {
        if self.acc.len() != n {
            self.acc = vec![0.0; n];
            self.seen = vec![false; n];
            self.touched.clear();
            return;
        }
        for &id in &self.touched {
            self.acc[id as usize] = 0.0;
            self.seen[id as usize] = false;
        }
        self.touched.clear();
    }
}

// ---------------------------------------------------------------------------
// Serialized form
//
//   magic      8 bytes  "MEMAIDX\0"
//   version    u32 LE   (currently 1)
//   length     u64 LE   payload byte count
//   checksum   32 bytes SHA-256 of the payload
//   payload:
//     k1 f64, b f64
//     dataset count u32, then each label as str
//     snippet count u32, then per snippet: doc_id str, start u32, width u32,
//       dataset u32, analyzed length u32
//     skipped_empty u64
//     term count u32, then per term (sorted): term str, df u32,
//       df x (snippet u32, tf u32)
//   str = u32 LE byte length + UTF-8 bytes; all integers and floats LE.

const MAGIC: &[u8; 8] = b"MEMAIDX\0";
pub const INDEX_FORMAT_VERSION: u32 = 1;

struct Enc(Vec<u8>);

impl Enc {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.buf.len() - self.pos < n {
            return Err("truncated payload".into());
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
}

impl SnippetIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut p = Enc(Vec::new());
        p.f64(self.params.k1);
        p.f64(self.params.b);
        p.u32(self.datasets.len() as u32);
        for d in &self.datasets {
            p.str(d);
        }
        p.u32(self.snippets.len() as u32);
        for (s, &len) in self.snippets.iter().zip(&self.lengths) {
            p.str(&s.doc_id);
            p.u32(s.start);
            p.u32(s.width);
            p.u32(s.dataset);
            p.u32(len);
        }
        p.u64(self.skipped_empty as u64);
        p.u32(self.terms.len() as u32);
        for (i, t) in self.terms.iter().enumerate() {
            p.str(t);
            let list = &self.postings[self.offsets[i]..self.offsets[i + 1]];
            p.u32(list.len() as u32);
            for post in list {
                p.u32(post.snippet);
                p.u32(post.tf);
            }
        }
        let payload = p.0;
        let mut out = Vec::with_capacity(payload.len() + 52);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&payload));
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::IndexFormat {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < 52 || &bytes[..8] != MAGIC {
            return Err(bad("not a snippet index (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != INDEX_FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let payload = &bytes[52..];
        if payload.len() != len {
            return Err(bad(format!("payload is {} bytes, header says {len}", payload.len())));
        }
        if Sha256::digest(payload).as_slice() != &bytes[20..52] {
            return Err(bad("checksum mismatch".into()));
        }
        Self::decode(payload).map_err(bad)
    }

    fn decode(payload: &[u8]) -> std::result::Result<Self, String> {
        let mut d = Dec { buf: payload, pos: 0 };
        let params = Bm25Params {
            k1: d.f64()?,
            b: d.f64()?,
        };
        let n_datasets = d.u32()? as usize;
        let datasets = (0..n_datasets)
            .map(|_| d.str())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let n_snippets = d.u32()? as usize;
        let mut snippets = Vec::with_capacity(n_snippets);
        let mut lengths = Vec::with_capacity(n_snippets);
        for _ in 0..n_snippets {
            let doc_id = d.str()?;
            let start = d.u32()?;
            let width = d.u32()?;
            let dataset = d.u32()?;
            if dataset as usize >= n_datasets {
                return Err(format!("snippet references dataset {dataset} of {n_datasets}"));
            }
            snippets.push(SnippetRef {
                doc_id,
                start,
                width,
                dataset,
            });
            lengths.push(d.u32()?);
        }
        let skipped_empty = d.u64()? as usize;
        let n_terms = d.u32()? as usize;
        let mut terms = Vec::with_capacity(n_terms);
        let mut offsets = vec![0];
        let mut postings = Vec::new();
        for _ in 0..n_terms {
            terms.push(d.str()?);
            let df = d.u32()? as usize;
            for _ in 0..df {
                let snippet = d.u32()?;
                if snippet as usize >= n_snippets {
                    return Err(format!("posting references snippet {snippet} of {n_snippets}"));
                }
                postings.push(Posting { snippet, tf: d.u32()? });
            }
            offsets.push(postings.len());
        }
        if d.pos != payload.len() {
            return Err("trailing bytes after payload".into());
        }
        Ok(Self::assemble(
            params,
            datasets,
            snippets,
            lengths,
            terms,
            offsets,
            postings,
            skipped_empty,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
