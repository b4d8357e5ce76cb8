//! Thresholded neighbor counting and the dataset-overlap matrix.

use std::collections::BTreeMap;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::index::{analyze, ScoreScratch, SnippetIndex};
use crate::corpus::{snippetize, CorpusManifest, Snippet, Split};
use crate::error::{Error, Result};
use crate::rng::rng_for;
use crate::stats::CompensatedSum;

/// Per-dataset counts of indexed snippets scoring strictly above
/// `threshold` against `query`, in [`SnippetIndex::datasets`] order. Indexed
/// copies of the query itself (same document and start) are not counted.
pub fn count_neighbors(index: &SnippetIndex, query: &Snippet, threshold: f64) -> Vec<u64> {
    let mut scratch = ScoreScratch::default();
    neighbor_counts(index, query, &[threshold], &mut scratch)
        .pop()
        .unwrap_or_default()
}

/// [`count_neighbors`] for several thresholds with one scoring pass; the
/// result is indexed `[threshold][dataset]`.
pub fn neighbor_counts(
    index: &SnippetIndex,
    query: &Snippet,
    thresholds: &[f64],
    scratch: &mut ScoreScratch,
) -> Vec<Vec<u64>> {
    let terms: Vec<String> = analyze(&query.text).collect();
    let own = index.snippets_at(&query.doc_id, query.start as u32);
    let mut counts = vec![vec![0u64; index.datasets().len()]; thresholds.len()];
    index.score_all(&terms, scratch, |id, score| {
        if own.contains(&(id as u32)) {
            return;
        }
        let ds = index.snippet(id).dataset as usize;
        for (row, &t) in counts.iter_mut().zip(thresholds) {
            if score > t {
                row[ds] += 1;
            }
        }
    });
    counts
}

/// How query snippets are drawn from each dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    /// Maximum number of query snippets per dataset.
    pub cap: usize,
    pub seed: u64,
    /// Only documents of this split supply queries; `None` means all.
    pub split: Option<Split>,
    pub snippet_len: usize,
    pub stride: usize,
}

impl Default for QuerySpec {
    fn default() -> Self {
        QuerySpec {
            cap: crate::corpus::DEFAULT_DOC_CAP,
            seed: 0,
            split: Some(Split::Train),
            snippet_len: crate::corpus::DEFAULT_SNIPPET_LEN,
            stride: crate::corpus::DEFAULT_SNIPPET_STRIDE,
        }
    }
}

/// Query snippets of one dataset: all windows of its documents in the
/// configured split, uniformly subsampled to `cap`, sorted by (document,
/// start).
pub fn sample_queries(manifest: &CorpusManifest, dataset_id: &str, spec: &QuerySpec) -> Result<Vec<Snippet>> {
    if spec.cap == 0 {
        return Err(Error::InvalidArgument("query cap must be positive".into()));
    }
    if manifest.dataset(dataset_id).is_none() {
        return Err(Error::UnknownDataset(dataset_id.to_string()));
    }
    let mut docs: Vec<_> = manifest
        .documents
        .iter()
        .filter(|d| d.dataset_id == dataset_id && spec.split.is_none_or(|s| d.split == s))
        .collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut pool = Vec::new();
    for doc in docs {
        pool.extend(snippetize(doc, spec.snippet_len, spec.stride)?);
    }
    if pool.len() <= spec.cap {
        return Ok(pool);
    }
    let mut rng = rng_for(spec.seed, &["queries", dataset_id]);
    let mut picked = index::sample(&mut rng, pool.len(), spec.cap).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| pool[i].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCounts {
    pub doc_id: String,
    pub dataset: String,
    pub start: usize,
    pub length: usize,
    /// `[threshold][search dataset]`
    pub counts: Vec<Vec<u64>>,
}

/// Neighbor counts of every sampled query snippet at several thresholds; the
/// source of overlap matrices and document-level densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRun {
    pub datasets: Vec<String>,
    pub thresholds: Vec<f64>,
    pub queries: Vec<QueryCounts>,
}

pub fn density_run(
    index: &SnippetIndex,
    manifest: &CorpusManifest,
    spec: &QuerySpec,
    thresholds: &[f64],
) -> Result<DensityRun> {
    if thresholds.is_empty() {
        return Err(Error::InvalidArgument("at least one threshold is required".into()));
    }
    if let Some(t) = thresholds.iter().find(|t| t.is_nan()) {
        return Err(Error::InvalidArgument(format!("invalid threshold {t}")));
    }
    for d in &manifest.datasets {
        if index.dataset_index(&d.id).is_none() {
            return Err(Error::InvalidArgument(format!(
                "dataset {:?} is not known to the index; rebuild it with the manifest's datasets",
                d.id
            )));
        }
    }
    let mut ids: Vec<&str> = manifest.datasets.iter().map(|d| d.id.as_str()).collect();
    ids.sort_unstable();
    let mut queries = Vec::new();
    for id in ids {
        queries.extend(sample_queries(manifest, id, spec)?);
    }
    let queries = queries
        .par_iter()
        .map_init(ScoreScratch::default, |scratch, q| QueryCounts {
            doc_id: q.doc_id.clone(),
            dataset: q.dataset_id.clone(),
            start: q.start,
            length: q.length,
            counts: neighbor_counts(index, q, thresholds, scratch),
        })
        .collect();
    Ok(DensityRun {
        datasets: index.datasets().to_vec(),
        thresholds: thresholds.to_vec(),
        queries,
    })
}

impl DensityRun {
    pub fn threshold_index(&self, threshold: f64) -> Option<usize> {
        self.thresholds.iter().position(|&t| t == threshold)
    }

    /// Overlap matrix at the `t`-th threshold.
    pub fn matrix(&self, t: usize) -> NeighborhoodMatrix {
        let k = self.datasets.len();
        let mut totals = vec![vec![0u64; k]; k];
        let mut basis = vec![0usize; k];
        let pos: BTreeMap<&str, usize> = self.datasets.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
        for q in &self.queries {
            let i = pos[q.dataset.as_str()];
            basis[i] += 1;
            for (acc, &c) in totals[i].iter_mut().zip(&q.counts[t]) {
                *acc += c;
            }
        }
        let n = totals
            .iter()
            .zip(&basis)
            .map(|(row, &b)| {
                row.iter()
                    .map(|&c| if b == 0 { 0.0 } else { c as f64 / b as f64 })
                    .collect()
            })
            .collect();
        let empty_rows = self
            .datasets
            .iter()
            .zip(&basis)
            .filter(|(_, &b)| b == 0)
            .map(|(d, _)| d.clone())
            .collect();
        NeighborhoodMatrix {
            datasets: self.datasets.clone(),
            threshold: self.thresholds[t],
            counts_basis: basis,
            n,
            empty_rows,
        }
    }

    /// Mean total neighbor count per document over its query snippets at the
    /// `t`-th threshold, keyed by document id.
    pub fn document_density(&self, t: usize) -> BTreeMap<String, DocumentDensity> {
        let mut out: BTreeMap<String, (String, u64, usize)> = BTreeMap::new();
        for q in &self.queries {
            let e = out.entry(q.doc_id.clone()).or_insert_with(|| (q.dataset.clone(), 0, 0));
            e.1 += q.counts[t].iter().sum::<u64>();
            e.2 += 1;
        }
        out.into_iter()
            .map(|(doc, (dataset, total, n))| {
                (
                    doc,
                    DocumentDensity {
                        dataset,
                        snippets: n,
                        neighbors: total as f64 / n as f64,
                    },
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentDensity {
    pub dataset: String,
    pub snippets: usize,
    /// Mean neighbors per query snippet of the document.
    pub neighbors: f64,
}

/// Entry `n[i][j]`: mean number of neighbors that a query snippet of dataset
/// `i` finds among dataset `j`'s indexed snippets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodMatrix {
    pub datasets: Vec<String>,
    pub threshold: f64,
    pub counts_basis: Vec<usize>,
    pub n: Vec<Vec<f64>>,
    /// Datasets that supplied no query snippets; their rows are zero.
    pub empty_rows: Vec<String>,
}

/// Overlap matrix at a single threshold.
pub fn overlap_matrix(
    index: &SnippetIndex,
    manifest: &CorpusManifest,
    spec: &QuerySpec,
    threshold: f64,
) -> Result<NeighborhoodMatrix> {
    Ok(density_run(index, manifest, spec, &[threshold])?.matrix(0))
}

impl NeighborhoodMatrix {
    pub fn position(&self, dataset: &str) -> Option<usize> {
        self.datasets.iter().position(|d| d == dataset)
    }

    /// Total neighbors of the average snippet of dataset `i` (the row sum).
    pub fn row_total(&self, i: usize) -> f64 {
        let mut acc = CompensatedSum::new();
        acc.extend(self.n[i].iter().copied());
        acc.total()
    }

    pub fn self_neighbors(&self, i: usize) -> f64 {
        self.n[i][i]
    }

    /// CSV with a header of search datasets and one row per source dataset.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("source");
        for d in &self.datasets {
            out.push(',');
            out.push_str(&crate::rct::csv_field(d));
        }
        out.push('\n');
        for (d, row) in self.datasets.iter().zip(&self.n) {
            out.push_str(&crate::rct::csv_field(d));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}
