//! Seeded synthetic corpora with controllable overlap and duplication.
//!
//! Each dataset owns a pool of template sentences. A document is a stream of
//! segments: with the document's template rate a segment is a template
//! (drawn from the dataset's own pool or, with the configured fractions, from
//! other datasets' pools), otherwise a single uniformly random token.
//! Templates shared across documents create BM25 neighbors and learnable
//! n-grams; borrowing creates cross-dataset overlap. Tokens are words
//! `w<id>`, so whitespace tokenization and model tokenization coincide.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, DatasetComponent, Document, Split};
use crate::error::{Error, Result};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub id: String,
    pub name: String,
    /// Training multiplicity of the dataset's train-split documents.
    pub upweight: u32,
    pub n_docs: usize,
    /// Inclusive document length range in tokens.
    pub doc_len: (usize, usize),
    /// Each document draws its template rate uniformly from this range.
    pub template_rate: (f64, f64),
    pub n_templates: usize,
    pub template_len: usize,
    /// `(dataset id, fraction)`: share of this dataset's templates drawn from
    /// another dataset's pool.
    #[serde(default)]
    pub borrow: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub vocab_size: u32,
    /// Share of each dataset's documents assigned to the test split.
    pub test_fraction: f64,
    pub seed: u64,
    pub datasets: Vec<SyntheticDataset>,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.vocab_size == 0 || self.datasets.is_empty() {
            return bad("vocabulary and dataset list must be nonempty".into());
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return bad(format!("test fraction {} outside [0, 1]", self.test_fraction));
        }
        let ids: std::collections::HashSet<&str> = self.datasets.iter().map(|d| d.id.as_str()).collect();
        if ids.len() != self.datasets.len() {
            return bad("dataset ids must be unique".into());
        }
        for d in &self.datasets {
            let (lo, hi) = d.template_rate;
            if d.n_docs == 0 || d.doc_len.0 < 1 || d.doc_len.0 > d.doc_len.1 {
                return bad(format!(
                    "dataset {:?}: document count and length range must be positive",
                    d.id
                ));
            }
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return bad(format!("dataset {:?}: template rate range {lo}..{hi} invalid", d.id));
            }
            if d.n_templates == 0 || d.template_len == 0 {
                return bad(format!("dataset {:?}: needs at least one nonempty template", d.id));
            }
            let borrowed: f64 = d.borrow.iter().map(|(_, f)| f).sum();
            if d.borrow.iter().any(|(s, f)| !ids.contains(s.as_str()) || *f < 0.0) || borrowed > 1.0 {
                return bad(format!("dataset {:?}: invalid borrow list", d.id));
            }
        }
        Ok(())
    }
}

pub fn token_text(id: u32) -> String {
    format!("w{id}")
}

/// Builds the corpus. The same spec always yields the same manifest.
pub fn make_synthetic_corpus(spec: &SyntheticSpec) -> Result<CorpusManifest> {
    spec.validate()?;
    let v = spec.vocab_size;
    let pools: BTreeMap<&str, Vec<Vec<u32>>> = spec
        .datasets
        .iter()
        .map(|d| {
            let mut rng = rng_for(spec.seed, &["templates", &d.id]);
            let pool = (0..d.n_templates)
                .map(|_| (0..d.template_len).map(|_| rng.random_range(0..v)).collect())
                .collect();
            (d.id.as_str(), pool)
        })
        .collect();

    let mut documents = Vec::new();
    for d in &spec.datasets {
        let mut split_rng = rng_for(spec.seed, &["split", &d.id]);
        let mut order: Vec<usize> = (0..d.n_docs).collect();
        order.shuffle(&mut split_rng);
        let n_test = (spec.test_fraction * d.n_docs as f64).round() as usize;
        let mut splits = vec![Split::Train; d.n_docs];
        for &i in &order[..n_test] {
            splits[i] = Split::Test;
        }
        for (i, split) in splits.into_iter().enumerate() {
            let mut rng = rng_for(spec.seed, &["doc", &d.id, &i.to_string()]);
            let rate = if d.template_rate.0 == d.template_rate.1 {
                d.template_rate.0
            } else {
                rng.random_range(d.template_rate.0..=d.template_rate.1)
            };
            let len = rng.random_range(d.doc_len.0..=d.doc_len.1);
            let mut tokens = Vec::with_capacity(len + d.template_len);
            while tokens.len() < len {
                if rng.random::<f64>() < rate {
                    let mut source = d.id.as_str();
                    let mut u = rng.random::<f64>();
                    for (s, f) in &d.borrow {
                        if u < *f {
                            source = s;
                            break;
                        }
                        u -= f;
                    }
                    let pool = &pools[source];
                    tokens.extend_from_slice(&pool[rng.random_range(0..pool.len())]);
                } else {
                    tokens.push(rng.random_range(0..v));
                }
            }
            tokens.truncate(len);
            documents.push(Document {
                id: format!("{}-{i:05}", d.id),
                dataset_id: d.id.clone(),
                split,
                token_texts: Some(tokens.iter().map(|&t| token_text(t)).collect()),
                tokens,
            });
        }
    }
    Ok(CorpusManifest {
        datasets: spec
            .datasets
            .iter()
            .map(|d| DatasetComponent {
                id: d.id.clone(),
                name: d.name.clone(),
                upweight: d.upweight,
            })
            .collect(),
        documents,
    })
}

/// Space-joined token texts of a synthetic document.
pub fn raw_text(doc: &Document) -> String {
    match &doc.token_texts {
        Some(t) => t.join(" "),
        None => doc.tokens.iter().map(|&t| token_text(t)).collect::<Vec<_>>().join(" "),
    }
}

impl SyntheticSpec {
    /// `n` datasets whose template rates rise steadily, so denser datasets
    /// are both more self-similar and easier to predict. Neighbouring
    /// datasets borrow a quarter of their templates from each side; the
    /// last dataset (for `n > 2`) is self-heavy: its pool is used at a high
    /// rate, nobody borrows from it, and it borrows only a little.
    pub fn density_gradient(n: usize, seed: u64) -> Self {
        let datasets = (0..n)
            .map(|i| {
                let frac = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                let self_heavy = i + 1 == n && n > 2;
                let rate = 0.02 + 0.3 * frac;
                let borrow = if self_heavy {
                    vec![(format!("ds{:02}", i - 1), 0.1)]
                } else {
                    // a quarter from each ordinary neighbour; nothing
                    // borrows from the self-heavy pool
                    let last_ordinary = if n > 2 { n - 2 } else { n - 1 };
                    let mut b = Vec::new();
                    if i > 0 {
                        b.push((format!("ds{:02}", i - 1), 0.25));
                    }
                    if i < last_ordinary {
                        b.push((format!("ds{:02}", i + 1), 0.25));
                    }
                    b
                };
                SyntheticDataset {
                    id: format!("ds{i:02}"),
                    name: if self_heavy {
                        format!("SelfHeavy{i:02}")
                    } else {
                        format!("Dataset{i:02}")
                    },
                    upweight: 1,
                    n_docs: 60,
                    doc_len: (100, 140),
                    template_rate: if self_heavy {
                        (0.45, 0.55)
                    } else {
                        (rate * 0.8, rate * 1.2)
                    },
                    n_templates: if self_heavy { 10 } else { 20 },
                    template_len: 8,
                    borrow,
                }
            })
            .collect();
        SyntheticSpec {
            vocab_size: 4000,
            test_fraction: 0.5,
            seed,
            datasets,
        }
    }

    /// A small mixed corpus for demonstrations: three datasets with
    /// upweights 1, 2 and 3, one borrowing from another.
    pub fn demo(seed: u64) -> Self {
        let ds = |id: &str, name: &str, upweight, rate: f64, borrow: Vec<(String, f64)>| SyntheticDataset {
            id: id.into(),
            name: name.into(),
            upweight,
            n_docs: 40,
            doc_len: (60, 120),
            template_rate: (rate * 0.5, rate * 1.5),
            n_templates: 15,
            template_len: 6,
            borrow,
        };
        SyntheticSpec {
            vocab_size: 2000,
            test_fraction: 0.5,
            seed,
            datasets: vec![
                ds("web", "Web", 1, 0.1, vec![]),
                ds("code", "Code", 2, 0.3, vec![]),
                ds("legal", "Legal", 3, 0.2, vec![("web".into(), 0.4)]),
            ],
        }
    }
}
