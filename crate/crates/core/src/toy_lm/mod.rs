//! A smoothed n-gram language model that trains on a manifest and emits
//! scoring records, so every analysis can run end to end without a neural
//! model.

pub mod synthetic;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, Document, Split};
use crate::error::{Error, Result};
use crate::scoring::ScoringRecord;

/// Padding symbol for positions before the start of a document.
pub const BOS: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgramConfig {
    /// n; contexts hold `order - 1` tokens.
    pub order: usize,
    /// Add-delta smoothing constant.
    pub delta: f64,
    pub vocab_size: u32,
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig {
            order: 3,
            delta: 0.1,
            vocab_size: 1000,
        }
    }
}

impl NgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "smoothing constant must be positive and finite, got {}",
                self.delta
            )));
        }
        if self.vocab_size == 0 || self.vocab_size == BOS {
            return Err(Error::InvalidArgument(format!(
                "invalid vocabulary size {}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
struct ContextCounts {
    total: u64,
    counts: HashMap<u32, u64>,
    /// Most frequent next token, smallest id among ties.
    mode: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    config: NgramConfig,
    contexts: HashMap<Box<[u32]>, ContextCounts>,
}

/// Training documents with their multiplicities: every train-split document,
/// repeated as often as its dataset's upweight.
pub fn training_corpus(manifest: &CorpusManifest) -> Vec<(&Document, u32)> {
    let upweights: HashMap<&str, u32> = manifest.datasets.iter().map(|d| (d.id.as_str(), d.upweight)).collect();
    manifest
        .documents
        .iter()
        .filter(|d| d.split == Split::Train)
        .map(|d| (d, upweights.get(d.dataset_id.as_str()).copied().unwrap_or(1)))
        .filter(|(_, m)| *m > 0)
        .collect()
}

fn context_at(tokens: &[u32], i: usize, width: usize, out: &mut Vec<u32>) {
    out.clear();
    for k in (1..=width).rev() {
        out.push(if i >= k { tokens[i - k] } else { BOS });
    }
}

impl NgramModel {
    /// Counts every n-gram of every document `multiplicity` times. Counts are
    /// integers, so the result does not depend on document order.
    pub fn train<'a>(config: NgramConfig, corpus: impl IntoIterator<Item = (&'a Document, u32)>) -> Result<Self> {
        config.validate()?;
        let width = config.order - 1;
        let mut contexts: HashMap<Box<[u32]>, ContextCounts> = HashMap::new();
        let mut ctx = Vec::with_capacity(width);
        let mut seen_any = false;
        for (doc, mult) in corpus {
            if mult == 0 || doc.tokens.is_empty() {
                continue;
            }
            seen_any = true;
            if let Some(&t) = doc.tokens.iter().find(|&&t| t >= config.vocab_size) {
                return Err(Error::InvalidArgument(format!(
                    "document {:?} has token {t} outside the vocabulary of {}",
                    doc.id, config.vocab_size
                )));
            }
            for i in 0..doc.tokens.len() {
                context_at(&doc.tokens, i, width, &mut ctx);
                let entry = match contexts.get_mut(ctx.as_slice()) {
                    Some(e) => e,
                    None => contexts.entry(ctx.clone().into_boxed_slice()).or_default(),
                };
                entry.total += mult as u64;
                *entry.counts.entry(doc.tokens[i]).or_insert(0) += mult as u64;
            }
        }
        if !seen_any {
            return Err(Error::Empty("training corpus has no tokens"));
        }
        let mut model = NgramModel { config, contexts };
        model.refresh_modes();
        Ok(model)
    }

    fn refresh_modes(&mut self) {
        for c in self.contexts.values_mut() {
            c.mode = c
                .counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(&t, _)| t)
                .unwrap_or(0);
        }
    }

    pub fn config(&self) -> &NgramConfig {
        &self.config
    }

    pub fn context_count(&self) -> usize {
        self.contexts.len()
    }

    /// `P(token | context)` where `context` holds the `order - 1` preceding
    /// tokens (padded with [`BOS`]).
    pub fn prob(&self, context: &[u32], token: u32) -> f64 {
        let v = self.config.vocab_size as f64;
        let d = self.config.delta;
        match self.contexts.get(context) {
            Some(c) => {
                let count = c.counts.get(&token).copied().unwrap_or(0) as f64;
                (count + d) / (c.total as f64 + d * v)
            }
            None => 1.0 / v,
        }
    }

    /// Most probable next token; smallest id among ties.
    pub fn argmax(&self, context: &[u32]) -> u32 {
        self.contexts.get(context).map(|c| c.mode).unwrap_or(0)
    }

    /// Per-token NLL (nats) and argmax hits for tokens `1..T`.
    pub fn score(&self, doc: &Document, model_id: &str) -> Result<ScoringRecord> {
        if let Some(&t) = doc.tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "document {:?} has token {t} outside the vocabulary of {}",
                doc.id, self.config.vocab_size
            )));
        }
        let width = self.config.order - 1;
        let n = doc.tokens.len().saturating_sub(1);
        let mut nll = Vec::with_capacity(n);
        let mut hits = Vec::with_capacity(n);
        let mut ctx = Vec::with_capacity(width);
        for i in 1..doc.tokens.len() {
            context_at(&doc.tokens, i, width, &mut ctx);
            let token = doc.tokens[i];
            nll.push(-self.prob(&ctx, token).ln());
            hits.push(self.argmax(&ctx) == token);
        }
        Ok(ScoringRecord {
            doc_id: doc.id.clone(),
            model_id: model_id.to_string(),
            nll,
            argmax_hit: hits,
        })
    }

    /// Scores documents in parallel, returning records in input order.
    pub fn score_all(&self, docs: &[Document], model_id: &str) -> Result<Vec<ScoringRecord>> {
        docs.par_iter().map(|d| self.score(d, model_id)).collect()
    }
}

// Serialized form: contexts and counts in sorted order so equal models give
// identical files.

/// A context and its `(token, count)` pairs.
type ContextEntry = (Vec<u32>, Vec<(u32, u64)>);

#[derive(Serialize, Deserialize)]
struct ModelFile {
    config: NgramConfig,
    /// `(context, [(token, count)])`, sorted.
    contexts: Vec<ContextEntry>,
}

impl NgramModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut contexts: Vec<ContextEntry> = self
            .contexts
            .iter()
            .map(|(k, c)| {
                let mut counts: Vec<(u32, u64)> = c.counts.iter().map(|(&t, &n)| (t, n)).collect();
                counts.sort_unstable();
                (k.to_vec(), counts)
            })
            .collect();
        contexts.sort_unstable();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(
            &mut out,
            &ModelFile {
                config: self.config,
                contexts,
            },
        )?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let data: ModelFile = serde_json::from_reader(BufReader::new(file))?;
        data.config.validate()?;
        let mut contexts = HashMap::with_capacity(data.contexts.len());
        for (ctx, counts) in data.contexts {
            if ctx.len() != data.config.order - 1 {
                return Err(Error::Config(format!(
                    "model context of width {} for order {}",
                    ctx.len(),
                    data.config.order
                )));
            }
            let total = counts.iter().map(|(_, n)| n).sum();
            contexts.insert(
                ctx.into_boxed_slice(),
                ContextCounts {
                    total,
                    counts: counts.into_iter().collect(),
                    mode: 0,
                },
            );
        }
        let mut model = NgramModel {
            config: data.config,
            contexts,
        };
        model.refresh_modes();
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, tokens: &[u32]) -> Document {
        Document {
            id: id.into(),
            dataset_id: "a".into(),
            split: Split::Train,
            tokens: tokens.to_vec(),
            token_texts: None,
        }
    }

    fn cfg(order: usize, delta: f64, v: u32) -> NgramConfig {
        NgramConfig {
            order,
            delta,
            vocab_size: v,
        }
    }

    #[test]
    fn bigram_hand_count() {
        // "a b a b" with a=0, b=1: after a, b was seen twice
        let d = doc("x", &[0, 1, 0, 1]);
        let delta = 0.1;
        let m = NgramModel::train(cfg(2, delta, 5), [(&d, 1)]).unwrap();
        let expected = (2.0 + delta) / (2.0 + delta * 5.0);
        assert!((m.prob(&[0], 1) - expected).abs() < 1e-15);
        assert_eq!(m.argmax(&[0]), 1);
        assert_eq!(m.argmax(&[BOS]), 0);
    }

    #[test]
    fn record_has_one_entry_per_predicted_token() {
        let d = doc("x", &[3, 1, 4, 1, 5]);
        let m = NgramModel::train(cfg(3, 0.1, 10), [(&d, 1)]).unwrap();
        let r = m.score(&d, "toy").unwrap();
        assert_eq!(r.nll.len(), 4);
        assert_eq!(r.argmax_hit, vec![true; 4]);
        assert!(m.score(&doc("y", &[7]), "toy").unwrap().is_empty());
    }

    #[test]
    fn memorized_doc_beats_shuffled_holdout() {
        let d = doc("x", &(0..40).map(|i| (i * 7 % 31) as u32).collect::<Vec<_>>());
        let mut shuffled = d.tokens.clone();
        shuffled.reverse();
        let held = doc("y", &shuffled);
        let m = NgramModel::train(cfg(3, 0.1, 50), [(&d, 1)]).unwrap();
        let mean = |r: ScoringRecord| r.nll.iter().sum::<f64>() / r.nll.len() as f64;
        assert!(mean(m.score(&d, "t").unwrap()) < mean(m.score(&held, "t").unwrap()));
    }

    #[test]
    fn huge_delta_is_uniform() {
        let d = doc("x", &[1, 2, 3, 1, 2, 3]);
        let m = NgramModel::train(cfg(3, 1e12, 64), [(&d, 1)]).unwrap();
        for v in m.score(&d, "t").unwrap().nll {
            assert!((v - 64f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_and_out_of_vocab_rejected() {
        assert!(matches!(NgramModel::train(cfg(3, 0.1, 5), []), Err(Error::Empty(_))));
        let d = doc("x", &[9]);
        assert!(NgramModel::train(cfg(3, 0.1, 5), [(&d, 1)]).is_err());
        assert!(NgramModel::train(cfg(3, 0.0, 5), []).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let d = doc("x", &[1, 2, 3, 1, 2, 4, 4]);
        let m = NgramModel::train(cfg(3, 0.25, 8), [(&d, 3)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(NgramModel::load(&path).unwrap(), m);
        let first = std::fs::read(&path).unwrap();
        m.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    fn mean_nll(m: &NgramModel, d: &Document) -> f64 {
        let r = m.score(d, "t").unwrap();
        crate::stats::mean(&r.nll).unwrap()
    }

    proptest! {
        #[test]
        fn normalized_for_random_contexts(
            docs in prop::collection::vec(prop::collection::vec(0u32..12, 1..30), 1..6),
            ctx in prop::collection::vec(prop_oneof![0u32..12, Just(BOS)], 2),
            delta in 0.01f64..5.0,
        ) {
            let docs: Vec<Document> = docs.iter().enumerate().map(|(i, t)| doc(&i.to_string(), t)).collect();
            let m = NgramModel::train(cfg(3, delta, 12), docs.iter().map(|d| (d, 1))).unwrap();
            let total: f64 = (0..12).map(|t| m.prob(&ctx, t)).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn order_independent(
            docs in prop::collection::vec(prop::collection::vec(0u32..9, 1..20), 2..6),
            mults in prop::collection::vec(1u32..4, 6),
        ) {
            let docs: Vec<Document> = docs.iter().enumerate().map(|(i, t)| doc(&i.to_string(), t)).collect();
            let fwd = NgramModel::train(cfg(3, 0.1, 9), docs.iter().zip(&mults).map(|(d, &m)| (d, m))).unwrap();
            let rev = NgramModel::train(cfg(3, 0.1, 9), docs.iter().zip(&mults).rev().map(|(d, &m)| (d, m))).unwrap();
            prop_assert_eq!(fwd, rev);
        }

        #[test]
        fn more_copies_never_raise_nll(
            target in prop::collection::vec(0u32..20, 2..30),
            // the other documents use disjoint tokens, so no context-token
            // pair of the target gains competing mass from them
            others in prop::collection::vec(prop::collection::vec(20u32..40, 1..30), 0..4),
        ) {
            let t = doc("t", &target);
            let others: Vec<Document> = others.iter().enumerate().map(|(i, o)| doc(&i.to_string(), o)).collect();
            let mut prev = f64::INFINITY;
            for mult in [1u32, 2, 4, 8, 50] {
                let corpus = std::iter::once((&t, mult)).chain(others.iter().map(|d| (d, 1)));
                let m = NgramModel::train(cfg(3, 0.1, 40), corpus).unwrap();
                let v = mean_nll(&m, &t);
                prop_assert!(v <= prev + 1e-12, "mult {} gave {} after {}", mult, v, prev);
                prev = v;
            }
        }
    }

    #[test]
    fn uniform_scaling_converges_as_delta_vanishes() {
        let d = doc("x", &[1, 2, 1, 3, 1, 2]);
        let once = NgramModel::train(cfg(2, 1e-12, 4), [(&d, 1)]).unwrap();
        let twice = NgramModel::train(cfg(2, 1e-12, 4), [(&d, 2)]).unwrap();
        for t in 0..4 {
            assert!((once.prob(&[1], t) - twice.prob(&[1], t)).abs() < 1e-9);
        }
    }
}
