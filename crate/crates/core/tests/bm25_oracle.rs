//! Neighbor counts against a from-scratch BM25 over random small corpora.

use std::collections::HashMap;

use memaudit::corpus::Snippet;
use memaudit::density::{build_index, count_neighbors, Bm25Params};
use proptest::prelude::*;

fn brute_force(
    indexed: &[Snippet],
    query: &Snippet,
    labels: &[String],
    params: Bm25Params,
    threshold: f64,
) -> Vec<u64> {
    let docs: Vec<(&Snippet, Vec<String>)> = indexed
        .iter()
        .map(|s| (s, s.text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>()))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    let n = docs.len() as f64;
    let avg = docs.iter().map(|(_, t)| t.len()).sum::<usize>() as f64 / n;
    let df = |term: &str| docs.iter().filter(|(_, t)| t.iter().any(|x| x == term)).count() as f64;
    let mut counts = vec![0u64; labels.len()];
    for (s, terms) in &docs {
        if s.doc_id == query.doc_id && s.start == query.start {
            continue;
        }
        let mut tf: HashMap<&str, f64> = HashMap::new();
        for t in terms {
            *tf.entry(t).or_insert(0.0) += 1.0;
        }
        let len = terms.len() as f64;
        let mut score = 0.0;
        for q in query.text.split_whitespace().map(str::to_lowercase) {
            if let Some(&f) = tf.get(q.as_str()) {
                let d = df(&q);
                let idf = ((n - d + 0.5) / (d + 0.5) + 1.0).ln();
                score += idf * (f * (params.k1 + 1.0) / (f + params.k1 * (1.0 - params.b + params.b * len / avg)));
            }
        }
        if score > threshold {
            counts[labels.iter().position(|l| *l == s.dataset_id).unwrap()] += 1;
        }
    }
    counts
}

fn snippet(i: usize, dataset: usize, words: &[u8]) -> Snippet {
    Snippet {
        doc_id: format!("d{i}"),
        dataset_id: format!("s{dataset}"),
        start: 0,
        length: words.len(),
        text: words.iter().map(|w| format!("T{w}")).collect::<Vec<_>>().join(" "),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_match_brute_force(
        corpus in prop::collection::vec((0usize..3, prop::collection::vec(0u8..12, 0..15)), 1..40),
        k1 in 0.5f64..2.5,
        b in 0.0f64..1.0,
        threshold in 0.0f64..8.0,
    ) {
        let snippets: Vec<Snippet> = corpus.iter().enumerate().map(|(i, (d, w))| snippet(i, *d, w)).collect();
        let labels: Vec<String> = (0..3).map(|d| format!("s{d}")).collect();
        let params = Bm25Params { k1, b };
        let index = build_index(&snippets, params, &labels).unwrap();
        prop_assert_eq!(index.datasets(), &labels[..]);
        for q in &snippets {
            prop_assert_eq!(count_neighbors(&index, q, threshold), brute_force(&snippets, q, &labels, params, threshold));
        }
        // a query from outside the corpus excludes nothing
        let outside = Snippet { doc_id: "new".into(), ..snippets[0].clone() };
        prop_assert_eq!(count_neighbors(&index, &outside, threshold), brute_force(&snippets, &outside, &labels, params, threshold));
    }
}
