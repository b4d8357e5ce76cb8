//! Scoring files as written by the Python extraction adapter: `json.dumps`
//! default separators, `repr` floats, ints for flags, one record per line.

use std::io::Cursor;
use std::path::Path;

use memaudit::corpus::read_manifest;
use memaudit::metrics::{compute, Metric, MetricParams};
use memaudit::scoring::{read_scores, write_scores_to};

const MANIFEST: &str = r#"{"datasets": [{"id": "pile_cc", "name": "Pile-CC", "upweight": 1}]}
{"id": "doc-0", "dataset": "pile_cc", "split": "train", "tokens": [510, 3158, 8516, 310, 15], "token_texts": ["The", " quick", " brown", " fox", "."]}
{"id": "doc-1", "dataset": "pile_cc", "split": "test", "tokens": [42, 7]}
"#;

// Python writes float('1e-05') as 1e-05 and 0.0 as 0.0; nll may be 0 exactly
// for a fully confident model.
const SCORES: &str = r#"{"doc_id": "doc-0", "model_id": "EleutherAI/pythia-70m", "nll": [7.844209671020508, 1e-05, 0.0, 2.5649493574615367], "argmax_hit": [0, 1, 1, 0]}
{"doc_id": "doc-1", "model_id": "EleutherAI/pythia-70m", "nll": [3], "argmax_hit": [1]}
"#;

#[test]
fn python_formatted_records_validate() {
    let manifest = read_manifest(Cursor::new(MANIFEST), Path::new("manifest.jsonl")).unwrap();
    let scores = read_scores(Cursor::new(SCORES), Path::new("scores.jsonl"), Some(&manifest)).unwrap();
    assert_eq!(scores.len(), 2);
    let r = &scores["doc-0"];
    assert_eq!(r.nll, [7.844209671020508, 1e-05, 0.0, 2.5649493574615367]);
    assert_eq!(r.argmax_hit, [false, true, true, false]);
    assert_eq!(scores["doc-1"].nll, [3.0]);

    let loss = compute(r, Metric::Loss, &MetricParams::default()).unwrap().unwrap();
    let expected = (7.844209671020508 + 1e-05 + 0.0 + 2.5649493574615367) / 4.0;
    assert!((loss.value - expected).abs() < 1e-15);
    // too short for a 40 + 10 window
    assert!(compute(r, Metric::TokenAccuracy, &MetricParams::default())
        .unwrap()
        .is_none());
}

#[test]
fn rewriting_preserves_every_value() {
    let scores = read_scores(Cursor::new(SCORES), Path::new("scores.jsonl"), None).unwrap();
    let mut buf = Vec::new();
    write_scores_to(&mut buf, scores.values()).unwrap();
    let again = read_scores(Cursor::new(buf), Path::new("rewritten.jsonl"), None).unwrap();
    assert_eq!(scores, again);
}

#[test]
fn extractor_mistakes_are_rejected() {
    let manifest = read_manifest(Cursor::new(MANIFEST), Path::new("manifest.jsonl")).unwrap();
    let cases = [
        // logprob written instead of NLL
        r#"{"doc_id": "doc-1", "model_id": "m", "nll": [-3.0], "argmax_hit": [1]}"#,
        // one entry per token instead of per predicted position
        r#"{"doc_id": "doc-1", "model_id": "m", "nll": [0.1, 3.0], "argmax_hit": [0, 1]}"#,
        // booleans spelled as JSON true/false are outside the format
        r#"{"doc_id": "doc-1", "model_id": "m", "nll": [3.0], "argmax_hit": [true]}"#,
        // NaN as Python's json module writes it
        r#"{"doc_id": "doc-1", "model_id": "m", "nll": [NaN], "argmax_hit": [1]}"#,
        r#"{"doc_id": "doc-9", "model_id": "m", "nll": [3.0], "argmax_hit": [1]}"#,
    ];
    for line in cases {
        assert!(
            read_scores(Cursor::new(line), Path::new("s.jsonl"), Some(&manifest)).is_err(),
            "accepted {line}"
        );
    }
}
