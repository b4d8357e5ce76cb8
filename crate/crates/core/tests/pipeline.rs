//! End-to-end pipeline runs on a toy-LM-scored synthetic corpus.

use std::path::{Path, PathBuf};

use memaudit::config::AuditConfig;
use memaudit::corpus::{snippetize, Snippet, Split};
use memaudit::density::{build_index, Bm25Params};
use memaudit::report::{emit_plot_data, run_pipeline, summary_text, write_outputs, Figure, Section};
use memaudit::scoring::write_scores;
use memaudit::toy_lm::synthetic::{make_synthetic_corpus, SyntheticSpec};
use memaudit::toy_lm::{training_corpus, NgramConfig, NgramModel};

struct Inputs {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn prepare(k1: f64, b: f64) -> Inputs {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let spec = SyntheticSpec::demo(2);
    let m = make_synthetic_corpus(&spec).unwrap();
    m.write(&root.join("manifest.jsonl")).unwrap();
    let model = NgramModel::train(
        NgramConfig {
            order: 3,
            delta: 0.1,
            vocab_size: spec.vocab_size,
        },
        training_corpus(&m),
    )
    .unwrap();
    write_scores(
        &root.join("scores.jsonl"),
        &model.score_all(&m.documents, "toy").unwrap(),
    )
    .unwrap();
    let snippets: Vec<Snippet> = m
        .documents
        .iter()
        .filter(|d| d.split == Split::Train)
        .flat_map(|d| snippetize(d, 50, 40).unwrap())
        .collect();
    let ids: Vec<String> = m.datasets.iter().map(|d| d.id.clone()).collect();
    build_index(&snippets, Bm25Params { k1, b }, &ids)
        .unwrap()
        .save(&root.join("snippets.idx"))
        .unwrap();
    Inputs { _dir: dir, root }
}

fn config(root: &Path) -> AuditConfig {
    let mut c = AuditConfig::default();
    c.inputs.manifest = Some(root.join("manifest.jsonl"));
    c.inputs.scores = Some(root.join("scores.jsonl"));
    c.inputs.index = Some(root.join("snippets.idx"));
    c.density.thresholds = vec![20.0, 30.0, 40.0];
    c
}

#[test]
fn complete_report_has_every_section() {
    let inputs = prepare(1.2, 0.75);
    let report = run_pipeline(&config(&inputs.root)).unwrap();
    assert!(report.complete(), "{:?}", report.gaps);
    assert!(report.metrics.is_some());
    assert_eq!(report.rct.as_ref().unwrap().len(), 4);
    let overlap = report.overlap.as_ref().unwrap();
    assert_eq!(overlap.datasets, ["code", "legal", "web"]);
    assert_eq!(overlap.threshold, 20.0);
    // three thresholds times three datasets
    assert_eq!(report.threshold_sweep.as_ref().unwrap().len(), 9);
    assert!(!report.correlations.as_ref().unwrap().is_empty());
    let ablation = report.ablation.as_ref().unwrap();
    assert_eq!(ablation.fit.points.len(), 3);
    assert_eq!(report.metadata.inputs.len(), 3);
    assert!(summary_text(&report).contains("[overlap] threshold 20"));
}

#[test]
fn sweep_counts_do_not_grow_with_threshold() {
    let inputs = prepare(1.2, 0.75);
    let report = run_pipeline(&config(&inputs.root)).unwrap();
    let sweep = report.threshold_sweep.unwrap();
    for ds in ["code", "legal", "web"] {
        let n: Vec<f64> = sweep.iter().filter(|e| e.dataset == ds).map(|e| e.neighbors).collect();
        assert!(n.windows(2).all(|w| w[0] >= w[1]), "{ds}: {n:?}");
    }
}

#[test]
fn plot_data_shapes() {
    let inputs = prepare(1.2, 0.75);
    let report = run_pipeline(&config(&inputs.root)).unwrap();
    let heat = emit_plot_data(&report, Figure::Heatmap).unwrap();
    assert_eq!(heat["values"].as_array().unwrap().len(), 3);
    assert!(heat["values"]
        .as_array()
        .unwrap()
        .iter()
        .all(|r| r.as_array().unwrap().len() == 3));
    let bars = emit_plot_data(&report, Figure::GroupedBars).unwrap();
    assert_eq!(bars["panels"].as_array().unwrap().len(), 4);
    let paired = emit_plot_data(&report, Figure::PairedBars).unwrap();
    assert_eq!(paired["bars"].as_array().unwrap().len(), 3);
    let scatter = emit_plot_data(&report, Figure::Scatter).unwrap();
    assert_eq!(scatter["points"].as_array().unwrap().len(), 3);
    assert_eq!(scatter["line"].as_array().unwrap().len(), 2);
}

#[test]
fn missing_index_becomes_a_gap() {
    let inputs = prepare(1.2, 0.75);
    let mut c = config(&inputs.root);
    c.inputs.index = None;
    let report = run_pipeline(&c).unwrap();
    assert!(!report.complete());
    let gapped: Vec<Section> = report.gaps.iter().map(|g| g.section).collect();
    assert_eq!(
        gapped,
        [
            Section::Overlap,
            Section::ThresholdSweep,
            Section::Correlations,
            Section::Ablation
        ]
    );
    assert!(report.gaps.iter().all(|g| g.reason.contains("index")));
    // score-only sections still ran
    assert!(report.metrics.is_some() && report.rct.is_some());
    assert!(emit_plot_data(&report, Figure::Heatmap).is_err());

    let dir = tempfile::tempdir().unwrap();
    let written = write_outputs(&report, dir.path()).unwrap();
    assert!(written.iter().all(|p| !p.ends_with("overlap_matrix.csv")));
}

#[test]
fn missing_thresholds_and_manifest_are_gaps() {
    let inputs = prepare(1.2, 0.75);
    let mut c = config(&inputs.root);
    c.density.thresholds.clear();
    let report = run_pipeline(&c).unwrap();
    assert!(report.gaps.iter().any(|g| g.reason.contains("threshold")));

    let mut c = config(&inputs.root);
    c.inputs.manifest = Some(inputs.root.join("nope.jsonl"));
    let report = run_pipeline(&c).unwrap();
    assert_eq!(report.gaps.len(), 6);
}

#[test]
fn index_parameter_mismatch_is_an_error() {
    let inputs = prepare(2.0, 0.5);
    assert!(run_pipeline(&config(&inputs.root)).is_err());
    let mut c = config(&inputs.root);
    c.density.k1 = 2.0;
    c.density.b = 0.5;
    assert!(run_pipeline(&c).unwrap().complete());
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let inputs = prepare(1.2, 0.75);
    let c = config(&inputs.root);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_outputs(&run_pipeline(&c).unwrap(), a.path()).unwrap();
    write_outputs(&run_pipeline(&c).unwrap(), b.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 15);
    for n in names {
        assert_eq!(
            std::fs::read(a.path().join(&n)).unwrap(),
            std::fs::read(b.path().join(&n)).unwrap(),
            "{n:?}"
        );
    }
}
