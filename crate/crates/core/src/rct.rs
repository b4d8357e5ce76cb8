//! Train/test randomized comparison of upweighting.
//!
//! Documents randomly assigned to the training split received their
//! dataset's upweight; test documents received none. Regressing a per-document
//! memorization metric on the 0/1 training indicator, separately for each
//! dataset, gives the test-split mean as the intercept and the train-minus-test
//! difference as the treatment effect.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{sample_documents, CorpusManifest, Split};
use crate::error::Result;
use crate::metrics::{self, Metric, MetricParams, MetricRow};
use crate::scoring::ScoreSet;
use crate::stats::{self, RegressionResult};

/// Interference between training documents is not modelled; the effect of a
/// single document on the model is assumed small enough for the comparison to
/// be read causally.
pub const SUTVA_CAVEAT: &str = "Training documents can influence how other documents are memorized, \
so the no-interference assumption holds only approximately; effects are estimated under that approximation.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RctRow {
    pub dataset_id: String,
    pub dataset_name: String,
    pub metric: Metric,
    pub upweight: u32,
    pub regression: RegressionResult,
    pub train_mean: f64,
    pub test_mean: f64,
    pub n_train: usize,
    pub n_test: usize,
}

impl RctRow {
    /// Zero-width coefficient intervals (no residual variance).
    pub fn degenerate(&self) -> bool {
        self.regression.ci_beta1.width() == 0.0 || self.regression.ci_alpha.width() == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedDataset {
    pub dataset_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RctOutcome {
    pub rows: Vec<RctRow>,
    pub skipped: Vec<SkippedDataset>,
    /// Sampled documents with no scoring record.
    pub missing_scores: Vec<String>,
    /// Sampled documents too short for the metric.
    pub not_evaluable: Vec<String>,
    /// The per-document values behind every row.
    pub values: Vec<MetricRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RctParams {
    pub metric: Metric,
    pub metric_params: MetricParams,
    pub cap: usize,
    pub seed: u64,
}

struct DatasetRun {
    row: Option<RctRow>,
    skipped: Option<SkippedDataset>,
    missing: Vec<String>,
    not_evaluable: Vec<String>,
    values: Vec<MetricRow>,
}

/// Runs the per-dataset train/test regression for every dataset in the
/// manifest. Rows come back sorted by dataset id.
pub fn run_rct(manifest: &CorpusManifest, scores: &ScoreSet, params: &RctParams) -> Result<RctOutcome> {
    let mut datasets: Vec<_> = manifest.datasets.iter().collect();
    datasets.sort_by(|a, b| a.id.cmp(&b.id));

    let runs: Vec<DatasetRun> = datasets
        .par_iter()
        .map(|ds| -> Result<DatasetRun> {
            let mut run = DatasetRun {
                row: None,
                skipped: None,
                missing: Vec::new(),
                not_evaluable: Vec::new(),
                values: Vec::new(),
            };
            let mut groups: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            for (slot, split) in [(0, Split::Test), (1, Split::Train)] {
                for doc in sample_documents(manifest, &ds.id, split, params.cap, params.seed)? {
                    let Some(record) = scores.get(&doc.id) else {
                        run.missing.push(doc.id.clone());
                        continue;
                    };
                    match metrics::compute(record, params.metric, &params.metric_params)? {
                        Some(v) => {
                            groups[slot].push(v.value);
                            run.values.push(MetricRow {
                                doc_id: doc.id.clone(),
                                dataset: ds.id.clone(),
                                split,
                                metric: params.metric,
                                value: v.value,
                            });
                        }
                        None => run.not_evaluable.push(doc.id.clone()),
                    }
                }
            }
            let [test, train] = groups;
            if test.is_empty() || train.is_empty() {
                let which = if test.is_empty() { "test" } else { "train" };
                warn!("dataset {}: no evaluable {which} documents, skipped", ds.id);
                run.skipped = Some(SkippedDataset {
                    dataset_id: ds.id.clone(),
                    reason: format!("no evaluable {which} documents"),
                });
                return Ok(run);
            }
            if test.len() + train.len() < 3 {
                run.skipped = Some(SkippedDataset {
                    dataset_id: ds.id.clone(),
                    reason: "fewer than 3 evaluable documents".into(),
                });
                return Ok(run);
            }
            let y: Vec<f64> = test.iter().chain(&train).copied().collect();
            let x: Vec<f64> = std::iter::repeat_n(0.0, test.len())
                .chain(std::iter::repeat_n(1.0, train.len()))
                .collect();
            let regression = stats::ols(&y, &x)?;
            run.row = Some(RctRow {
                dataset_id: ds.id.clone(),
                dataset_name: ds.name.clone(),
                metric: params.metric,
                upweight: ds.upweight,
                regression,
                train_mean: stats::mean(&train).expect("nonempty"),
                test_mean: stats::mean(&test).expect("nonempty"),
                n_train: train.len(),
                n_test: test.len(),
            });
            Ok(run)
        })
        .collect::<Result<_>>()?;

    let mut out = RctOutcome::default();
    for run in runs {
        out.rows.extend(run.row);
        out.skipped.extend(run.skipped);
        out.missing_scores.extend(run.missing);
        out.not_evaluable.extend(run.not_evaluable);
        out.values.extend(run.values);
    }
    Ok(out)
}

/// Column names of the effect table, in order.
pub const EFFECT_COLUMNS: [&str; 8] = [
    "dataset",
    "alpha",
    "beta1",
    "alpha_ci95",
    "beta1_ci95",
    "r_squared",
    "train_mean",
    "test_mean",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTableRow {
    pub dataset: String,
    pub upweight: u32,
    pub alpha: f64,
    pub beta1: f64,
    pub alpha_ci95: [f64; 2],
    pub beta1_ci95: [f64; 2],
    pub r_squared: f64,
    pub train_mean: f64,
    pub test_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectTable {
    pub metric: Metric,
    pub rows: Vec<EffectTableRow>,
}

pub fn effect_table(rows: &[RctRow]) -> EffectTable {
    let metric = rows.first().map(|r| r.metric).unwrap_or(Metric::MinK);
    EffectTable {
        metric,
        rows: rows
            .iter()
            .map(|r| EffectTableRow {
                dataset: r.dataset_name.clone(),
                upweight: r.upweight,
                alpha: r.regression.alpha,
                beta1: r.regression.beta1,
                alpha_ci95: [r.regression.ci_alpha.lo, r.regression.ci_alpha.hi],
                beta1_ci95: [r.regression.ci_beta1.lo, r.regression.ci_beta1.hi],
                r_squared: r.regression.r2,
                train_mean: r.train_mean,
                test_mean: r.test_mean,
                flag: r
                    .degenerate()
                    .then(|| "zero-width CI: no residual variance".to_string()),
            })
            .collect(),
    }
}

fn fmt3(v: f64) -> String {
    // avoid printing "-0.000"
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

impl EffectTableRow {
    /// Cells in [`EFFECT_COLUMNS`] order, rounded to three decimals.
    pub fn cells(&self) -> [String; 8] {
        [
            self.dataset.clone(),
            fmt3(self.alpha),
            fmt3(self.beta1),
            format!("[{}, {}]", fmt3(self.alpha_ci95[0]), fmt3(self.alpha_ci95[1])),
            format!("[{}, {}]", fmt3(self.beta1_ci95[0]), fmt3(self.beta1_ci95[1])),
            fmt3(self.r_squared),
            fmt3(self.train_mean),
            fmt3(self.test_mean),
        ]
    }
}

impl EffectTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&EFFECT_COLUMNS.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.cells().iter().map(|c| csv_field(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Pipe-separated rendering; flagged rows end with ` !`.
    pub fn to_text(&self) -> String {
        let mut out = EFFECT_COLUMNS.join(" | ");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.cells().join(" | "));
            if row.flag.is_some() {
                out.push_str(" !");
            }
            out.push('\n');
        }
        out
    }
}

/// Quotes a CSV cell when needed.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One bar of the grouped train/test chart: mean and 95% CI for one
/// (dataset, split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitBar {
    pub dataset: String,
    pub split: Split,
    pub n: usize,
    pub mean: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpweightGroup {
    pub upweight: u32,
    pub bars: Vec<SplitBar>,
}

/// Train/test bars per dataset, grouped by exact integer upweight.
pub fn grouped_bars(manifest: &CorpusManifest, outcome: &RctOutcome) -> Vec<UpweightGroup> {
    let summaries = metrics::dataset_summary(&outcome.values);
    let mut groups: std::collections::BTreeMap<u32, Vec<SplitBar>> = Default::default();
    for s in summaries {
        let upweight = manifest.dataset(&s.dataset).map(|d| d.upweight).unwrap_or(1);
        groups.entry(upweight).or_default().push(SplitBar {
            dataset: s.dataset,
            split: s.split,
            n: s.n,
            mean: s.mean,
            lo: s.ci.map(|c| c.lo),
            hi: s.ci.map(|c| c.hi),
        });
    }
    groups
        .into_iter()
        .map(|(upweight, bars)| UpweightGroup { upweight, bars })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DatasetComponent, Document};
    use crate::scoring::ScoringRecord;

    fn fixture() -> (CorpusManifest, ScoreSet) {
        // constant-NLL records make the loss of each document known exactly
        let docs = [
            ("t1", Split::Train, 2.0),
            ("t2", Split::Train, 3.0),
            ("t3", Split::Train, 4.0),
            ("h1", Split::Test, 5.0),
            ("h2", Split::Test, 6.0),
            ("h3", Split::Test, 10.0),
        ];
        let manifest = CorpusManifest {
            datasets: vec![DatasetComponent {
                id: "wiki".into(),
                name: "Wikipedia (en)".into(),
                upweight: 3,
            }],
            documents: docs
                .iter()
                .map(|(id, split, _)| Document {
                    id: id.to_string(),
                    dataset_id: "wiki".into(),
                    split: *split,
                    tokens: vec![1; 60],
                    token_texts: None,
                })
                .collect(),
        };
        let scores = docs
            .iter()
            .map(|(id, _, v)| {
                (
                    id.to_string(),
                    ScoringRecord {
                        doc_id: id.to_string(),
                        model_id: "m".into(),
                        nll: vec![*v; 59],
                        argmax_hit: vec![true; 59],
                    },
                )
            })
            .collect();
        (manifest, scores)
    }

    fn params(metric: Metric) -> RctParams {
        RctParams {
            metric,
            metric_params: MetricParams::default(),
            cap: 1000,
            seed: 0,
        }
    }

    #[test]
    fn six_document_fixture() {
        let (m, s) = fixture();
        let out = run_rct(&m, &s, &params(Metric::Loss)).unwrap();
        assert_eq!(out.rows.len(), 1);
        let row = &out.rows[0];
        // test mean (5 + 6 + 10) / 3 = 7, train mean 3
        assert_eq!(row.test_mean, 7.0);
        assert_eq!(row.train_mean, 3.0);
        assert_eq!(row.regression.alpha, 7.0);
        assert_eq!(row.regression.beta1, -4.0);
        assert_eq!(row.upweight, 3);
        assert_eq!((row.n_train, row.n_test), (3, 3));
        assert!(out.missing_scores.is_empty());
    }

    #[test]
    fn missing_scores_and_splits_reported() {
        let (mut m, mut s) = fixture();
        s.remove("t1");
        let out = run_rct(&m, &s, &params(Metric::Loss)).unwrap();
        assert_eq!(out.missing_scores, vec!["t1".to_string()]);
        assert_eq!(out.rows[0].n_train, 2);

        m.documents.retain(|d| d.split == Split::Train);
        let out = run_rct(&m, &s, &params(Metric::Loss)).unwrap();
        assert!(out.rows.is_empty());
        assert_eq!(out.skipped.len(), 1);
    }

    #[test]
    fn table_renders_effect_layout() {
        let (m, s) = fixture();
        let out = run_rct(&m, &s, &params(Metric::Loss)).unwrap();
        let table = effect_table(&out.rows);
        let csv = table.to_csv();
        assert_eq!(csv.lines().next().unwrap(), EFFECT_COLUMNS.join(","));
        assert!(csv.lines().nth(1).unwrap().starts_with("Wikipedia (en),7.000,-4.000,"));
        assert!(table.rows[0].flag.is_none());

        let row = RctRow {
            regression: RegressionResult {
                alpha: 6.946,
                beta1: 0.047,
                ..out.rows[0].regression
            },
            train_mean: 6.993,
            test_mean: 6.946,
            dataset_name: "Pile-CC".into(),
            ..out.rows[0].clone()
        };
        let text = effect_table(&[row]).to_text();
        assert!(
            text.lines().nth(1).unwrap().starts_with("Pile-CC | 6.946 | 0.047 | "),
            "{text}"
        );
    }

    #[test]
    fn degenerate_rows_are_flagged() {
        let (m, mut s) = fixture();
        for (id, rec) in s.iter_mut() {
            let v = if id.starts_with('t') { 1.0 } else { 2.0 };
            rec.nll = vec![v; 59];
        }
        let out = run_rct(&m, &s, &params(Metric::Loss)).unwrap();
        let table = effect_table(&out.rows);
        assert!(table.rows[0].flag.is_some());
        assert!(table.to_text().trim_end().ends_with('!'));
    }

    #[test]
    fn input_order_does_not_matter() {
        let (m, s) = fixture();
        let mut rev = m.clone();
        rev.documents.reverse();
        let a = run_rct(&m, &s, &params(Metric::MinK)).unwrap();
        let b = run_rct(&rev, &s, &params(Metric::MinK)).unwrap();
        assert_eq!(a.rows, b.rows);
    }

    #[test]
    fn bars_grouped_by_upweight() {
        let (m, s) = fixture();
        let out = run_rct(&m, &s, &params(Metric::Loss)).unwrap();
        let groups = grouped_bars(&m, &out);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].upweight, 3);
        assert_eq!(groups[0].bars.len(), 2);
        assert!(groups[0].bars.iter().all(|b| b.lo.is_some() && b.hi.is_some()));
    }
}
