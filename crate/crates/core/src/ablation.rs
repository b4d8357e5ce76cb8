//! Log-density regression across datasets, simulated dataset ablation, and
//! correlations between memorization metrics and neighbor counts.
//!
//! Each dataset is summarized by its observed loss `Y` and the total number
//! of neighbors `N` of its average query snippet. A line `Y = a + b ln N` is
//! fitted across datasets; ablating a dataset removes its self-neighbors,
//! lowering `N` to `N' = N - n_self`, and the simulated loss moves along the
//! fitted line accordingly.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::density::{DensityRun, NeighborhoodMatrix};
use crate::error::{Error, Result};
use crate::metrics::{self, Metric, MetricRow};
use crate::scoring::{ScoreSet, ScoringRecord};
use crate::stats::{self, CompensatedSum, CorrelationKind, CorrelationResult, RegressionResult, Stars};

/// The density regression describes association across datasets and is used
/// for prediction only.
pub const PREDICTIVE_CAVEAT: &str = "The density regression is fitted across datasets and is predictive, \
not causal; simulated ablations shift each dataset along the fitted line and leave all other datasets unchanged.";

/// Mean NLL over the scored tokens of the window `[start, start + length)`.
/// The first token of a document has no score and is skipped; `None` when no
/// token of the window is scored.
pub fn snippet_loss(record: &ScoringRecord, start: usize, length: usize) -> Option<f64> {
    let first = start.max(1);
    let end = (start + length).min(record.nll.len() + 1);
    if first >= end {
        return None;
    }
    let mut acc = CompensatedSum::new();
    acc.extend(record.nll[first - 1..end - 1].iter().copied());
    Some(acc.total() / (end - first) as f64)
}

/// How a dataset's observed loss is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossLevel {
    /// Mean loss of the dataset's query snippets.
    #[default]
    Snippet,
    /// Mean document loss of the documents that supplied query snippets.
    Document,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetLosses {
    pub losses: BTreeMap<String, f64>,
    /// Query documents without a scoring record.
    pub missing_scores: Vec<String>,
}

/// Observed loss per dataset over the same query snippets that define the
/// density run.
pub fn dataset_losses(
    run: &DensityRun,
    scores: &ScoreSet,
    level: LossLevel,
    max_tokens: usize,
) -> Result<DatasetLosses> {
    let mut per_dataset: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut missing = std::collections::BTreeSet::new();
    match level {
        LossLevel::Snippet => {
            for q in &run.queries {
                match scores.get(&q.doc_id) {
                    Some(r) => {
                        if let Some(l) = snippet_loss(r, q.start, q.length) {
                            per_dataset.entry(&q.dataset).or_default().push(l);
                        }
                    }
                    None => {
                        missing.insert(q.doc_id.clone());
                    }
                }
            }
        }
        LossLevel::Document => {
            let docs: BTreeMap<&str, &str> = run
                .queries
                .iter()
                .map(|q| (q.doc_id.as_str(), q.dataset.as_str()))
                .collect();
            for (doc, dataset) in docs {
                match scores.get(doc) {
                    Some(r) if !r.is_empty() => per_dataset
                        .entry(dataset)
                        .or_default()
                        .push(metrics::loss(r, max_tokens)?.value),
                    Some(_) => {}
                    None => {
                        missing.insert(doc.to_string());
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        warn!("{} query documents have no scoring record", missing.len());
    }
    Ok(DatasetLosses {
        losses: per_dataset
            .into_iter()
            .map(|(d, v)| (d.to_string(), stats::mean(&v).expect("nonempty")))
            .collect(),
        missing_scores: missing.into_iter().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub dataset: String,
    /// Total neighbors of the average query snippet, `N`.
    pub neighbors: f64,
    pub log_neighbors: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedDataset {
    pub dataset: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFit {
    pub threshold: f64,
    pub regression: RegressionResult,
    pub points: Vec<DensityPoint>,
    pub excluded: Vec<ExcludedDataset>,
}

/// OLS of dataset loss on `ln N` over the matrix's datasets. Datasets with
/// `N = 0` or without a loss are excluded with a warning.
pub fn fit_density_regression(matrix: &NeighborhoodMatrix, losses: &BTreeMap<String, f64>) -> Result<DensityFit> {
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for (i, dataset) in matrix.datasets.iter().enumerate() {
        let neighbors = matrix.row_total(i);
        let reason = match losses.get(dataset) {
            None => Some("no observed loss".to_string()),
            Some(_) if neighbors <= 0.0 => Some("no neighbors; log density undefined".to_string()),
            Some(_) => None,
        };
        if let Some(reason) = reason {
            warn!("dataset {dataset:?} excluded from density regression: {reason}");
            excluded.push(ExcludedDataset {
                dataset: dataset.clone(),
                reason,
            });
            continue;
        }
        points.push(DensityPoint {
            dataset: dataset.clone(),
            neighbors,
            log_neighbors: neighbors.ln(),
            loss: losses[dataset],
        });
    }
    if points.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: points.len(),
        });
    }
    let y: Vec<f64> = points.iter().map(|p| p.loss).collect();
    let x: Vec<f64> = points.iter().map(|p| p.log_neighbors).collect();
    Ok(DensityFit {
        threshold: matrix.threshold,
        regression: stats::ols(&y, &x)?,
        points,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationStatus {
    Shifted,
    /// Every neighbor lies in the dataset itself; `ln N'` is undefined.
    FullySelfSupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub dataset: String,
    pub observed_loss: f64,
    /// `N`
    pub neighbors: f64,
    pub self_neighbors: f64,
    /// `N' = N - n_self`
    pub remaining_neighbors: f64,
    /// `b (ln N - ln N')`: the drop in fitted loss that the dataset's own
    /// neighbors account for.
    pub delta: Option<f64>,
    /// Change of the fitted loss when moving from `N` to `N'`, i.e. `-delta`.
    pub loss_shift: Option<f64>,
    /// `observed_loss + loss_shift`.
    pub ablated_loss: Option<f64>,
    pub status: AblationStatus,
}

/// Simulated ablation of each dataset that entered the fit.
pub fn simulate_ablation(fit: &DensityFit, matrix: &NeighborhoodMatrix) -> Result<Vec<AblationResult>> {
    if fit.threshold.to_bits() != matrix.threshold.to_bits() {
        return Err(Error::InvalidArgument(format!(
            "regression fitted at threshold {} but matrix is at {}",
            fit.threshold, matrix.threshold
        )));
    }
    let beta1 = fit.regression.beta1;
    fit.points
        .iter()
        .map(|p| {
            let i = matrix
                .position(&p.dataset)
                .ok_or_else(|| Error::UnknownDataset(p.dataset.clone()))?;
            let neighbors = matrix.row_total(i);
            let self_neighbors = matrix.self_neighbors(i);
            let remaining = neighbors - self_neighbors;
            let (delta, status) = if self_neighbors == 0.0 {
                (Some(0.0), AblationStatus::Shifted)
            } else if remaining <= 0.0 {
                (None, AblationStatus::FullySelfSupported)
            } else {
                (
                    Some(ablation_delta(beta1, neighbors, remaining)),
                    AblationStatus::Shifted,
                )
            };
            let loss_shift = delta.map(|d| -d);
            Ok(AblationResult {
                dataset: p.dataset.clone(),
                observed_loss: p.loss,
                neighbors,
                self_neighbors,
                remaining_neighbors: remaining.max(0.0),
                delta,
                loss_shift,
                ablated_loss: loss_shift.map(|s| p.loss + s),
                status,
            })
        })
        .collect()
}

/// `beta1 (ln n - ln n_prime)`.
pub fn ablation_delta(beta1: f64, n: f64, n_prime: f64) -> f64 {
    beta1 * (n.ln() - n_prime.ln())
}

pub const ABLATION_COLUMNS: [&str; 6] = ["dataset", "Y", "N", "n_self", "delta_Y", "ablated_loss"];

/// One row per dataset; fully self-supported datasets carry the status text
/// in place of numbers.
pub fn ablation_csv(results: &[AblationResult]) -> String {
    let mut out = ABLATION_COLUMNS.join(",");
    out.push('\n');
    for r in results {
        let (delta, ablated) = match (r.delta, r.ablated_loss) {
            (Some(d), Some(a)) => (d.to_string(), a.to_string()),
            _ => ("fully self-supported".to_string(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            crate::rct::csv_field(&r.dataset),
            r.observed_loss,
            r.neighbors,
            r.self_neighbors,
            delta,
            ablated
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Dataset,
    Document,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Dataset => "dataset",
            Level::Document => "document",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub metric: Metric,
    pub level: Level,
    pub threshold: f64,
    pub n: usize,
    pub rho: Option<f64>,
    pub p: Option<f64>,
    pub stars: Stars,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Correlation of each metric with neighbor counts, per threshold of the
/// run and at both levels.
///
/// Document level pairs each query document's mean neighbors per snippet
/// with its metric value, pooled across datasets. Dataset level pairs the
/// overlap-matrix row total with the mean metric over the dataset's query
/// documents.
pub fn correlation_tables(run: &DensityRun, rows: &[MetricRow], kind: CorrelationKind) -> Vec<CorrelationRow> {
    let mut by_metric: BTreeMap<Metric, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in rows {
        by_metric.entry(r.metric).or_default().insert(&r.doc_id, r.value);
    }
    let mut out = Vec::new();
    for (t, &threshold) in run.thresholds.iter().enumerate() {
        let density = run.document_density(t);
        let matrix = run.matrix(t);
        for (&metric, values) in &by_metric {
            // document level
            let (mut x, mut y) = (Vec::new(), Vec::new());
            let mut per_dataset: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for (doc, d) in &density {
                if let Some(&v) = values.get(doc.as_str()) {
                    x.push(d.neighbors);
                    y.push(v);
                    per_dataset.entry(d.dataset.as_str()).or_default().push(v);
                }
            }
            out.push(correlation_row(kind, metric, Level::Document, threshold, &x, &y));

            let (mut x, mut y) = (Vec::new(), Vec::new());
            for (i, dataset) in matrix.datasets.iter().enumerate() {
                if let Some(v) = per_dataset.get(dataset.as_str()) {
                    x.push(matrix.row_total(i));
                    y.push(stats::mean(v).expect("nonempty"));
                }
            }
            out.push(correlation_row(kind, metric, Level::Dataset, threshold, &x, &y));
        }
    }
    out.sort_by(|a, b| {
        (a.metric, a.level)
            .cmp(&(b.metric, b.level))
            .then(a.threshold.total_cmp(&b.threshold))
    });
    out
}

fn correlation_row(
    kind: CorrelationKind,
    metric: Metric,
    level: Level,
    threshold: f64,
    x: &[f64],
    y: &[f64],
) -> CorrelationRow {
    let (rho, p, stars, note) = match stats::correlate(kind, x, y) {
        Ok(CorrelationResult { rho, p, stars, .. }) => (Some(rho), Some(p), stars, None),
        Err(e) => (None, None, Stars::None, Some(e.to_string())),
    };
    CorrelationRow {
        metric,
        level,
        threshold,
        n: x.len(),
        rho,
        p,
        stars,
        note,
    }
}

pub const CORRELATION_COLUMNS: [&str; 7] = ["metric", "level", "threshold", "n", "rho", "p", "stars"];

pub fn correlation_csv(rows: &[CorrelationRow]) -> String {
    let mut out = CORRELATION_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.metric.as_str(),
            r.level.as_str(),
            r.threshold,
            r.n,
            fmt(r.rho),
            fmt(r.p),
            r.stars.as_str()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>) -> NeighborhoodMatrix {
        let k = rows.len();
        NeighborhoodMatrix {
            datasets: (0..k).map(|i| format!("d{i}")).collect(),
            threshold: 50.0,
            counts_basis: vec![10; k],
            n: rows,
            empty_rows: vec![],
        }
    }

    fn losses(values: &[f64]) -> BTreeMap<String, f64> {
        values.iter().enumerate().map(|(i, &v)| (format!("d{i}"), v)).collect()
    }

    #[test]
    fn snippet_loss_skips_unscored_first_token() {
        let r = ScoringRecord {
            doc_id: "d".into(),
            model_id: "m".into(),
            nll: vec![1.0, 2.0, 3.0, 4.0],
            argmax_hit: vec![false; 4],
        };
        assert_eq!(snippet_loss(&r, 0, 3), Some(1.5));
        assert_eq!(snippet_loss(&r, 2, 3), Some(3.0));
        assert_eq!(snippet_loss(&r, 0, 1), None);
    }

    #[test]
    fn eq3_substitution() {
        let d = ablation_delta(-0.5, 1000.0, 100.0);
        assert!((d - (-1.151_292_546_497_023)).abs() < 1e-12);
    }

    #[test]
    fn regression_and_ablation() {
        let m = matrix(
            vec![
                vec![900.0, 50.0, 50.0],
                vec![0.0, 10.0, 90.0],
                vec![5.0, 5.0, 0.0],
                vec![1.0, 1.0, 1.0],
            ]
            .into_iter()
            .map(|mut r| {
                r.push(0.0);
                r
            })
            .collect(),
        );
        let fit = fit_density_regression(&m, &losses(&[1.0, 2.0, 2.6, 3.0])).unwrap();
        assert!(fit.regression.beta1 < 0.0);
        let res = simulate_ablation(&fit, &m).unwrap();
        assert_eq!(res[2].delta, Some(0.0));
        for r in &res {
            let shift = r.loss_shift.unwrap();
            let line = fit.regression.predict(r.remaining_neighbors.ln()) - fit.regression.predict(r.neighbors.ln());
            if r.self_neighbors > 0.0 {
                assert!((shift - line).abs() < 1e-12);
                // removing neighbors raises the fitted loss when b < 0
                assert!(shift > 0.0);
            }
        }
        let biggest = res
            .iter()
            .max_by(|a, b| a.delta.unwrap().abs().total_cmp(&b.delta.unwrap().abs()))
            .unwrap();
        assert_eq!(biggest.dataset, "d0");
        let csv = ablation_csv(&res);
        assert!(csv.starts_with("dataset,Y,N,n_self,delta_Y,ablated_loss\nd0,1,1000,900,"));
    }

    #[test]
    fn zero_density_excluded_and_too_few_rejected() {
        let m = matrix(vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0], vec![0.0, 2.0, 1.0]]);
        let err = fit_density_regression(&m, &losses(&[1.0, 2.0, 3.0])).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { needed: 3, got: 2 }));
    }

    #[test]
    fn equal_density_is_degenerate() {
        let m = matrix(vec![vec![2.0, 1.0, 1.0]; 3].into_iter().collect());
        let m = NeighborhoodMatrix {
            n: vec![vec![2.0, 1.0, 1.0], vec![1.0, 2.0, 1.0], vec![1.0, 1.0, 2.0]],
            ..m
        };
        assert!(matches!(
            fit_density_regression(&m, &losses(&[1.0, 2.0, 3.0])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn fully_self_supported_has_no_number() {
        let m = matrix(vec![vec![5.0, 0.0, 0.0], vec![1.0, 3.0, 0.0], vec![1.0, 1.0, 9.0]]);
        let fit = fit_density_regression(&m, &losses(&[1.0, 1.5, 0.5])).unwrap();
        let res = simulate_ablation(&fit, &m).unwrap();
        assert_eq!(res[0].status, AblationStatus::FullySelfSupported);
        assert_eq!(res[0].delta, None);
        assert_eq!(res[0].ablated_loss, None);
        assert!(ablation_csv(&res).contains("d0,1,5,5,fully self-supported,\n"));
    }

    #[test]
    fn threshold_mismatch_rejected() {
        let m = matrix(vec![vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 4.0]]);
        let fit = fit_density_regression(&m, &losses(&[3.0, 2.0, 1.5])).unwrap();
        let other = NeighborhoodMatrix { threshold: 70.0, ..m };
        assert!(simulate_ablation(&fit, &other).is_err());
    }
}
