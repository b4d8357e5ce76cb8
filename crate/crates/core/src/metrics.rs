//! Per-document memorization metrics computed from scoring records.
//!
//! All four metrics read only the first `max_tokens` tokens of a document.
//! Token accuracy and verbatim extraction use teacher-forced argmax flags: a
//! window counts as verbatim iff every continuation token is the argmax given
//! the true prefix, which is exactly when greedy decoding from the prompt
//! reproduces the continuation.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::scoring::ScoringRecord;
use crate::stats::{self, CompensatedSum, Interval};

pub const DEFAULT_K_PERCENT: f64 = 20.0;
pub const DEFAULT_MAX_TOKENS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Loss,
    MinK,
    TokenAccuracy,
    Verbatim,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Loss, Metric::MinK, Metric::TokenAccuracy, Metric::Verbatim];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Loss => "loss",
            Metric::MinK => "mink",
            Metric::TokenAccuracy => "token_accuracy",
            Metric::Verbatim => "verbatim",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "loss" => Ok(Metric::Loss),
            "mink" | "min_k" => Ok(Metric::MinK),
            "token_accuracy" | "accuracy" => Ok(Metric::TokenAccuracy),
            "verbatim" => Ok(Metric::Verbatim),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Prompt/continuation layout for token accuracy and verbatim extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub prompt_len: usize,
    pub continuation_len: usize,
    pub max_tokens: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec {
            prompt_len: 40,
            continuation_len: 10,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_len == 0 || self.continuation_len == 0 || self.max_tokens == 0 {
            return Err(Error::InvalidArgument(format!(
                "window lengths must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Continuation token ranges (document token positions) of the
    /// non-overlapping windows that fit in a document of `n_tokens` tokens,
    /// after truncation to `max_tokens`.
    pub fn continuation_windows(&self, n_tokens: usize) -> Vec<Range<usize>> {
        let limit = n_tokens.min(self.max_tokens);
        let step = self.prompt_len + self.continuation_len;
        (0..)
            .map(|k| k * step + self.prompt_len)
            .map(|start| start..start + self.continuation_len)
            .take_while(|r| r.end <= limit)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub doc_id: String,
    pub metric: Metric,
    pub value: f64,
}

/// Number of leading NLL entries considered under a `max_tokens` truncation.
fn considered(record: &ScoringRecord, max_tokens: usize) -> Result<&[f64]> {
    if record.nll.is_empty() {
        return Err(Error::Empty("scoring record has no scored tokens"));
    }
    if max_tokens < 2 {
        return Err(Error::InvalidArgument(format!(
            "max_tokens must be at least 2, got {max_tokens}"
        )));
    }
    Ok(&record.nll[..record.nll.len().min(max_tokens - 1)])
}

fn mean_in_order(values: impl IntoIterator<Item = f64>, count: usize) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(values);
    acc.total() / count as f64
}

/// Mean NLL over the first `max_tokens - 1` scored positions.
pub fn loss(record: &ScoringRecord, max_tokens: usize) -> Result<MetricValue> {
    let nll = considered(record, max_tokens)?;
    Ok(MetricValue {
        doc_id: record.doc_id.clone(),
        metric: Metric::Loss,
        value: mean_in_order(nll.iter().copied(), nll.len()),
    })
}

/// Positions of the `ceil(k% * T)` least probable tokens. Ties at the cut
/// keep the earlier position. Returned in increasing position order.
pub fn mink_positions(nll: &[f64], k_percent: f64) -> Vec<usize> {
    let t = nll.len();
    let count = ((k_percent * t as f64) / 100.0).ceil() as usize;
    let count = count.clamp(1, t);
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| nll[b].total_cmp(&nll[a]).then(a.cmp(&b)));
    let mut picked = order[..count].to_vec();
    picked.sort_unstable();
    picked
}

/// Mean NLL of the K% least probable tokens among the considered positions.
/// The selected values are summed in position order, so `k = 100` gives
/// exactly [`loss`].
pub fn mink(record: &ScoringRecord, k_percent: f64, max_tokens: usize) -> Result<MetricValue> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "k_percent must lie in (0, 100], got {k_percent}"
        )));
    }
    let nll = considered(record, max_tokens)?;
    let picked = mink_positions(nll, k_percent);
    Ok(MetricValue {
        doc_id: record.doc_id.clone(),
        metric: Metric::MinK,
        value: mean_in_order(picked.iter().map(|&i| nll[i]), picked.len()),
    })
}

/// Argmax flags of every continuation window, or `None` when the document is
/// too short for a single window.
fn window_flags<'a>(record: &'a ScoringRecord, spec: &WindowSpec) -> Result<Option<Vec<&'a [bool]>>> {
    spec.validate()?;
    // record position i scores token i + 1
    let n_tokens = record.argmax_hit.len() + 1;
    let windows = spec.continuation_windows(n_tokens);
    if windows.is_empty() {
        return Ok(None);
    }
    Ok(Some(
        windows
            .into_iter()
            .map(|r| &record.argmax_hit[r.start - 1..r.end - 1])
            .collect(),
    ))
}

/// Teacher-forced accuracy over all continuation tokens. `Ok(None)` marks a
/// document too short to evaluate.
pub fn token_accuracy(record: &ScoringRecord, spec: &WindowSpec) -> Result<Option<MetricValue>> {
    let Some(windows) = window_flags(record, spec)? else {
        return Ok(None);
    };
    let total: usize = windows.iter().map(|w| w.len()).sum();
    let hits: usize = windows.iter().map(|w| w.iter().filter(|&&h| h).count()).sum();
    Ok(Some(MetricValue {
        doc_id: record.doc_id.clone(),
        metric: Metric::TokenAccuracy,
        value: hits as f64 / total as f64,
    }))
}

/// Fraction of windows whose whole continuation is reproduced.
pub fn verbatim(record: &ScoringRecord, spec: &WindowSpec) -> Result<Option<MetricValue>> {
    let Some(windows) = window_flags(record, spec)? else {
        return Ok(None);
    };
    let exact = windows.iter().filter(|w| w.iter().all(|&h| h)).count();
    Ok(Some(MetricValue {
        doc_id: record.doc_id.clone(),
        metric: Metric::Verbatim,
        value: exact as f64 / windows.len() as f64,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub k_percent: f64,
    pub window: WindowSpec,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            k_percent: DEFAULT_K_PERCENT,
            window: WindowSpec::default(),
        }
    }
}

/// Computes one metric; `Ok(None)` when the document is not evaluable.
pub fn compute(record: &ScoringRecord, metric: Metric, params: &MetricParams) -> Result<Option<MetricValue>> {
    let max_tokens = params.window.max_tokens;
    match metric {
        Metric::Loss => loss(record, max_tokens).map(Some),
        Metric::MinK => mink(record, params.k_percent, max_tokens).map(Some),
        Metric::TokenAccuracy => token_accuracy(record, &params.window),
        Metric::Verbatim => verbatim(record, &params.window),
    }
}

/// One metric value with its document's dataset and split, i.e. one line of
/// the metric CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub doc_id: String,
    pub dataset: String,
    pub split: Split,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub dataset: String,
    pub split: Split,
    pub metric: Metric,
    pub n: usize,
    pub mean: f64,
    /// 95% t interval; absent for groups of fewer than two values.
    pub ci: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

/// Mean and 95% CI per (dataset, split, metric), sorted by that key.
pub fn dataset_summary(rows: &[MetricRow]) -> Vec<GroupSummary> {
    type Key<'a> = (&'a str, Split, Metric);
    let mut groups: std::collections::BTreeMap<Key, Vec<(&str, f64)>> = Default::default();
    for row in rows {
        groups
            .entry((row.dataset.as_str(), row.split, row.metric))
            .or_default()
            .push((row.doc_id.as_str(), row.value));
    }
    groups
        .into_iter()
        .map(|((dataset, split, metric), mut values)| {
            // fixed reduction order regardless of input order
            values.sort_by(|a, b| a.0.cmp(b.0));
            let values: Vec<f64> = values.into_iter().map(|(_, v)| v).collect();
            let (mean, ci, flag) = match stats::mean_ci(&values) {
                Ok(m) => (m.mean, Some(m.ci), None),
                Err(_) => (
                    stats::mean(&values).unwrap_or(f64::NAN),
                    None,
                    Some(format!("CI undefined for {} value(s)", values.len())),
                ),
            };
            GroupSummary {
                dataset: dataset.to_string(),
                split,
                metric,
                n: values.len(),
                mean,
                ci,
                flag,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(nll: Vec<f64>, hits: Vec<bool>) -> ScoringRecord {
        ScoringRecord {
            doc_id: "d".into(),
            model_id: "m".into(),
            nll,
            argmax_hit: hits,
        }
    }

    fn rec_nll(nll: Vec<f64>) -> ScoringRecord {
        let n = nll.len();
        rec(nll, vec![false; n])
    }

    #[test]
    fn loss_is_mean() {
        assert_eq!(loss(&rec_nll(vec![1.0, 2.0, 3.0]), 1000).unwrap().value, 2.0);
        let c = rec_nll(vec![0.7; 300]);
        for max in [2, 10, 256, 1000] {
            assert!((loss(&c, max).unwrap().value - 0.7).abs() < 1e-15);
        }
        // truncation to the first max_tokens - 1 positions
        assert_eq!(loss(&rec_nll(vec![1.0, 3.0, 100.0]), 3).unwrap().value, 2.0);
        assert!(loss(&rec_nll(vec![]), 256).is_err());
    }

    #[test]
    fn mink_examples() {
        let r = rec_nll(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(mink(&r, 20.0, 256).unwrap().value, 5.0);
        assert_eq!(mink(&r, 40.0, 256).unwrap().value, 4.5);
        assert_eq!(mink(&r, 100.0, 256).unwrap().value, loss(&r, 256).unwrap().value);
        // ceil: 1% of 5 tokens still selects one
        assert_eq!(mink(&r, 1.0, 256).unwrap().value, 5.0);
        assert!(mink(&r, 0.0, 256).is_err());
        assert!(mink(&r, 100.5, 256).is_err());
    }

    #[test]
    fn mink_ties_prefer_earlier_positions() {
        assert_eq!(mink_positions(&[2.0, 5.0, 5.0, 5.0, 1.0], 40.0), vec![1, 2]);
    }

    #[test]
    fn window_layout() {
        let spec = WindowSpec::default();
        assert_eq!(spec.continuation_windows(30), vec![]);
        assert_eq!(spec.continuation_windows(50), vec![40..50]);
        assert_eq!(spec.continuation_windows(100), vec![40..50, 90..100]);
        assert_eq!(spec.continuation_windows(130), vec![40..50, 90..100]);
        assert_eq!(
            spec.continuation_windows(256),
            vec![40..50, 90..100, 140..150, 190..200, 240..250]
        );
        // truncation applies before layout
        assert_eq!(spec.continuation_windows(10_000).len(), 5);
    }

    #[test]
    fn accuracy_over_two_windows() {
        // 100-token doc: flags for tokens 40..50 and 90..100 live at record
        // positions 39..49 and 89..99.
        let mut hits = vec![false; 99];
        for (i, h) in hits.iter_mut().enumerate() {
            let token = i + 1;
            *h = (40..45).contains(&token) || (90..100).contains(&token) || token < 40;
        }
        let r = rec(vec![1.0; 99], hits);
        let spec = WindowSpec::default();
        assert_eq!(token_accuracy(&r, &spec).unwrap().unwrap().value, 15.0 / 20.0);
        assert_eq!(verbatim(&r, &spec).unwrap().unwrap().value, 0.5);
    }

    #[test]
    fn verbatim_needs_every_flag() {
        let spec = WindowSpec::default();
        let all = rec(vec![1.0; 49], vec![true; 49]);
        assert_eq!(verbatim(&all, &spec).unwrap().unwrap().value, 1.0);
        assert_eq!(token_accuracy(&all, &spec).unwrap().unwrap().value, 1.0);
        let mut hits = vec![true; 49];
        hits[45] = false;
        let nine = rec(vec![1.0; 49], hits);
        assert_eq!(verbatim(&nine, &spec).unwrap().unwrap().value, 0.0);
        assert!((token_accuracy(&nine, &spec).unwrap().unwrap().value - 0.9).abs() < 1e-15);
    }

    #[test]
    fn short_documents_not_evaluable() {
        let r = rec(vec![1.0; 29], vec![true; 29]);
        assert_eq!(token_accuracy(&r, &WindowSpec::default()).unwrap(), None);
        assert_eq!(verbatim(&r, &WindowSpec::default()).unwrap(), None);
    }

    #[test]
    fn summary_groups_and_flags() {
        let row = |id: &str, ds: &str, v: f64| MetricRow {
            doc_id: id.into(),
            dataset: ds.into(),
            split: Split::Train,
            metric: Metric::Loss,
            value: v,
        };
        let rows = vec![
            row("a", "x", 1.0),
            row("b", "x", 1.0),
            row("c", "x", 1.0),
            row("d", "y", 3.0),
        ];
        let s = dataset_summary(&rows);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].mean, 1.0);
        assert_eq!(s[0].ci.unwrap().width(), 0.0);
        assert!(s[1].ci.is_none() && s[1].flag.is_some());
        let mut rev = rows.clone();
        rev.reverse();
        assert_eq!(dataset_summary(&rev), s);
    }

    fn records() -> impl Strategy<Value = ScoringRecord> {
        prop::collection::vec((0.0f64..15.0, any::<bool>()), 1..400).prop_map(|v| {
            let (nll, hits) = v.into_iter().unzip();
            rec(nll, hits)
        })
    }

    proptest! {
        #[test]
        fn mink_full_selection_is_loss(r in records(), max in 2usize..500) {
            prop_assert_eq!(mink(&r, 100.0, max).unwrap().value.to_bits(), loss(&r, max).unwrap().value.to_bits());
        }

        #[test]
        fn mink_non_increasing_in_k(r in records()) {
            let mut prev = f64::INFINITY;
            for k in 1..=100 {
                let v = mink(&r, k as f64, 256).unwrap().value;
                prop_assert!(v <= prev, "k={} {} > {}", k, v, prev);
                prev = v;
            }
        }

        #[test]
        fn accuracy_bounds_verbatim(r in records()) {
            let spec = WindowSpec::default();
            let acc = token_accuracy(&r, &spec).unwrap();
            let verb = verbatim(&r, &spec).unwrap();
            prop_assert_eq!(acc.is_some(), verb.is_some());
            if let (Some(a), Some(v)) = (acc, verb) {
                prop_assert!(a.value >= v.value);
                prop_assert!((0.0..=1.0).contains(&a.value) && (0.0..=1.0).contains(&v.value));
            }
        }
    }
}
