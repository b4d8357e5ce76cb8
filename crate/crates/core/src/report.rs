//! The audit pipeline: runs every requested analysis from a config and
//! writes CSV/JSON tables, plot data and a plain-text summary.
//!
//! Sections whose inputs are missing are skipped and recorded as gaps;
//! malformed inputs and invalid parameters are hard errors. Outputs contain
//! no timestamps and are byte-identical across reruns of the same config and
//! inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::ablation::{self, AblationResult, CorrelationRow, DatasetLosses, DensityFit};
use crate::config::{AuditConfig, DensityConfig, MetricsConfig};
use crate::corpus::{load_manifest, sample_documents, CorpusManifest, Split};
use crate::density::{density_run, DensityRun, NeighborhoodMatrix, SnippetIndex};
use crate::error::{Error, Result};
use crate::metrics::{self, GroupSummary, Metric, MetricRow};
use crate::rct::{self, csv_field, EffectTable, RctRow, SkippedDataset, UpweightGroup};
use crate::scoring::{load_scores, ScoreSet};

pub const TOOL_NAME: &str = "memaudit";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const THRESHOLD_CAVEAT: &str = "BM25 thresholds are absolute scores that depend on the ranking parameters \
and the indexed corpus; compare neighbor counts only across runs with the same index and parameters.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Metrics,
    Rct,
    Overlap,
    ThresholdSweep,
    Correlations,
    Ablation,
}

impl Section {
    pub const ALL: [Section; 6] = [
        Section::Metrics,
        Section::Rct,
        Section::Overlap,
        Section::ThresholdSweep,
        Section::Correlations,
        Section::Ablation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Section::Metrics => "metrics",
            Section::Rct => "rct",
            Section::Overlap => "overlap",
            Section::ThresholdSweep => "threshold_sweep",
            Section::Correlations => "correlations",
            Section::Ablation => "ablation",
        }
    }

    fn requested(self, config: &AuditConfig) -> bool {
        let s = &config.sections;
        match self {
            Section::Metrics => s.metrics,
            Section::Rct => s.rct,
            Section::Overlap => s.overlap,
            Section::ThresholdSweep => s.threshold_sweep,
            Section::Correlations => s.correlations,
            Section::Ablation => s.ablation,
        }
    }

    fn needs_scores(self) -> bool {
        !matches!(self, Section::Overlap | Section::ThresholdSweep)
    }

    fn needs_index(self) -> bool {
        !matches!(self, Section::Metrics | Section::Rct)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub section: Section,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub metrics: MetricsConfig,
    pub density: DensityConfig,
    /// SHA-256 of each input file that was read.
    pub inputs: BTreeMap<String, String>,
    pub caveats: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSection {
    pub summary: Vec<GroupSummary>,
    pub missing_scores: Vec<String>,
    pub not_evaluable: BTreeMap<Metric, usize>,
    /// Per-document values; written to the metric CSV.
    #[serde(skip)]
    pub values: Vec<MetricRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RctSection {
    pub metric: Metric,
    pub table: EffectTable,
    pub rows: Vec<RctRow>,
    pub skipped: Vec<SkippedDataset>,
    pub bars: Vec<UpweightGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub threshold: f64,
    pub dataset: String,
    pub neighbors: f64,
    pub self_neighbors: f64,
    pub query_snippets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSection {
    pub fit: DensityFit,
    pub results: Vec<AblationResult>,
    pub losses: DatasetLosses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub metadata: ReportMetadata,
    pub metrics: Option<MetricsSection>,
    pub rct: Option<Vec<RctSection>>,
    pub overlap: Option<NeighborhoodMatrix>,
    pub threshold_sweep: Option<Vec<SweepEntry>>,
    pub correlations: Option<Vec<CorrelationRow>>,
    pub ablation: Option<AblationSection>,
    pub gaps: Vec<Gap>,
}

impl AuditReport {
    /// True when every requested section was produced.
    pub fn complete(&self) -> bool {
        self.gaps.is_empty()
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// An input path that is configured and exists, or the reason it is unusable.
fn available<'a>(path: &'a Option<PathBuf>, what: &str) -> std::result::Result<&'a Path, String> {
    match path {
        None => Err(format!("missing {what}: no path configured")),
        Some(p) if !p.exists() => Err(format!("missing {what}: {} does not exist", p.display())),
        Some(p) => Ok(p),
    }
}

/// Per-document metric values for the given documents, in document order.
fn metric_rows<'a>(
    docs: impl IntoIterator<Item = (&'a str, &'a str, Split)>,
    scores: &ScoreSet,
    config: &MetricsConfig,
    missing: &mut BTreeSet<String>,
    not_evaluable: &mut BTreeMap<Metric, usize>,
) -> Result<Vec<MetricRow>> {
    let params = config.params();
    let mut rows = Vec::new();
    for (doc_id, dataset, split) in docs {
        let Some(record) = scores.get(doc_id) else {
            missing.insert(doc_id.to_string());
            continue;
        };
        for &metric in &config.metrics {
            let value = if record.is_empty() {
                None
            } else {
                metrics::compute(record, metric, &params)?
            };
            match value {
                Some(v) => rows.push(MetricRow {
                    doc_id: doc_id.to_string(),
                    dataset: dataset.to_string(),
                    split,
                    metric,
                    value: v.value,
                }),
                None => *not_evaluable.entry(metric).or_insert(0) += 1,
            }
        }
    }
    Ok(rows)
}

/// Runs every requested section.
pub fn run_pipeline(config: &AuditConfig) -> Result<AuditReport> {
    config.validate()?;
    let requested: Vec<Section> = Section::ALL.into_iter().filter(|s| s.requested(config)).collect();
    let mut gaps = Vec::new();
    let mut inputs = BTreeMap::new();

    let manifest: Option<CorpusManifest> = match available(&config.inputs.manifest, "manifest") {
        Ok(p) => {
            inputs.insert("manifest".to_string(), file_digest(p)?);
            Some(load_manifest(p)?)
        }
        Err(reason) => {
            gaps.extend(requested.iter().map(|&section| Gap {
                section,
                reason: reason.clone(),
            }));
            None
        }
    };
    let mut report = AuditReport {
        metadata: ReportMetadata {
            tool: TOOL_NAME.into(),
            version: TOOL_VERSION.into(),
            config_hash: config.config_hash(),
            seed: config.seed,
            metrics: config.metrics.clone(),
            density: config.density.clone(),
            inputs: BTreeMap::new(),
            caveats: vec![
                rct::SUTVA_CAVEAT.into(),
                ablation::PREDICTIVE_CAVEAT.into(),
                THRESHOLD_CAVEAT.into(),
            ],
        },
        metrics: None,
        rct: None,
        overlap: None,
        threshold_sweep: None,
        correlations: None,
        ablation: None,
        gaps: Vec::new(),
    };
    let Some(manifest) = manifest else {
        report.metadata.inputs = inputs;
        report.gaps = gaps;
        return Ok(report);
    };

    let mut blocked: BTreeMap<Section, String> = BTreeMap::new();
    let scores: Option<ScoreSet> = if requested.iter().any(|s| s.needs_scores()) {
        match available(&config.inputs.scores, "scores") {
            Ok(p) => {
                inputs.insert("scores".to_string(), file_digest(p)?);
                Some(load_scores(p, Some(&manifest))?)
            }
            Err(reason) => {
                for s in requested.iter().filter(|s| s.needs_scores()) {
                    blocked.entry(*s).or_insert_with(|| reason.clone());
                }
                None
            }
        }
    } else {
        None
    };

    let density_sections: Vec<Section> = requested.iter().copied().filter(|s| s.needs_index()).collect();
    let mut run: Option<DensityRun> = None;
    if !density_sections.is_empty() {
        let reason = if config.density.thresholds.is_empty() {
            Some("no density thresholds configured".to_string())
        } else {
            match available(&config.inputs.index, "index") {
                Err(r) => Some(r),
                Ok(p) => {
                    inputs.insert("index".to_string(), file_digest(p)?);
                    let index = SnippetIndex::load(p)?;
                    if *index.params() != config.density.bm25() {
                        return Err(Error::Config(format!(
                            "index was built with k1={} b={} but the config asks for k1={} b={}",
                            index.params().k1,
                            index.params().b,
                            config.density.k1,
                            config.density.b
                        )));
                    }
                    info!("density run over {} indexed snippets", index.len());
                    run = Some(density_run(
                        &index,
                        &manifest,
                        &config.density.query_spec(config.seed),
                        &config.density.thresholds,
                    )?);
                    None
                }
            }
        };
        if let Some(reason) = reason {
            for s in density_sections {
                blocked.entry(s).or_insert_with(|| reason.clone());
            }
        }
    }
    let ready = |s: Section| s.requested(config) && !blocked.contains_key(&s);

    if ready(Section::Metrics) {
        let scores = scores.as_ref().expect("scores loaded");
        let mut ids: Vec<&str> = manifest.datasets.iter().map(|d| d.id.as_str()).collect();
        ids.sort_unstable();
        let mut docs = Vec::new();
        for id in ids {
            for split in [Split::Test, Split::Train] {
                for d in sample_documents(&manifest, id, split, config.metrics.cap, config.seed)? {
                    docs.push((d.id.as_str(), d.dataset_id.as_str(), d.split));
                }
            }
        }
        let mut missing = BTreeSet::new();
        let mut not_evaluable = BTreeMap::new();
        let values = metric_rows(docs, scores, &config.metrics, &mut missing, &mut not_evaluable)?;
        report.metrics = Some(MetricsSection {
            summary: metrics::dataset_summary(&values),
            missing_scores: missing.into_iter().collect(),
            not_evaluable,
            values,
        });
    }

    if ready(Section::Rct) {
        let scores = scores.as_ref().expect("scores loaded");
        let mut sections = Vec::new();
        for &metric in &config.metrics.metrics {
            let outcome = rct::run_rct(
                &manifest,
                scores,
                &rct::RctParams {
                    metric,
                    metric_params: config.metrics.params(),
                    cap: config.metrics.cap,
                    seed: config.seed,
                },
            )?;
            let mut table = rct::effect_table(&outcome.rows);
            table.metric = metric;
            sections.push(RctSection {
                metric,
                table,
                bars: rct::grouped_bars(&manifest, &outcome),
                rows: outcome.rows,
                skipped: outcome.skipped,
            });
        }
        report.rct = Some(sections);
    }

    let primary = run
        .as_ref()
        .and_then(|r| config.density.primary().and_then(|t| r.threshold_index(t)));

    if ready(Section::Overlap) {
        let (run, t) = (run.as_ref().expect("density run"), primary.expect("primary threshold"));
        report.overlap = Some(run.matrix(t));
    }

    if ready(Section::ThresholdSweep) {
        let run = run.as_ref().expect("density run");
        let mut entries = Vec::new();
        for (t, &threshold) in run.thresholds.iter().enumerate() {
            let m = run.matrix(t);
            for (i, dataset) in m.datasets.iter().enumerate() {
                entries.push(SweepEntry {
                    threshold,
                    dataset: dataset.clone(),
                    neighbors: m.row_total(i),
                    self_neighbors: m.self_neighbors(i),
                    query_snippets: m.counts_basis[i],
                });
            }
        }
        report.threshold_sweep = Some(entries);
    }

    if ready(Section::Correlations) {
        let (run, scores) = (run.as_ref().expect("density run"), scores.as_ref().expect("scores"));
        let docs: BTreeMap<&str, &str> = run
            .queries
            .iter()
            .map(|q| (q.doc_id.as_str(), q.dataset.as_str()))
            .collect();
        let splits: BTreeMap<&str, Split> = manifest.documents.iter().map(|d| (d.id.as_str(), d.split)).collect();
        let mut missing = BTreeSet::new();
        let mut not_evaluable = BTreeMap::new();
        let rows = metric_rows(
            docs.into_iter().map(|(d, ds)| (d, ds, splits[d])),
            scores,
            &config.metrics,
            &mut missing,
            &mut not_evaluable,
        )?;
        report.correlations = Some(ablation::correlation_tables(run, &rows, config.density.correlation));
    }

    if ready(Section::Ablation) {
        let (run, scores, t) = (
            run.as_ref().expect("density run"),
            scores.as_ref().expect("scores"),
            primary.expect("primary threshold"),
        );
        let matrix = run.matrix(t);
        let losses = ablation::dataset_losses(run, scores, config.density.loss_level, config.metrics.max_tokens)?;
        match ablation::fit_density_regression(&matrix, &losses.losses) {
            Ok(fit) => {
                let results = ablation::simulate_ablation(&fit, &matrix)?;
                report.ablation = Some(AblationSection { fit, results, losses });
            }
            Err(e @ (Error::InsufficientData { .. } | Error::Degenerate(_))) => {
                blocked.insert(Section::Ablation, format!("density regression not estimable: {e}"));
            }
            Err(e) => return Err(e),
        }
    }

    gaps.extend(blocked.into_iter().map(|(section, reason)| Gap { section, reason }));
    report.metadata.inputs = inputs;
    report.gaps = gaps;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Plot data

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    /// Train/test means with 95% CIs, grouped by upweight.
    GroupedBars,
    /// Dataset overlap heatmap.
    Heatmap,
    /// Observed vs simulated-ablation loss per dataset.
    PairedBars,
    /// `ln N` against loss with the fitted line.
    Scatter,
}

impl Figure {
    pub const ALL: [Figure; 4] = [
        Figure::GroupedBars,
        Figure::Heatmap,
        Figure::PairedBars,
        Figure::Scatter,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Figure::GroupedBars => "plot_grouped_bars.json",
            Figure::Heatmap => "plot_overlap_heatmap.json",
            Figure::PairedBars => "plot_ablation_bars.json",
            Figure::Scatter => "plot_density_scatter.json",
        }
    }

    fn section(self) -> Section {
        match self {
            Figure::GroupedBars => Section::Rct,
            Figure::Heatmap => Section::Overlap,
            Figure::PairedBars | Figure::Scatter => Section::Ablation,
        }
    }
}

/// Figure-ready data for one figure; fails when its section is absent.
pub fn emit_plot_data(report: &AuditReport, figure: Figure) -> Result<serde_json::Value> {
    let absent = || Error::InvalidArgument(format!("report has no {} section", figure.section().as_str()));
    Ok(match figure {
        Figure::GroupedBars => {
            let sections = report.rct.as_ref().ok_or_else(absent)?;
            json!({
                "figure": "grouped_bars",
                "panels": sections.iter().map(|s| json!({
                    "metric": s.metric,
                    "groups": s.bars,
                })).collect::<Vec<_>>(),
            })
        }
        Figure::Heatmap => {
            let m = report.overlap.as_ref().ok_or_else(absent)?;
            json!({
                "figure": "overlap_heatmap",
                "threshold": m.threshold,
                "rows": m.datasets,
                "columns": m.datasets,
                "values": m.n,
                "query_snippets": m.counts_basis,
            })
        }
        Figure::PairedBars => {
            let a = report.ablation.as_ref().ok_or_else(absent)?;
            json!({
                "figure": "ablation_bars",
                "threshold": a.fit.threshold,
                "bars": a.results.iter().map(|r| json!({
                    "dataset": r.dataset,
                    "observed": r.observed_loss,
                    "ablated": r.ablated_loss,
                    "status": r.status,
                })).collect::<Vec<_>>(),
            })
        }
        Figure::Scatter => {
            let a = report.ablation.as_ref().ok_or_else(absent)?;
            let xs = a.fit.points.iter().map(|p| p.log_neighbors);
            let lo = xs.clone().fold(f64::INFINITY, f64::min);
            let hi = xs.fold(f64::NEG_INFINITY, f64::max);
            let reg = &a.fit.regression;
            json!({
                "figure": "density_scatter",
                "threshold": a.fit.threshold,
                "points": a.fit.points.iter().map(|p| json!({
                    "dataset": p.dataset,
                    "log_neighbors": p.log_neighbors,
                    "loss": p.loss,
                })).collect::<Vec<_>>(),
                "alpha": reg.alpha,
                "beta1": reg.beta1,
                "line": [[lo, reg.predict(lo)], [hi, reg.predict(hi)]],
            })
        }
    })
}

// ---------------------------------------------------------------------------
// Files

fn metric_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("doc_id,dataset,split,metric,value\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&r.doc_id),
            csv_field(&r.dataset),
            r.split,
            r.metric.as_str(),
            r.value
        ));
    }
    out
}

fn summary_csv(rows: &[GroupSummary]) -> String {
    let mut out = String::from("dataset,split,metric,n,mean,ci_lo,ci_hi\n");
    for s in rows {
        let (lo, hi) = s.ci.map(|c| (c.lo.to_string(), c.hi.to_string())).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{lo},{hi}\n",
            csv_field(&s.dataset),
            s.split,
            s.metric.as_str(),
            s.n,
            s.mean
        ));
    }
    out
}

fn sweep_csv(rows: &[SweepEntry]) -> String {
    let mut out = String::from("threshold,dataset,N,n_self,query_snippets\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.threshold,
            csv_field(&r.dataset),
            r.neighbors,
            r.self_neighbors,
            r.query_snippets
        ));
    }
    out
}

fn pretty(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Plain-text overview of the report.
pub fn summary_text(report: &AuditReport) -> String {
    let mut out = format!(
        "{} {} config {}\n",
        report.metadata.tool, report.metadata.version, report.metadata.config_hash
    );
    if let Some(m) = &report.metrics {
        out.push_str(&format!(
            "\n[metrics] {} groups, {} documents without scores\n",
            m.summary.len(),
            m.missing_scores.len()
        ));
    }
    if let Some(sections) = &report.rct {
        for s in sections {
            out.push_str(&format!("\n[rct] {}\n{}", s.metric.as_str(), s.table.to_text()));
        }
    }
    if let Some(m) = &report.overlap {
        out.push_str(&format!("\n[overlap] threshold {}\n", m.threshold));
        for (i, d) in m.datasets.iter().enumerate() {
            out.push_str(&format!(
                "{d}: N = {:.3}, self = {:.3}\n",
                m.row_total(i),
                m.self_neighbors(i)
            ));
        }
    }
    if let Some(rows) = &report.correlations {
        out.push_str("\n[correlations]\n");
        for r in rows {
            let rho = r
                .rho
                .map(|v| format!("{v:.4}{}", r.stars))
                .unwrap_or_else(|| "n/a".into());
            out.push_str(&format!(
                "{} {} threshold {}: {rho} (n = {})\n",
                r.metric.as_str(),
                r.level.as_str(),
                r.threshold,
                r.n
            ));
        }
    }
    if let Some(a) = &report.ablation {
        let reg = &a.fit.regression;
        out.push_str(&format!(
            "\n[ablation] loss = {:.4} + {:.4} ln N (95% CI for slope [{:.4}, {:.4}], n = {})\n",
            reg.alpha, reg.beta1, reg.ci_beta1.lo, reg.ci_beta1.hi, reg.n
        ));
        for r in &a.results {
            match r.ablated_loss {
                Some(v) => out.push_str(&format!("{}: {:.4} -> {:.4}\n", r.dataset, r.observed_loss, v)),
                None => out.push_str(&format!(
                    "{}: {:.4} -> fully self-supported\n",
                    r.dataset, r.observed_loss
                )),
            }
        }
    }
    if !report.gaps.is_empty() {
        out.push_str("\n[gaps]\n");
        for g in &report.gaps {
            out.push_str(&format!("{}: {}\n", g.section.as_str(), g.reason));
        }
    }
    out.push_str("\n[caveats]\n");
    for c in &report.metadata.caveats {
        out.push_str(c);
        out.push('\n');
    }
    out
}

/// Writes all tables, plot data and the summary into `dir`; returns the
/// written paths in a fixed order.
pub fn write_outputs(report: &AuditReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(String, String)> = vec![("report.json".into(), pretty(report)?)];
    if let Some(m) = &report.metrics {
        files.push(("metrics.csv".into(), metric_csv(&m.values)));
        files.push(("metrics_summary.csv".into(), summary_csv(&m.summary)));
    }
    if let Some(sections) = &report.rct {
        for s in sections {
            files.push((format!("rct_{}.csv", s.metric.as_str()), s.table.to_csv()));
            files.push((format!("rct_{}.txt", s.metric.as_str()), s.table.to_text()));
        }
    }
    if let Some(m) = &report.overlap {
        files.push(("overlap_matrix.csv".into(), m.to_csv()));
    }
    if let Some(rows) = &report.threshold_sweep {
        files.push(("threshold_sweep.csv".into(), sweep_csv(rows)));
    }
    if let Some(rows) = &report.correlations {
        files.push(("correlations.csv".into(), ablation::correlation_csv(rows)));
    }
    if let Some(a) = &report.ablation {
        files.push(("ablation.csv".into(), ablation::ablation_csv(&a.results)));
    }
    for figure in Figure::ALL {
        if let Ok(v) = emit_plot_data(report, figure) {
            files.push((figure.file_name().into(), pretty(&v)?));
        }
    }
    files.push(("summary.txt".into(), summary_text(report)));
    let mut written = Vec::new();
    for (name, contents) in files {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
