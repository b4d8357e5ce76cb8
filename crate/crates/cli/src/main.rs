//! `memaudit` command-line interface.
//!
//! Exit codes: 0 when every requested section was produced, 2 when some
//! sections were skipped for missing inputs (see the gap list), 1 on errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use memaudit::ablation::LossLevel;
use memaudit::config::{AuditConfig, QuerySplit, Sections};
use memaudit::corpus::{load_manifest, sample_fraction, snippetize, Snippet, Split};
use memaudit::density::{build_index, count_neighbors, Bm25Params, SnippetIndex};
use memaudit::metrics::Metric;
use memaudit::report::{run_pipeline, write_outputs};
use memaudit::scoring::{load_scores, write_scores};
use memaudit::stats::CorrelationKind;
use memaudit::toy_lm::synthetic::{make_synthetic_corpus, SyntheticSpec};
use memaudit::toy_lm::{training_corpus, NgramConfig, NgramModel};

#[derive(Parser)]
#[command(
    name = "memaudit",
    version,
    about = "Audit how training decisions relate to language-model memorization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a manifest (and optionally a scoring file) and print counts.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Cut documents into overlapping snippets (one JSON object per line).
    Snippetize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        window: SnippetArgs,
        /// Documents of this split only: train, test or all.
        #[arg(long, default_value = "all")]
        split: QuerySplit,
    },
    /// Build, inspect or query a BM25 snippet index.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Per-document memorization metrics and per-dataset summaries.
    Metrics(AnalysisArgs),
    /// Train/test regression of each metric, per dataset.
    Rct(AnalysisArgs),
    /// Dataset overlap matrix and threshold sweep.
    Density(AnalysisArgs),
    /// Density regression and simulated dataset ablation.
    Ablate(AnalysisArgs),
    /// Correlations of metrics with neighbor counts.
    Correlate(AnalysisArgs),
    /// Run every section enabled in the config.
    Report(AnalysisArgs),
    /// Synthetic corpora and the n-gram reference model.
    ToyLm {
        #[command(subcommand)]
        command: ToyCommand,
    },
}

#[derive(Args, Clone, Copy)]
struct SnippetArgs {
    /// Snippet width in tokens (default 50).
    #[arg(long, default_value_t = memaudit::corpus::DEFAULT_SNIPPET_LEN)]
    snippet_len: usize,
    /// Snippet stride in tokens (default 40).
    #[arg(long, default_value_t = memaudit::corpus::DEFAULT_SNIPPET_STRIDE)]
    stride: usize,
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Index the snippets of a manifest's documents.
    Build {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        window: SnippetArgs,
        /// Documents to index: train (default), test or all.
        #[arg(long, default_value = "train")]
        split: QuerySplit,
        /// Index a uniform sample of this fraction of the documents.
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.2)]
        k1: f64,
        #[arg(long, default_value_t = 0.75)]
        b: f64,
    },
    /// Print index statistics.
    Info {
        #[arg(long)]
        index: PathBuf,
    },
    /// Count neighbors of a free-text query per dataset.
    Query {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        text: String,
        /// BM25 score radius; neighbors score strictly above it.
        #[arg(long)]
        threshold: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Demo,
    DensityGradient,
}

#[derive(Subcommand)]
enum ToyCommand {
    /// Generate a synthetic corpus manifest.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "demo")]
        preset: Preset,
        /// JSON corpus spec; overrides the preset.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Number of datasets for the density-gradient preset.
        #[arg(long, default_value_t = 22)]
        datasets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train an add-delta n-gram model on the train split (with upweights).
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        /// Defaults to one more than the largest token id in the manifest.
        #[arg(long)]
        vocab_size: Option<u32>,
    },
    /// Score every manifest document and write a scoring file.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "toy-ngram")]
        model_id: String,
    },
}

/// Config file plus command-line overrides for the analysis subcommands.
#[derive(Args)]
struct AnalysisArgs {
    /// TOML audit config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seed for every sample (default 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Metric to compute; repeatable (default: all four).
    #[arg(long = "metric")]
    metrics: Vec<Metric>,
    /// MinK% share of lowest-probability tokens (default 20).
    #[arg(long)]
    k_percent: Option<f64>,
    /// Tokens per document considered (default 256).
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    prompt_len: Option<usize>,
    #[arg(long)]
    continuation_len: Option<usize>,
    /// Documents sampled per dataset and split (default 1000).
    #[arg(long)]
    cap: Option<usize>,
    /// BM25 score radius; repeatable. Required for density sections, e.g.
    /// 50, with 70 and 90 as a sweep.
    #[arg(long = "threshold")]
    thresholds: Vec<f64>,
    /// Threshold of the overlap matrix and ablation (default: the first).
    #[arg(long)]
    primary_threshold: Option<f64>,
    #[arg(long)]
    snippet_len: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    /// Query snippets sampled per dataset.
    #[arg(long)]
    query_cap: Option<usize>,
    /// Documents supplying query snippets: train, test or all.
    #[arg(long)]
    query_split: Option<QuerySplit>,
    /// Dataset loss for the density regression: snippet or document.
    #[arg(long)]
    loss_level: Option<String>,
    /// pearson or spearman.
    #[arg(long)]
    correlation: Option<String>,
}

impl AnalysisArgs {
    fn into_config(self, sections: Option<Sections>) -> Result<AuditConfig> {
        let mut c = match &self.config {
            Some(p) => AuditConfig::load(p)?,
            None => AuditConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        if self.manifest.is_some() {
            c.inputs.manifest = self.manifest;
        }
        if self.scores.is_some() {
            c.inputs.scores = self.scores;
        }
        if self.index.is_some() {
            c.inputs.index = self.index;
        }
        set!(c.output_dir, self.out_dir);
        set!(c.seed, self.seed);
        if !self.metrics.is_empty() {
            c.metrics.metrics = self.metrics;
        }
        set!(c.metrics.k_percent, self.k_percent);
        set!(c.metrics.max_tokens, self.max_tokens);
        set!(c.metrics.prompt_len, self.prompt_len);
        set!(c.metrics.continuation_len, self.continuation_len);
        set!(c.metrics.cap, self.cap);
        if !self.thresholds.is_empty() {
            c.density.thresholds = self.thresholds;
        }
        if self.primary_threshold.is_some() {
            c.density.primary_threshold = self.primary_threshold;
        }
        set!(c.density.snippet_len, self.snippet_len);
        set!(c.density.stride, self.stride);
        set!(c.density.k1, self.k1);
        set!(c.density.b, self.b);
        set!(c.density.query_cap, self.query_cap);
        set!(c.density.query_split, self.query_split);
        if let Some(level) = self.loss_level {
            c.density.loss_level = match level.as_str() {
                "snippet" => LossLevel::Snippet,
                "document" => LossLevel::Document,
                other => bail!("unknown loss level {other:?}; expected snippet or document"),
            };
        }
        if let Some(kind) = self.correlation {
            c.density.correlation = match kind.as_str() {
                "pearson" => CorrelationKind::Pearson,
                "spearman" => CorrelationKind::Spearman,
                other => bail!("unknown correlation {other:?}; expected pearson or spearman"),
            };
        }
        if let Some(s) = sections {
            c.sections = s;
        }
        Ok(c)
    }
}

fn only(f: impl FnOnce(&mut Sections)) -> Option<Sections> {
    let mut s = Sections {
        metrics: false,
        rct: false,
        overlap: false,
        threshold_sweep: false,
        correlations: false,
        ablation: false,
    };
    f(&mut s);
    Some(s)
}

fn analysis(args: AnalysisArgs, sections: Option<Sections>) -> Result<ExitCode> {
    let config = args.into_config(sections)?;
    let report = run_pipeline(&config)?;
    let written = write_outputs(&report, &config.output_dir)?;
    for p in &written {
        info!("wrote {}", p.display());
    }
    println!("config {}", report.metadata.config_hash);
    println!("wrote {} files to {}", written.len(), config.output_dir.display());
    if report.complete() {
        return Ok(ExitCode::SUCCESS);
    }
    for g in &report.gaps {
        eprintln!("gap: {}: {}", g.section.as_str(), g.reason);
    }
    Ok(ExitCode::from(2))
}

fn split_docs(split: QuerySplit, d: &memaudit::corpus::Document) -> bool {
    split.split().is_none_or(|s| d.split == s)
}

fn write_lines(path: &Path, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(&l);
        text.push('\n');
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Ingest { manifest, scores } => {
            let m = load_manifest(&manifest)?;
            let mut counts = std::collections::BTreeMap::<(String, Split), usize>::new();
            for d in &m.documents {
                *counts.entry((d.dataset_id.clone(), d.split)).or_default() += 1;
            }
            let mut datasets = Vec::new();
            for ds in &m.datasets {
                datasets.push(serde_json::json!({
                    "id": ds.id,
                    "name": ds.name,
                    "upweight": ds.upweight,
                    "train": counts.get(&(ds.id.clone(), Split::Train)).copied().unwrap_or(0),
                    "test": counts.get(&(ds.id.clone(), Split::Test)).copied().unwrap_or(0),
                }));
            }
            let mut summary = serde_json::json!({ "documents": m.documents.len(), "datasets": datasets });
            if let Some(path) = scores {
                let s = load_scores(&path, Some(&m))?;
                summary["scored_documents"] = s.len().into();
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Snippetize {
            manifest,
            out,
            window,
            split,
        } => {
            let m = load_manifest(&manifest)?;
            let mut lines = Vec::new();
            for d in m.documents.iter().filter(|d| split_docs(split, d)) {
                for s in snippetize(d, window.snippet_len, window.stride)? {
                    lines.push(serde_json::to_string(&s)?);
                }
            }
            println!("{} snippets", lines.len());
            write_lines(&out, lines)?;
        }
        Command::Index { command } => match command {
            IndexCommand::Build {
                manifest,
                out,
                window,
                split,
                fraction,
                seed,
                k1,
                b,
            } => {
                let m = load_manifest(&manifest)?;
                let docs = sample_fraction(&m, fraction, seed)?;
                let mut snippets: Vec<Snippet> = Vec::new();
                for d in docs.into_iter().filter(|d| split_docs(split, d)) {
                    snippets.extend(snippetize(d, window.snippet_len, window.stride)?);
                }
                let labels: Vec<String> = m.datasets.iter().map(|d| d.id.clone()).collect();
                let index = build_index(&snippets, Bm25Params { k1, b }, &labels)?;
                index.save(&out)?;
                println!(
                    "indexed {} snippets ({} empty skipped), {} terms",
                    index.len(),
                    index.skipped_empty(),
                    index.vocabulary_size()
                );
            }
            IndexCommand::Info { index } => {
                let idx = SnippetIndex::load(&index)?;
                let info = serde_json::json!({
                    "snippets": idx.len(),
                    "terms": idx.vocabulary_size(),
                    "average_length": idx.avg_len(),
                    "skipped_empty": idx.skipped_empty(),
                    "k1": idx.params().k1,
                    "b": idx.params().b,
                    "datasets": idx.datasets(),
                });
                println!("{}", serde_json::to_string_pretty(&info)?);
            }
            IndexCommand::Query { index, text, threshold } => {
                let idx = SnippetIndex::load(&index)?;
                let query = Snippet {
                    doc_id: String::new(),
                    dataset_id: String::new(),
                    start: usize::MAX,
                    length: text.split_whitespace().count(),
                    text,
                };
                let counts = count_neighbors(&idx, &query, threshold);
                for (d, c) in idx.datasets().iter().zip(counts) {
                    println!("{d}\t{c}");
                }
            }
        },
        Command::Metrics(a) => return analysis(a, only(|s| s.metrics = true)),
        Command::Rct(a) => return analysis(a, only(|s| s.rct = true)),
        Command::Density(a) => {
            return analysis(
                a,
                only(|s| {
                    s.overlap = true;
                    s.threshold_sweep = true
                }),
            )
        }
        Command::Ablate(a) => return analysis(a, only(|s| s.ablation = true)),
        Command::Correlate(a) => return analysis(a, only(|s| s.correlations = true)),
        Command::Report(a) => return analysis(a, None),
        Command::ToyLm { command } => match command {
            ToyCommand::Gen {
                out,
                preset,
                spec,
                datasets,
                seed,
            } => {
                let spec = match spec {
                    Some(p) => {
                        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                        serde_json::from_str::<SyntheticSpec>(&text)?
                    }
                    None => match preset {
                        Preset::Demo => SyntheticSpec::demo(seed),
                        Preset::DensityGradient => SyntheticSpec::density_gradient(datasets, seed),
                    },
                };
                let m = make_synthetic_corpus(&spec)?;
                m.write(&out)?;
                println!(
                    "{} documents in {} datasets, vocabulary {}",
                    m.documents.len(),
                    m.datasets.len(),
                    spec.vocab_size
                );
            }
            ToyCommand::Train {
                manifest,
                out,
                order,
                delta,
                vocab_size,
            } => {
                let m = load_manifest(&manifest)?;
                let vocab_size = match vocab_size {
                    Some(v) => v,
                    None => m
                        .documents
                        .iter()
                        .flat_map(|d| d.tokens.iter())
                        .max()
                        .map_or(1, |&t| t + 1),
                };
                let model = NgramModel::train(
                    NgramConfig {
                        order,
                        delta,
                        vocab_size,
                    },
                    training_corpus(&m),
                )?;
                model.save(&out)?;
                println!("{} contexts, vocabulary {vocab_size}", model.context_count());
            }
            ToyCommand::Score {
                model,
                manifest,
                out,
                model_id,
            } => {
                let model = NgramModel::load(&model)?;
                let m = load_manifest(&manifest)?;
                let records = model.score_all(&m.documents, &model_id)?;
                write_scores(&out, &records)?;
                println!("scored {} documents", records.len());
            }
        },
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
