//! Audit configuration: a TOML file whose every field has a command-line
//! override.
//!
//! ```toml
//! seed = 0
//! output_dir = "audit-out"
//!
//! [inputs]                 # relative paths resolve against the config file
//! manifest = "corpus.jsonl"
//! scores = "scores.jsonl"
//! index = "snippets.idx"
//!
//! [metrics]
//! metrics = ["loss", "min_k", "token_accuracy", "verbatim"]
//! k_percent = 20.0
//! prompt_len = 40
//! continuation_len = 10
//! max_tokens = 256
//! cap = 1000               # documents per dataset and split
//!
//! [density]
//! thresholds = [50.0, 70.0, 90.0]   # required for density sections
//! primary_threshold = 50.0          # defaults to the first threshold
//! snippet_len = 50
//! stride = 40
//! k1 = 1.2
//! b = 0.75
//! query_cap = 1000
//! query_split = "train"    # "train", "test" or "all"
//! loss_level = "snippet"   # or "document"
//! correlation = "pearson"  # or "spearman"
//!
//! [sections]
//! metrics = true
//! rct = true
//! overlap = true
//! threshold_sweep = true
//! correlations = true
//! ablation = true
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ablation::LossLevel;
use crate::corpus::{Split, DEFAULT_DOC_CAP, DEFAULT_SNIPPET_LEN, DEFAULT_SNIPPET_STRIDE};
use crate::density::{Bm25Params, QuerySpec};
use crate::error::{Error, Result};
use crate::metrics::{Metric, MetricParams, WindowSpec, DEFAULT_K_PERCENT, DEFAULT_MAX_TOKENS};
use crate::stats::CorrelationKind;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    pub manifest: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub index: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub metrics: Vec<Metric>,
    pub k_percent: f64,
    pub prompt_len: usize,
    pub continuation_len: usize,
    pub max_tokens: usize,
    pub cap: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let w = WindowSpec::default();
        MetricsConfig {
            metrics: Metric::ALL.to_vec(),
            k_percent: DEFAULT_K_PERCENT,
            prompt_len: w.prompt_len,
            continuation_len: w.continuation_len,
            max_tokens: DEFAULT_MAX_TOKENS,
            cap: DEFAULT_DOC_CAP,
        }
    }
}

impl MetricsConfig {
    pub fn params(&self) -> MetricParams {
        MetricParams {
            k_percent: self.k_percent,
            window: WindowSpec {
                prompt_len: self.prompt_len,
                continuation_len: self.continuation_len,
                max_tokens: self.max_tokens,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuerySplit {
    #[default]
    Train,
    Test,
    All,
}

impl QuerySplit {
    pub fn split(self) -> Option<Split> {
        match self {
            QuerySplit::Train => Some(Split::Train),
            QuerySplit::Test => Some(Split::Test),
            QuerySplit::All => None,
        }
    }
}

impl std::str::FromStr for QuerySplit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(QuerySplit::Train),
            "test" => Ok(QuerySplit::Test),
            "all" => Ok(QuerySplit::All),
            _ => Err(Error::InvalidArgument(format!("unknown query split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    /// BM25 score radii. Absolute scores depend on the ranking parameters
    /// and corpus, so there is deliberately no default.
    pub thresholds: Vec<f64>,
    /// Threshold of the overlap matrix, density regression and ablation.
    pub primary_threshold: Option<f64>,
    pub snippet_len: usize,
    pub stride: usize,
    pub k1: f64,
    pub b: f64,
    pub query_cap: usize,
    pub query_split: QuerySplit,
    pub loss_level: LossLevel,
    pub correlation: CorrelationKind,
}

impl Default for DensityConfig {
    fn default() -> Self {
        let bm25 = Bm25Params::default();
        DensityConfig {
            thresholds: Vec::new(),
            primary_threshold: None,
            snippet_len: DEFAULT_SNIPPET_LEN,
            stride: DEFAULT_SNIPPET_STRIDE,
            k1: bm25.k1,
            b: bm25.b,
            query_cap: DEFAULT_DOC_CAP,
            query_split: QuerySplit::Train,
            loss_level: LossLevel::Snippet,
            correlation: CorrelationKind::Pearson,
        }
    }
}

impl DensityConfig {
    pub fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }

    pub fn query_spec(&self, seed: u64) -> QuerySpec {
        QuerySpec {
            cap: self.query_cap,
            seed,
            split: self.query_split.split(),
            snippet_len: self.snippet_len,
            stride: self.stride,
        }
    }

    pub fn primary(&self) -> Option<f64> {
        self.primary_threshold.or_else(|| self.thresholds.first().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sections {
    pub metrics: bool,
    pub rct: bool,
    pub overlap: bool,
    pub threshold_sweep: bool,
    pub correlations: bool,
    pub ablation: bool,
}

impl Default for Sections {
    fn default() -> Self {
        Sections {
            metrics: true,
            rct: true,
            overlap: true,
            threshold_sweep: true,
            correlations: true,
            ablation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub inputs: Inputs,
    pub metrics: MetricsConfig,
    pub density: DensityConfig,
    pub sections: Sections,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            seed: 0,
            output_dir: PathBuf::from("audit-out"),
            inputs: Inputs::default(),
            metrics: MetricsConfig::default(),
            density: DensityConfig::default(),
            sections: Sections::default(),
        }
    }
}

/// Every parameter that can change a reported number; paths and the output
/// location are excluded (input contents are fingerprinted separately).
#[derive(Serialize)]
struct HashedParams<'a> {
    seed: u64,
    metrics: &'a MetricsConfig,
    density: &'a DensityConfig,
    sections: &'a Sections,
}

impl AuditConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut config.inputs.manifest,
            &mut config.inputs.scores,
            &mut config.inputs.index,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        resolve(&mut config.output_dir);
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks parameter ranges. Input presence is checked per section when
    /// the pipeline runs.
    pub fn validate(&self) -> Result<()> {
        let m = &self.metrics;
        if !(m.k_percent > 0.0 && m.k_percent <= 100.0) {
            return Err(Error::Config(format!("k_percent {} must lie in (0, 100]", m.k_percent)));
        }
        m.params().window.validate()?;
        if m.cap == 0 || m.metrics.is_empty() {
            return Err(Error::Config(
                "metrics need a positive cap and at least one metric".into(),
            ));
        }
        let d = &self.density;
        d.bm25().validate()?;
        if d.snippet_len == 0 || d.stride == 0 || d.stride > d.snippet_len {
            return Err(Error::Config(format!(
                "snippet length {} and stride {} must satisfy 0 < stride <= length",
                d.snippet_len, d.stride
            )));
        }
        if d.query_cap == 0 {
            return Err(Error::Config("query_cap must be positive".into()));
        }
        if d.thresholds.iter().any(|t| t.is_nan()) {
            return Err(Error::Config("thresholds must be numbers".into()));
        }
        if let Some(p) = d.primary_threshold {
            if !d.thresholds.contains(&p) {
                return Err(Error::Config(format!(
                    "primary threshold {p} is not in the thresholds list"
                )));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 over the canonical JSON of all result-affecting parameters.
    pub fn config_hash(&self) -> String {
        let params = HashedParams {
            seed: self.seed,
            metrics: &self.metrics,
            density: &self.density,
            sections: &self.sections,
        };
        let bytes = serde_json::to_vec(&params).expect("parameters serialize");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_parses() {
        let doc = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let c = AuditConfig::from_toml(&doc).unwrap();
        c.validate().unwrap();
        assert_eq!(c.density.thresholds, vec![50.0, 70.0, 90.0]);
        assert_eq!(c.metrics, MetricsConfig::default());
        assert_eq!(c.density.primary(), Some(50.0));
    }

    #[test]
    fn hash_tracks_parameters_not_paths() {
        let a = AuditConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        b.inputs.manifest = Some("m.jsonl".into());
        assert_eq!(a.config_hash(), b.config_hash());
        b.metrics.k_percent = 10.0;
        assert_ne!(a.config_hash(), b.config_hash());
        let mut c = a.clone();
        c.density.thresholds = vec![60.0];
        assert_ne!(a.config_hash(), c.config_hash());
        assert_eq!(a.config_hash().len(), 64);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_rejected() {
        assert!(AuditConfig::from_toml("sede = 3").is_err());
        let c = AuditConfig::from_toml("[metrics]\nk_percent = 0.0").unwrap();
        assert!(c.validate().is_err());
        let c = AuditConfig::from_toml("[density]\nthresholds = [50.0]\nprimary_threshold = 70.0").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = AuditConfig::default();
        c.density.thresholds = vec![50.0, 70.0];
        c.inputs.index = Some("x.idx".into());
        assert_eq!(AuditConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.toml");
        std::fs::write(&path, "[inputs]\nmanifest = \"m.jsonl\"\n").unwrap();
        let c = AuditConfig::load(&path).unwrap();
        assert_eq!(c.inputs.manifest.unwrap(), dir.path().join("m.jsonl"));
        assert_eq!(c.output_dir, dir.path().join("audit-out"));
    }
}
