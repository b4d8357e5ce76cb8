//! Python bindings for the memorization audit toolkit.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use memaudit::config::AuditConfig as CoreConfig;
use memaudit::corpus::{self, CorpusManifest, Snippet, Split};
use memaudit::density::{self, Bm25Params};
use memaudit::metrics::{self, WindowSpec};
use memaudit::report::{self, AuditReport as CoreReport};
use memaudit::scoring::{self, ScoringRecord as CoreRecord};
use memaudit::stats::{self, CorrelationResult, RegressionResult};
use memaudit::toy_lm::synthetic::{make_synthetic_corpus, SyntheticSpec};
use memaudit::toy_lm::{self, NgramConfig};

create_exception!(memaudit_py, MemauditError, PyException);

fn err(e: memaudit::Error) -> PyErr {
    MemauditError::new_err(e.to_string())
}

fn parse_split(split: &str) -> PyResult<Option<Split>> {
    match split {
        "train" => Ok(Some(Split::Train)),
        "test" => Ok(Some(Split::Test)),
        "all" => Ok(None),
        other => Err(PyValueError::new_err(format!(
            "split must be train, test or all, not {other:?}"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Corpus

/// A corpus manifest: dataset components and their tokenized documents.
#[pyclass(frozen)]
struct Manifest {
    inner: CorpusManifest,
}

#[pymethods]
impl Manifest {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Manifest {
            inner: corpus::load_manifest(&path).map_err(err)?,
        })
    }

    /// Synthetic corpus from a preset: "demo" or "density-gradient".
    #[staticmethod]
    #[pyo3(signature = (preset = "demo", seed = 0, datasets = 22))]
    fn synthetic(preset: &str, seed: u64, datasets: usize) -> PyResult<Self> {
        let spec = match preset {
            "demo" => SyntheticSpec::demo(seed),
            "density-gradient" => SyntheticSpec::density_gradient(datasets, seed),
            other => return Err(PyValueError::new_err(format!("unknown preset {other:?}"))),
        };
        Ok(Manifest {
            inner: make_synthetic_corpus(&spec).map_err(err)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.documents.len()
    }

    /// `(id, name, upweight)` per dataset.
    fn datasets(&self) -> Vec<(String, String, u32)> {
        self.inner
            .datasets
            .iter()
            .map(|d| (d.id.clone(), d.name.clone(), d.upweight))
            .collect()
    }

    /// Document ids, optionally restricted to one dataset and split.
    #[pyo3(signature = (dataset = None, split = "all"))]
    fn document_ids(&self, dataset: Option<&str>, split: &str) -> PyResult<Vec<String>> {
        let split = parse_split(split)?;
        Ok(self
            .inner
            .documents
            .iter()
            .filter(|d| dataset.is_none_or(|ds| d.dataset_id == ds))
            .filter(|d| split.is_none_or(|s| d.split == s))
            .map(|d| d.id.clone())
            .collect())
    }

    fn tokens(&self, doc_id: &str) -> PyResult<Vec<u32>> {
        self.inner
            .document(doc_id)
            .map(|d| d.tokens.clone())
            .ok_or_else(|| PyValueError::new_err(format!("no document {doc_id:?}")))
    }

    /// `(start, length, text)` snippets of one document.
    #[pyo3(signature = (doc_id, length = corpus::DEFAULT_SNIPPET_LEN, stride = corpus::DEFAULT_SNIPPET_STRIDE))]
    fn snippets(&self, doc_id: &str, length: usize, stride: usize) -> PyResult<Vec<(usize, usize, String)>> {
        let doc = self
            .inner
            .document(doc_id)
            .ok_or_else(|| PyValueError::new_err(format!("no document {doc_id:?}")))?;
        Ok(corpus::snippetize(doc, length, stride)
            .map_err(err)?
            .into_iter()
            .map(|s| (s.start, s.length, s.text))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Manifest({} datasets, {} documents)",
            self.inner.datasets.len(),
            self.inner.documents.len()
        )
    }
}

/// `(start, length)` of the snippets cut from an `n_tokens`-token document.
#[pyfunction]
#[pyo3(signature = (n_tokens, length = corpus::DEFAULT_SNIPPET_LEN, stride = corpus::DEFAULT_SNIPPET_STRIDE))]
fn window_offsets(n_tokens: usize, length: usize, stride: usize) -> Vec<(usize, usize)> {
    corpus::window_offsets(n_tokens, length, stride)
}

// ---------------------------------------------------------------------------
// Scoring records and metrics

/// Per-token NLLs (nats) and argmax flags for one document.
#[pyclass(frozen, from_py_object)]
#[derive(Clone)]
struct ScoringRecord {
    inner: CoreRecord,
}

#[pymethods]
impl ScoringRecord {
    #[new]
    fn new(doc_id: String, model_id: String, nll: Vec<f64>, argmax_hit: Vec<bool>) -> PyResult<Self> {
        let inner = CoreRecord {
            doc_id,
            model_id,
            nll,
            argmax_hit,
        };
        let location = memaudit::error::Location {
            path: PathBuf::from("<python>"),
            line: 0,
        };
        inner.validate(&location).map_err(err)?;
        Ok(ScoringRecord { inner })
    }

    #[getter]
    fn doc_id(&self) -> &str {
        &self.inner.doc_id
    }

    #[getter]
    fn model_id(&self) -> &str {
        &self.inner.model_id
    }

    #[getter]
    fn nll(&self) -> Vec<f64> {
        self.inner.nll.clone()
    }

    #[getter]
    fn argmax_hit(&self) -> Vec<bool> {
        self.inner.argmax_hit.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[pyo3(signature = (max_tokens = metrics::DEFAULT_MAX_TOKENS))]
    fn loss(&self, max_tokens: usize) -> PyResult<f64> {
        Ok(metrics::loss(&self.inner, max_tokens).map_err(err)?.value)
    }

    #[pyo3(signature = (k_percent = metrics::DEFAULT_K_PERCENT, max_tokens = metrics::DEFAULT_MAX_TOKENS))]
    fn mink(&self, k_percent: f64, max_tokens: usize) -> PyResult<f64> {
        Ok(metrics::mink(&self.inner, k_percent, max_tokens).map_err(err)?.value)
    }

    /// `None` when the document is too short for one window.
    #[pyo3(signature = (prompt_len = 40, continuation_len = 10, max_tokens = metrics::DEFAULT_MAX_TOKENS))]
    fn token_accuracy(&self, prompt_len: usize, continuation_len: usize, max_tokens: usize) -> PyResult<Option<f64>> {
        let spec = WindowSpec {
            prompt_len,
            continuation_len,
            max_tokens,
        };
        Ok(metrics::token_accuracy(&self.inner, &spec)
            .map_err(err)?
            .map(|v| v.value))
    }

    #[pyo3(signature = (prompt_len = 40, continuation_len = 10, max_tokens = metrics::DEFAULT_MAX_TOKENS))]
    fn verbatim(&self, prompt_len: usize, continuation_len: usize, max_tokens: usize) -> PyResult<Option<f64>> {
        let spec = WindowSpec {
            prompt_len,
            continuation_len,
            max_tokens,
        };
        Ok(metrics::verbatim(&self.inner, &spec).map_err(err)?.map(|v| v.value))
    }

    fn __repr__(&self) -> String {
        format!(
            "ScoringRecord({:?}, model {:?}, {} positions)",
            self.inner.doc_id,
            self.inner.model_id,
            self.inner.len()
        )
    }
}

/// Loads and validates a scoring file, cross-checking lengths against the
/// manifest when one is given.
#[pyfunction]
#[pyo3(signature = (path, manifest = None))]
fn load_scores(path: PathBuf, manifest: Option<&Manifest>) -> PyResult<BTreeMap<String, ScoringRecord>> {
    let set = scoring::load_scores(&path, manifest.map(|m| &m.inner)).map_err(err)?;
    Ok(set.into_iter().map(|(k, inner)| (k, ScoringRecord { inner })).collect())
}

#[pyfunction]
fn write_scores(path: PathBuf, records: Vec<ScoringRecord>) -> PyResult<()> {
    scoring::write_scores(&path, records.iter().map(|r| &r.inner)).map_err(err)
}

// ---------------------------------------------------------------------------
// Statistics

/// Least-squares fit of `y = alpha + beta1 * x` with 95% t intervals.
#[pyclass(frozen, get_all)]
struct Regression {
    alpha: f64,
    beta1: f64,
    se_alpha: f64,
    se_beta1: f64,
    ci_alpha: (f64, f64),
    ci_beta1: (f64, f64),
    r2: f64,
    n: usize,
}

impl From<RegressionResult> for Regression {
    fn from(r: RegressionResult) -> Self {
        Regression {
            alpha: r.alpha,
            beta1: r.beta1,
            se_alpha: r.se_alpha,
            se_beta1: r.se_beta1,
            ci_alpha: (r.ci_alpha.lo, r.ci_alpha.hi),
            ci_beta1: (r.ci_beta1.lo, r.ci_beta1.hi),
            r2: r.r2,
            n: r.n,
        }
    }
}

#[pymethods]
impl Regression {
    fn __repr__(&self) -> String {
        format!(
            "Regression(alpha={:.6}, beta1={:.6}, ci_beta1=({:.6}, {:.6}), n={})",
            self.alpha, self.beta1, self.ci_beta1.0, self.ci_beta1.1, self.n
        )
    }
}

#[pyclass(frozen, get_all)]
struct Correlation {
    rho: f64,
    p: f64,
    stars: String,
    n: usize,
}

impl From<CorrelationResult> for Correlation {
    fn from(c: CorrelationResult) -> Self {
        Correlation {
            rho: c.rho,
            p: c.p,
            stars: c.stars.as_str().to_string(),
            n: c.n,
        }
    }
}

#[pymethods]
impl Correlation {
    fn __repr__(&self) -> String {
        format!(
            "Correlation({:.4}{}, p={:.3e}, n={})",
            self.rho, self.stars, self.p, self.n
        )
    }
}

#[pyfunction]
fn ols(y: Vec<f64>, x: Vec<f64>) -> PyResult<Regression> {
    Ok(stats::ols(&y, &x).map_err(err)?.into())
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<Correlation> {
    Ok(stats::pearson(&x, &y).map_err(err)?.into())
}

#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<Correlation> {
    Ok(stats::spearman(&x, &y).map_err(err)?.into())
}

/// Predicted loss change `beta1 (ln n - ln n_prime)` of removing a dataset.
#[pyfunction]
fn ablation_delta(beta1: f64, n: f64, n_prime: f64) -> f64 {
    memaudit::ablation::ablation_delta(beta1, n, n_prime)
}

// ---------------------------------------------------------------------------
// BM25 snippet index

#[pyclass(frozen)]
struct SnippetIndex {
    inner: density::SnippetIndex,
}

#[pymethods]
impl SnippetIndex {
    /// Indexes the snippets of the manifest documents in `split`.
    #[staticmethod]
    #[pyo3(signature = (manifest, split = "train", k1 = 1.2, b = 0.75, length = corpus::DEFAULT_SNIPPET_LEN, stride = corpus::DEFAULT_SNIPPET_STRIDE))]
    fn build(manifest: &Manifest, split: &str, k1: f64, b: f64, length: usize, stride: usize) -> PyResult<Self> {
        let split = parse_split(split)?;
        let mut snippets: Vec<Snippet> = Vec::new();
        for d in manifest
            .inner
            .documents
            .iter()
            .filter(|d| split.is_none_or(|s| d.split == s))
        {
            snippets.extend(corpus::snippetize(d, length, stride).map_err(err)?);
        }
        let labels: Vec<String> = manifest.inner.datasets.iter().map(|d| d.id.clone()).collect();
        Ok(SnippetIndex {
            inner: density::build_index(&snippets, Bm25Params { k1, b }, &labels).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(SnippetIndex {
            inner: density::SnippetIndex::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn datasets(&self) -> Vec<String> {
        self.inner.datasets().to_vec()
    }

    /// Neighbors of free text per dataset: snippets scoring strictly above
    /// `threshold`.
    fn count_neighbors(&self, text: String, threshold: f64) -> BTreeMap<String, u64> {
        let query = Snippet {
            doc_id: String::new(),
            dataset_id: String::new(),
            start: usize::MAX,
            length: text.split_whitespace().count(),
            text,
        };
        self.inner
            .datasets()
            .iter()
            .cloned()
            .zip(density::count_neighbors(&self.inner, &query, threshold))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "SnippetIndex({} snippets, {} terms, k1={}, b={})",
            self.inner.len(),
            self.inner.vocabulary_size(),
            self.inner.params().k1,
            self.inner.params().b
        )
    }
}

// ---------------------------------------------------------------------------
// Reference n-gram model

#[pyclass(frozen)]
struct NgramModel {
    inner: toy_lm::NgramModel,
}

#[pymethods]
impl NgramModel {
    /// Trains on the manifest's train split, each document repeated by its
    /// dataset's upweight.
    #[staticmethod]
    #[pyo3(signature = (manifest, order = 3, delta = 0.1, vocab_size = None))]
    fn train(manifest: &Manifest, order: usize, delta: f64, vocab_size: Option<u32>) -> PyResult<Self> {
        let vocab_size = vocab_size.unwrap_or_else(|| {
            manifest
                .inner
                .documents
                .iter()
                .flat_map(|d| d.tokens.iter())
                .max()
                .map_or(1, |&t| t + 1)
        });
        let config = NgramConfig {
            order,
            delta,
            vocab_size,
        };
        Ok(NgramModel {
            inner: toy_lm::NgramModel::train(config, toy_lm::training_corpus(&manifest.inner)).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(NgramModel {
            inner: toy_lm::NgramModel::load(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    fn prob(&self, context: Vec<u32>, token: u32) -> f64 {
        self.inner.prob(&context, token)
    }

    /// Scoring records for every manifest document.
    #[pyo3(signature = (manifest, model_id = "toy-ngram"))]
    fn score(&self, manifest: &Manifest, model_id: &str) -> PyResult<Vec<ScoringRecord>> {
        Ok(self
            .inner
            .score_all(&manifest.inner.documents, model_id)
            .map_err(err)?
            .into_iter()
            .map(|inner| ScoringRecord { inner })
            .collect())
    }
}

// ---------------------------------------------------------------------------
// Configuration and pipeline

#[pyclass]
struct AuditConfig {
    inner: CoreConfig,
}

#[pymethods]
impl AuditConfig {
    #[new]
    #[pyo3(signature = (manifest = None, scores = None, index = None, thresholds = Vec::new(), seed = 0))]
    fn new(
        manifest: Option<PathBuf>,
        scores: Option<PathBuf>,
        index: Option<PathBuf>,
        thresholds: Vec<f64>,
        seed: u64,
    ) -> Self {
        let mut inner = CoreConfig::default();
        inner.inputs.manifest = manifest;
        inner.inputs.scores = scores;
        inner.inputs.index = index;
        inner.density.thresholds = thresholds;
        inner.seed = seed;
        AuditConfig { inner }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(AuditConfig {
            inner: CoreConfig::load(&path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(AuditConfig {
            inner: CoreConfig::from_toml(text).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn config_hash(&self) -> String {
        self.inner.config_hash()
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    #[setter]
    fn set_output_dir(&mut self, dir: PathBuf) {
        self.inner.output_dir = dir;
    }
}

#[pyclass(frozen)]
struct AuditReport {
    inner: CoreReport,
}

#[pymethods]
impl AuditReport {
    #[getter]
    fn complete(&self) -> bool {
        self.inner.complete()
    }

    /// `(section, reason)` for every requested section that was skipped.
    #[getter]
    fn gaps(&self) -> Vec<(String, String)> {
        self.inner
            .gaps
            .iter()
            .map(|g| (g.section.as_str().to_string(), g.reason.clone()))
            .collect()
    }

    #[getter]
    fn config_hash(&self) -> &str {
        &self.inner.metadata.config_hash
    }

    /// The full report as JSON text (the contents of `report.json`).
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(|e| MemauditError::new_err(e.to_string()))
    }

    fn summary(&self) -> String {
        report::summary_text(&self.inner)
    }

    /// Writes every output file to `directory` and returns their paths.
    fn write(&self, directory: PathBuf) -> PyResult<Vec<PathBuf>> {
        report::write_outputs(&self.inner, &directory).map_err(err)
    }
}

#[pyfunction]
fn run_pipeline(config: &AuditConfig) -> PyResult<AuditReport> {
    Ok(AuditReport {
        inner: report::run_pipeline(&config.inner).map_err(err)?,
    })
}

#[pymodule]
fn memaudit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("MemauditError", m.py().get_type::<MemauditError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Manifest>()?;
    m.add_class::<ScoringRecord>()?;
    m.add_class::<Regression>()?;
    m.add_class::<Correlation>()?;
    m.add_class::<SnippetIndex>()?;
    m.add_class::<NgramModel>()?;
    m.add_class::<AuditConfig>()?;
    m.add_class::<AuditReport>()?;
    m.add_function(wrap_pyfunction!(window_offsets, m)?)?;
    m.add_function(wrap_pyfunction!(load_scores, m)?)?;
    m.add_function(wrap_pyfunction!(write_scores, m)?)?;
    m.add_function(wrap_pyfunction!(ols, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(ablation_delta, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
