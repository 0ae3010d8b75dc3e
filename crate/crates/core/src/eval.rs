//! Evaluation harness: ranking and classification metrics, seeded splits and
//! experiment runs that write per-item records plus aggregates.
//!
//! Aggregates are always computed from the serialized records, so re-reading
//! `records.jsonl` and calling [`aggregate`] reproduces `aggregate.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::{self, canonical_json, canonical_line, load_corpus, Corpus, CorpusError};
use crate::execmodel::{build_model, ModelError};
use crate::ranking::Ranking;
use crate::s2r::{assess_s2rs, AssessConfig, MatchConfig, Verdict};
use crate::solution::{self, ClassifierKind, LabeledDataset, SolutionError, TrainConfig};
use crate::uiloc::{
    localize_components, localize_screens, ob_embedding_key, ob_query_text, rerank_code_files, Bm25Params,
    DenseQuery, EmbeddingStore, FusionMethod, LocalizeConfig, UilocError,
};

// ---------------------------------------------------------------------------
// Metrics

/// 1 iff a gold id is among the first `k` entries.
pub fn hits_at_k(ranking: &Ranking, gold: &BTreeSet<String>, k: usize) -> u8 {
    assert!(k >= 1, "k must be at least 1");
    ranking.entries.iter().take(k).any(|e| gold.contains(&e.doc_id)) as u8
}

/// 1-based rank of the first gold entry.
pub fn first_gold_rank(ranking: &Ranking, gold: &BTreeSet<String>) -> Option<usize> {
    ranking.entries.iter().position(|e| gold.contains(&e.doc_id)).map(|p| p + 1)
}

pub fn reciprocal_rank(ranking: &Ranking, gold: &BTreeSet<String>) -> f64 {
    first_gold_rank(ranking, gold).map_or(0.0, |r| 1.0 / r as f64)
}

/// Mean reciprocal rank; 0 for no queries.
pub fn mrr(queries: &[(Ranking, BTreeSet<String>)]) -> f64 {
    mean(queries.iter().map(|(r, g)| reciprocal_rank(r, g)))
}

/// Mean of precision@i over the ranks i holding gold ids, divided by |gold|.
pub fn average_precision(ranking: &Ranking, gold: &BTreeSet<String>) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let mut found = 0usize;
    let mut sum = 0.0;
    for (i, e) in ranking.entries.iter().enumerate() {
        if gold.contains(&e.doc_id) {
            found += 1;
            sum += found as f64 / (i + 1) as f64;
        }
    }
    sum / gold.len() as f64
}

fn mean<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Binary precision/recall/F1 on label 1; zero denominators give 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryMetrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl BinaryMetrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        BinaryMetrics { tp, fp, fn_, tn, precision, recall, f1 }
    }

    /// From `(predicted, gold)` pairs.
    pub fn from_pairs<I: IntoIterator<Item = (u8, u8)>>(pairs: I) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (p, g) in pairs {
            match (p, g) {
                (1, 1) => tp += 1,
                (1, _) => fp += 1,
                (_, 1) => fn_ += 1,
                _ => tn += 1,
            }
        }
        Self::from_counts(tp, fp, fn_, tn)
    }
}

// ---------------------------------------------------------------------------
// Seeded splitting

/// 64-bit linear congruential generator,
/// `state = state * 6364136223846793005 + 1442695040888963407 (mod 2^64)`.
/// Each call advances the state once and derives output from the new state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub const MULTIPLIER: u64 = 6364136223846793005;
    pub const INCREMENT: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Self {
        Lcg { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(Self::MULTIPLIER).wrapping_add(Self::INCREMENT);
        self.state
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// `(next >> 33) % n`, using the high bits only.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.next_u64() >> 33) % n as u64) as usize
    }

    /// Fisher–Yates from the last position down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error("TOO_FEW_ITEMS: {items} items cannot fill {k} folds")]
    TooFewItems { items: usize, k: usize },
    #[error("INVALID_CONFIG: k must be at least 2, got {0}")]
    BadK(usize),
}

impl SplitError {
    pub fn code(&self) -> &'static str {
        match self {
            SplitError::TooFewItems { .. } => "TOO_FEW_ITEMS",
            SplitError::BadK(_) => "INVALID_CONFIG",
        }
    }
}

/// Seeded k-fold split of `n` items.
///
/// Unstratified: shuffle `0..n` and deal position `p` to fold `p % k`.
/// Stratified: shuffle each label's indices separately (labels ascending,
/// one generator), concatenate, then deal round-robin the same way.
/// Index lists come back ascending.
pub fn kfold_split(n: usize, k: usize, seed: u64, labels: Option<&[u8]>) -> Result<Vec<Fold>, SplitError> {
    if k < 2 {
        return Err(SplitError::BadK(k));
    }
    if n < k {
        return Err(SplitError::TooFewItems { items: n, k });
    }
    let mut rng = Lcg::new(seed);
    let order: Vec<usize> = match labels {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            idx
        }
        Some(labels) => {
            assert_eq!(labels.len(), n, "one label per item");
            let mut by_label: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
            for (i, &l) in labels.iter().enumerate() {
                by_label.entry(l).or_default().push(i);
            }
            let mut order = Vec::with_capacity(n);
            for (_, mut idx) in by_label {
                rng.shuffle(&mut idx);
                order.extend(idx);
            }
            order
        }
    };
    let mut tests = vec![Vec::new(); k];
    for (p, i) in order.into_iter().enumerate() {
        tests[p % k].push(i);
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let held: BTreeSet<usize> = test.iter().copied().collect();
            let train = (0..n).filter(|i| !held.contains(i)).collect();
            Fold { train, test }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Experiments

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Pipeline {
    S2r,
    UilocScreen,
    UilocComponent,
    Solution,
    CodeRerank,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::S2r => "S2R",
            Pipeline::UilocScreen => "UILOC_SCREEN",
            Pipeline::UilocComponent => "UILOC_COMPONENT",
            Pipeline::Solution => "SOLUTION",
            Pipeline::CodeRerank => "CODE_RERANK",
        }
    }
}

fn default_k_values() -> Vec<usize> {
    vec![1, 3, 5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub pipeline: Pipeline,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Pre-featurized dataset (SOLUTION only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Directory of `.emb` files; defaults to `<corpus>/embeddings`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default)]
    pub config: BTreeMap<String, Value>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
}

impl ExperimentSpec {
    /// Reads a JSON spec; relative paths resolve against the spec's directory.
    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut de = serde_json::Deserializer::from_str(&text);
        let mut spec: ExperimentSpec = serde_path_to_error::deserialize(&mut de)
            .map_err(|e| ExperimentError::MalformedSpec(format!("{}: field `{}`: {}", path.display(), e.path(), e.inner())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut spec.corpus, &mut spec.dataset, &mut spec.embeddings].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !corpus::is_valid_id(&self.name) {
            return Err(ExperimentError::InvalidConfig(format!("name {:?} is not a valid identifier", self.name)));
        }
        if self.k_values.is_empty() || self.k_values[0] == 0 || self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ExperimentError::InvalidConfig("k_values must be positive and strictly ascending".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct S2rExperimentConfig {
    pub tau_high: f64,
    pub tau_match: f64,
    pub delta: f64,
    pub use_gold: bool,
}

impl Default for S2rExperimentConfig {
    fn default() -> Self {
        let m = MatchConfig::default();
        S2rExperimentConfig {
            tau_high: m.tau_high,
            tau_match: m.tau_match,
            delta: m.delta,
            use_gold: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionName {
    Minmax,
    Rrf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UilocExperimentConfig {
    pub k1: f64,
    pub b: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub fusion: FusionName,
    pub fusion_weights: [f64; 2],
    pub rrf_k: f64,
    pub dense: bool,
}

impl Default for UilocExperimentConfig {
    fn default() -> Self {
        let c = LocalizeConfig::default();
        UilocExperimentConfig {
            k1: c.bm25.k1,
            b: c.bm25.b,
            alpha: c.alpha,
            gamma: c.gamma,
            fusion: FusionName::Minmax,
            fusion_weights: c.fusion_weights,
            rrf_k: 60.0,
            dense: false,
        }
    }
}

impl UilocExperimentConfig {
    pub fn localize_config(&self) -> Result<LocalizeConfig, ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.k1 >= 0.0) || !(0.0..=1.0).contains(&self.b) {
            return bad("k1 must be >= 0 and b in [0, 1]");
        }
        if !(self.rrf_k > 0.0) {
            return bad("rrf_k must be > 0");
        }
        Ok(LocalizeConfig {
            bm25: Bm25Params { k1: self.k1, b: self.b },
            fusion_weights: self.fusion_weights,
            fusion: match self.fusion {
                FusionName::Minmax => FusionMethod::MinMax,
                FusionName::Rrf => FusionMethod::Rrf { k: self.rrf_k },
            },
            alpha: self.alpha,
            gamma: self.gamma,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    #[serde(default = "two")]
    pub dim: usize,
    #[serde(default = "one")]
    pub margin: f64,
    #[serde(default)]
    pub seed: u64,
}

fn two() -> usize {
    2
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolutionExperimentConfig {
    pub kind: ClassifierKind,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub threshold: f64,
    pub class_weighting: bool,
    pub folds: usize,
    pub synthetic: Option<SyntheticSpec>,
}

impl Default for SolutionExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        SolutionExperimentConfig {
            kind: t.kind,
            lambda: t.lambda,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            threshold: t.threshold,
            class_weighting: t.class_weighting,
            folds: 5,
            synthetic: None,
        }
    }
}

impl SolutionExperimentConfig {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            kind: self.kind,
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed,
            threshold: self.threshold,
            class_weighting: self.class_weighting,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("INVALID_CONFIG: {0}")]
    InvalidConfig(String),
    #[error("MALFORMED_SPEC: {0}")]
    MalformedSpec(String),
    #[error("MALFORMED_RECORD: line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Uiloc(#[from] UilocError),
    #[error(transparent)]
    Solution(#[from] SolutionError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error("IO_FAILURE: {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ExperimentError {
    pub fn code(&self) -> &'static str {
        match self {
            ExperimentError::InvalidConfig(_) => "INVALID_CONFIG",
            ExperimentError::MalformedSpec(_) => "MALFORMED_SPEC",
            ExperimentError::MalformedRecord { .. } => "MALFORMED_RECORD",
            ExperimentError::Corpus(e) => e.code(),
            ExperimentError::Model(e) => e.code(),
            ExperimentError::Uiloc(e) => e.code(),
            ExperimentError::Solution(e) => e.code(),
            ExperimentError::Split(e) => e.code(),
            ExperimentError::Io { .. } => "IO_FAILURE",
        }
    }

    /// Input problems (bad files, bad specs) as opposed to domain failures.
    pub fn is_input_error(&self) -> bool {
        match self {
            ExperimentError::MalformedSpec(_) | ExperimentError::MalformedRecord { .. } | ExperimentError::Io { .. } => true,
            ExperimentError::Corpus(e) => !matches!(e, CorpusError::Invalid(_)),
            ExperimentError::Uiloc(e) => matches!(e, UilocError::Io(_) | UilocError::MalformedEmbeddings { .. }),
            ExperimentError::Solution(e) => matches!(e, SolutionError::MalformedFile { .. }),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// SHA-256 of the corpus (or dataset) the run read.
    pub data_hash: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub pipeline: Pipeline,
    pub k_values: Vec<usize>,
    pub environment: Environment,
    /// Resolved pipeline configuration, defaults filled in.
    pub config: Value,
    #[serde(skip)]
    pub records: Vec<Value>,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S2rRecord {
    pub issue_id: String,
    pub steps: usize,
    pub correct: usize,
    pub ambiguous: usize,
    pub vocab_mismatch: usize,
    pub missing_steps: usize,
    pub final_screen: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankScores {
    pub first_gold_rank: Option<usize>,
    pub reciprocal_rank: f64,
    pub average_precision: f64,
    pub hits: BTreeMap<String, u8>,
}

impl RankScores {
    pub fn compute(ranking: &Ranking, gold: &BTreeSet<String>, k_values: &[usize]) -> Self {
        RankScores {
            first_gold_rank: first_gold_rank(ranking, gold),
            reciprocal_rank: reciprocal_rank(ranking, gold),
            average_precision: average_precision(ranking, gold),
            hits: k_values.iter().map(|&k| (k.to_string(), hits_at_k(ranking, gold, k))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub issue_id: String,
    pub gold: Vec<String>,
    pub top: Vec<String>,
    pub scores: RankScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeRecord {
    pub issue_id: String,
    pub gold: Vec<String>,
    pub top: Vec<String>,
    pub base: RankScores,
    pub reranked: RankScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub fold: usize,
    pub issue_id: String,
    pub comment_id: String,
    pub label: u8,
    pub predicted: u8,
    pub probability: f64,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn typed_config<T: DeserializeOwned>(config: &BTreeMap<String, Value>) -> Result<T, ExperimentError> {
    let v = Value::Object(config.clone().into_iter().collect());
    serde_path_to_error::deserialize(v)
        .map_err(|e| ExperimentError::MalformedSpec(format!("field `config.{}`: {}", e.path(), e.inner())))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("records serialize")
}

fn load_spec_corpus(spec: &ExperimentSpec) -> Result<(Corpus, PathBuf), ExperimentError> {
    let root = spec
        .corpus
        .clone()
        .ok_or_else(|| ExperimentError::InvalidConfig("pipeline needs a corpus path".into()))?;
    Ok((load_corpus(&root)?, root))
}

fn embeddings_dir(spec: &ExperimentSpec, corpus_root: &Path) -> PathBuf {
    spec.embeddings.clone().unwrap_or_else(|| corpus_root.join("embeddings"))
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, ExperimentError> {
    spec.validate()?;
    let (data_hash, config, records) = match spec.pipeline {
        Pipeline::S2r => run_s2r(spec)?,
        Pipeline::UilocScreen | Pipeline::UilocComponent => run_uiloc(spec)?,
        Pipeline::CodeRerank => run_code(spec)?,
        Pipeline::Solution => run_solution(spec)?,
    };
    let metrics = aggregate(spec.pipeline, &spec.k_values, &records)?;
    Ok(ExperimentResult {
        name: spec.name.clone(),
        pipeline: spec.pipeline,
        k_values: spec.k_values.clone(),
        environment: Environment {
            data_hash,
            config_hash: sha256_hex(canonical_json(&config).as_bytes()),
            seed: spec.seed,
        },
        config,
        records,
        metrics,
    })
}

type Run = (String, Value, Vec<Value>);

fn run_s2r(spec: &ExperimentSpec) -> Result<Run, ExperimentError> {
    let cfg: S2rExperimentConfig = typed_config(&spec.config)?;
    let (corpus, _) = load_spec_corpus(spec)?;
    let assess = AssessConfig {
        matching: MatchConfig { tau_high: cfg.tau_high, tau_match: cfg.tau_match, delta: cfg.delta },
        use_gold: cfg.use_gold,
    };
    let mut models = BTreeMap::new();
    let mut records = Vec::new();
    for issue in &corpus.issues {
        let app = corpus.app(&issue.app_id).expect("validated corpus");
        if !models.contains_key(&app.id) {
            models.insert(app.id.clone(), build_model(&app.traces, &app.screens)?);
        }
        let report = assess_s2rs(issue, &models[&app.id], &assess)?;
        records.push(to_value(&S2rRecord {
            issue_id: issue.id.clone(),
            steps: report.annotations.len(),
            correct: report.count(Verdict::Correct),
            ambiguous: report.count(Verdict::Ambiguous),
            vocab_mismatch: report.count(Verdict::VocabMismatch),
            missing_steps: report.missing.iter().map(|m| m.interactions.len()).sum(),
            final_screen: report.final_screen.clone(),
        }));
    }
    Ok((corpus::corpus_hash(&corpus), to_value(&cfg), records))
}

fn dense_store(spec: &ExperimentSpec, root: &Path, enabled: bool) -> Result<Option<EmbeddingStore>, ExperimentError> {
    if !enabled {
        return Ok(None);
    }
    Ok(EmbeddingStore::load_dir(&embeddings_dir(spec, root))?)
}

fn gold_set(ids: &Option<Vec<String>>) -> BTreeSet<String> {
    ids.iter().flatten().cloned().collect()
}

fn top_ids(ranking: &Ranking, k_values: &[usize]) -> Vec<String> {
    let n = *k_values.last().expect("validated non-empty");
    ranking.doc_ids().take(n).map(String::from).collect()
}

fn run_uiloc(spec: &ExperimentSpec) -> Result<Run, ExperimentError> {
    let cfg: UilocExperimentConfig = typed_config(&spec.config)?;
    let lc = cfg.localize_config()?;
    let (corpus, root) = load_spec_corpus(spec)?;
    let store = dense_store(spec, &root, cfg.dense)?;
    let mut records = Vec::new();
    for issue in &corpus.issues {
        let gold = match spec.pipeline {
            Pipeline::UilocScreen => gold_set(&issue.gold_screen_ids),
            _ => gold_set(&issue.gold_component_ids),
        };
        if gold.is_empty() {
            continue;
        }
        let app = corpus.app(&issue.app_id).expect("validated corpus");
        let qv = store.as_ref().and_then(|s| s.get(&ob_embedding_key(&issue.id)).map(|v| (v, s)));
        let dense = qv.map(|(query_vector, store)| DenseQuery { query_vector, store });
        let text = ob_query_text(issue);
        let ranking = match spec.pipeline {
            Pipeline::UilocScreen => localize_screens(&issue.id, &text, &app.screens, &lc, dense)?,
            _ => localize_components(&issue.id, &text, &app.screens, &lc, dense)?,
        };
        records.push(to_value(&RankingRecord {
            issue_id: issue.id.clone(),
            gold: gold.iter().cloned().collect(),
            top: top_ids(&ranking, &spec.k_values),
            scores: RankScores::compute(&ranking, &gold, &spec.k_values),
        }));
    }
    if records.is_empty() {
        return Err(ExperimentError::InvalidConfig("no issue carries gold UI ids for this granularity".into()));
    }
    Ok((corpus::corpus_hash(&corpus), to_value(&cfg), records))
}

fn run_code(spec: &ExperimentSpec) -> Result<Run, ExperimentError> {
    let cfg: UilocExperimentConfig = typed_config(&spec.config)?;
    let lc = cfg.localize_config()?;
    let (corpus, root) = load_spec_corpus(spec)?;
    let (Some(code_map), Some(baselines)) = (&corpus.code_map, &corpus.code_baselines) else {
        return Err(ExperimentError::InvalidConfig(
            "CODE_RERANK needs code_map.json and code_baselines.json in the corpus".into(),
        ));
    };
    let store = dense_store(spec, &root, cfg.dense)?;
    let mut records = Vec::new();
    for (issue_id, baseline) in baselines {
        let issue = corpus.issue(issue_id).expect("validated corpus");
        let app = corpus.app(&issue.app_id).expect("validated corpus");
        let qv = store.as_ref().and_then(|s| s.get(&ob_embedding_key(issue_id)).map(|v| (v, s)));
        let dense = qv.map(|(query_vector, store)| DenseQuery { query_vector, store });
        let screens = localize_screens(issue_id, &ob_query_text(issue), &app.screens, &lc, dense)?;
        let base = Ranking::from_scores(issue_id.clone(), baseline.entries.iter().map(|e| (e.doc_id.clone(), e.score)));
        let reranked = rerank_code_files(&base, &screens, code_map, lc.gamma);
        let gold: BTreeSet<String> = baseline.gold_files.iter().cloned().collect();
        records.push(to_value(&CodeRecord {
            issue_id: issue_id.clone(),
            gold: gold.iter().cloned().collect(),
            top: top_ids(&reranked, &spec.k_values),
            base: RankScores::compute(&base, &gold, &spec.k_values),
            reranked: RankScores::compute(&reranked, &gold, &spec.k_values),
        }));
    }
    if records.is_empty() {
        return Err(ExperimentError::InvalidConfig("code_baselines.json lists no issues".into()));
    }
    Ok((corpus::corpus_hash(&corpus), to_value(&cfg), records))
}

/// Splits issues (not comments) into folds, stratified by whether the issue
/// has any solution-labeled comment.
pub fn issue_folds(dataset: &LabeledDataset, k: usize, seed: u64) -> Result<Vec<BTreeSet<String>>, SplitError> {
    let mut has_solution: BTreeMap<&str, u8> = BTreeMap::new();
    for it in &dataset.items {
        let e = has_solution.entry(&it.issue_id).or_insert(0);
        *e = (*e).max(it.label);
    }
    let ids: Vec<&str> = has_solution.keys().copied().collect();
    let labels: Vec<u8> = has_solution.values().copied().collect();
    let folds = kfold_split(ids.len(), k, seed, Some(&labels))?;
    Ok(folds
        .into_iter()
        .map(|f| f.test.into_iter().map(|i| ids[i].to_string()).collect())
        .collect())
}

fn run_solution(spec: &ExperimentSpec) -> Result<Run, ExperimentError> {
    let cfg: SolutionExperimentConfig = typed_config(&spec.config)?;
    let train_cfg = cfg.train_config(spec.seed);
    train_cfg.validate()?;
    let sources = cfg.synthetic.is_some() as u8 + spec.dataset.is_some() as u8 + spec.corpus.is_some() as u8;
    if sources != 1 {
        return Err(ExperimentError::InvalidConfig(
            "SOLUTION needs exactly one of corpus, dataset or config.synthetic".into(),
        ));
    }

    // Corpus runs refit the vocabulary on every training fold.
    let mut corpus_src: Option<(Corpus, Option<EmbeddingStore>)> = None;
    let (dataset, data_hash) = if let Some(s) = &cfg.synthetic {
        let ds = solution::synthetic_dataset("synthetic", s.n, s.dim, s.margin, 7, s.seed);
        let hash = sha256_hex(canonical_json(&ds).as_bytes());
        (ds, hash)
    } else if let Some(path) = &spec.dataset {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Io { path: path.clone(), source: e })?;
        let ds: LabeledDataset = serde_json::from_str(&text)
            .map_err(|e| ExperimentError::MalformedSpec(format!("{}: {e}", path.display())))?;
        let ds = LabeledDataset::new(ds.project_id, ds.vocabulary, ds.items)?;
        (ds, sha256_hex(text.as_bytes()))
    } else {
        let (corpus, root) = load_spec_corpus(spec)?;
        let store = if cfg.kind.uses_embedding() {
            Some(EmbeddingStore::load_dir(&embeddings_dir(spec, &root))?.ok_or_else(|| {
                ExperimentError::InvalidConfig("embedding classifiers need an embeddings directory".into())
            })?)
        } else {
            None
        };
        let ds = solution::dataset_from_corpus(&corpus, "corpus", None, None, store.as_ref())?;
        let hash = corpus::corpus_hash(&corpus);
        corpus_src = Some((corpus, store));
        (ds, hash)
    };

    let folds = issue_folds(&dataset, cfg.folds, spec.seed)?;
    let mut records: Vec<SolutionRecord> = Vec::new();
    for (f, test_ids) in folds.iter().enumerate() {
        let test_ref: BTreeSet<&str> = test_ids.iter().map(String::as_str).collect();
        let train_ids: BTreeSet<&str> = dataset.issue_ids().difference(&test_ref).copied().collect();
        let (train_set, test_set) = match &corpus_src {
            Some((corpus, store)) => {
                let owned: BTreeSet<String> = train_ids.iter().map(|s| s.to_string()).collect();
                let train_set = solution::dataset_from_corpus(corpus, "corpus", Some(&owned), None, store.as_ref())?;
                let test_set = solution::dataset_from_corpus(
                    corpus,
                    "corpus",
                    Some(test_ids),
                    Some(&train_set.vocabulary),
                    store.as_ref(),
                )?;
                (train_set, test_set)
            }
            None => (dataset.subset_by_issue(&train_ids), dataset.subset_by_issue(&test_ref)),
        };
        let model = solution::train(&train_set, &train_cfg)?;
        for item in &test_set.items {
            let p = solution::predict(&model, &item.features)?;
            records.push(SolutionRecord {
                fold: f,
                issue_id: item.issue_id.clone(),
                comment_id: item.comment_id.clone(),
                label: item.label,
                predicted: p.label,
                probability: p.probability,
            });
        }
    }
    records.sort_by(|a, b| (&a.issue_id, &a.comment_id).cmp(&(&b.issue_id, &b.comment_id)));
    Ok((data_hash, to_value(&cfg), records.iter().map(to_value).collect()))
}

fn parse_records<T: DeserializeOwned>(records: &[Value]) -> Result<Vec<T>, ExperimentError> {
    records
        .iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value(v.clone()).map_err(|e| ExperimentError::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn rank_metrics(prefix: &str, scores: &[&RankScores], k_values: &[usize], out: &mut BTreeMap<String, f64>) {
    for k in k_values {
        let key = k.to_string();
        out.insert(
            format!("{prefix}hits@{k}"),
            mean(scores.iter().map(|s| s.hits.get(&key).copied().unwrap_or(0) as f64)),
        );
    }
    out.insert(format!("{prefix}mrr"), mean(scores.iter().map(|s| s.reciprocal_rank)));
    out.insert(format!("{prefix}map"), mean(scores.iter().map(|s| s.average_precision)));
}

/// Aggregate metrics as a pure function of the records.
pub fn aggregate(pipeline: Pipeline, k_values: &[usize], records: &[Value]) -> Result<BTreeMap<String, f64>, ExperimentError> {
    let mut out = BTreeMap::new();
    match pipeline {
        Pipeline::S2r => {
            let rs: Vec<S2rRecord> = parse_records(records)?;
            let sum = |f: fn(&S2rRecord) -> usize| rs.iter().map(f).sum::<usize>() as f64;
            let steps = sum(|r| r.steps);
            out.insert("issues".into(), rs.len() as f64);
            out.insert("steps".into(), steps);
            out.insert("correct".into(), sum(|r| r.correct));
            out.insert("ambiguous".into(), sum(|r| r.ambiguous));
            out.insert("vocab_mismatch".into(), sum(|r| r.vocab_mismatch));
            out.insert("missing_steps".into(), sum(|r| r.missing_steps));
            out.insert("correct_rate".into(), if steps > 0.0 { sum(|r| r.correct) / steps } else { 0.0 });
        }
        Pipeline::UilocScreen | Pipeline::UilocComponent => {
            let rs: Vec<RankingRecord> = parse_records(records)?;
            out.insert("queries".into(), rs.len() as f64);
            rank_metrics("", &rs.iter().map(|r| &r.scores).collect::<Vec<_>>(), k_values, &mut out);
        }
        Pipeline::CodeRerank => {
            let rs: Vec<CodeRecord> = parse_records(records)?;
            out.insert("queries".into(), rs.len() as f64);
            rank_metrics("base_", &rs.iter().map(|r| &r.base).collect::<Vec<_>>(), k_values, &mut out);
            rank_metrics("", &rs.iter().map(|r| &r.reranked).collect::<Vec<_>>(), k_values, &mut out);
        }
        Pipeline::Solution => {
            let rs: Vec<SolutionRecord> = parse_records(records)?;
            let pooled = BinaryMetrics::from_pairs(rs.iter().map(|r| (r.predicted, r.label)));
            let mut by_fold: BTreeMap<usize, Vec<(u8, u8)>> = BTreeMap::new();
            for r in &rs {
                by_fold.entry(r.fold).or_default().push((r.predicted, r.label));
            }
            let fold_f1: Vec<f64> = by_fold.into_values().map(|p| BinaryMetrics::from_pairs(p).f1).collect();
            out.insert("items".into(), rs.len() as f64);
            out.insert("folds".into(), fold_f1.len() as f64);
            out.insert("mean_fold_f1".into(), mean(fold_f1.iter().copied()));
            out.insert("precision".into(), pooled.precision);
            out.insert("recall".into(), pooled.recall);
            out.insert("f1".into(), pooled.f1);
            out.insert("tp".into(), pooled.tp as f64);
            out.insert("fp".into(), pooled.fp as f64);
            out.insert("fn".into(), pooled.fn_ as f64);
            out.insert("tn".into(), pooled.tn as f64);
        }
    }
    Ok(out)
}

pub fn render_records(result: &ExperimentResult) -> String {
    result.records.iter().map(|r| canonical_line(r) + "\n").collect()
}

/// Writes `<out>/<name>/records.jsonl` and `<out>/<name>/aggregate.json`.
pub fn write_result(result: &ExperimentResult, out: &Path) -> Result<PathBuf, ExperimentError> {
    let dir = out.join(&result.name);
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ExperimentError::Io { path, source }
    };
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    let records = dir.join("records.jsonl");
    fs::write(&records, render_records(result)).map_err(io(&records))?;
    let agg = dir.join("aggregate.json");
    fs::write(&agg, canonical_json(result)).map_err(io(&agg))?;
    Ok(dir)
}

/// Parses a `records.jsonl` body back into record values.
pub fn read_records(text: &str) -> Result<Vec<Value>, ExperimentError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ExperimentError::MalformedRecord {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
