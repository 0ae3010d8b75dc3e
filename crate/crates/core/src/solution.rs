//! Solution-bearing comment identification.
//!
//! Comments are turned into a sparse tf-idf view plus six structural features
//! that carry thread context. Models are linear decision functions over a
//! dense vector: logistic regression on tf-idf or on precomputed embeddings,
//! or a nearest-centroid rule on embeddings (which is linear in the input).
//! Ensembles vote by majority; externally produced predictions can join an
//! ensemble as opaque members.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Comment, Corpus, IssueReport};
use crate::eval::{BinaryMetrics, Lcg};
use crate::text::tokenize;
use crate::uiloc::EmbeddingStore;

pub const MODEL_VERSION: u32 = 1;
pub const STRUCTURAL_DIM: usize = 6;
pub const STRUCTURAL_NAMES: [&str; STRUCTURAL_DIM] = [
    "relative_position",
    "log_token_count",
    "has_code_block",
    "has_patch_link",
    "author_is_reporter",
    "author_prior_comments",
];

#[derive(Debug, thiserror::Error)]
pub enum SolutionError {
    #[error("COMMENT_NOT_IN_THREAD: comment {comment} is not in issue {issue}")]
    CommentNotInThread { issue: String, comment: String },
    #[error("SINGLE_CLASS_DATASET: training data needs both labels")]
    SingleClassDataset,
    #[error("DIMENSION_MISMATCH: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("MISSING_EMBEDDING: {0}")]
    MissingEmbedding(String),
    #[error("MISSING_PREDICTION: no external prediction for {issue}/{comment}")]
    MissingPrediction { issue: String, comment: String },
    #[error("SAME_PROJECT: train and test both come from project {0}")]
    SameProject(String),
    #[error("EMPTY_SPLIT: {0}")]
    EmptySplit(String),
    #[error("EMPTY_ENSEMBLE: an ensemble needs at least one member")]
    EmptyEnsemble,
    #[error("INVALID_CONFIG: {0}")]
    InvalidConfig(String),
    #[error("DUPLICATE_ITEM: {issue}/{comment}")]
    DuplicateItem { issue: String, comment: String },
    #[error("MALFORMED_FILE: line {line}: {message}")]
    MalformedFile { line: usize, message: String },
}

impl SolutionError {
    pub fn code(&self) -> &'static str {
        match self {
            SolutionError::CommentNotInThread { .. } => "COMMENT_NOT_IN_THREAD",
            SolutionError::SingleClassDataset => "SINGLE_CLASS_DATASET",
            SolutionError::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            SolutionError::MissingEmbedding(_) => "MISSING_EMBEDDING",
            SolutionError::MissingPrediction { .. } => "MISSING_PREDICTION",
            SolutionError::SameProject(_) => "SAME_PROJECT",
            SolutionError::EmptySplit(_) => "EMPTY_SPLIT",
            SolutionError::EmptyEnsemble => "EMPTY_ENSEMBLE",
            SolutionError::InvalidConfig(_) => "INVALID_CONFIG",
            SolutionError::DuplicateItem { .. } => "DUPLICATE_ITEM",
            SolutionError::MalformedFile { .. } => "MALFORMED_FILE",
        }
    }
}

// ---------------------------------------------------------------------------
// Features

/// Term -> dimension map with smoothed idf, fitted on training comments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Vocabulary {
    pub terms: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
}

impl Vocabulary {
    /// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`; dimensions follow term order.
    pub fn fit<'a, I: IntoIterator<Item = &'a str>>(documents: I) -> Self {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n = 0usize;
        for doc in documents {
            n += 1;
            let seen: BTreeSet<String> = tokenize(doc).into_iter().collect();
            for t in seen {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut terms = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (dim, (term, d)) in df.into_iter().enumerate() {
            idf.push(((1.0 + n as f64) / (1.0 + d as f64)).ln() + 1.0);
            terms.insert(term, dim);
        }
        Vocabulary { terms, idf }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn idf_of(&self, term: &str) -> Option<f64> {
        self.terms.get(term).map(|&d| self.idf[d])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommentFeatures {
    pub tfidf: BTreeMap<String, f64>,
    pub structural: [f64; STRUCTURAL_DIM],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// Embedding key for a comment in `.emb` files.
pub fn comment_embedding_key(issue_id: &str, comment_id: &str) -> String {
    format!("comment:{issue_id}:{comment_id}")
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"https?://\S+").expect("valid regex"))
}

fn patch_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(commit|revision|attachment|pull|diff)").expect("valid regex"))
}

pub fn has_code_block(text: &str) -> bool {
    text.contains("```")
        || text
            .lines()
            .any(|l| l.starts_with("    ") && !l.trim().is_empty())
}

pub fn has_patch_link(text: &str) -> bool {
    url_re().find_iter(text).any(|m| patch_re().is_match(m.as_str()))
}

/// L2-normalized sublinear tf-idf over `vocabulary`; unknown terms are dropped.
pub fn tfidf_vector(text: &str, vocabulary: &Vocabulary) -> BTreeMap<String, f64> {
    let mut tf: BTreeMap<String, f64> = BTreeMap::new();
    for t in tokenize(text) {
        if vocabulary.terms.contains_key(&t) {
            *tf.entry(t).or_default() += 1.0;
        }
    }
    let mut weights: BTreeMap<String, f64> = tf
        .into_iter()
        .map(|(t, n)| {
            let w = (1.0 + n.ln()) * vocabulary.idf_of(&t).expect("filtered to vocabulary");
            (t, w)
        })
        .collect();
    let norm = weights.values().map(|w| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for w in weights.values_mut() {
            *w /= norm;
        }
    }
    weights
}

pub fn featurize(
    comment: &Comment,
    thread: &IssueReport,
    vocabulary: &Vocabulary,
) -> Result<CommentFeatures, SolutionError> {
    let index = thread
        .comments
        .iter()
        .position(|c| c == comment)
        .ok_or_else(|| SolutionError::CommentNotInThread {
            issue: thread.id.clone(),
            comment: comment.id.clone(),
        })?;
    let n = thread.comments.len();
    let relative_position = if n > 1 { index as f64 / (n - 1) as f64 } else { 0.0 };
    let token_count = tokenize(&comment.text).len() as f64;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let is_reporter = thread.reporter() == Some(comment.author.as_str());
    let prior = thread.comments[..index].iter().any(|c| c.author == comment.author);
    Ok(CommentFeatures {
        tfidf: tfidf_vector(&comment.text, vocabulary),
        structural: [
            relative_position,
            (1.0 + token_count).ln(),
            flag(has_code_block(&comment.text)),
            flag(has_patch_link(&comment.text)),
            flag(is_reporter),
            flag(prior),
        ],
        embedding: None,
    })
}

// ---------------------------------------------------------------------------
// Datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub issue_id: String,
    pub comment_id: String,
    pub features: CommentFeatures,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub project_id: String,
    #[serde(default)]
    pub vocabulary: Vocabulary,
    pub items: Vec<LabeledItem>,
}

impl LabeledDataset {
    pub fn new(project_id: impl Into<String>, vocabulary: Vocabulary, items: Vec<LabeledItem>) -> Result<Self, SolutionError> {
        let mut seen = BTreeSet::new();
        for it in &items {
            if !seen.insert((it.issue_id.as_str(), it.comment_id.as_str())) {
                return Err(SolutionError::DuplicateItem {
                    issue: it.issue_id.clone(),
                    comment: it.comment_id.clone(),
                });
            }
        }
        Ok(LabeledDataset {
            project_id: project_id.into(),
            vocabulary,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.items.iter().map(|i| i.label).collect()
    }

    pub fn issue_ids(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.issue_id.as_str()).collect()
    }

    /// Items whose issue id is in `issues`, in original order.
    pub fn subset_by_issue(&self, issues: &BTreeSet<&str>) -> LabeledDataset {
        LabeledDataset {
            project_id: self.project_id.clone(),
            vocabulary: self.vocabulary.clone(),
            items: self
                .items
                .iter()
                .filter(|i| issues.contains(i.issue_id.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            project_id: self.project_id.clone(),
            vocabulary: self.vocabulary.clone(),
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }
}

/// Labeled comments of `issue_ids` (all issues when `None`), in corpus order.
pub fn labeled_comments<'a>(
    corpus: &'a Corpus,
    issue_ids: Option<&BTreeSet<String>>,
) -> Vec<(&'a IssueReport, &'a Comment, bool)> {
    corpus
        .issues
        .iter()
        .filter(|i| issue_ids.is_none_or(|ids| ids.contains(&i.id)))
        .flat_map(|i| {
            i.comments
                .iter()
                .filter_map(move |c| c.is_solution.map(|l| (i, c, l)))
        })
        .collect()
}

/// Builds a dataset from the labeled comments of a corpus. The vocabulary is
/// fitted on those comments unless one is supplied; comment embeddings are
/// attached when a store is given.
pub fn dataset_from_corpus(
    corpus: &Corpus,
    project_id: &str,
    issue_ids: Option<&BTreeSet<String>>,
    vocabulary: Option<&Vocabulary>,
    embeddings: Option<&EmbeddingStore>,
) -> Result<LabeledDataset, SolutionError> {
    let rows = labeled_comments(corpus, issue_ids);
    let vocabulary = match vocabulary {
        Some(v) => v.clone(),
        None => Vocabulary::fit(rows.iter().map(|(_, c, _)| c.text.as_str())),
    };
    let mut items = Vec::with_capacity(rows.len());
    for (issue, comment, label) in rows {
        let mut features = featurize(comment, issue, &vocabulary)?;
        if let Some(store) = embeddings {
            let key = comment_embedding_key(&issue.id, &comment.id);
            let v = store.get(&key).ok_or(SolutionError::MissingEmbedding(key))?;
            features.embedding = Some(v.to_vec());
        }
        items.push(LabeledItem {
            issue_id: issue.id.clone(),
            comment_id: comment.id.clone(),
            features,
            label: label as u8,
        });
    }
    LabeledDataset::new(project_id, vocabulary, items)
}

// ---------------------------------------------------------------------------
// Models

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassifierKind {
    #[default]
    LinearTfidf,
    LinearEmbedding,
    NearestCentroidEmbedding,
}

impl ClassifierKind {
    pub fn uses_embedding(self) -> bool {
        !matches!(self, ClassifierKind::LinearTfidf)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: ClassifierKind,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub threshold: f64,
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ClassifierKind::LinearTfidf,
            lambda: 1e-4,
            learning_rate: 0.5,
            epochs: 500,
            seed: 0,
            threshold: 0.5,
            class_weighting: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SolutionError> {
        let bad = |m: &str| Err(SolutionError::InvalidConfig(m.to_string()));
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be finite and > 0");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub accepted_steps: usize,
    pub final_loss: f64,
}

/// Min-max constants for the structural block, fixed from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub min: [f64; STRUCTURAL_DIM],
    pub max: [f64; STRUCTURAL_DIM],
}

impl Scaling {
    pub fn fit(items: &[LabeledItem]) -> Self {
        let mut min = [f64::INFINITY; STRUCTURAL_DIM];
        let mut max = [f64::NEG_INFINITY; STRUCTURAL_DIM];
        for it in items {
            for (j, v) in it.features.structural.iter().enumerate() {
                min[j] = min[j].min(*v);
                max[j] = max[j].max(*v);
            }
        }
        for j in 0..STRUCTURAL_DIM {
            if !min[j].is_finite() {
                min[j] = 0.0;
                max[j] = 0.0;
            }
        }
        Scaling { min, max }
    }

    pub fn apply(&self, structural: &[f64; STRUCTURAL_DIM]) -> [f64; STRUCTURAL_DIM] {
        let mut out = [0.0; STRUCTURAL_DIM];
        for j in 0..STRUCTURAL_DIM {
            let span = self.max[j] - self.min[j];
            out[j] = if span > 0.0 { (structural[j] - self.min[j]) / span } else { 0.0 };
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub model_version: u32,
    pub kind: ClassifierKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vocabulary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub scaling: Scaling,
    pub threshold: f64,
    pub training_meta: TrainingMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: u8,
    pub probability: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl ClassifierModel {
    pub fn input_dim(&self) -> usize {
        self.weights.len()
    }

    /// Dense model input: the tf-idf or embedding block followed by the
    /// scaled structural block.
    pub fn vectorize(&self, features: &CommentFeatures) -> Result<Vec<f64>, SolutionError> {
        vectorize(self.kind, self.vocabulary.as_ref(), self.embedding_dim, &self.scaling, features)
    }

    pub fn to_json(&self) -> String {
        crate::corpus::canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self, SolutionError> {
        let model: ClassifierModel = serde_json::from_str(text).map_err(|e| SolutionError::MalformedFile {
            line: e.line(),
            message: e.to_string(),
        })?;
        if model.model_version != MODEL_VERSION {
            return Err(SolutionError::MalformedFile {
                line: 1,
                message: format!("unsupported model_version {}", model.model_version),
            });
        }
        let block = match model.kind {
            ClassifierKind::LinearTfidf => model.vocabulary.as_ref().map(Vocabulary::len),
            _ => model.embedding_dim,
        };
        if block.map(|b| b + STRUCTURAL_DIM) != Some(model.weights.len()) {
            return Err(SolutionError::MalformedFile {
                line: 1,
                message: "weights do not match the feature layout".into(),
            });
        }
        Ok(model)
    }
}

fn vectorize(
    kind: ClassifierKind,
    vocabulary: Option<&Vocabulary>,
    embedding_dim: Option<usize>,
    scaling: &Scaling,
    features: &CommentFeatures,
) -> Result<Vec<f64>, SolutionError> {
    let mut x = match kind {
        ClassifierKind::LinearTfidf => {
            let vocab = vocabulary.expect("tf-idf models carry a vocabulary");
            let mut x = vec![0.0; vocab.len()];
            for (t, w) in &features.tfidf {
                if let Some(&d) = vocab.terms.get(t) {
                    x[d] = *w;
                }
            }
            x
        }
        _ => {
            let dim = embedding_dim.expect("embedding models carry a dimension");
            let e = features
                .embedding
                .as_ref()
                .ok_or_else(|| SolutionError::MissingEmbedding("comment has no embedding".into()))?;
            if e.len() != dim {
                return Err(SolutionError::DimensionMismatch { expected: dim, got: e.len() });
            }
            e.clone()
        }
    };
    x.extend(scaling.apply(&features.structural));
    Ok(x)
}

pub fn predict(model: &ClassifierModel, features: &CommentFeatures) -> Result<Prediction, SolutionError> {
    let x = model.vectorize(features)?;
    predict_vector(model, &x)
}

pub fn predict_vector(model: &ClassifierModel, x: &[f64]) -> Result<Prediction, SolutionError> {
    if x.len() != model.weights.len() {
        return Err(SolutionError::DimensionMismatch {
            expected: model.weights.len(),
            got: x.len(),
        });
    }
    let z = model.bias + dot(&model.weights, x);
    let probability = sigmoid(z);
    Ok(Prediction {
        label: (probability >= model.threshold) as u8,
        probability,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense training problem: rows, 0/1 targets and per-example weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub sample_weights: Vec<f64>,
}

impl Design {
    /// Inverse-frequency weights `n / (classes present * n_class)`, so the
    /// weights sum to `n`; uniform weights when `balanced` is false.
    pub fn new(rows: Vec<Vec<f64>>, targets: Vec<f64>, balanced: bool) -> Self {
        let n = targets.len() as f64;
        let pos = targets.iter().filter(|&&y| y > 0.5).count() as f64;
        let neg = n - pos;
        let classes = (pos > 0.0) as u8 as f64 + (neg > 0.0) as u8 as f64;
        let sample_weights = targets
            .iter()
            .map(|&y| {
                if !balanced {
                    1.0
                } else if y > 0.5 {
                    n / (classes * pos)
                } else {
                    n / (classes * neg)
                }
            })
            .collect();
        Design { rows, targets, sample_weights }
    }
}

/// Weighted mean cross-entropy plus `lambda * |w|^2 / 2` (bias unpenalized),
/// with its gradient `(dL/dw, dL/db)`.
pub fn loss_and_gradient(weights: &[f64], bias: f64, design: &Design, lambda: f64) -> (f64, Vec<f64>, f64) {
    let n = design.rows.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for ((x, &y), &s) in design.rows.iter().zip(&design.targets).zip(&design.sample_weights) {
        let z = bias + dot(weights, x);
        loss += s * (softplus(z) - y * z);
        let r = s * (sigmoid(z) - y);
        for (g, xi) in grad.iter_mut().zip(x) {
            *g += r * xi;
        }
        grad_b += r;
    }
    loss /= n;
    grad_b /= n;
    for (g, w) in grad.iter_mut().zip(weights) {
        *g = *g / n + lambda * w;
    }
    loss += 0.5 * lambda * dot(weights, weights);
    (loss, grad, grad_b)
}

/// Full-batch gradient descent. A step that would raise the loss is rejected
/// and the learning rate halved. Returns the accepted-step count and the
/// loss after every accepted step.
pub fn gradient_descent(
    weights: &mut [f64],
    bias: &mut f64,
    design: &Design,
    lambda: f64,
    learning_rate: f64,
    epochs: usize,
) -> (usize, Vec<f64>) {
    let mut lr = learning_rate;
    let (mut loss, mut grad, mut grad_b) = loss_and_gradient(weights, *bias, design, lambda);
    let mut history = vec![loss];
    let mut accepted = 0;
    let mut trial = vec![0.0; weights.len()];
    for _ in 0..epochs {
        for ((t, w), g) in trial.iter_mut().zip(weights.iter()).zip(&grad) {
            *t = w - lr * g;
        }
        let trial_b = *bias - lr * grad_b;
        let (l, g, gb) = loss_and_gradient(&trial, trial_b, design, lambda);
        if l <= loss {
            weights.copy_from_slice(&trial);
            *bias = trial_b;
            loss = l;
            grad = g;
            grad_b = gb;
            accepted += 1;
            history.push(loss);
        } else {
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
        }
    }
    (accepted, history)
}

fn design_for(model: &ClassifierModel, dataset: &LabeledDataset, balanced: bool) -> Result<Design, SolutionError> {
    let rows = dataset
        .items
        .iter()
        .map(|it| model.vectorize(&it.features))
        .collect::<Result<Vec<_>, _>>()?;
    let targets = dataset.items.iter().map(|it| it.label as f64).collect();
    Ok(Design::new(rows, targets, balanced))
}

pub fn train(dataset: &LabeledDataset, config: &TrainConfig) -> Result<ClassifierModel, SolutionError> {
    config.validate()?;
    let pos = dataset.items.iter().filter(|i| i.label == 1).count();
    if pos == 0 || pos == dataset.len() {
        return Err(SolutionError::SingleClassDataset);
    }
    let (vocabulary, embedding_dim, block) = if config.kind.uses_embedding() {
        let dim = dataset.items[0]
            .features
            .embedding
            .as_ref()
            .map(Vec::len)
            .ok_or_else(|| {
                SolutionError::MissingEmbedding(format!(
                    "{}/{}",
                    dataset.items[0].issue_id, dataset.items[0].comment_id
                ))
            })?;
        (None, Some(dim), dim)
    } else {
        (Some(dataset.vocabulary.clone()), None, dataset.vocabulary.len())
    };
    let mut model = ClassifierModel {
        model_version: MODEL_VERSION,
        kind: config.kind,
        vocabulary,
        embedding_dim,
        weights: vec![0.0; block + STRUCTURAL_DIM],
        bias: 0.0,
        scaling: Scaling::fit(&dataset.items),
        threshold: config.threshold,
        training_meta: TrainingMeta {
            seed: config.seed,
            epochs: config.epochs,
            lambda: config.lambda,
            learning_rate: config.learning_rate,
            accepted_steps: 0,
            final_loss: 0.0,
        },
    };
    let design = design_for(&model, dataset, config.class_weighting)?;
    match config.kind {
        ClassifierKind::NearestCentroidEmbedding => {
            let dim = model.weights.len();
            let mut c = [vec![0.0; dim], vec![0.0; dim]];
            let mut counts = [0.0f64; 2];
            for (x, &y) in design.rows.iter().zip(&design.targets) {
                let k = (y > 0.5) as usize;
                counts[k] += 1.0;
                for (a, v) in c[k].iter_mut().zip(x) {
                    *a += v;
                }
            }
            for k in 0..2 {
                for a in c[k].iter_mut() {
                    *a /= counts[k];
                }
            }
            // |x - c0|^2 - |x - c1|^2 = 2 (c1 - c0) . x + |c0|^2 - |c1|^2
            model.weights = c[1].iter().zip(&c[0]).map(|(a, b)| 2.0 * (a - b)).collect();
            model.bias = dot(&c[0], &c[0]) - dot(&c[1], &c[1]);
            model.training_meta.epochs = 0;
            model.training_meta.final_loss = loss_and_gradient(&model.weights, model.bias, &design, 0.0).0;
        }
        _ => {
            let (accepted, history) = gradient_descent(
                &mut model.weights,
                &mut model.bias,
                &design,
                config.lambda,
                config.learning_rate,
                config.epochs,
            );
            model.training_meta.accepted_steps = accepted;
            model.training_meta.final_loss = *history.last().expect("history starts with initial loss");
        }
    }
    Ok(model)
}

/// Continues gradient descent from `model` on `dataset` (warm start). A
/// single-class slice is allowed here.
pub fn adapt(model: &ClassifierModel, dataset: &LabeledDataset, config: &TrainConfig) -> Result<ClassifierModel, SolutionError> {
    config.validate()?;
    let mut adapted = model.clone();
    if dataset.is_empty() || model.kind == ClassifierKind::NearestCentroidEmbedding {
        return Ok(adapted);
    }
    let design = design_for(model, dataset, config.class_weighting)?;
    let (accepted, history) = gradient_descent(
        &mut adapted.weights,
        &mut adapted.bias,
        &design,
        config.lambda,
        config.learning_rate,
        config.epochs,
    );
    adapted.training_meta.accepted_steps += accepted;
    adapted.training_meta.final_loss = *history.last().expect("non-empty");
    Ok(adapted)
}

// ---------------------------------------------------------------------------
// Ensembles and evaluation

/// Predictions produced elsewhere, keyed by (issue id, comment id).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExternalPredictions {
    pub name: String,
    pub predictions: BTreeMap<(String, String), Prediction>,
}

impl ExternalPredictions {
    /// Parses `issue-id<TAB>comment-id<TAB>label<TAB>probability` lines. A
    /// first line starting with `issue_id` is treated as a header.
    pub fn parse_tsv(name: &str, text: &str) -> Result<Self, SolutionError> {
        let mut predictions = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || (i == 0 && line.starts_with("issue_id")) {
                continue;
            }
            let bad = |message: String| SolutionError::MalformedFile { line: i + 1, message };
            let f: Vec<&str> = line.split('\t').collect();
            let [issue, comment, label, prob] = f.as_slice() else {
                return Err(bad(format!("expected 4 tab-separated fields, found {}", f.len())));
            };
            let label = match *label {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(format!("label must be 0 or 1, found {other:?}"))),
            };
            let probability: f64 = prob.parse().map_err(|e| bad(format!("probability: {e}")))?;
            if !(0.0..=1.0).contains(&probability) {
                return Err(bad(format!("probability {probability} outside [0, 1]")));
            }
            if predictions
                .insert((issue.to_string(), comment.to_string()), Prediction { label, probability })
                .is_some()
            {
                return Err(bad(format!("duplicate prediction for {issue}/{comment}")));
            }
        }
        Ok(ExternalPredictions { name: name.to_string(), predictions })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnsembleMember {
    Model(ClassifierModel),
    External(ExternalPredictions),
}

impl EnsembleMember {
    pub fn predict_item(&self, item: &LabeledItem) -> Result<Prediction, SolutionError> {
        match self {
            EnsembleMember::Model(m) => predict(m, &item.features),
            EnsembleMember::External(e) => e
                .predictions
                .get(&(item.issue_id.clone(), item.comment_id.clone()))
                .copied()
                .ok_or_else(|| SolutionError::MissingPrediction {
                    issue: item.issue_id.clone(),
                    comment: item.comment_id.clone(),
                }),
        }
    }
}

/// Majority vote. On a tie the side whose voters are more confident on
/// average wins (probability for label 1, one minus it for label 0); an exact
/// confidence tie yields 0. Returns the label and the mean probability.
pub fn majority_vote(predictions: &[Prediction]) -> Result<Prediction, SolutionError> {
    if predictions.is_empty() {
        return Err(SolutionError::EmptyEnsemble);
    }
    let n = predictions.len() as f64;
    let mean = predictions.iter().map(|p| p.probability).sum::<f64>() / n;
    let ones: Vec<f64> = predictions.iter().filter(|p| p.label == 1).map(|p| p.probability).collect();
    let zeros: Vec<f64> = predictions.iter().filter(|p| p.label == 0).map(|p| 1.0 - p.probability).collect();
    let label = match ones.len().cmp(&zeros.len()) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => 0,
        std::cmp::Ordering::Equal => {
            let c1 = ones.iter().sum::<f64>() / ones.len() as f64;
            let c0 = zeros.iter().sum::<f64>() / zeros.len() as f64;
            (c1 > c0) as u8
        }
    };
    Ok(Prediction { label, probability: mean })
}

pub fn ensemble_predict(members: &[EnsembleMember], item: &LabeledItem) -> Result<Prediction, SolutionError> {
    let preds = members
        .iter()
        .map(|m| m.predict_item(item))
        .collect::<Result<Vec<_>, _>>()?;
    majority_vote(&preds)
}

pub fn evaluate(members: &[EnsembleMember], dataset: &LabeledDataset) -> Result<BinaryMetrics, SolutionError> {
    let mut pairs = Vec::with_capacity(dataset.len());
    for item in &dataset.items {
        pairs.push((ensemble_predict(members, item)?.label, item.label));
    }
    Ok(BinaryMetrics::from_pairs(pairs))
}

pub fn evaluate_model(model: &ClassifierModel, dataset: &LabeledDataset) -> Result<BinaryMetrics, SolutionError> {
    let mut pairs = Vec::with_capacity(dataset.len());
    for item in &dataset.items {
        pairs.push((predict(model, &item.features)?.label, item.label));
    }
    Ok(BinaryMetrics::from_pairs(pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub zero_shot: BinaryMetrics,
    pub adapted: BinaryMetrics,
    pub adapt_issues: Vec<String>,
    pub held_out_items: usize,
}

/// Trains on `train_set`, then adapts on the first `ceil(fraction * issues)`
/// test issues (by id) and scores both models on the remaining test issues.
pub fn transfer_evaluate(
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    adapt_fraction: f64,
    config: &TrainConfig,
) -> Result<TransferResult, SolutionError> {
    if train_set.project_id == test_set.project_id {
        return Err(SolutionError::SameProject(train_set.project_id.clone()));
    }
    if !(0.0..=1.0).contains(&adapt_fraction) {
        return Err(SolutionError::InvalidConfig(format!("adapt_fraction {adapt_fraction} outside [0, 1]")));
    }
    let issues: Vec<&str> = test_set.issue_ids().into_iter().collect();
    let n_adapt = (adapt_fraction * issues.len() as f64).ceil() as usize;
    let adapt_ids: BTreeSet<&str> = issues[..n_adapt.min(issues.len())].iter().copied().collect();
    let rest_ids: BTreeSet<&str> = issues[n_adapt.min(issues.len())..].iter().copied().collect();
    let held_out = test_set.subset_by_issue(&rest_ids);
    if held_out.is_empty() {
        return Err(SolutionError::EmptySplit("no test issues left after the adaptation slice".into()));
    }
    let model = train(train_set, config)?;
    let adapted = adapt(&model, &test_set.subset_by_issue(&adapt_ids), config)?;
    Ok(TransferResult {
        zero_shot: evaluate_model(&model, &held_out)?,
        adapted: evaluate_model(&adapted, &held_out)?,
        adapt_issues: adapt_ids.into_iter().map(String::from).collect(),
        held_out_items: held_out.len(),
    })
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Embedding-only items with zero structural features, labeled by the side of
/// a hidden hyperplane. Points within `margin` of the hyperplane are rejected,
/// so the set is linearly separable with that margin. `direction_seed` fixes
/// the hyperplane; `seed` draws the points. Items are grouped five per issue.
pub fn synthetic_dataset(
    project_id: &str,
    n: usize,
    dim: usize,
    margin: f64,
    direction_seed: u64,
    seed: u64,
) -> LabeledDataset {
    let mut dir_rng = Lcg::new(direction_seed);
    let mut normal: Vec<f64> = (0..dim).map(|_| dir_rng.next_f64() * 2.0 - 1.0).collect();
    let norm = dot(&normal, &normal).sqrt().max(1e-12);
    normal.iter_mut().for_each(|v| *v /= norm);
    let offset = dir_rng.next_f64() - 0.5;

    let mut rng = Lcg::new(seed);
    let mut items = Vec::with_capacity(n);
    while items.len() < n {
        let x: Vec<f64> = (0..dim).map(|_| rng.next_f64() * 10.0 - 5.0).collect();
        let s = dot(&normal, &x) + offset;
        if s.abs() < margin {
            continue;
        }
        let k = items.len();
        items.push(LabeledItem {
            issue_id: format!("{project_id}-{:04}", k / 5),
            comment_id: format!("c{}", k % 5),
            features: CommentFeatures {
                tfidf: BTreeMap::new(),
                structural: [0.0; STRUCTURAL_DIM],
                embedding: Some(x),
            },
            label: (s > 0.0) as u8,
        });
    }
    LabeledDataset {
        project_id: project_id.to_string(),
        vocabulary: Vocabulary::default(),
        items,
    }
}

/// The 2-feature, margin-1.0 separable set.
pub fn separable_dataset(n: usize, seed: u64) -> LabeledDataset {
    synthetic_dataset("synthetic", n, 2, 1.0, 7, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comment(id: &str, author: &str, ts: i64, text: &str) -> Comment {
        Comment { id: id.into(), author: author.into(), timestamp: ts, text: text.into(), is_solution: None }
    }

    fn thread(comments: Vec<Comment>) -> IssueReport {
        IssueReport {
            id: "t".into(),
            app_id: "a".into(),
            title: "x".into(),
            body: String::new(),
            reporter: Some("rep".into()),
            comments,
            ob_sentences: None,
            eb_sentences: None,
            s2r_sentences: None,
            gold_screen_ids: None,
            gold_component_ids: None,
        }
    }

    fn item(issue: &str, comment: &str, x: Vec<f64>, label: u8) -> LabeledItem {
        LabeledItem {
            issue_id: issue.into(),
            comment_id: comment.into(),
            features: CommentFeatures { tfidf: BTreeMap::new(), structural: [0.0; 6], embedding: Some(x) },
            label,
        }
    }

    fn emb_config() -> TrainConfig {
        TrainConfig { kind: ClassifierKind::LinearEmbedding, ..TrainConfig::default() }
    }

    #[test]
    fn structural_features() {
        let t = thread(vec![
            comment("c1", "rep", 1, "It crashes"),
            comment("c2", "dev", 2, "see ```fix``` attached"),
            comment("c3", "dev", 3, "Fixed in https://hg.example.org/commit/abc"),
            comment("c4", "x", 4, "code:\n    let a = 1;"),
            comment("c5", "y", 5, "thanks"),
        ]);
        let v = Vocabulary::default();
        let f: Vec<_> = t.comments.iter().map(|c| featurize(c, &t, &v).unwrap().structural).collect();
        assert_eq!(f[0][0], 0.0);
        assert_eq!(f[4][0], 1.0);
        assert_eq!(f[1][0], 0.25);
        assert_eq!(f[0][4], 1.0);
        assert_eq!(f[1][4], 0.0);
        assert_eq!(f[1][2], 1.0);
        assert_eq!(f[3][2], 1.0);
        assert_eq!(f[0][2], 0.0);
        assert_eq!(f[2][3], 1.0);
        assert_eq!(f[1][3], 0.0);
        assert_eq!([f[1][5], f[2][5]], [0.0, 1.0]);
        // "It crashes" -> ["crashes"] ("it" is a stopword).
        assert_eq!(f[0][1], 2f64.ln());
    }

    #[test]
    fn single_comment_thread_position_zero() {
        let t = thread(vec![comment("c1", "a", 1, "x")]);
        let f = featurize(&t.comments[0], &t, &Vocabulary::default()).unwrap();
        assert_eq!(f.structural[0], 0.0);
    }

    #[test]
    fn foreign_comment_rejected() {
        let t = thread(vec![comment("c1", "a", 1, "x")]);
        let other = comment("c9", "a", 1, "x");
        assert_eq!(featurize(&other, &t, &Vocabulary::default()).unwrap_err().code(), "COMMENT_NOT_IN_THREAD");
    }

    #[test]
    fn patch_link_needs_url() {
        assert!(!has_patch_link("see the diff below"));
        assert!(has_patch_link("https://bugzilla.example.org/attachment.cgi?id=1"));
        assert!(has_patch_link("http://github.com/o/r/pull/12"));
        assert!(!has_patch_link("https://example.org/wiki"));
    }

    #[test]
    fn tfidf_hand_computed() {
        // docs: {crash save}, {crash}, {theme}; N = 3
        // idf(crash) = ln(4/3)+1, idf(save) = idf(theme) = ln(2)+1
        let v = Vocabulary::fit(["crash save", "crash", "theme"]);
        assert_eq!(v.len(), 3);
        let w = tfidf_vector("crash crash save unknown", &v);
        let a = (1.0 + 2f64.ln()) * ((4.0f64 / 3.0).ln() + 1.0);
        let b = 2f64.ln() + 1.0;
        let norm = (a * a + b * b).sqrt();
        assert!((w["crash"] - a / norm).abs() < 1e-12);
        assert!((w["save"] - b / norm).abs() < 1e-12);
        assert_eq!(w.len(), 2);
        assert!(tfidf_vector("nothing known", &v).is_empty());
    }

    #[test]
    fn zero_model_predicts_half() {
        let ds = LabeledDataset::new("p", Vocabulary::default(), vec![
            item("i", "a", vec![1.0], 1),
            item("i", "b", vec![-1.0], 0),
        ]).unwrap();
        let model = train(&ds, &TrainConfig { epochs: 0, ..emb_config() }).unwrap();
        let p = predict(&model, &ds.items[0].features).unwrap();
        assert_eq!(p.probability, 0.5);
        assert_eq!(p.label, 1);
        let mut wrong = ds.items[0].features.clone();
        wrong.embedding = Some(vec![1.0, 2.0]);
        assert_eq!(predict(&model, &wrong).unwrap_err().code(), "DIMENSION_MISMATCH");
        assert_eq!(predict_vector(&model, &[1.0]).unwrap_err().code(), "DIMENSION_MISMATCH");
    }

    #[test]
    fn sigmoid_limits() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(800.0) == 1.0 && sigmoid(-800.0) == 0.0);
        assert!((softplus(-800.0)).abs() < 1e-300 && softplus(800.0) == 800.0);
    }

    #[test]
    fn single_class_rejected() {
        let ds = LabeledDataset::new("p", Vocabulary::default(), vec![item("i", "a", vec![1.0], 1)]).unwrap();
        assert_eq!(train(&ds, &emb_config()).unwrap_err().code(), "SINGLE_CLASS_DATASET");
    }

    #[test]
    fn duplicate_items_rejected() {
        let err = LabeledDataset::new("p", Vocabulary::default(), vec![
            item("i", "a", vec![1.0], 1),
            item("i", "a", vec![1.0], 0),
        ]).unwrap_err();
        assert_eq!(err.code(), "DUPLICATE_ITEM");
    }

    #[test]
    fn separable_set_fits() {
        let ds = separable_dataset(200, 3);
        let model = train(&ds, &emb_config()).unwrap();
        let m = evaluate_model(&model, &ds).unwrap();
        assert!(m.f1 >= 0.99, "{m:?}");
    }

    #[test]
    fn huge_lambda_shrinks_weights() {
        let ds = separable_dataset(200, 3);
        let model = train(&ds, &TrainConfig { lambda: 1e6, ..emb_config() }).unwrap();
        assert!(dot(&model.weights, &model.weights).sqrt() < 1e-2);
    }

    #[test]
    fn loss_never_increases() {
        let ds = separable_dataset(100, 5);
        let model = train(&ds, &TrainConfig { epochs: 0, ..emb_config() }).unwrap();
        let design = design_for(&model, &ds, true).unwrap();
        let mut w = vec![0.0; model.weights.len()];
        let mut b = 0.0;
        let (_, hist) = gradient_descent(&mut w, &mut b, &design, 1e-4, 50.0, 200);
        assert!(hist.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = separable_dataset(120, 9);
        let a = train(&ds, &emb_config()).unwrap();
        let b = train(&ds, &emb_config()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn model_json_round_trip() {
        let ds = separable_dataset(60, 1);
        let a = train(&ds, &emb_config()).unwrap();
        let back = ClassifierModel::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);
        let mut v: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
        v["model_version"] = 2.into();
        assert_eq!(ClassifierModel::from_json(&v.to_string()).unwrap_err().code(), "MALFORMED_FILE");
    }

    #[test]
    fn nearest_centroid_is_linear_rule() {
        let ds = LabeledDataset::new("p", Vocabulary::default(), vec![
            item("i", "a", vec![2.0, 0.0], 1),
            item("i", "b", vec![4.0, 0.0], 1),
            item("i", "c", vec![-2.0, 0.0], 0),
        ]).unwrap();
        let cfg = TrainConfig { kind: ClassifierKind::NearestCentroidEmbedding, ..TrainConfig::default() };
        let m = train(&ds, &cfg).unwrap();
        // centroids (3,0) and (-2,0): boundary at x = 0.5
        let probe = |x: f64| predict(&m, &item("q", "q", vec![x, 7.0], 0).features).unwrap();
        assert_eq!(probe(0.5).probability, 0.5);
        assert_eq!(probe(0.6).label, 1);
        assert_eq!(probe(0.4).label, 0);
    }

    #[test]
    fn vote_examples() {
        let p = |label: u8, probability: f64| Prediction { label, probability };
        assert_eq!(majority_vote(&[p(1, 0.9), p(1, 0.6), p(0, 0.1)]).unwrap().label, 1);
        assert_eq!(majority_vote(&[p(1, 0.8), p(0, 0.3)]).unwrap().label, 1);
        assert_eq!(majority_vote(&[p(1, 0.6), p(0, 0.1)]).unwrap().label, 0);
        assert_eq!(majority_vote(&[p(1, 0.7), p(0, 0.3)]).unwrap().label, 0);
        assert_eq!(majority_vote(&[]).unwrap_err().code(), "EMPTY_ENSEMBLE");
    }

    #[test]
    fn external_tsv() {
        let text = "issue_id\tcomment_id\tlabel\tprobability\ni1\tc1\t1\t0.9\ni1\tc2\t0\t0.2\n";
        let e = ExternalPredictions::parse_tsv("llm", text).unwrap();
        assert_eq!(e.predictions.len(), 2);
        let member = EnsembleMember::External(e);
        assert_eq!(member.predict_item(&item("i1", "c1", vec![], 0)).unwrap().label, 1);
        assert_eq!(member.predict_item(&item("i9", "c1", vec![], 0)).unwrap_err().code(), "MISSING_PREDICTION");
        for bad in ["i\tc\t2\t0.5", "i\tc\t1", "i\tc\t1\t1.5", "i\tc\t1\t0.5\ni\tc\t0\t0.5"] {
            assert_eq!(ExternalPredictions::parse_tsv("x", bad).unwrap_err().code(), "MALFORMED_FILE");
        }
    }

    #[test]
    fn transfer_guards() {
        let a = synthetic_dataset("a", 50, 2, 1.0, 1, 1);
        let b = synthetic_dataset("b", 50, 2, 1.0, 1, 2);
        assert_eq!(transfer_evaluate(&a, &a, 0.0, &emb_config()).unwrap_err().code(), "SAME_PROJECT");
        assert_eq!(transfer_evaluate(&a, &b, 1.0, &emb_config()).unwrap_err().code(), "EMPTY_SPLIT");
        let r = transfer_evaluate(&a, &b, 0.0, &emb_config()).unwrap();
        assert_eq!(r.zero_shot, r.adapted);
        assert!(r.adapt_issues.is_empty());
        assert_eq!(r.held_out_items, 50);
        let r = transfer_evaluate(&a, &b, 0.2, &emb_config()).unwrap();
        assert_eq!(r.adapt_issues, ["b-0000", "b-0001"]);
        assert_eq!(r.held_out_items, 40);
    }
}
