//! Buggy UI localization.
//!
//! The observed-behavior text of an issue is the query; an app's screens (or
//! components) are the documents. Lexical scoring is Okapi BM25 over an
//! in-memory inverted index. Dense scoring is cosine similarity over vectors
//! produced offline and shipped in `.emb` files. The two are combined by
//! min-max (or reciprocal-rank) fusion.
//!
//! `.emb` files are UTF-8 text:
//!
//! ```text
//! IRK-EMB 1 <dim> <count>
//! <key>\t<v1> <v2> ... <vdim>
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{IssueReport, Screen};
pub use crate::ranking::{RankEntry, Ranking};
use crate::s2r::{identify_s2r_sentences, segment_sentences};
pub use crate::text::tokenize;

#[derive(Debug, thiserror::Error)]
pub enum UilocError {
    #[error("EMPTY_APP: no {0} to index")]
    EmptyApp(&'static str),
    #[error("DIMENSION_MISMATCH: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("MISSING_KEY: no embedding for key {0:?}")]
    MissingKey(String),
    #[error("WEIGHT_MISMATCH: {0}")]
    WeightMismatch(String),
    #[error("MALFORMED_EMBEDDINGS: {source_name}:{line}: {message}")]
    MalformedEmbeddings {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("IO_FAILURE: {0}")]
    Io(#[from] std::io::Error),
}

impl UilocError {
    pub fn code(&self) -> &'static str {
        match self {
            UilocError::EmptyApp(_) => "EMPTY_APP",
            UilocError::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            UilocError::MissingKey(_) => "MISSING_KEY",
            UilocError::WeightMismatch(_) => "WEIGHT_MISMATCH",
            UilocError::MalformedEmbeddings { .. } => "MALFORMED_EMBEDDINGS",
            UilocError::Io(_) => "IO_FAILURE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Granularity {
    Screen,
    Component,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiDocument {
    pub doc_id: String,
    pub granularity: Granularity,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_screen: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_key: Option<String>,
}

/// Inverted index over UI documents.
#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    pub documents: Vec<UiDocument>,
    /// term -> (document ordinal, term frequency), ascending by ordinal.
    pub postings: BTreeMap<String, Vec<(usize, u32)>>,
    pub doc_lengths: Vec<usize>,
    pub avg_doc_length: f64,
}

/// Screen documents: screen name plus every child component's label and
/// description. Component documents: label, description and kind words.
pub fn documents(screens: &[Screen], granularity: Granularity) -> Vec<UiDocument> {
    match granularity {
        Granularity::Screen => screens
            .iter()
            .map(|s| {
                let mut tokens = tokenize(&s.name);
                for c in &s.components {
                    tokens.extend(tokenize(&c.label));
                    tokens.extend(tokenize(&c.description));
                }
                UiDocument {
                    doc_id: s.id.clone(),
                    granularity,
                    tokens,
                    parent_screen: None,
                    embedding_key: s.embedding_key.clone(),
                }
            })
            .collect(),
        Granularity::Component => screens
            .iter()
            .flat_map(|s| {
                s.components.iter().map(move |c| {
                    let mut tokens = tokenize(&c.label);
                    tokens.extend(tokenize(&c.description));
                    tokens.extend(tokenize(c.kind.words()));
                    UiDocument {
                        doc_id: c.id.clone(),
                        granularity,
                        tokens,
                        parent_screen: Some(s.id.clone()),
                        embedding_key: c.embedding_key.clone(),
                    }
                })
            })
            .collect(),
    }
}

pub fn build_index(screens: &[Screen], granularity: Granularity) -> Result<Index, UilocError> {
    let docs = documents(screens, granularity);
    if docs.is_empty() {
        return Err(UilocError::EmptyApp(match granularity {
            Granularity::Screen => "screens",
            Granularity::Component => "components",
        }));
    }
    Ok(Index::from_documents(docs))
}

impl Index {
    pub fn from_documents(documents: Vec<UiDocument>) -> Self {
        let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(documents.len());
        for (ord, doc) in documents.iter().enumerate() {
            doc_lengths.push(doc.tokens.len());
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &doc.tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, n) in tf {
                postings.entry(term.to_string()).or_default().push((ord, n));
            }
        }
        let avg_doc_length = if documents.is_empty() {
            0.0
        } else {
            doc_lengths.iter().sum::<usize>() as f64 / documents.len() as f64
        };
        Index {
            documents,
            postings,
            doc_lengths,
            avg_doc_length,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// BM25 with `idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))`. Every query token
/// contributes, so repeated query terms count repeatedly. All documents are
/// returned, unmatched ones at 0.
pub fn score_lexical(query: &[String], index: &Index, params: &Bm25Params) -> Ranking {
    let n = index.len() as f64;
    let mut scores = vec![0.0f64; index.len()];
    let mut query_tf: BTreeMap<&str, f64> = BTreeMap::new();
    for t in query {
        *query_tf.entry(t.as_str()).or_default() += 1.0;
    }
    for (term, qtf) in query_tf {
        let Some(posting) = index.postings.get(term) else {
            continue;
        };
        let df = posting.len() as f64;
        let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
        for &(ord, tf) in posting {
            let tf = tf as f64;
            let rel_len = if index.avg_doc_length > 0.0 {
                index.doc_lengths[ord] as f64 / index.avg_doc_length
            } else {
                1.0
            };
            let norm = tf + params.k1 * (1.0 - params.b + params.b * rel_len);
            scores[ord] += qtf * idf * tf * (params.k1 + 1.0) / norm;
        }
    }
    Ranking::from_scores(
        "",
        index
            .documents
            .iter()
            .zip(scores)
            .map(|(d, s)| (d.doc_id.clone(), s)),
    )
}

// ---------------------------------------------------------------------------
// Dense vectors

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        EmbeddingStore {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f64>) -> Result<(), UilocError> {
        if vector.len() != self.dim {
            return Err(UilocError::DimensionMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        self.vectors.insert(key.into(), vector);
        Ok(())
    }

    /// Parses one `.emb` document. `source_name` only labels errors.
    pub fn parse(text: &str, source_name: &str) -> Result<Self, UilocError> {
        let bad = |line: usize, message: String| UilocError::MalformedEmbeddings {
            source_name: source_name.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "missing header".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (dim, count) = match fields.as_slice() {
            ["IRK-EMB", "1", dim, count] => (
                dim.parse::<usize>().map_err(|e| bad(1, format!("dim: {e}")))?,
                count.parse::<usize>().map_err(|e| bad(1, format!("count: {e}")))?,
            ),
            _ => return Err(bad(1, format!("expected `IRK-EMB 1 <dim> <count>`, found {header:?}"))),
        };
        if dim == 0 {
            return Err(bad(1, "dim must be positive".into()));
        }
        let mut store = EmbeddingStore::new(dim);
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (key, values) = line
                .split_once('\t')
                .ok_or_else(|| bad(i + 1, "expected `<key>\\t<values>`".into()))?;
            if key.is_empty() {
                return Err(bad(i + 1, "empty key".into()));
            }
            let vector = values
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| bad(i + 1, format!("{v:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if vector.len() != dim {
                return Err(bad(i + 1, format!("vector has {} entries, header says {dim}", vector.len())));
            }
            if store.vectors.insert(key.to_string(), vector).is_some() {
                return Err(bad(i + 1, format!("duplicate key {key:?}")));
            }
        }
        if store.len() != count {
            return Err(bad(1, format!("header count {count} but {} vectors", store.len())));
        }
        Ok(store)
    }

    /// Loads and merges every `*.emb` file in `dir` (sorted by name). Returns
    /// `None` when the directory does not exist or holds no `.emb` files.
    pub fn load_dir(dir: &Path) -> Result<Option<Self>, UilocError> {
        if !dir.is_dir() {
            return Ok(None);
        }
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()?;
        paths.retain(|p| p.extension().and_then(|e| e.to_str()) == Some("emb"));
        paths.sort();
        let mut merged: Option<EmbeddingStore> = None;
        for path in paths {
            let name = path.display().to_string();
            let store = Self::parse(&fs::read_to_string(&path)?, &name)?;
            match &mut merged {
                None => merged = Some(store),
                Some(m) => {
                    if m.dim != store.dim {
                        return Err(UilocError::DimensionMismatch {
                            expected: m.dim,
                            got: store.dim,
                        });
                    }
                    for (k, v) in store.vectors {
                        if m.vectors.insert(k.clone(), v).is_some() {
                            return Err(UilocError::MalformedEmbeddings {
                                source_name: name.clone(),
                                line: 0,
                                message: format!("key {k:?} defined in more than one file"),
                            });
                        }
                    }
                }
            }
        }
        Ok(merged)
    }

    /// Serializes in `.emb` format, keys ascending.
    pub fn to_emb_string(&self) -> String {
        let mut out = format!("IRK-EMB 1 {} {}\n", self.dim, self.vectors.len());
        for (k, v) in &self.vectors {
            out.push_str(k);
            out.push('\t');
            let values: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            out.push_str(&values.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Cosine similarity accumulated in f64; 0 when either vector is all zeros.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Cosine ranking of the documents in `keys` (doc id -> embedding key).
/// Documents without a key are simply not in `keys`.
pub fn score_dense(
    query_vector: &[f64],
    store: &EmbeddingStore,
    keys: &BTreeMap<String, String>,
) -> Result<Ranking, UilocError> {
    if query_vector.len() != store.dim {
        return Err(UilocError::DimensionMismatch {
            expected: store.dim,
            got: query_vector.len(),
        });
    }
    let scores = keys
        .iter()
        .map(|(doc, key)| {
            store
                .get(key)
                .map(|v| (doc.clone(), cosine(query_vector, v)))
                .ok_or_else(|| UilocError::MissingKey(key.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Ranking::from_scores("", scores))
}

// ---------------------------------------------------------------------------
// Fusion

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
#[derive(Default)]
pub enum FusionMethod {
    #[default]
    MinMax,
    Rrf { k: f64 },
}


/// Weighted fusion of rankings. A document missing from a ranking gets 0 from
/// it. Min-max normalizes each ranking over its own scores first (constant
/// ranking -> 0.5); RRF sums `w / (k + rank)`.
pub fn fuse(rankings: &[Ranking], weights: &[f64], method: FusionMethod) -> Result<Ranking, UilocError> {
    if rankings.len() != weights.len() {
        return Err(UilocError::WeightMismatch(format!(
            "{} rankings but {} weights",
            rankings.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(UilocError::WeightMismatch("weights must be finite and non-negative".into()));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(UilocError::WeightMismatch("weights must sum to a positive value".into()));
    }
    let mut fused: BTreeMap<String, f64> = BTreeMap::new();
    for (ranking, &w) in rankings.iter().zip(weights) {
        for e in &ranking.entries {
            fused.entry(e.doc_id.clone()).or_insert(0.0);
        }
        match method {
            FusionMethod::MinMax => {
                for (doc, v) in ranking.min_max_normalized() {
                    *fused.get_mut(&doc).expect("inserted above") += w * v;
                }
            }
            FusionMethod::Rrf { k } => {
                for (rank, e) in ranking.entries.iter().enumerate() {
                    *fused.get_mut(&e.doc_id).expect("inserted above") += w / (k + (rank + 1) as f64);
                }
            }
        }
    }
    let query_id = rankings.first().map(|r| r.query_id.clone()).unwrap_or_default();
    Ok(Ranking::from_scores(query_id, fused))
}

// ---------------------------------------------------------------------------
// Localization

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeConfig {
    pub bm25: Bm25Params,
    /// Weights of (lexical, dense) when dense scores are available.
    pub fusion_weights: [f64; 2],
    pub fusion: FusionMethod,
    /// Weight of a component's own score against its parent screen's.
    pub alpha: f64,
    /// Weight of screen evidence when re-ranking code files.
    pub gamma: f64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            bm25: Bm25Params::default(),
            fusion_weights: [0.5, 0.5],
            fusion: FusionMethod::MinMax,
            alpha: 0.7,
            gamma: 0.3,
        }
    }
}

/// Precomputed query vector plus the store holding document vectors.
#[derive(Debug, Clone, Copy)]
pub struct DenseQuery<'a> {
    pub query_vector: &'a [f64],
    pub store: &'a EmbeddingStore,
}

/// Embedding key under which an issue's observed-behavior query vector is stored.
pub fn ob_embedding_key(issue_id: &str) -> String {
    format!("ob:{issue_id}")
}

const FAILURE_STEMS: [&str; 8] = ["crash", "error", "fail", "incorrect", "wrong", "broken", "freez", "exception"];

/// Observed-behavior query text for an issue.
///
/// Gold OB sentences when annotated; otherwise body sentences that are not
/// S2R and mention a failure term; otherwise title and body.
pub fn ob_query_text(issue: &IssueReport) -> String {
    let spans = segment_sentences(&issue.body);
    let pick = |idx: &[usize]| -> String {
        idx.iter()
            .filter_map(|&i| spans.get(i))
            .map(|s| s.text(&issue.body))
            .collect::<Vec<_>>()
            .join(" ")
    };
    if let Some(gold) = &issue.ob_sentences {
        return pick(gold);
    }
    let s2r: BTreeSet<usize> = identify_s2r_sentences(issue, false).into_iter().collect();
    let failing: Vec<usize> = spans
        .iter()
        .enumerate()
        .filter(|(i, s)| {
            !s2r.contains(i)
                && tokenize(s.text(&issue.body))
                    .iter()
                    .any(|t| FAILURE_STEMS.iter().any(|stem| t.starts_with(stem)))
        })
        .map(|(i, _)| i)
        .collect();
    if failing.is_empty() {
        format!("{} {}", issue.title, issue.body)
    } else {
        pick(&failing)
    }
}

fn lexical_with_dense(
    query_id: &str,
    ob_text: &str,
    index: &Index,
    config: &LocalizeConfig,
    dense: Option<DenseQuery<'_>>,
) -> Result<Ranking, UilocError> {
    let mut lexical = score_lexical(&tokenize(ob_text), index, &config.bm25);
    lexical.query_id = query_id.to_string();
    let Some(dense) = dense else {
        return Ok(lexical);
    };
    let keys: BTreeMap<String, String> = index
        .documents
        .iter()
        .filter_map(|d| d.embedding_key.clone().map(|k| (d.doc_id.clone(), k)))
        .collect();
    if keys.is_empty() {
        return Ok(lexical);
    }
    let mut dense_rank = score_dense(dense.query_vector, dense.store, &keys)?;
    dense_rank.query_id = query_id.to_string();
    fuse(&[lexical, dense_rank], &config.fusion_weights, config.fusion)
}

/// Ranks every screen of an app against the OB text.
pub fn localize_screens(
    query_id: &str,
    ob_text: &str,
    screens: &[Screen],
    config: &LocalizeConfig,
    dense: Option<DenseQuery<'_>>,
) -> Result<Ranking, UilocError> {
    let index = build_index(screens, Granularity::Screen)?;
    lexical_with_dense(query_id, ob_text, &index, config, dense)
}

/// Ranks every component: `alpha * own + (1 - alpha) * parent screen`, both
/// min-max normalized.
pub fn localize_components(
    query_id: &str,
    ob_text: &str,
    screens: &[Screen],
    config: &LocalizeConfig,
    dense: Option<DenseQuery<'_>>,
) -> Result<Ranking, UilocError> {
    let index = build_index(screens, Granularity::Component)?;
    let own = lexical_with_dense(query_id, ob_text, &index, config, dense)?;
    let screen_rank = localize_screens(query_id, ob_text, screens, config, dense)?;
    let screen_norm: BTreeMap<String, f64> = screen_rank.min_max_normalized().into_iter().collect();
    let parent: BTreeMap<&str, &str> = index
        .documents
        .iter()
        .filter_map(|d| d.parent_screen.as_deref().map(|p| (d.doc_id.as_str(), p)))
        .collect();
    let alpha = config.alpha;
    let combined: Vec<(String, f64)> = own
        .min_max_normalized()
        .into_iter()
        .map(|(doc, v)| {
            let s = parent
                .get(doc.as_str())
                .and_then(|p| screen_norm.get(*p))
                .copied()
                .unwrap_or(0.0);
            let score = alpha * v + (1.0 - alpha) * s;
            (doc, score)
        })
        .collect();
    Ok(Ranking::from_scores(query_id, combined))
}

/// Boosts code files tied to highly ranked screens:
/// `(1 - gamma) * base + gamma * best mapped screen`, both min-max normalized;
/// files with no mapped screen get 0 from the screen term.
pub fn rerank_code_files(
    base: &Ranking,
    screens: &Ranking,
    code_map: &BTreeMap<String, Vec<String>>,
    gamma: f64,
) -> Ranking {
    let screen_norm: BTreeMap<String, f64> = screens.min_max_normalized().into_iter().collect();
    let mut file_boost: BTreeMap<&str, f64> = BTreeMap::new();
    for (ui_id, files) in code_map {
        let Some(&s) = screen_norm.get(ui_id) else {
            continue;
        };
        for f in files {
            let slot = file_boost.entry(f.as_str()).or_insert(0.0);
            *slot = slot.max(s);
        }
    }
    let scores: Vec<(String, f64)> = base
        .min_max_normalized()
        .into_iter()
        .map(|(file, v)| {
            let boost = file_boost.get(file.as_str()).copied().unwrap_or(0.0);
            let score = (1.0 - gamma) * v + gamma * boost;
            (file, score)
        })
        .collect();
    Ranking::from_scores(base.query_id.clone(), scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Bounds, Component, ComponentKind};

    fn comp(id: &str, label: &str) -> Component {
        Component {
            id: id.into(),
            kind: ComponentKind::Button,
            label: label.into(),
            description: String::new(),
            bounds: Bounds(0, 0, 1, 1),
            embedding_key: None,
        }
    }

    fn screen(id: &str, name: &str, comps: Vec<Component>) -> Screen {
        Screen { id: id.into(), name: name.into(), components: comps, embedding_key: None }
    }

    fn ranking(pairs: &[(&str, f64)]) -> Ranking {
        Ranking::from_scores("q", pairs.iter().map(|(d, s)| (d.to_string(), *s)))
    }

    fn order(r: &Ranking) -> Vec<&str> {
        r.doc_ids().collect()
    }

    #[test]
    fn index_granularities() {
        let app = [screen("S1", "Login", vec![comp("c1", "Sign in"), comp("c2", "Forgot password")])];
        let s = build_index(&app, Granularity::Screen).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.documents[0].tokens, ["login", "sign", "forgot", "password"]);
        let c = build_index(&app, Granularity::Component).unwrap();
        assert_eq!(c.len(), 2);
        assert!(c.documents.iter().all(|d| d.parent_screen.as_deref() == Some("S1")));
        assert_eq!(c.documents[1].tokens, ["forgot", "password", "button"]);
        assert_eq!(
            build_index(&[screen("S1", "x", vec![])], Granularity::Component).unwrap_err().code(),
            "EMPTY_APP"
        );
        assert_eq!(build_index(&[], Granularity::Screen).unwrap_err().code(), "EMPTY_APP");
    }

    #[test]
    fn empty_query_ranks_by_id() {
        let app = [screen("b", "Beta", vec![]), screen("a", "Alpha", vec![])];
        let idx = build_index(&app, Granularity::Screen).unwrap();
        let r = score_lexical(&[], &idx, &Bm25Params::default());
        assert_eq!(order(&r), ["a", "b"]);
        assert!(r.entries.iter().all(|e| e.score == 0.0));
    }

    #[test]
    fn single_document_single_term() {
        // N = 1, df = 1: idf = ln(1 + 0.5/1.5) = ln(4/3). tf = 1, |d| = avgdl.
        // score = idf * (1 * 2.2) / (1 + 1.2) = ln(4/3).
        let idx = build_index(&[screen("S", "Crash", vec![])], Granularity::Screen).unwrap();
        let r = score_lexical(&["crash".to_string()], &idx, &Bm25Params::default());
        assert!((r.entries[0].score - (4.0f64 / 3.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn dense_self_and_orthogonal() {
        let mut store = EmbeddingStore::new(3);
        store.insert("a", vec![1.0, 2.0, 3.0]).unwrap();
        store.insert("b", vec![-2.0, 1.0, 0.0]).unwrap();
        let keys = BTreeMap::from([("A".to_string(), "a".to_string()), ("B".to_string(), "b".to_string())]);
        let r = score_dense(&[1.0, 2.0, 3.0], &store, &keys).unwrap();
        assert!((r.score_of("A").unwrap() - 1.0).abs() < 1e-12);
        assert!(r.score_of("B").unwrap().abs() < 1e-12);
        assert_eq!(score_dense(&[1.0], &store, &keys).unwrap_err().code(), "DIMENSION_MISMATCH");
        let missing = BTreeMap::from([("C".to_string(), "zzz".to_string())]);
        assert_eq!(score_dense(&[1.0, 0.0, 0.0], &store, &missing).unwrap_err().code(), "MISSING_KEY");
    }

    #[test]
    fn emb_format_round_trip_and_errors() {
        let text = "IRK-EMB 1 2 2\nx\t0.5 -1\ny\t0 0.25\n";
        let store = EmbeddingStore::parse(text, "t").unwrap();
        assert_eq!(store.dim, 2);
        assert_eq!(store.get("x").unwrap(), [0.5, -1.0]);
        assert_eq!(EmbeddingStore::parse(&store.to_emb_string(), "t").unwrap(), store);
        for bad in [
            "IRK-EMB 2 2 1\nx\t1 1\n",
            "IRK-EMB 1 2 2\nx\t1 1\n",
            "IRK-EMB 1 2 1\nx\t1\n",
            "IRK-EMB 1 2 2\nx\t1 1\nx\t1 1\n",
            "IRK-EMB 1 2 1\nx 1 1\n",
        ] {
            assert_eq!(EmbeddingStore::parse(bad, "t").unwrap_err().code(), "MALFORMED_EMBEDDINGS", "{bad:?}");
        }
    }

    #[test]
    fn fusion_degenerate_weights() {
        let a = ranking(&[("x", 3.0), ("y", 2.0), ("z", 1.0)]);
        let b = ranking(&[("z", 9.0), ("y", 5.0), ("x", 0.0)]);
        let f = fuse(&[a.clone(), b.clone()], &[1.0, 0.0], FusionMethod::MinMax).unwrap();
        assert_eq!(order(&f), order(&a));
        let same = fuse(&[a.clone(), a.clone()], &[0.5, 0.5], FusionMethod::MinMax).unwrap();
        assert_eq!(order(&same), order(&a));
        assert_eq!(fuse(std::slice::from_ref(&a), &[1.0, 0.0], FusionMethod::MinMax).unwrap_err().code(), "WEIGHT_MISMATCH");
        assert_eq!(fuse(&[a.clone(), b.clone()], &[0.0, 0.0], FusionMethod::MinMax).unwrap_err().code(), "WEIGHT_MISMATCH");
        assert_eq!(fuse(&[a, b], &[-1.0, 2.0], FusionMethod::MinMax).unwrap_err().code(), "WEIGHT_MISMATCH");
    }

    #[test]
    fn fusion_hand_computed() {
        // a normalized: x 1, y 0.5, z 0. b normalized: z 1, y 0.6, x 0 (over 0..5).
        // fused (0.7, 0.3): x 0.7, y 0.35 + 0.18 = 0.53, z 0.3.
        let a = ranking(&[("x", 4.0), ("y", 3.0), ("z", 2.0)]);
        let b = ranking(&[("z", 5.0), ("y", 3.0), ("x", 0.0)]);
        let f = fuse(&[a, b], &[0.7, 0.3], FusionMethod::MinMax).unwrap();
        assert_eq!(order(&f), ["x", "y", "z"]);
        assert!((f.score_of("x").unwrap() - 0.7).abs() < 1e-12);
        assert!((f.score_of("y").unwrap() - 0.53).abs() < 1e-12);
        assert!((f.score_of("z").unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn absent_documents_contribute_zero() {
        let a = ranking(&[("x", 1.0), ("y", 0.0)]);
        let b = ranking(&[("w", 1.0)]);
        let f = fuse(&[a, b], &[1.0, 1.0], FusionMethod::MinMax).unwrap();
        // w: 0 + 0.5 (constant ranking), x: 1 + 0, y: 0.
        assert_eq!(order(&f), ["x", "w", "y"]);
    }

    #[test]
    fn rrf_fusion() {
        let a = ranking(&[("x", 3.0), ("y", 2.0)]);
        let b = ranking(&[("y", 3.0), ("x", 2.0)]);
        let f = fuse(&[a, b], &[1.0, 1.0], FusionMethod::Rrf { k: 60.0 }).unwrap();
        let expect = 1.0 / 61.0 + 1.0 / 62.0;
        assert!((f.score_of("x").unwrap() - expect).abs() < 1e-15);
        assert_eq!(order(&f), ["x", "y"]);
    }

    #[test]
    fn screen_with_unique_tokens_wins() {
        let app = [
            screen("S1", "Inbox", vec![comp("a", "Compose")]),
            screen("S2", "Calendar", vec![comp("b", "New event")]),
            screen("S3", "Settings", vec![comp("c", "Dark mode")]),
        ];
        let r = localize_screens("q", "calendar event calendar", &app, &LocalizeConfig::default(), None).unwrap();
        assert_eq!(r.entries[0].doc_id, "S2");
        assert_eq!(r.query_id, "q");
        let empty = localize_screens("q", "", &app, &LocalizeConfig::default(), None).unwrap();
        assert_eq!(order(&empty), ["S1", "S2", "S3"]);
    }

    #[test]
    fn component_alpha_and_screen_context() {
        let app = [
            screen("S1", "Photos gallery", vec![comp("p1", "Share")]),
            screen("S2", "Contacts", vec![comp("p2", "Share")]),
        ];
        let config = LocalizeConfig::default();
        let r = localize_components("q", "share photos", &app, &config, None).unwrap();
        assert_eq!(order(&r), ["p1", "p2"]);

        let pure = LocalizeConfig { alpha: 1.0, ..config };
        let r = localize_components("q", "share photos", &app, &pure, None).unwrap();
        let idx = build_index(&app, Granularity::Component).unwrap();
        let lex = score_lexical(&tokenize("share photos"), &idx, &config.bm25);
        assert_eq!(order(&r), order(&lex));
    }

    #[test]
    fn rerank_examples() {
        let base = ranking(&[("A.kt", 3.0), ("B.kt", 2.0), ("C.kt", 1.0)]);
        let screens = ranking(&[("S2", 5.0), ("S1", 1.0)]);
        let map = BTreeMap::from([
            ("S1".to_string(), vec!["A.kt".to_string()]),
            ("S2".to_string(), vec!["C.kt".to_string()]),
        ]);
        let same = rerank_code_files(&base, &screens, &map, 0.0);
        assert_eq!(order(&same), order(&base));
        // gamma 0.5: A 0.5*1 + 0.5*0 = 0.5, B 0.25, C 0 + 0.5*1 = 0.5 -> tie A, C by id.
        let r = rerank_code_files(&base, &screens, &map, 0.5);
        assert_eq!(order(&r), ["A.kt", "C.kt", "B.kt"]);

        let tied = ranking(&[("X.kt", 1.0), ("Y.kt", 1.0)]);
        let map = BTreeMap::from([("S2".to_string(), vec!["Y.kt".to_string()])]);
        let r = rerank_code_files(&tied, &screens, &map, 0.3);
        assert_eq!(r.entries[0].doc_id, "Y.kt");
    }

    #[test]
    fn ob_query_prefers_gold_then_failure_sentences() {
        let mut issue = IssueReport {
            id: "i".into(),
            app_id: "a".into(),
            title: "Title words".into(),
            body: "Tap Save. The app crashes on save. It is blue.".into(),
            reporter: None,
            comments: vec![],
            ob_sentences: None,
            eb_sentences: None,
            s2r_sentences: None,
            gold_screen_ids: None,
            gold_component_ids: None,
        };
        assert_eq!(ob_query_text(&issue), "The app crashes on save.");
        issue.ob_sentences = Some(vec![2]);
        assert_eq!(ob_query_text(&issue), "It is blue.");
        issue.ob_sentences = None;
        issue.body = "Nothing here.".into();
        assert_eq!(ob_query_text(&issue), "Title words Nothing here.");
    }
}
