//! Shared data model, on-disk layout, validation and canonical serialization.
//!
//! Layout under a corpus root:
//!
//! ```text
//! apps/<app-id>/app.json        screens and components
//! apps/<app-id>/traces.jsonl    observed interaction events (optional)
//! issues/<issue-id>.json        one issue report per file
//! code_map.json                 screen/component id -> code file ids (optional)
//! code_baselines.json           per-issue base code-file rankings (optional)
//! embeddings/*.emb              dense vectors, see `uiloc::EmbeddingStore` (optional)
//! ```
//!
//! Every JSON document carries `"format_version": 1`. Files are written with
//! sorted keys and a trailing newline, so saving the same corpus twice is
//! byte-identical.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::execmodel::TraceRecord;
use crate::ranking::RankEntry;
use crate::s2r::segment_sentences;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("MALFORMED_FILE: {path}:{line}: {message}")]
    MalformedFile {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("corpus failed validation: {0}")]
    Invalid(ValidationReport),
    #[error("IO_FAILURE: {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CorpusError {
    /// Stable error code. For validation failures this is the rule of the
    /// first violation (`DANGLING_REF`, `DUPLICATE_ID`, ...).
    pub fn code(&self) -> &'static str {
        match self {
            CorpusError::MalformedFile { .. } => "MALFORMED_FILE",
            CorpusError::Invalid(report) => report
                .violations
                .first()
                .map(|v| v.rule.code())
                .unwrap_or("VALIDATION_ERROR"),
            CorpusError::Io { .. } => "IO_FAILURE",
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComponentKind {
    Button,
    TextField,
    Label,
    Checkbox,
    ListItem,
    Image,
    MenuItem,
    Other,
}

impl ComponentKind {
    /// Words used as the component's kind tokens in retrieval documents.
    pub fn words(self) -> &'static str {
        match self {
            ComponentKind::Button => "button",
            ComponentKind::TextField => "text field",
            ComponentKind::Label => "label",
            ComponentKind::Checkbox => "checkbox",
            ComponentKind::ListItem => "list item",
            ComponentKind::Image => "image",
            ComponentKind::MenuItem => "menu item",
            ComponentKind::Other => "",
        }
    }
}

/// Pixel rectangle `(left, top, right, bottom)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds(pub i32, pub i32, pub i32, pub i32);

impl Bounds {
    pub fn is_valid(&self) -> bool {
        self.0 <= self.2 && self.1 <= self.3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: String,
    pub kind: ComponentKind,
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub description: String,
    pub bounds: Bounds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_key: Option<String>,
}

impl Component {
    /// Label followed by description; an empty label (icons) leaves only the
    /// description.
    pub fn text(&self) -> String {
        match (self.label.is_empty(), self.description.is_empty()) {
            (false, false) => format!("{} {}", self.label, self.description),
            (false, true) => self.label.clone(),
            _ => self.description.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub components: Vec<Component>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct App {
    pub id: String,
    pub screens: Vec<Screen>,
    pub traces: Vec<TraceRecord>,
}

impl App {
    pub fn screen(&self, id: &str) -> Option<&Screen> {
        self.screens.iter().find(|s| s.id == id)
    }

    /// Component by id together with its owning screen.
    pub fn component(&self, id: &str) -> Option<(&Screen, &Component)> {
        self.screens
            .iter()
            .find_map(|s| s.components.iter().find(|c| c.id == id).map(|c| (s, c)))
    }

    pub fn components(&self) -> impl Iterator<Item = (&Screen, &Component)> {
        self.screens
            .iter()
            .flat_map(|s| s.components.iter().map(move |c| (s, c)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comment {
    pub id: String,
    pub author: String,
    pub timestamp: i64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_solution: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueReport {
    pub id: String,
    pub app_id: String,
    pub title: String,
    #[serde(default)]
    pub body: String,
    /// Reporter handle; when absent the author of the first comment is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reporter: Option<String>,
    #[serde(default)]
    pub comments: Vec<Comment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ob_sentences: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eb_sentences: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s2r_sentences: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_screen_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_component_ids: Option<Vec<String>>,
}

impl IssueReport {
    pub fn reporter(&self) -> Option<&str> {
        self.reporter
            .as_deref()
            .or_else(|| self.comments.first().map(|c| c.author.as_str()))
    }

    pub fn comment_index(&self, comment_id: &str) -> Option<usize> {
        self.comments.iter().position(|c| c.id == comment_id)
    }
}

/// Base code-file ranking for one issue plus the files that were actually fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeBaseline {
    pub entries: Vec<RankEntry>,
    #[serde(default)]
    pub gold_files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub apps: BTreeMap<String, App>,
    /// Sorted by id.
    pub issues: Vec<IssueReport>,
    pub code_map: Option<BTreeMap<String, Vec<String>>>,
    pub code_baselines: Option<BTreeMap<String, CodeBaseline>>,
}

impl Corpus {
    pub fn issue(&self, id: &str) -> Option<&IssueReport> {
        self.issues.iter().find(|i| i.id == id)
    }

    pub fn app(&self, id: &str) -> Option<&App> {
        self.apps.get(id)
    }
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Rule {
    BadId,
    DuplicateId,
    DanglingRef,
    Bounds,
    CommentOrder,
    EmptyText,
    SentenceIndex,
    TraceShape,
}

impl Rule {
    pub fn code(self) -> &'static str {
        match self {
            Rule::BadId => "BAD_ID",
            Rule::DuplicateId => "DUPLICATE_ID",
            Rule::DanglingRef => "DANGLING_REF",
            Rule::Bounds => "BOUNDS",
            Rule::CommentOrder => "COMMENT_ORDER",
            Rule::EmptyText => "EMPTY_TEXT",
            Rule::SentenceIndex => "SENTENCE_INDEX",
            Rule::TraceShape => "TRACE_SHAPE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub entity: String,
    pub rule: Rule,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, entity: impl Into<String>, rule: Rule, detail: impl Into<String>) {
        self.violations.push(Violation {
            entity: entity.into(),
            rule,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "no violations");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{}\t{}\t{}", v.rule.code(), v.entity, v.detail)?;
        }
        Ok(())
    }
}

pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'))
}

fn check_id(report: &mut ValidationReport, entity: &str, id: &str) {
    if !is_valid_id(id) {
        report.push(entity, Rule::BadId, format!("id {id:?} is empty or uses characters outside [A-Za-z0-9_.-]"));
    }
}

/// Code files are relative `/`-separated paths of id-like segments.
pub fn is_valid_code_path(path: &str) -> bool {
    !path.is_empty()
        && path
            .split('/')
            .all(|seg| is_valid_id(seg) && seg != "." && seg != "..")
}

fn check_code_path(report: &mut ValidationReport, entity: &str, path: &str) {
    if !is_valid_code_path(path) {
        report.push(entity, Rule::BadId, format!("code path {path:?} is not a relative path of [A-Za-z0-9_.-] segments"));
    }
}

/// Checks every corpus invariant. Violations are data, never errors.
pub fn validate_corpus(corpus: &Corpus) -> ValidationReport {
    let mut report = ValidationReport::default();

    for (key, app) in &corpus.apps {
        let app_entity = format!("app:{}", app.id);
        check_id(&mut report, &app_entity, &app.id);
        if key != &app.id {
            report.push(&app_entity, Rule::DanglingRef, format!("registered under key {key:?}"));
        }
        validate_app(&mut report, app);
    }

    let mut issue_ids = BTreeSet::new();
    for issue in &corpus.issues {
        let entity = format!("issue:{}", issue.id);
        check_id(&mut report, &entity, &issue.id);
        if !issue_ids.insert(issue.id.as_str()) {
            report.push(&entity, Rule::DuplicateId, "issue id used more than once");
        }
        validate_issue(&mut report, issue, corpus.apps.get(&issue.app_id));
    }

    if let Some(code_map) = &corpus.code_map {
        let known: BTreeSet<&str> = corpus
            .apps
            .values()
            .flat_map(|a| {
                a.screens.iter().map(|s| s.id.as_str()).chain(
                    a.screens
                        .iter()
                        .flat_map(|s| s.components.iter().map(|c| c.id.as_str())),
                )
            })
            .collect();
        for (ui_id, files) in code_map {
            let entity = format!("code_map:{ui_id}");
            if !known.contains(ui_id.as_str()) {
                report.push(&entity, Rule::DanglingRef, "no screen or component with this id");
            }
            for file in files {
                check_code_path(&mut report, &entity, file);
            }
        }
    }

    if let Some(baselines) = &corpus.code_baselines {
        for (issue_id, baseline) in baselines {
            let entity = format!("code_baseline:{issue_id}");
            if !issue_ids.contains(issue_id.as_str()) {
                report.push(&entity, Rule::DanglingRef, "no issue with this id");
            }
            let mut seen = BTreeSet::new();
            for file in &baseline.gold_files {
                check_code_path(&mut report, &entity, file);
            }
            for e in &baseline.entries {
                check_code_path(&mut report, &entity, &e.doc_id);
                if !seen.insert(e.doc_id.as_str()) {
                    report.push(&entity, Rule::DuplicateId, format!("file {:?} ranked twice", e.doc_id));
                }
            }
        }
    }

    report
}

fn validate_app(report: &mut ValidationReport, app: &App) {
    let mut screen_ids = BTreeSet::new();
    let mut component_owner: BTreeMap<&str, &str> = BTreeMap::new();
    for screen in &app.screens {
        let entity = format!("screen:{}/{}", app.id, screen.id);
        check_id(report, &entity, &screen.id);
        if !screen_ids.insert(screen.id.as_str()) {
            report.push(&entity, Rule::DuplicateId, "screen id used more than once in app");
        }
        for c in &screen.components {
            let centity = format!("component:{}/{}", app.id, c.id);
            check_id(report, &centity, &c.id);
            // Component ids are app-unique so rankings and gold labels can
            // name them without a screen prefix.
            if component_owner.insert(c.id.as_str(), screen.id.as_str()).is_some() {
                report.push(&centity, Rule::DuplicateId, "component id used more than once in app");
            }
            if !c.bounds.is_valid() {
                let Bounds(l, t, r, b) = c.bounds;
                report.push(&centity, Rule::Bounds, format!("bounds ({l}, {t}, {r}, {b}) require left <= right and top <= bottom"));
            }
        }
    }

    for (line, rec) in app.traces.iter().enumerate() {
        let entity = format!("trace:{}#{}", app.id, line + 1);
        if !screen_ids.contains(rec.dest.as_str()) {
            report.push(&entity, Rule::DanglingRef, format!("unknown dest screen {:?}", rec.dest));
        }
        if let Some(src) = &rec.source {
            if !screen_ids.contains(src.as_str()) {
                report.push(&entity, Rule::DanglingRef, format!("unknown source screen {src:?}"));
            }
        }
        if let Some(comp) = &rec.component {
            match component_owner.get(comp.as_str()) {
                None => report.push(&entity, Rule::DanglingRef, format!("unknown component {comp:?}")),
                Some(owner) if Some(*owner) != rec.source.as_deref() => report.push(
                    &entity,
                    Rule::DanglingRef,
                    format!("component {comp:?} belongs to screen {owner:?}, not the source screen"),
                ),
                Some(_) => {}
            }
        }
        if let Err(msg) = rec.check_shape() {
            report.push(&entity, Rule::TraceShape, msg);
        }
    }
}

fn validate_issue(report: &mut ValidationReport, issue: &IssueReport, app: Option<&App>) {
    let entity = format!("issue:{}", issue.id);
    if app.is_none() {
        report.push(&entity, Rule::DanglingRef, format!("unknown app {:?}", issue.app_id));
    }

    let mut comment_ids = BTreeSet::new();
    for c in &issue.comments {
        let centity = format!("comment:{}/{}", issue.id, c.id);
        check_id(report, &centity, &c.id);
        if !comment_ids.insert(c.id.as_str()) {
            report.push(&centity, Rule::DuplicateId, "comment id used more than once in issue");
        }
        if c.text.trim().is_empty() {
            report.push(&centity, Rule::EmptyText, "comment text is empty");
        }
    }
    for pair in issue.comments.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if (a.timestamp, &a.id) > (b.timestamp, &b.id) {
            report.push(
                format!("comment:{}/{}", issue.id, b.id),
                Rule::CommentOrder,
                format!("comment follows {:?} but sorts before it by (timestamp, id)", a.id),
            );
        }
    }

    let sentence_count = segment_sentences(&issue.body).len();
    for (field, indices) in [
        ("ob_sentences", &issue.ob_sentences),
        ("eb_sentences", &issue.eb_sentences),
        ("s2r_sentences", &issue.s2r_sentences),
    ] {
        for &i in indices.iter().flatten() {
            if i >= sentence_count {
                report.push(&entity, Rule::SentenceIndex, format!("{field} index {i} out of range for {sentence_count} body sentences"));
            }
        }
    }

    if let Some(app) = app {
        for sid in issue.gold_screen_ids.iter().flatten() {
            if app.screen(sid).is_none() {
                report.push(&entity, Rule::DanglingRef, format!("gold screen {sid:?} not in app {:?}", app.id));
            }
        }
        for cid in issue.gold_component_ids.iter().flatten() {
            if app.component(cid).is_none() {
                report.push(&entity, Rule::DanglingRef, format!("gold component {cid:?} not in app {:?}", app.id));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Disk format

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    format_version: u32,
    #[serde(flatten)]
    body: T,
}

#[derive(Serialize, Deserialize)]
struct AppFile {
    id: String,
    screens: Vec<Screen>,
}

#[derive(Serialize, Deserialize)]
struct CodeMapFile {
    map: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct CodeBaselinesFile {
    baselines: BTreeMap<String, CodeBaseline>,
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::MalformedFile {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))
}

fn parse_versioned<T: DeserializeOwned>(path: &Path) -> Result<T, CorpusError> {
    let text = read_text(path)?;
    let doc: Versioned<T> =
        serde_json::from_str(&text).map_err(|e| malformed(path, e.line(), e.to_string()))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(malformed(
            path,
            1,
            format!("unsupported format_version {}", doc.format_version),
        ));
    }
    Ok(doc.body)
}

fn parse_traces(path: &Path) -> Result<Vec<TraceRecord>, CorpusError> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| malformed(path, i + 1, e.to_string())))
        .collect()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut out = fs::read_dir(dir)
        .map_err(|e| CorpusError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| CorpusError::io(dir, err)))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort();
    Ok(out)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Parses a corpus directory without checking cross-references.
pub fn read_corpus(root: &Path) -> Result<Corpus, CorpusError> {
    if !root.is_dir() {
        return Err(CorpusError::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "corpus root is not a directory"),
        ));
    }
    let mut corpus = Corpus::default();

    let apps_dir = root.join("apps");
    if apps_dir.is_dir() {
        for dir in sorted_entries(&apps_dir)? {
            if !dir.is_dir() {
                continue;
            }
            let dir_name = dir
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let app_path = dir.join("app.json");
            let file: AppFile = parse_versioned(&app_path)?;
            if file.id != dir_name {
                return Err(malformed(&app_path, 1, format!("app id {:?} does not match directory {dir_name:?}", file.id)));
            }
            let traces_path = dir.join("traces.jsonl");
            let traces = if traces_path.exists() {
                parse_traces(&traces_path)?
            } else {
                Vec::new()
            };
            corpus.apps.insert(
                file.id.clone(),
                App {
                    id: file.id,
                    screens: file.screens,
                    traces,
                },
            );
        }
    }

    let issues_dir = root.join("issues");
    if issues_dir.is_dir() {
        for path in sorted_entries(&issues_dir)? {
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let issue: IssueReport = parse_versioned(&path)?;
            if issue.id != file_stem(&path) {
                return Err(malformed(&path, 1, format!("issue id {:?} does not match file name", issue.id)));
            }
            corpus.issues.push(issue);
        }
    }
    corpus.issues.sort_by(|a, b| a.id.cmp(&b.id));

    let code_map_path = root.join("code_map.json");
    if code_map_path.exists() {
        let file: CodeMapFile = parse_versioned(&code_map_path)?;
        corpus.code_map = Some(file.map);
    }
    let baselines_path = root.join("code_baselines.json");
    if baselines_path.exists() {
        let file: CodeBaselinesFile = parse_versioned(&baselines_path)?;
        corpus.code_baselines = Some(file.baselines);
    }

    Ok(corpus)
}

/// Reads and fully validates a corpus.
pub fn load_corpus(root: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let corpus = read_corpus(root.as_ref())?;
    let report = validate_corpus(&corpus);
    if report.is_empty() {
        Ok(corpus)
    } else {
        Err(CorpusError::Invalid(report))
    }
}

/// Canonical pretty JSON: sorted keys, trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // `serde_json::Value` objects are BTreeMaps, so keys come out sorted.
    let v = serde_json::to_value(value).expect("corpus types always serialize");
    let mut s = serde_json::to_string_pretty(&v).expect("value always serializes");
    s.push('\n');
    s
}

/// Canonical single-line JSON, no trailing newline.
pub fn canonical_line<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("corpus types always serialize");
    serde_json::to_string(&v).expect("value always serializes")
}

/// Every file `save_corpus` would write, as (relative path, contents).
pub fn render_corpus_files(corpus: &Corpus) -> Vec<(PathBuf, String)> {
    let mut files = Vec::new();
    for app in corpus.apps.values() {
        let base = PathBuf::from("apps").join(&app.id);
        files.push((
            base.join("app.json"),
            canonical_json(&Versioned {
                format_version: FORMAT_VERSION,
                body: AppFile {
                    id: app.id.clone(),
                    screens: app.screens.clone(),
                },
            }),
        ));
        if !app.traces.is_empty() {
            let mut text = String::new();
            for rec in &app.traces {
                text.push_str(&canonical_line(rec));
                text.push('\n');
            }
            files.push((base.join("traces.jsonl"), text));
        }
    }
    for issue in &corpus.issues {
        files.push((
            PathBuf::from("issues").join(format!("{}.json", issue.id)),
            canonical_json(&Versioned {
                format_version: FORMAT_VERSION,
                body: issue,
            }),
        ));
    }
    if let Some(map) = &corpus.code_map {
        files.push((
            PathBuf::from("code_map.json"),
            canonical_json(&Versioned {
                format_version: FORMAT_VERSION,
                body: CodeMapFile { map: map.clone() },
            }),
        ));
    }
    if let Some(baselines) = &corpus.code_baselines {
        files.push((
            PathBuf::from("code_baselines.json"),
            canonical_json(&Versioned {
                format_version: FORMAT_VERSION,
                body: CodeBaselinesFile {
                    baselines: baselines.clone(),
                },
            }),
        ));
    }
    files
}

/// Writes `corpus` under `root` in canonical form. The corpus is validated
/// first and nothing is written when it has violations.
pub fn save_corpus(corpus: &Corpus, root: impl AsRef<Path>) -> Result<(), CorpusError> {
    let root = root.as_ref();
    let report = validate_corpus(corpus);
    if !report.is_empty() {
        return Err(CorpusError::Invalid(report));
    }
    for (rel, contents) in render_corpus_files(corpus) {
        let path = root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
        }
        fs::write(&path, contents).map_err(|e| CorpusError::io(&path, e))?;
    }
    Ok(())
}

/// Hex SHA-256 over the canonical rendering of the corpus.
pub fn corpus_hash(corpus: &Corpus) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for (rel, contents) in render_corpus_files(corpus) {
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0u8]);
        hasher.update(contents.as_bytes());
        hasher.update([0u8]);
    }
    hex::encode(hasher.finalize())
}
