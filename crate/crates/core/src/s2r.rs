//! Steps-to-reproduce quality assessment.
//!
//! The pipeline segments the issue body into sentences, keeps the ones that
//! read as reproduction steps, splits them into atomic steps, and replays the
//! steps against an [`ExecutionModel`]. Each step is annotated CORRECT,
//! AMBIGUOUS or VOCAB_MISMATCH, and gaps between consecutive matched steps
//! become missing-step suggestions (shortest interaction paths).
//!
//! Extraction is rule based. Steps produced elsewhere (for example by a
//! language model) can be injected with [`parse_injected_steps`] and fed to
//! [`assess_steps`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{canonical_json, IssueReport};
use crate::execmodel::{Action, ExecutionModel, Interaction, ModelError};
use crate::text::{token_set_f1, tokenize};

#[derive(Debug, thiserror::Error)]
pub enum S2rError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("UNSUPPORTED_FORMAT: {0}")]
    UnsupportedFormat(String),
    #[error("BAD_STEPS: record {record}: {message}")]
    BadSteps { record: usize, message: String },
}

impl S2rError {
    pub fn code(&self) -> &'static str {
        match self {
            S2rError::Model(e) => e.code(),
            S2rError::UnsupportedFormat(_) => "UNSUPPORTED_FORMAT",
            S2rError::BadSteps { .. } => "BAD_STEPS",
        }
    }
}

// ---------------------------------------------------------------------------
// Sentence segmentation

/// Byte span of one sentence in the segmented text. List markers are not
/// part of the span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSpan {
    pub start: usize,
    pub end: usize,
    /// Index of the numbered/bulleted list this sentence belongs to.
    pub list: Option<usize>,
}

impl SentenceSpan {
    pub fn text<'a>(&self, source: &'a str) -> &'a str {
        &source[self.start..self.end]
    }
}

fn list_marker() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:\d{1,3}[.)]|[-*•])(?:\s+|$)").expect("valid regex"))
}

/// Splits on `.`, `!`, `?` (followed by whitespace or end of line), on every
/// line break, and strips leading list markers (`1.`, `2)`, `-`, `*`).
pub fn segment_sentences(text: &str) -> Vec<SentenceSpan> {
    let mut spans = Vec::new();
    let mut list_count = 0usize;
    let mut in_list = false;
    let mut line_start = 0usize;
    for line in text.split_inclusive('\n') {
        let offset = line_start;
        line_start += line.len();
        let body = line.trim_end_matches(['\n', '\r']);
        let lead = body.len() - body.trim_start().len();
        let trimmed = &body[lead..];
        if trimmed.is_empty() {
            in_list = false;
            continue;
        }
        let (content_start, list) = match list_marker().find(trimmed) {
            Some(m) => {
                if !in_list {
                    list_count += 1;
                    in_list = true;
                }
                (offset + lead + m.end(), Some(list_count - 1))
            }
            None => {
                in_list = false;
                (offset + lead, None)
            }
        };
        let content_end = offset + body.len();
        split_terminators(text, content_start, content_end, list, &mut spans);
    }
    spans
}

fn split_terminators(text: &str, start: usize, end: usize, list: Option<usize>, out: &mut Vec<SentenceSpan>) {
    let segment = &text[start..end];
    let mut piece_start = 0usize;
    let mut chars = segment.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        // Absorb runs like "?!" or "...".
        let mut stop = i + c.len_utf8();
        while let Some(&(j, d)) = chars.peek() {
            if matches!(d, '.' | '!' | '?') {
                stop = j + d.len_utf8();
                chars.next();
            } else {
                break;
            }
        }
        let at_boundary = chars.peek().is_none_or(|&(_, d)| d.is_whitespace());
        if at_boundary {
            push_trimmed(start, &segment[piece_start..stop], piece_start, list, out);
            piece_start = stop;
        }
    }
    push_trimmed(start, &segment[piece_start..], piece_start, list, out);
}

fn push_trimmed(base: usize, piece: &str, piece_offset: usize, list: Option<usize>, out: &mut Vec<SentenceSpan>) {
    let lead = piece.len() - piece.trim_start().len();
    let trimmed = piece.trim();
    if trimmed.is_empty() {
        return;
    }
    let start = base + piece_offset + lead;
    out.push(SentenceSpan {
        start,
        end: start + trimmed.len(),
        list,
    });
}

/// Sentence texts of `text`, in order.
pub fn sentences(text: &str) -> Vec<&str> {
    segment_sentences(text).iter().map(|s| s.text(text)).collect()
}

// ---------------------------------------------------------------------------
// Action lexicon

/// Action named by a step, or UNKNOWN when no lexicon verb heads the clause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StepAction {
    Click,
    LongClick,
    Type,
    Swipe,
    Scroll,
    Back,
    Launch,
    Unknown,
}

impl StepAction {
    pub fn action(self) -> Option<Action> {
        Some(match self {
            StepAction::Click => Action::Click,
            StepAction::LongClick => Action::LongClick,
            StepAction::Type => Action::Type,
            StepAction::Swipe => Action::Swipe,
            StepAction::Scroll => Action::Scroll,
            StepAction::Back => Action::Back,
            StepAction::Launch => Action::Launch,
            StepAction::Unknown => return None,
        })
    }

    pub fn name(self) -> &'static str {
        self.action().map_or("UNKNOWN", Action::name)
    }
}

impl From<Action> for StepAction {
    fn from(a: Action) -> Self {
        match a {
            Action::Click => StepAction::Click,
            Action::LongClick => StepAction::LongClick,
            Action::Type => StepAction::Type,
            Action::Swipe => StepAction::Swipe,
            Action::Scroll => StepAction::Scroll,
            Action::Back => StepAction::Back,
            Action::Launch => StepAction::Launch,
        }
    }
}

fn single_verb(word: &str) -> Option<Action> {
    Some(match word {
        "tap" | "click" | "press" | "select" | "choose" | "touch" | "hit" => Action::Click,
        "type" | "enter" | "input" => Action::Type,
        "swipe" => Action::Swipe,
        "scroll" => Action::Scroll,
        "open" | "launch" | "start" => Action::Launch,
        "long-press" | "longpress" | "long-click" | "long-tap" | "hold" => Action::LongClick,
        "back" => Action::Back,
        _ => return None,
    })
}

/// Recognizes the verb at the head of `words` (lowercased). Returns the action,
/// the verb as written, and how many words it spans.
fn head_verb(words: &[String]) -> Option<(Action, String, usize)> {
    let first = words.first()?.as_str();
    let second = words.get(1).map(String::as_str);
    match (first, second) {
        ("long", Some(w @ ("press" | "click" | "tap"))) => {
            Some((Action::LongClick, format!("long {w}"), 2))
        }
        ("go" | "navigate", Some("back")) => Some((Action::Back, format!("{first} back"), 2)),
        _ => single_verb(first).map(|a| (a, first.to_string(), 1)),
    }
}

const SEQUENCING: [&str; 7] = ["then", "and", "first", "next", "finally", "now", "please"];

const DETERMINERS: [&str; 9] = ["some", "any", "each", "every", "all", "our", "their", "his", "her"];

/// Generic widget nouns ignored when comparing a step target with a
/// component's text ("the Login button" vs. a button labeled "Login").
const WIDGET_NOUNS: [&str; 13] = [
    "button", "btn", "field", "box", "icon", "tab", "link", "checkbox", "option", "item", "screen",
    "page", "dialog",
];

fn strip_sequencing(words: &[String]) -> &[String] {
    let skip = words
        .iter()
        .take_while(|w| SEQUENCING.contains(&w.as_str()))
        .count();
    &words[skip..]
}

fn starts_with_action_verb(sentence: &str) -> bool {
    let words: Vec<String> = lex(sentence)
        .into_iter()
        .take_while(|t| !matches!(t, Lexeme::Sep))
        .filter_map(|t| match t {
            Lexeme::Word(w) => Some(w.to_lowercase()),
            _ => None,
        })
        .collect();
    head_verb(strip_sequencing(&words)).is_some()
}

// ---------------------------------------------------------------------------
// S2R sentence identification

/// Indices of body sentences that describe reproduction steps.
///
/// A sentence qualifies when it starts with an imperative action verb, or when
/// it sits in a numbered/bulleted list whose items mostly start with one. With
/// `use_gold` and a gold annotation present, the gold indices are returned.
pub fn identify_s2r_sentences(issue: &IssueReport, use_gold: bool) -> Vec<usize> {
    identify_in_spans(issue, &segment_sentences(&issue.body), use_gold)
}

fn identify_in_spans(issue: &IssueReport, spans: &[SentenceSpan], use_gold: bool) -> Vec<usize> {
    if use_gold {
        if let Some(gold) = &issue.s2r_sentences {
            let mut g = gold.clone();
            g.sort_unstable();
            g.dedup();
            return g;
        }
    }
    let verb_led: Vec<bool> = spans
        .iter()
        .map(|s| starts_with_action_verb(s.text(&issue.body)))
        .collect();
    let mut list_votes: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (span, &v) in spans.iter().zip(&verb_led) {
        if let Some(l) = span.list {
            let e = list_votes.entry(l).or_default();
            e.0 += usize::from(v);
            e.1 += 1;
        }
    }
    spans
        .iter()
        .zip(&verb_led)
        .enumerate()
        .filter(|(_, (span, &v))| {
            v || span
                .list
                .and_then(|l| list_votes.get(&l))
                .is_some_and(|&(yes, total)| 2 * yes > total)
        })
        .map(|(i, _)| i)
        .collect()
}

// ---------------------------------------------------------------------------
// Atomic step extraction

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicStep {
    pub sentence_index: usize,
    /// Position among the steps of its sentence.
    pub ordinal: usize,
    pub action_verb: String,
    pub action: StepAction,
    pub target_phrase: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_value: Option<String>,
}

impl AtomicStep {
    pub fn step_ref(&self) -> StepRef {
        StepRef {
            sentence_index: self.sentence_index,
            ordinal: self.ordinal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Lexeme {
    Word(String),
    Quoted(String),
    Sep,
}

fn closing_quote(open: char) -> Option<&'static [char]> {
    match open {
        '"' => Some(&['"']),
        '“' => Some(&['”', '"']),
        '\'' => Some(&['\'']),
        '‘' => Some(&['’', '\'']),
        _ => None,
    }
}

fn lex(sentence: &str) -> Vec<Lexeme> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut chars = sentence.chars().peekable();
    let flush = |word: &mut String, out: &mut Vec<Lexeme>| {
        if !word.is_empty() {
            out.push(Lexeme::Word(std::mem::take(word)));
        }
    };
    while let Some(c) = chars.next() {
        if word.is_empty() {
            if let Some(closers) = closing_quote(c) {
                let mut quoted = String::new();
                let mut closed = false;
                for d in chars.by_ref() {
                    if closers.contains(&d) {
                        closed = true;
                        break;
                    }
                    quoted.push(d);
                }
                if closed {
                    out.push(Lexeme::Quoted(quoted));
                } else {
                    out.extend(lex(&quoted));
                }
                continue;
            }
        }
        if c.is_alphanumeric() || c == '_' || ((c == '-' || c == '\'') && !word.is_empty()) {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            if matches!(c, ',' | ';') {
                out.push(Lexeme::Sep);
            }
        }
    }
    flush(&mut word, &mut out);
    // "press and hold" names a single long click.
    let mut merged = Vec::with_capacity(out.len());
    let mut i = 0;
    while i < out.len() {
        if let (Some(Lexeme::Word(a)), Some(Lexeme::Word(b)), Some(Lexeme::Word(c))) =
            (out.get(i), out.get(i + 1), out.get(i + 2))
        {
            if a.eq_ignore_ascii_case("press") && b.eq_ignore_ascii_case("and") && c.eq_ignore_ascii_case("hold") {
                merged.push(Lexeme::Word("long-press".into()));
                i += 3;
                continue;
            }
        }
        merged.push(out[i].clone());
        i += 1;
    }
    merged
}

fn is_coordinator(l: &Lexeme) -> bool {
    match l {
        Lexeme::Sep => true,
        Lexeme::Word(w) => w.eq_ignore_ascii_case("and") || w.eq_ignore_ascii_case("then"),
        Lexeme::Quoted(_) => false,
    }
}

fn lower_words(clause: &[Lexeme]) -> Vec<String> {
    clause
        .iter()
        .filter_map(|l| match l {
            Lexeme::Word(w) => Some(w.to_lowercase()),
            _ => None,
        })
        .collect()
}

fn clause_starts_with_verb(clause: &[Lexeme]) -> bool {
    let lead = clause.iter().take_while(|l| matches!(l, Lexeme::Word(_))).cloned().collect::<Vec<_>>();
    head_verb(strip_sequencing(&lower_words(&lead))).is_some()
}

fn target_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .filter(|t| !DETERMINERS.contains(&t.as_str()))
        .collect()
}

fn step_from_clause(clause: &[Lexeme], sentence_index: usize, ordinal: usize) -> AtomicStep {
    let skip = clause
        .iter()
        .take_while(|l| matches!(l, Lexeme::Word(w) if SEQUENCING.contains(&w.to_lowercase().as_str())))
        .count();
    let clause = &clause[skip..];
    let lead: Vec<String> = lower_words(
        &clause
            .iter()
            .take_while(|l| matches!(l, Lexeme::Word(_)))
            .cloned()
            .collect::<Vec<_>>(),
    );
    let (action, verb, consumed) = match head_verb(&lead) {
        Some((a, v, n)) => (StepAction::from(a), v, n),
        None => (
            StepAction::Unknown,
            lead.first().cloned().unwrap_or_default(),
            usize::from(!lead.is_empty()),
        ),
    };
    let rest = &clause[consumed..];

    let mut input_value = None;
    let mut phrase = Vec::new();
    for l in rest {
        match l {
            Lexeme::Quoted(q) if action == StepAction::Type && input_value.is_none() => {
                input_value = Some(q.clone());
            }
            Lexeme::Quoted(q) | Lexeme::Word(q) => phrase.push(q.as_str()),
            Lexeme::Sep => {}
        }
    }
    let mut target_phrase = target_tokens(&phrase.join(" "));
    let mut action = action;
    let mut verb = verb;
    // "Press back" / "Tap the back button" mean the system back action.
    if action == StepAction::Click {
        let core: Vec<&str> = target_phrase
            .iter()
            .map(String::as_str)
            .filter(|t| *t != "button")
            .collect();
        if core == ["back"] {
            action = StepAction::Back;
            verb = format!("{verb} back");
            target_phrase.clear();
        }
    }
    AtomicStep {
        sentence_index,
        ordinal,
        action_verb: verb,
        action,
        target_phrase,
        input_value,
    }
}

/// Splits one S2R sentence into atomic steps.
///
/// Clauses are separated by "and", "then", "," and ";" when the next clause is
/// headed by an action verb; otherwise the text joins the previous clause
/// ("Tap Save and Exit" stays one step).
pub fn extract_atomic_steps(sentence: &str, sentence_index: usize) -> Vec<AtomicStep> {
    let lexemes = lex(sentence);
    let mut segments: Vec<Vec<Lexeme>> = Vec::new();
    let mut current = Vec::new();
    for l in lexemes {
        if is_coordinator(&l) {
            if !current.is_empty() {
                segments.push(std::mem::take(&mut current));
            }
        } else {
            current.push(l);
        }
    }
    if !current.is_empty() {
        segments.push(current);
    }

    let mut clauses: Vec<Vec<Lexeme>> = Vec::new();
    for seg in segments {
        match clauses.last_mut() {
            Some(prev) if !clause_starts_with_verb(&seg) => prev.extend(seg),
            _ => clauses.push(seg),
        }
    }
    clauses
        .iter()
        .enumerate()
        .map(|(ordinal, c)| step_from_clause(c, sentence_index, ordinal))
        .collect()
}

/// Atomic steps of every S2R sentence of `issue`, in reading order.
pub fn extract_issue_steps(issue: &IssueReport, use_gold: bool) -> Vec<AtomicStep> {
    let spans = segment_sentences(&issue.body);
    identify_in_spans(issue, &spans, use_gold)
        .into_iter()
        .filter_map(|i| spans.get(i).map(|s| (i, s.text(&issue.body))))
        .flat_map(|(i, text)| extract_atomic_steps(text, i))
        .collect()
}

// ---------------------------------------------------------------------------
// Injected steps

#[derive(Deserialize)]
struct InjectedStep {
    sentence_index: usize,
    action: StepAction,
    #[serde(default)]
    target_phrase: Vec<String>,
    #[serde(default)]
    input_value: Option<String>,
    #[serde(default)]
    action_verb: Option<String>,
}

/// Parses externally extracted steps, either a JSON array or JSON Lines of
/// `{"sentence_index", "action", "target_phrase", "input_value"}` records.
/// Ordinals are assigned per sentence in input order.
pub fn parse_injected_steps(text: &str) -> Result<Vec<AtomicStep>, S2rError> {
    let records: Vec<InjectedStep> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| S2rError::BadSteps {
            record: 0,
            message: e.to_string(),
        })?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| S2rError::BadSteps {
                    record: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_, _>>()?
    };
    let mut ordinals: BTreeMap<usize, usize> = BTreeMap::new();
    Ok(records
        .into_iter()
        .map(|r| {
            let ord = ordinals.entry(r.sentence_index).or_default();
            let ordinal = *ord;
            *ord += 1;
            AtomicStep {
                sentence_index: r.sentence_index,
                ordinal,
                action_verb: r.action_verb.unwrap_or_else(|| r.action.name().to_lowercase()),
                action: r.action,
                target_phrase: r.target_phrase.iter().flat_map(|t| tokenize(t)).collect(),
                input_value: r.input_value,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Matching

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub tau_high: f64,
    pub tau_match: f64,
    pub delta: f64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            tau_high: 0.75,
            tau_match: 0.5,
            delta: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Correct,
    Ambiguous,
    VocabMismatch,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Correct => "CORRECT",
            Verdict::Ambiguous => "AMBIGUOUS",
            Verdict::VocabMismatch => "VOCAB_MISMATCH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub interaction_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepAnnotation {
    pub step: AtomicStep,
    pub verdict: Verdict,
    /// Sorted by score descending, then interaction id ascending.
    pub candidates: Vec<Candidate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen: Option<String>,
}

/// Verdict from the best and runner-up similarity.
pub fn verdict_for(best: f64, second: f64, config: &MatchConfig) -> Verdict {
    if best < config.tau_match {
        Verdict::VocabMismatch
    } else if best >= config.tau_high && best - second > config.delta {
        Verdict::Correct
    } else {
        Verdict::Ambiguous
    }
}

fn without_widget_nouns(set: &BTreeSet<String>) -> BTreeSet<String> {
    let core: BTreeSet<String> = set
        .iter()
        .filter(|t| !WIDGET_NOUNS.contains(&t.as_str()))
        .cloned()
        .collect();
    if core.is_empty() {
        set.clone()
    } else {
        core
    }
}

/// Similarity between a step and an interaction of a compatible action.
///
/// Component-less interactions (BACK, LAUNCH) score 1.0: the step's words
/// name the app or nothing, never a component.
pub fn step_similarity(step: &AtomicStep, interaction: &Interaction, model: &ExecutionModel) -> f64 {
    let Some(cid) = &interaction.target_component else {
        return 1.0;
    };
    let Some(info) = model.component(cid) else {
        return 0.0;
    };
    let comp: BTreeSet<String> = tokenize(&format!("{} {}", info.label, info.description))
        .into_iter()
        .collect();
    let target: BTreeSet<String> = step.target_phrase.iter().cloned().collect();
    token_set_f1(&without_widget_nouns(&target), &without_widget_nouns(&comp))
}

fn score_candidates<'a>(
    step: &AtomicStep,
    model: &ExecutionModel,
    pool: impl Iterator<Item = &'a Interaction>,
) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = pool
        .filter(|it| step.action.action() == Some(it.action))
        .map(|it| Candidate {
            interaction_id: it.id.clone(),
            score: step_similarity(step, it, model),
        })
        .filter(|c| c.score > 0.0)
        .collect();
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.interaction_id.cmp(&b.interaction_id))
    });
    out
}

/// Matches one step against the model from `current_screen`.
///
/// Candidates come from the current screen first; when none reaches
/// `tau_match` the search widens to every interaction reachable from the
/// current screen (plus LAUNCH, which is always available).
pub fn match_step(
    step: &AtomicStep,
    model: &ExecutionModel,
    current_screen: &str,
    config: &MatchConfig,
) -> Result<StepAnnotation, ModelError> {
    let local = model.outgoing(current_screen)?;
    let mut candidates = score_candidates(step, model, local.into_iter());
    let best_local = candidates.first().map_or(0.0, |c| c.score);
    if best_local < config.tau_match {
        let reachable = model.reachable_from(current_screen)?;
        candidates = score_candidates(
            step,
            model,
            model.interactions().iter().filter(|it| match &it.source_screen {
                Some(src) => reachable.contains(src),
                None => true,
            }),
        );
    }
    let best = candidates.first().map_or(0.0, |c| c.score);
    let second = candidates.get(1).map_or(0.0, |c| c.score);
    let verdict = verdict_for(best, second, config);
    let chosen = match verdict {
        Verdict::VocabMismatch => None,
        _ => candidates.first().map(|c| c.interaction_id.clone()),
    };
    Ok(StepAnnotation {
        step: step.clone(),
        verdict,
        candidates,
        chosen,
    })
}

// ---------------------------------------------------------------------------
// Simulation

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StepRef {
    pub sentence_index: usize,
    pub ordinal: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InsertPoint {
    Start,
    After(StepRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingSteps {
    pub insert_after: InsertPoint,
    /// The step the suggestion unblocks.
    pub before: StepRef,
    pub interactions: Vec<Interaction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub issue_id: String,
    pub annotations: Vec<StepAnnotation>,
    pub missing: Vec<MissingSteps>,
    pub final_screen: String,
}

impl QualityReport {
    pub fn count(&self, verdict: Verdict) -> usize {
        self.annotations.iter().filter(|a| a.verdict == verdict).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AssessConfig {
    pub matching: MatchConfig,
    /// Use gold S2R sentence indices when the issue carries them.
    pub use_gold: bool,
}

/// Rule-based extraction followed by [`assess_steps`].
pub fn assess_s2rs(issue: &IssueReport, model: &ExecutionModel, config: &AssessConfig) -> Result<QualityReport, ModelError> {
    let steps = extract_issue_steps(issue, config.use_gold);
    assess_steps(&issue.id, &steps, model, &config.matching)
}

/// Replays `steps` from the launch screen.
///
/// Matched steps whose interaction starts elsewhere get the shortest bridging
/// path recorded as missing steps; unmatched steps leave the simulated screen
/// unchanged.
pub fn assess_steps(
    issue_id: &str,
    steps: &[AtomicStep],
    model: &ExecutionModel,
    config: &MatchConfig,
) -> Result<QualityReport, ModelError> {
    let mut ordered: Vec<&AtomicStep> = steps.iter().collect();
    ordered.sort_by_key(|s| s.step_ref());

    let mut current = model.launch_screen().to_string();
    let mut annotations = Vec::with_capacity(ordered.len());
    let mut missing = Vec::new();
    let mut previous: Option<StepRef> = None;
    for step in ordered {
        let annotation = match_step(step, model, &current, config)?;
        if let Some(chosen) = annotation.chosen.as_deref().and_then(|id| model.interaction(id)) {
            if let Some(src) = &chosen.source_screen {
                if *src != current {
                    let path = model.shortest_interaction_path(&current, src)?;
                    missing.push(MissingSteps {
                        insert_after: previous.map_or(InsertPoint::Start, InsertPoint::After),
                        before: step.step_ref(),
                        interactions: path.into_iter().cloned().collect(),
                    });
                }
            }
            current = chosen.dest_screen.clone();
        }
        previous = Some(step.step_ref());
        annotations.push(annotation);
    }
    Ok(QualityReport {
        issue_id: issue_id.to_string(),
        annotations,
        missing,
        final_screen: current,
    })
}

// ---------------------------------------------------------------------------
// Rendering

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Json,
}

impl FromStr for ReportFormat {
    type Err = S2rError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(S2rError::UnsupportedFormat(other.to_string())),
        }
    }
}

fn describe_interaction(it: &Interaction, model: &ExecutionModel) -> String {
    let target = it
        .target_component
        .as_deref()
        .map(|c| {
            let label = model
                .component(c)
                .map(|info| if info.label.is_empty() { info.description.as_str() } else { info.label.as_str() })
                .unwrap_or("");
            format!(" \"{label}\" ({c})")
        })
        .unwrap_or_default();
    let input = it
        .input_value
        .as_deref()
        .map(|v| format!(" input \"{v}\""))
        .unwrap_or_default();
    let from = it.source_screen.as_deref().unwrap_or("*");
    format!("`{}` {}{}{} [{} -> {}]", it.id, it.action, target, input, from, it.dest_screen)
}

fn describe_step(step: &AtomicStep) -> String {
    let mut s = step.action_verb.clone();
    if !step.target_phrase.is_empty() {
        let _ = write!(s, " [{}]", step.target_phrase.join(" "));
    }
    if let Some(v) = &step.input_value {
        let _ = write!(s, " \"{v}\"");
    }
    s
}

fn render_markdown(report: &QualityReport, model: &ExecutionModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# S2R quality report: {}", report.issue_id);
    let _ = writeln!(out);
    let _ = writeln!(out, "Final screen: `{}`", report.final_screen);
    if report.annotations.is_empty() {
        return out;
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Steps: {} | correct: {} | ambiguous: {} | vocabulary mismatch: {} | missing-step suggestions: {}",
        report.annotations.len(),
        report.count(Verdict::Correct),
        report.count(Verdict::Ambiguous),
        report.count(Verdict::VocabMismatch),
        report.missing.len()
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "## Steps");
    let _ = writeln!(out);
    let _ = writeln!(out, "| Step | Text | Action | Verdict | Chosen | Candidates |");
    let _ = writeln!(out, "|------|------|--------|---------|--------|------------|");
    for a in &report.annotations {
        let candidates = a
            .candidates
            .iter()
            .take(5)
            .map(|c| format!("{} ({:.3})", c.interaction_id, c.score))
            .collect::<Vec<_>>()
            .join(", ");
        let _ = writeln!(
            out,
            "| {}.{} | {} | {} | {} | {} | {} |",
            a.step.sentence_index,
            a.step.ordinal,
            describe_step(&a.step),
            a.step.action.name(),
            a.verdict.name(),
            a.chosen.as_deref().unwrap_or("-"),
            if candidates.is_empty() { "-".to_string() } else { candidates }
        );
    }
    if !report.missing.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "## Missing steps");
        for m in &report.missing {
            let after = match m.insert_after {
                InsertPoint::Start => "the start".to_string(),
                InsertPoint::After(r) => format!("step {}.{}", r.sentence_index, r.ordinal),
            };
            let _ = writeln!(out);
            let _ = writeln!(out, "Before step {}.{} (after {after}):", m.before.sentence_index, m.before.ordinal);
            let _ = writeln!(out);
            for (i, it) in m.interactions.iter().enumerate() {
                let _ = writeln!(out, "{}. {}", i + 1, describe_interaction(it, model));
            }
        }
    }
    out
}

/// Markdown for people, canonical JSON for tools. JSON output parses back
/// into an equal [`QualityReport`].
pub fn render_report(report: &QualityReport, model: &ExecutionModel, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => render_markdown(report, model),
        ReportFormat::Json => canonical_json(report),
    }
}
