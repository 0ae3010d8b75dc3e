//! Generators and independent oracles shared by integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use irk_core::corpus::{Bounds, Component, ComponentKind, IssueReport, Screen};
use irk_core::eval::Lcg;
use irk_core::execmodel::{build_model, Action, ExecutionModel, Interaction, TraceRecord};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Lowercase consonant-vowel word of three syllables, e.g. "bakoti".
pub fn pseudo_word(rng: &mut Lcg) -> String {
    let mut w = String::new();
    for _ in 0..3 {
        w.push(CONSONANTS[rng.below(CONSONANTS.len())] as char);
        w.push(VOWELS[rng.below(VOWELS.len())] as char);
    }
    w
}

pub struct SyntheticApp {
    pub screens: Vec<Screen>,
    pub traces: Vec<TraceRecord>,
    pub model: ExecutionModel,
    /// component id -> label
    pub labels: BTreeMap<String, String>,
}

/// App with `2..=max_screens` screens. Every component has a unique pseudo-word
/// label and exactly one interaction (CLICK, LONG_CLICK or TYPE) leading to a
/// different screen. Launch goes to `S00`. `max_out` bounds components per screen.
pub fn synthetic_app(seed: u64, max_screens: usize, max_out: usize) -> SyntheticApp {
    let mut rng = Lcg::new(seed);
    let n = 2 + rng.below(max_screens - 1);
    let mut used = BTreeSet::new();
    let mut screens = Vec::new();
    let mut traces = vec![TraceRecord {
        id: None,
        action: Action::Launch,
        source: None,
        component: None,
        dest: "S00".into(),
        input: None,
    }];
    let mut labels = BTreeMap::new();
    for s in 0..n {
        let sid = format!("S{s:02}");
        let mut components = Vec::new();
        for c in 0..1 + rng.below(max_out) {
            let cid = format!("{sid}_c{c}");
            let label = loop {
                let w = pseudo_word(&mut rng);
                if used.insert(w.clone()) {
                    break w;
                }
            };
            let action = [Action::Click, Action::LongClick, Action::Type][rng.below(3)];
            let mut dest = rng.below(n - 1);
            if dest >= s {
                dest += 1;
            }
            let kind = if action == Action::Type { ComponentKind::TextField } else { ComponentKind::Other };
            components.push(Component {
                id: cid.clone(),
                kind,
                label: label.clone(),
                description: String::new(),
                bounds: Bounds(0, 0, 10, 10),
                embedding_key: None,
            });
            traces.push(TraceRecord {
                id: None,
                action,
                source: Some(sid.clone()),
                component: Some(cid.clone()),
                dest: format!("S{dest:02}"),
                input: (action == Action::Type).then(|| format!("v{}", rng.below(100))),
            });
            labels.insert(cid, label);
        }
        screens.push(Screen { id: sid.clone(), name: format!("Screen {s}"), components, embedding_key: None });
    }
    let model = build_model(&traces, &screens).expect("generated traces are well-formed");
    SyntheticApp { screens, traces, model, labels }
}

/// One sentence per interaction.
pub fn render_step(app: &SyntheticApp, i: &Interaction) -> String {
    let label = &app.labels[i.target_component.as_ref().expect("non-launch")];
    match i.action {
        Action::Click => format!("Tap {label}"),
        Action::LongClick => format!("Long press {label}"),
        Action::Type => format!("Type '{}' in {label}", i.input_value.as_deref().unwrap_or("")),
        other => panic!("no template for {other}"),
    }
}

/// Issue whose body is a numbered list of the rendered steps.
pub fn issue_for(id: &str, app_id: &str, steps: &[String]) -> IssueReport {
    let mut body = String::from("Steps:");
    for (n, s) in steps.iter().enumerate() {
        body.push_str(&format!("\n{}. {s}", n + 1));
    }
    IssueReport {
        id: id.into(),
        app_id: app_id.into(),
        title: "Synthetic".into(),
        body,
        reporter: None,
        comments: vec![],
        ob_sentences: None,
        eb_sentences: None,
        s2r_sentences: None,
        gold_screen_ids: None,
        gold_component_ids: None,
    }
}

/// Every non-LAUNCH interaction walk of length 1..=max_len from the launch screen.
pub fn enumerate_paths(model: &ExecutionModel, max_len: usize) -> Vec<Vec<Interaction>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<Interaction>> = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for path in &frontier {
            let at = path.last().map_or(model.launch_screen().to_string(), |i| i.dest_screen.clone());
            for i in model.interactions() {
                if i.action != Action::Launch && i.source_screen.as_deref() == Some(at.as_str()) {
                    let mut p = path.clone();
                    p.push(i.clone());
                    next.push(p);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// All shortest interaction paths `from -> to`, found by breadth-first
/// enumeration of every walk level by level. Empty vec for `from == to`.
pub fn all_shortest_paths(model: &ExecutionModel, from: &str, to: &str) -> Vec<Vec<String>> {
    if from == to {
        return vec![vec![]];
    }
    let mut seen: BTreeSet<String> = BTreeSet::from([from.to_string()]);
    let mut frontier: Vec<(String, Vec<String>)> = vec![(from.to_string(), vec![])];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for (at, path) in &frontier {
            for i in model.interactions() {
                if i.source_screen.as_deref() == Some(at.as_str()) && !seen.contains(&i.dest_screen) {
                    let mut p = path.clone();
                    p.push(i.id.clone());
                    next.push((i.dest_screen.clone(), p));
                }
            }
        }
        let hits: Vec<Vec<String>> = next.iter().filter(|(s, _)| s == to).map(|(_, p)| p.clone()).collect();
        if !hits.is_empty() {
            return hits;
        }
        for (s, _) in &next {
            seen.insert(s.clone());
        }
        frontier = next;
    }
    vec![]
}

/// Closed-form Okapi BM25, one document at a time, summing over every query
/// token in order.
pub fn bm25_oracle(docs: &[Vec<String>], query: &[String], k1: f64, b: f64) -> Vec<f64> {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    docs.iter()
        .map(|d| {
            let dl = d.len() as f64;
            let mut score = 0.0;
            for q in query {
                let tf = d.iter().filter(|t| *t == q).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = docs.iter().filter(|x| x.contains(q)).count() as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = if avgdl > 0.0 { dl / avgdl } else { 1.0 };
                score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm));
            }
            score
        })
        .collect()
}

/// Random documents over a small vocabulary `w0..w{vocab}`.
pub fn random_docs(rng: &mut Lcg, n_docs: usize, vocab: usize, max_len: usize) -> Vec<Vec<String>> {
    (0..n_docs)
        .map(|_| (0..rng.below(max_len + 1)).map(|_| format!("w{}", rng.below(vocab))).collect())
        .collect()
}

/// A copy of `app` in which `sibling` takes over the label and action of
/// `target` (both on the same screen).
pub fn with_duplicated_label(app: &SyntheticApp, target: &str, sibling: &str) -> SyntheticApp {
    let label = app.labels[target].clone();
    let source = app.traces.iter().find(|t| t.component.as_deref() == Some(target)).expect("target traced");
    let (action, input) = (source.action, source.input.clone());
    let mut screens = app.screens.clone();
    for c in screens.iter_mut().flat_map(|s| s.components.iter_mut()) {
        if c.id == sibling {
            c.label = label.clone();
        }
    }
    let mut traces = app.traces.clone();
    for t in traces.iter_mut().filter(|t| t.component.as_deref() == Some(sibling)) {
        t.action = action;
        t.input = input.clone();
    }
    let mut labels = app.labels.clone();
    labels.insert(sibling.to_string(), label);
    let model = build_model(&traces, &screens).expect("still well-formed");
    SyntheticApp { screens, traces, model, labels }
}

/// Seeded ambiguity case: an app, rendered steps that reach a screen with at
/// least two components and then use the first, plus (component, sibling).
pub fn ambiguity_case(seed: u64) -> (SyntheticApp, Vec<String>, String, String) {
    for attempt in 0.. {
        let app = synthetic_app(seed.wrapping_mul(1_000).wrapping_add(attempt), 20, 3);
        let Some(screen) = app.screens.iter().find(|s| s.components.len() >= 2) else {
            continue;
        };
        let Some(path) = all_shortest_paths(&app.model, app.model.launch_screen(), &screen.id).into_iter().next()
        else {
            continue;
        };
        let target = screen.components[0].id.clone();
        let sibling = screen.components[1].id.clone();
        let mut steps: Vec<String> =
            path.iter().map(|id| render_step(&app, app.model.interaction(id).expect("known id"))).collect();
        let used = app.model.interactions().iter().find(|i| i.target_component.as_deref() == Some(target.as_str()));
        steps.push(render_step(&app, used.expect("target traced")));
        return (app, steps, target, sibling);
    }
    unreachable!()
}
