//! App execution model: a directed multigraph of screens connected by
//! interactions, rebuilt from recorded trace events.
//!
//! Trace lines are JSON objects:
//!
//! ```text
//! {"action": "CLICK", "source": "S1", "component": "c1", "dest": "S2"}
//! {"action": "TYPE", "source": "S2", "component": "c4", "dest": "S2", "input": "hello"}
//! {"action": "LAUNCH", "dest": "S1"}
//! ```
//!
//! An optional `"id"` pins the interaction id of the first observation of a
//! tuple; otherwise ids are assigned in first-observation order (`i001`, ...).

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{ComponentKind, Screen};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Click,
    LongClick,
    Type,
    Swipe,
    Scroll,
    Back,
    Launch,
}

impl Action {
    pub const ALL: [Action; 7] = [
        Action::Click,
        Action::LongClick,
        Action::Type,
        Action::Swipe,
        Action::Scroll,
        Action::Back,
        Action::Launch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Action::Click => "CLICK",
            Action::LongClick => "LONG_CLICK",
            Action::Type => "TYPE",
            Action::Swipe => "SWIPE",
            Action::Scroll => "SCROLL",
            Action::Back => "BACK",
            Action::Launch => "LAUNCH",
        }
    }

    /// BACK and LAUNCH act on the app, not on a component.
    pub fn is_global(self) -> bool {
        matches!(self, Action::Back | Action::Launch)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One observed event from a trace file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component: Option<String>,
    pub dest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
}

impl TraceRecord {
    /// Field presence rules per action.
    pub fn check_shape(&self) -> Result<(), String> {
        match self.action {
            Action::Launch if self.source.is_some() || self.component.is_some() => {
                Err("LAUNCH records carry no source or component".into())
            }
            Action::Launch => Ok(()),
            _ if self.source.is_none() => Err(format!("{} record needs a source screen", self.action)),
            Action::Back if self.component.is_some() => Err("BACK records carry no component".into()),
            Action::Back => Ok(()),
            _ if self.component.is_none() => Err(format!("{} record needs a component", self.action)),
            _ => Ok(()),
        }
        .and_then(|()| {
            if self.input.is_some() && self.action != Action::Type {
                Err(format!("{} record cannot carry input", self.action))
            } else {
                Ok(())
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub id: String,
    pub action: Action,
    /// `None` only for LAUNCH.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_screen: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_component: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_value: Option<String>,
    pub dest_screen: String,
}

type TupleKey = (Action, Option<String>, Option<String>, String, Option<String>);

impl Interaction {
    fn key(&self) -> TupleKey {
        (
            self.action,
            self.source_screen.clone(),
            self.target_component.clone(),
            self.dest_screen.clone(),
            self.input_value.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentInfo {
    pub screen: String,
    pub kind: ComponentKind,
    pub label: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("UNKNOWN_SCREEN: {0}")]
    UnknownScreen(String),
    #[error("UNKNOWN_COMPONENT: {component} on screen {screen}")]
    UnknownComponent { component: String, screen: String },
    #[error("NO_LAUNCH: trace contains no LAUNCH record")]
    NoLaunch,
    #[error("UNREACHABLE: no interaction path from {from} to {to}")]
    Unreachable { from: String, to: String },
    #[error("BAD_TRACE: record {index}: {message}")]
    BadTrace { index: usize, message: String },
    #[error("DUPLICATE_ID: interaction id {0}")]
    DuplicateId(String),
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::UnknownScreen(_) => "UNKNOWN_SCREEN",
            ModelError::UnknownComponent { .. } => "UNKNOWN_COMPONENT",
            ModelError::NoLaunch => "NO_LAUNCH",
            ModelError::Unreachable { .. } => "UNREACHABLE",
            ModelError::BadTrace { .. } => "BAD_TRACE",
            ModelError::DuplicateId(_) => "DUPLICATE_ID",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionModel {
    screens: BTreeSet<String>,
    /// Sorted by id.
    interactions: Vec<Interaction>,
    launch_screen: String,
    /// source screen -> indices into `interactions`, ascending by id.
    adjacency: BTreeMap<String, Vec<usize>>,
    components: BTreeMap<String, ComponentInfo>,
}

fn component_table(screens: &[Screen]) -> BTreeMap<String, ComponentInfo> {
    screens
        .iter()
        .flat_map(|s| {
            s.components.iter().map(move |c| {
                (
                    c.id.clone(),
                    ComponentInfo {
                        screen: s.id.clone(),
                        kind: c.kind,
                        label: c.label.clone(),
                        description: c.description.clone(),
                    },
                )
            })
        })
        .collect()
}

/// Rebuilds the model from trace records. Repeated observations of the same
/// (action, source, component, dest, input) tuple collapse into one
/// interaction; the launch screen is the dest of the first LAUNCH record.
pub fn build_model(records: &[TraceRecord], screens: &[Screen]) -> Result<ExecutionModel, ModelError> {
    let mut distinct: Vec<(Option<String>, Interaction)> = Vec::new();
    let mut seen: BTreeMap<TupleKey, usize> = BTreeMap::new();
    let mut launch = None;
    for (index, rec) in records.iter().enumerate() {
        rec.check_shape()
            .map_err(|message| ModelError::BadTrace { index, message })?;
        if rec.action == Action::Launch && launch.is_none() {
            launch = Some(rec.dest.clone());
        }
        let interaction = Interaction {
            id: String::new(),
            action: rec.action,
            source_screen: rec.source.clone(),
            target_component: rec.component.clone(),
            input_value: rec.input.clone(),
            dest_screen: rec.dest.clone(),
        };
        let key = interaction.key();
        if let std::collections::btree_map::Entry::Vacant(e) = seen.entry(key) {
            e.insert(distinct.len());
            distinct.push((rec.id.clone(), interaction));
        }
    }
    let launch = launch.ok_or(ModelError::NoLaunch)?;

    let width = distinct.len().to_string().len().max(3);
    let mut used = BTreeSet::new();
    let explicit: BTreeSet<String> = distinct.iter().filter_map(|(id, _)| id.clone()).collect();
    let mut counter = 0usize;
    let mut interactions = Vec::with_capacity(distinct.len());
    for (explicit_id, mut interaction) in distinct {
        interaction.id = match explicit_id {
            Some(id) => id,
            None => loop {
                counter += 1;
                let candidate = format!("i{counter:0width$}");
                if !explicit.contains(&candidate) {
                    break candidate;
                }
            },
        };
        if !used.insert(interaction.id.clone()) {
            return Err(ModelError::DuplicateId(interaction.id));
        }
        interactions.push(interaction);
    }

    ExecutionModel::from_parts(screens, interactions, &launch)
}

impl ExecutionModel {
    /// Assembles a model from already-identified interactions.
    pub fn from_parts(
        screens: &[Screen],
        mut interactions: Vec<Interaction>,
        launch_screen: &str,
    ) -> Result<Self, ModelError> {
        let screen_ids: BTreeSet<String> = screens.iter().map(|s| s.id.clone()).collect();
        let components = component_table(screens);
        let known = |id: &str| {
            if screen_ids.contains(id) {
                Ok(())
            } else {
                Err(ModelError::UnknownScreen(id.to_string()))
            }
        };
        known(launch_screen)?;

        let mut ids = BTreeSet::new();
        for (index, it) in interactions.iter().enumerate() {
            if !ids.insert(it.id.as_str()) {
                return Err(ModelError::DuplicateId(it.id.clone()));
            }
            let record = TraceRecord {
                id: None,
                action: it.action,
                source: it.source_screen.clone(),
                component: it.target_component.clone(),
                dest: it.dest_screen.clone(),
                input: it.input_value.clone(),
            };
            record
                .check_shape()
                .map_err(|message| ModelError::BadTrace { index, message })?;
            known(&it.dest_screen)?;
            if let Some(src) = &it.source_screen {
                known(src)?;
            }
            if let Some(comp) = &it.target_component {
                let src = it.source_screen.clone().unwrap_or_default();
                match components.get(comp) {
                    Some(info) if info.screen == src => {}
                    _ => {
                        return Err(ModelError::UnknownComponent {
                            component: comp.clone(),
                            screen: src,
                        })
                    }
                }
            }
        }

        interactions.sort_by(|a, b| a.id.cmp(&b.id));
        let mut adjacency: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, it) in interactions.iter().enumerate() {
            if let Some(src) = &it.source_screen {
                adjacency.entry(src.clone()).or_default().push(i);
            }
        }

        Ok(ExecutionModel {
            screens: screen_ids,
            interactions,
            launch_screen: launch_screen.to_string(),
            adjacency,
            components,
        })
    }

    pub fn screens(&self) -> &BTreeSet<String> {
        &self.screens
    }

    /// All interactions, ascending by id.
    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn launch_screen(&self) -> &str {
        &self.launch_screen
    }

    pub fn interaction(&self, id: &str) -> Option<&Interaction> {
        self.interactions
            .binary_search_by(|it| it.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.interactions[i])
    }

    pub fn component(&self, id: &str) -> Option<&ComponentInfo> {
        self.components.get(id)
    }

    pub fn contains_screen(&self, id: &str) -> bool {
        self.screens.contains(id)
    }

    fn require_screen(&self, id: &str) -> Result<(), ModelError> {
        if self.contains_screen(id) {
            Ok(())
        } else {
            Err(ModelError::UnknownScreen(id.to_string()))
        }
    }

    fn outgoing_indices(&self, screen: &str) -> &[usize] {
        self.adjacency.get(screen).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Interactions leaving `screen`, ordered by id.
    pub fn outgoing(&self, screen: &str) -> Result<Vec<&Interaction>, ModelError> {
        self.require_screen(screen)?;
        Ok(self
            .outgoing_indices(screen)
            .iter()
            .map(|&i| &self.interactions[i])
            .collect())
    }

    /// Screens reachable from `screen` (including itself) by following
    /// interactions.
    pub fn reachable_from(&self, screen: &str) -> Result<BTreeSet<String>, ModelError> {
        self.require_screen(screen)?;
        let mut seen = BTreeSet::from([screen.to_string()]);
        let mut queue = VecDeque::from([screen.to_string()]);
        while let Some(s) = queue.pop_front() {
            for &i in self.outgoing_indices(&s) {
                let dest = &self.interactions[i].dest_screen;
                if seen.insert(dest.clone()) {
                    queue.push_back(dest.clone());
                }
            }
        }
        Ok(seen)
    }

    /// Minimum-length interaction sequence from `from` to `to`. Among equally
    /// short paths the lexicographically smallest id sequence wins.
    pub fn shortest_interaction_path(&self, from: &str, to: &str) -> Result<Vec<&Interaction>, ModelError> {
        self.require_screen(from)?;
        self.require_screen(to)?;
        if from == to {
            return Ok(Vec::new());
        }

        // Distances to `to` over reversed edges.
        let mut reverse: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for it in &self.interactions {
            if let Some(src) = &it.source_screen {
                reverse.entry(it.dest_screen.as_str()).or_default().push(src.as_str());
            }
        }
        let mut dist: BTreeMap<&str, usize> = BTreeMap::from([(to, 0)]);
        let mut queue = VecDeque::from([to]);
        while let Some(s) = queue.pop_front() {
            let d = dist[s];
            for &prev in reverse.get(s).into_iter().flatten() {
                if !dist.contains_key(prev) {
                    dist.insert(prev, d + 1);
                    queue.push_back(prev);
                }
            }
        }
        let Some(&total) = dist.get(from) else {
            return Err(ModelError::Unreachable {
                from: from.to_string(),
                to: to.to_string(),
            });
        };

        // Every prefix of the answer must itself be minimal, so pick the
        // smallest-id edge that stays on a shortest path at each step.
        let mut path = Vec::with_capacity(total);
        let mut current = from;
        for remaining in (1..=total).rev() {
            let step = self
                .outgoing_indices(current)
                .iter()
                .map(|&i| &self.interactions[i])
                .find(|it| dist.get(it.dest_screen.as_str()) == Some(&(remaining - 1)))
                .expect("distance labels guarantee a next hop");
            path.push(step);
            current = step.dest_screen.as_str();
        }
        Ok(path)
    }
}
