//! Issue-resolution toolkit.
//!
//! * [`corpus`]: issues, app UI metadata, traces and gold labels on disk.
//! * [`execmodel`]: screen/interaction multigraph rebuilt from traces.
//! * [`s2r`]: steps-to-reproduce extraction, matching and quality reports.
//! * [`uiloc`]: buggy screen/component localization and code-file re-ranking.
//! * [`solution`]: solution-bearing comment classification.
//! * [`eval`]: ranking/classification metrics, seeded splits, experiments.

pub mod corpus;
pub mod eval;
pub mod execmodel;
pub mod ranking;
pub mod s2r;
pub mod solution;
pub mod text;
pub mod uiloc;
