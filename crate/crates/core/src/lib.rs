//! Relational feature generation for binary prediction tasks.
//!
//! Agents propose declarative features over a relational database; the engine
//! validates, materializes, and greedily admits the ones that improve
//! validation AUROC of a gradient-boosted tree model, looping with
//! accumulated feedback until an iteration admits nothing.

pub mod agents;
pub mod dsl;
pub mod eval;
pub mod exec;
pub mod orchestrator;
pub mod rdb;
pub mod synth;
