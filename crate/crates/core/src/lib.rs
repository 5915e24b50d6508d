//! Inductive knowledge graph completion with mined closed-path rules.
//!
//! The crate covers the whole pipeline: a triple store ([`kg`]), rule mining
//! and application ([`rules`], [`engine`]), rule instantiation graphs
//! ([`rig`]), a small autodiff kernel ([`autodiff`]), neural rankers
//! ([`rankers`]), hybrid rankings ([`hybrid`]) and evaluation ([`eval`]).

pub mod ablation;
pub mod autodiff;
pub mod config;
pub mod engine;
pub mod error;
pub mod eval;
pub mod hybrid;
pub mod kg;
pub mod rankers;
pub mod rig;
pub mod rules;
pub mod synthetic;

pub use engine::{apply_rules, ApplyOptions, CandidatePartition, Evidence, GroundRuleMatch, RankedEntity};
pub use error::{Error, Result};
pub use eval::{evaluate, EvalConfig, MetricsReport, Setting};
pub use hybrid::{run_strategy, HybridRanking, Models, StrategySpec};
pub use kg::{
    load_dataset, DatasetBundle, Direction, EntityId, KnowledgeGraph, Query, QueryDirection, RelationId, Triple, Vocab,
};
pub use rig::{build_rig, featurize, RuleInstantiationGraph};
pub use rules::{mine, Budget, ClosedPathRule, MinerConfig, RuleSet};
