//! Household activity programs: a small step language, a symbolic home
//! simulator with a grounding executor, similarity and executability
//! metrics, a probabilistic program grammar, dataset tooling, and a JSON
//! Lines scoring service.

pub mod bundled;
pub mod cli;
pub mod dataset;
pub mod environment;
pub mod executor;
pub mod generator;
pub mod metrics;
pub mod program;
pub mod scene;
pub mod service;

pub use dataset::{DatasetRecord, DatasetStats, Split};
pub use environment::{Environment, Uid};
pub use executor::{ground_and_execute, is_executable, ExecutionTrace, SearchLimits, Verdict, Violation};
pub use metrics::{lcs_length, normalized_lcs, score, Equality, RewardConfig, ScoreReport};
pub use program::{format_program, parse_program, ActionName, ObjectMention, Program, Step};
pub use scene::{prepare_scene, PlacementKB};
