//! Fairness governance for machine-learning projects: bias detection,
//! mitigation, human oversight gates and a searchable project database.

pub mod config;
pub mod db;
pub mod error;
pub mod lab;
pub mod metrics;
pub mod mitigation;
pub mod oversight;
pub mod pipeline;
pub mod project;
pub mod scenario;
pub mod sim;
pub mod stats;
pub mod table;
pub mod text;

pub use config::FlowConfig;
pub use db::{ProjectDatabase, SimilarityHit};
pub use error::{Error, Result};
pub use oversight::{HogDocument, HumanDecision, PendingGate};
pub use pipeline::{AdvanceOutcome, Engine, PipelineState};
pub use project::{BiasHistoryRecord, ModelHistoryRecord, ProjectStatus, SiftPipeline, SiftProject};
pub use table::{Categorical, Column, Table};
