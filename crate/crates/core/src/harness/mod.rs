//! Dataset ingestion, configuration, orchestration and report emission.

pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod pnm;

pub use config::{
    ArchitectureSpec, AttackConfig, DatasetSource, DatasetSpec, ExperimentConfig, SweepConfig,
};
pub use pipeline::{
    analyze_file, analyze_scores, run_pipeline, AnalysisReport, RunManifest, RunOutput, ScoreRecord,
};
pub use pnm::{read_pnm, write_pnm};
