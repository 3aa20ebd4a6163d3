//! Experiment harness: validation, gradient audit, and the end-to-end
//! pipeline from task generation to learning curves and option maps.

pub mod config;
pub mod gradcheck;
pub mod maps;
pub mod pipeline;
pub mod validate;

pub use config::{DemoConfig, EnvironmentConfig, EvaluationConfig, ExperimentConfig};
pub use gradcheck::{run_gradcheck, GradcheckConfig, GradcheckReport};
pub use maps::{emit_option_maps, option_map_csv, OptionUsage};
pub use pipeline::{run_pipeline, ConditionSummary, RunManifest, Stage, StageRecord, TaskSets};
pub use validate::{run_validation, ValidationConfig, ValidationReport};
