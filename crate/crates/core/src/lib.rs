//! Scoring clinical interview transcripts on the expanded Brief Psychiatric
//! Rating Scale with a chat-completion model, and measuring agreement with
//! clinician ratings.

pub mod corpus;
pub mod gateway;
pub mod metrics;
pub mod parser;
pub mod prompt;
pub mod runner;
pub mod scale;

pub use corpus::{AssessmentRecord, CaseKey, Corpus, EvalCase, PatientTimeline, Selection, TranscriptDoc, TranscriptKind};
pub use gateway::{Backend, BackendKind, CompletionResult, Gateway, GatewayError, ModelConfig};
pub use metrics::{MetricsError, MetricsReport, ReportConfig};
pub use parser::{parse, render, ParseError, PredictedAssessment};
pub use prompt::{build_prompt, build_system_instructions, ContextStrategy, PromptBundle};
pub use scale::{Grouping, ScaleDefinition};
pub use runner::{RunManifest, RunMode, RunReport, RunResult};
