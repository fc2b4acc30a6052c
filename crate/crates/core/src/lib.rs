//! Generate, validate and score guideline-annotated information-extraction data.
//!
//! A document corpus is pushed through four chat-completion stages
//! (summary, structured JSON, dataclass-style annotation guidelines, and
//! instance extraction). The resulting guideline and instance notation is
//! parsed, statically checked against its own schema and source document,
//! filtered, and stored as a JSONL dataset. The crate also provides label
//! statistics, label-space overlap analysis, code-style training-example
//! emission and span-level NER scoring.
//!
//! Module map:
//!
//! - [`corpus`]: document loading, seeded sampling, length statistics
//! - [`llm_client`]: chat-completions client with record/replay cache
//! - [`pipeline`]: the four generation stages and the run driver
//! - [`schema_notation`]: parser and printer for guidelines and instance lists
//! - [`validator`]: consistency checks and filtering
//! - [`dataset`]: dataset store, label statistics, overlap, training emission
//! - [`eval`]: micro precision/recall/F1 scoring
//! - [`config`] and [`cli`]: run configuration and the command-line front end

pub mod cli;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod eval;
pub mod llm_client;
pub mod pipeline;
pub mod schema_notation;
pub mod text;
pub mod validator;

pub use corpus::{CorpusStats, Document};
pub use schema_notation::{
    EntityClass, EntityInstance, FieldDef, FieldKind, FieldValue, InstanceSet, ParseError, Schema,
};
pub use validator::{ErrorCode, GroundingPolicy, ValidationReport};
