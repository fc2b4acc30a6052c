//! The four generation stages and the run driver.
//!
//! Each document goes through summarize → structure → guidelines →
//! instances as independent single-turn prompts; every prompt carries the
//! outputs of earlier stages explicitly. Responses that cannot be parsed are
//! re-asked up to `max_repairs` times with the parser error appended. The
//! extracted instances are validated against the induced schema and the
//! document, filtered, and emitted as a [`DatasetRecord`], or the document
//! lands in the reject log naming the failing step.

mod output;
mod structured;
mod template;

use serde::{Deserialize, Serialize};
use std::borrow::Cow;
use std::collections::HashSet;

use crate::corpus::Document;
use crate::dataset::{DatasetRecord, PipelineMetadata};
use crate::llm_client::{ChatMessage, ChatRequest, FinishReason, GenerationParams, LlmClient};
use crate::schema_notation::{parse_guidelines, parse_instances, InstanceSet, Schema};
use crate::text::word_prefix_end;
use crate::validator::{filter, validate, GroundingPolicy};

pub use output::{read_reject_ids, DirSink, AUDIT_FILE, DATASET_FILE, REJECTS_FILE};
pub use structured::{parse_structured, strip_code_fences, StructuredEntry, StructuredRecord};
pub use template::{Bindings, Placeholder, PromptTemplate, Stage, TemplateSet};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("template {origin}: {message}")]
    Template { origin: String, message: String },
    #[error("writing {path}: {message}")]
    Output { path: String, message: String },
}

/// Knobs for one pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub params: GenerationParams,
    pub policy: GroundingPolicy,
    /// Keep documents whose filtered instance list is empty.
    pub keep_empty: bool,
    /// Re-asks after an unusable response, per stage.
    pub max_repairs: usize,
    /// Word budget for the document inside prompts; longer documents keep
    /// their head and lose the tail.
    pub max_document_words: Option<usize>,
    /// Unix seconds recorded in record metadata; `None` keeps outputs
    /// byte-identical across runs.
    pub generated_at: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            params: GenerationParams::default(),
            policy: GroundingPolicy::default(),
            keep_empty: false,
            max_repairs: 2,
            max_document_words: Some(4000),
            generated_at: None,
        }
    }
}

/// One LLM call made while processing a document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub doc_id: String,
    pub stage: Stage,
    pub attempt: usize,
    pub request_key: String,
    pub rendered_prompt: String,
    pub raw_response: String,
    #[serde(default)]
    pub finish_reason: Option<FinishReason>,
    pub parsed_ok: bool,
    #[serde(default)]
    pub error: Option<String>,
}

/// The step at which a document was given up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RejectStep {
    Summarize,
    Structure,
    Guidelines,
    Instances,
    /// Every instance failed validation (or none was extracted) and empty
    /// outputs are not kept.
    Filter,
}

impl From<Stage> for RejectStep {
    fn from(stage: Stage) -> Self {
        match stage {
            Stage::Summarize => RejectStep::Summarize,
            Stage::Structure => RejectStep::Structure,
            Stage::Guidelines => RejectStep::Guidelines,
            Stage::Instances => RejectStep::Instances,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectEntry {
    pub doc_id: String,
    pub stage: RejectStep,
    pub attempts: usize,
    pub error: String,
}

/// Why a stage gave up on a document.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{stage} stage failed after {attempts} attempt(s): {message}")]
pub struct StageFailure {
    pub stage: Stage,
    pub attempts: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Record(Box<DatasetRecord>),
    Reject(RejectEntry),
}

/// Everything produced for one document: its outcome and its audit trail.
#[derive(Debug, Clone, PartialEq)]
pub struct DocResult {
    pub doc_id: String,
    pub outcome: Outcome,
    pub trail: Vec<StageRecord>,
}

/// Receives per-document results in input order.
pub trait OutcomeSink {
    fn accept(&mut self, result: &DocResult) -> Result<(), PipelineError>;
}

/// Collects everything in memory.
#[derive(Debug, Default)]
pub struct MemorySink {
    pub records: Vec<DatasetRecord>,
    pub rejects: Vec<RejectEntry>,
    pub trail: Vec<StageRecord>,
}

impl OutcomeSink for MemorySink {
    fn accept(&mut self, result: &DocResult) -> Result<(), PipelineError> {
        match &result.outcome {
            Outcome::Record(r) => self.records.push((**r).clone()),
            Outcome::Reject(r) => self.rejects.push(r.clone()),
        }
        self.trail.extend(result.trail.iter().cloned());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunSummary {
    pub processed: usize,
    pub skipped: usize,
    pub records: usize,
    pub rejects: usize,
    pub llm_calls: usize,
}

const REPAIR_NOTE: &str =
    "Your previous answer could not be used because of the following problem. \
     Answer again and follow the required format exactly.\nProblem:";

/// The document text as shown to the model, and whether it was cut.
pub fn prompt_document(doc: &Document, max_words: Option<usize>) -> (Cow<'_, str>, bool) {
    match max_words.and_then(|n| word_prefix_end(&doc.text, n)) {
        Some(end) => (Cow::Owned(doc.text[..end].trim_end().to_string()), true),
        None => (Cow::Borrowed(doc.text.as_str()), false),
    }
}

/// Remove code fences and top-level import lines around generated guidelines.
pub fn clean_guidelines(text: &str) -> String {
    let body = strip_code_fences(text);
    let kept: Vec<&str> = body
        .lines()
        .filter(|l| !(l.starts_with("import ") || l.starts_with("from ")))
        .collect();
    let mut out = kept.join("\n").trim_matches('\n').to_string();
    out.push('\n');
    out
}

/// Runs the stages for one document, recording every call.
pub struct StageRunner<'a> {
    client: &'a LlmClient,
    config: &'a PipelineConfig,
    doc_id: &'a str,
    trail: Vec<StageRecord>,
}

impl<'a> StageRunner<'a> {
    pub fn new(client: &'a LlmClient, config: &'a PipelineConfig, doc_id: &'a str) -> Self {
        StageRunner {
            client,
            config,
            doc_id,
            trail: Vec::new(),
        }
    }

    pub fn trail(&self) -> &[StageRecord] {
        &self.trail
    }

    pub fn into_trail(self) -> Vec<StageRecord> {
        self.trail
    }

    /// Send `prompt`, parse the answer, and re-ask with the parse error
    /// appended until it parses or the repair budget is spent. Client
    /// errors end the stage at once.
    fn ask<T>(
        &mut self,
        tmpl: &PromptTemplate,
        prompt: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, StageFailure> {
        let stage = tmpl.stage;
        let mut problems: Vec<String> = Vec::new();
        for attempt in 1..=self.config.max_repairs + 1 {
            let user = match problems.last() {
                None => prompt.to_string(),
                Some(p) => format!("{prompt}\n\n{REPAIR_NOTE}\n{p}"),
            };
            let mut messages = Vec::with_capacity(2);
            if let Some(system) = &tmpl.system {
                messages.push(ChatMessage::system(system.as_str()));
            }
            messages.push(ChatMessage::user(user.as_str()));
            let req = ChatRequest::new(messages, self.config.params.clone()).map_err(|e| {
                StageFailure {
                    stage,
                    attempts: attempt,
                    message: e.to_string(),
                }
            })?;
            let mut record = StageRecord {
                doc_id: self.doc_id.to_string(),
                stage,
                attempt,
                request_key: req.key().to_string(),
                rendered_prompt: user,
                raw_response: String::new(),
                finish_reason: None,
                parsed_ok: false,
                error: None,
            };
            let response = match self.client.complete(&req) {
                Ok(r) => r,
                Err(e) => {
                    record.error = Some(e.to_string());
                    self.trail.push(record);
                    let mut message = e.to_string();
                    if !problems.is_empty() {
                        message = format!("{message} (earlier attempts: {})", problems.join("; "));
                    }
                    return Err(StageFailure {
                        stage,
                        attempts: attempt,
                        message,
                    });
                }
            };
            record.raw_response = response.text.clone();
            record.finish_reason = Some(response.finish_reason);
            let parsed = match response.finish_reason {
                FinishReason::Length => Err(
                    "the answer was cut off at the token limit; give a shorter answer".to_string(),
                ),
                FinishReason::Error => Err("the generation ended with an error".to_string()),
                FinishReason::Stop if response.text.trim().is_empty() => {
                    Err("the answer was empty".to_string())
                }
                FinishReason::Stop => parse(&response.text),
            };
            match parsed {
                Ok(value) => {
                    record.parsed_ok = true;
                    self.trail.push(record);
                    return Ok(value);
                }
                Err(problem) => {
                    record.error = Some(problem.clone());
                    self.trail.push(record);
                    problems.push(problem);
                }
            }
        }
        Err(StageFailure {
            stage,
            attempts: problems.len(),
            message: problems.last().cloned().unwrap_or_default(),
        })
    }

    fn check_stage(tmpl: &PromptTemplate, expected: Stage) -> Result<(), StageFailure> {
        if tmpl.stage == expected {
            Ok(())
        } else {
            Err(StageFailure {
                stage: expected,
                attempts: 0,
                message: format!("given a {} template", tmpl.stage),
            })
        }
    }

    fn render(tmpl: &PromptTemplate, b: &Bindings<'_>) -> Result<String, StageFailure> {
        tmpl.render(b).map_err(|e| StageFailure {
            stage: tmpl.stage,
            attempts: 0,
            message: e.to_string(),
        })
    }

    /// Bulleted key points of the document.
    pub fn summarize(&mut self, document: &str, tmpl: &PromptTemplate) -> Result<String, StageFailure> {
        Self::check_stage(tmpl, Stage::Summarize)?;
        let prompt = Self::render(
            tmpl,
            &Bindings {
                document: Some(document),
                ..Default::default()
            },
        )?;
        self.ask(tmpl, &prompt, |text| Ok(text.trim().to_string()))
    }

    /// Labelled entities with attribute values, as JSON.
    pub fn structure(
        &mut self,
        document: &str,
        summary: &str,
        tmpl: &PromptTemplate,
    ) -> Result<StructuredRecord, StageFailure> {
        Self::check_stage(tmpl, Stage::Structure)?;
        let prompt = Self::render(
            tmpl,
            &Bindings {
                document: Some(document),
                summary: Some(summary),
                ..Default::default()
            },
        )?;
        let doc_id = self.doc_id;
        self.ask(tmpl, &prompt, |text| parse_structured(text, doc_id))
    }

    /// Guideline text as parsed, together with its schema.
    pub fn guidelines(
        &mut self,
        document: &str,
        summary: &str,
        record: &StructuredRecord,
        tmpl: &PromptTemplate,
    ) -> Result<(String, Schema), StageFailure> {
        Self::check_stage(tmpl, Stage::Guidelines)?;
        let json = record.to_prompt_json();
        let prompt = Self::render(
            tmpl,
            &Bindings {
                document: Some(document),
                summary: Some(summary),
                structured_json: Some(&json),
                ..Default::default()
            },
        )?;
        self.ask(tmpl, &prompt, |text| {
            let cleaned = clean_guidelines(text);
            let schema = parse_guidelines(&cleaned).map_err(|e| e.to_string())?;
            Ok((cleaned, schema))
        })
    }

    /// The extracted instance list. Prose around the list is ignored.
    pub fn instances(
        &mut self,
        document: &str,
        record: &StructuredRecord,
        guidelines_text: &str,
        schema: &Schema,
        tmpl: &PromptTemplate,
    ) -> Result<InstanceSet, StageFailure> {
        Self::check_stage(tmpl, Stage::Instances)?;
        let json = record.to_prompt_json();
        let prompt = Self::render(
            tmpl,
            &Bindings {
                document: Some(document),
                structured_json: Some(&json),
                guidelines: Some(guidelines_text),
                ..Default::default()
            },
        )?;
        let doc_id = self.doc_id;
        self.ask(tmpl, &prompt, |text| {
            let mut set = parse_instances(text, Some(schema)).map_err(|e| e.to_string())?;
            set.doc_id = doc_id.to_string();
            Ok(set)
        })
    }
}

/// Run all four stages plus validation for one document.
pub fn process_document(
    doc: &Document,
    templates: &TemplateSet,
    client: &LlmClient,
    config: &PipelineConfig,
) -> DocResult {
    let mut runner = StageRunner::new(client, config, &doc.doc_id);
    let outcome = run_stages(doc, templates, config, &mut runner);
    DocResult {
        doc_id: doc.doc_id.clone(),
        outcome,
        trail: runner.into_trail(),
    }
}

fn run_stages(
    doc: &Document,
    templates: &TemplateSet,
    config: &PipelineConfig,
    runner: &mut StageRunner<'_>,
) -> Outcome {
    let reject = |f: StageFailure| {
        Outcome::Reject(RejectEntry {
            doc_id: doc.doc_id.clone(),
            stage: f.stage.into(),
            attempts: f.attempts,
            error: f.message,
        })
    };
    let (text, truncated) = prompt_document(doc, config.max_document_words);
    if truncated {
        log::info!(
            "document {} truncated to {} words",
            doc.doc_id,
            config.max_document_words.unwrap_or_default()
        );
    }
    let summary = match runner.summarize(&text, templates.get(Stage::Summarize)) {
        Ok(s) => s,
        Err(f) => return reject(f),
    };
    let structured = match runner.structure(&text, &summary, templates.get(Stage::Structure)) {
        Ok(s) => s,
        Err(f) => return reject(f),
    };
    let (guidelines_text, schema) =
        match runner.guidelines(&text, &summary, &structured, templates.get(Stage::Guidelines)) {
            Ok(g) => g,
            Err(f) => return reject(f),
        };
    let extracted = match runner.instances(
        &text,
        &structured,
        &guidelines_text,
        &schema,
        templates.get(Stage::Instances),
    ) {
        Ok(s) => s,
        Err(f) => return reject(f),
    };
    let report = validate(&extracted, &schema, doc, &config.policy)
        .expect("instance set carries the document id");
    let instances = filter(&extracted, &report).expect("report built from this set");
    if instances.is_empty() && !config.keep_empty {
        return Outcome::Reject(RejectEntry {
            doc_id: doc.doc_id.clone(),
            stage: RejectStep::Filter,
            attempts: 1,
            error: if extracted.is_empty() {
                "the instance list is empty".to_string()
            } else {
                format!(
                    "all {} extracted instances failed validation",
                    extracted.len()
                )
            },
        });
    }
    Outcome::Record(Box::new(DatasetRecord {
        doc_id: doc.doc_id.clone(),
        text: doc.text.clone(),
        source: doc.source.clone(),
        summary,
        structured,
        guidelines_text,
        schema,
        instances,
        report,
        metadata: PipelineMetadata {
            template_versions: templates.versions(),
            model_name: config.params.model_name.clone(),
            temperature: config.params.temperature,
            top_p: config.params.top_p,
            max_new_tokens: config.params.max_new_tokens,
            grounding: config.policy,
            truncated,
            generated_at: config.generated_at,
        },
    }))
}

/// Process `docs` in input order, skipping ids in `skip`. Documents are
/// handled concurrently in chunks of the client's parallelism; results reach
/// `sink` in input order. Individual document failures never abort the
/// run; only sink errors do.
pub fn run_pipeline(
    docs: &[Document],
    templates: &TemplateSet,
    client: &LlmClient,
    config: &PipelineConfig,
    skip: &HashSet<String>,
    sink: &mut dyn OutcomeSink,
) -> Result<RunSummary, PipelineError> {
    let todo: Vec<&Document> = docs.iter().filter(|d| !skip.contains(&d.doc_id)).collect();
    let mut summary = RunSummary {
        skipped: docs.len() - todo.len(),
        ..Default::default()
    };
    for chunk in todo.chunks(client.parallelism()) {
        let results = crate::llm_client::bounded_map(chunk, client.parallelism(), |doc| {
            process_document(doc, templates, client, config)
        });
        for result in &results {
            summary.processed += 1;
            summary.llm_calls += result.trail.len();
            match &result.outcome {
                Outcome::Record(_) => summary.records += 1,
                Outcome::Reject(r) => {
                    log::warn!("rejected {} at {:?}: {}", r.doc_id, r.stage, r.error);
                    summary.rejects += 1;
                }
            }
            sink.accept(result)?;
        }
    }
    Ok(summary)
}
