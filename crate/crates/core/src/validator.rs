//! Consistency checking and filtering of instance sets.
//!
//! Every instance is checked against the schema it was generated with and
//! against the source document. All checks run on every instance and all
//! violations are reported; an instance is accepted only with zero errors.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::corpus::Document;
use crate::schema_notation::{EntityInstance, FieldKind, FieldValue, InstanceSet, Schema};
use crate::text::normalize;

/// Validation error codes. The serialized names are stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCode {
    UndefinedEntityType,
    MisalignedAttribute,
    MissingRequiredField,
    TypeMismatch,
    UngroundedSpan,
    EmptyValue,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 6] = [
        ErrorCode::UndefinedEntityType,
        ErrorCode::MisalignedAttribute,
        ErrorCode::MissingRequiredField,
        ErrorCode::TypeMismatch,
        ErrorCode::UngroundedSpan,
        ErrorCode::EmptyValue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::UndefinedEntityType => "UndefinedEntityType",
            ErrorCode::MisalignedAttribute => "MisalignedAttribute",
            ErrorCode::MissingRequiredField => "MissingRequiredField",
            ErrorCode::TypeMismatch => "TypeMismatch",
            ErrorCode::UngroundedSpan => "UngroundedSpan",
            ErrorCode::EmptyValue => "EmptyValue",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingMode {
    Exact,
    Normalized,
    Off,
}

impl std::str::FromStr for GroundingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(GroundingMode::Exact),
            "normalized" => Ok(GroundingMode::Normalized),
            "off" => Ok(GroundingMode::Off),
            other => Err(format!(
                "unknown grounding mode `{other}` (expected exact, normalized or off)"
            )),
        }
    }
}

/// How extracted values must occur in the source document.
///
/// `exact` requires a verbatim substring. `normalized` applies the enabled
/// normalizations (case folding, then whitespace collapsing) to both sides
/// before the substring test. `off` skips grounding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundingPolicy {
    pub mode: GroundingMode,
    #[serde(default = "default_true")]
    pub case_fold: bool,
    #[serde(default = "default_true")]
    pub collapse_whitespace: bool,
}

fn default_true() -> bool {
    true
}

impl Default for GroundingPolicy {
    fn default() -> Self {
        GroundingPolicy::normalized()
    }
}

impl GroundingPolicy {
    pub fn exact() -> Self {
        GroundingPolicy {
            mode: GroundingMode::Exact,
            case_fold: false,
            collapse_whitespace: false,
        }
    }

    pub fn normalized() -> Self {
        GroundingPolicy {
            mode: GroundingMode::Normalized,
            case_fold: true,
            collapse_whitespace: true,
        }
    }

    pub fn off() -> Self {
        GroundingPolicy {
            mode: GroundingMode::Off,
            ..GroundingPolicy::normalized()
        }
    }

    fn prepare(&self, text: &str) -> String {
        match self.mode {
            GroundingMode::Normalized => normalize(text, self.case_fold, self.collapse_whitespace),
            _ => text.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationError {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub index: usize,
    pub status: Status,
    pub errors: Vec<ValidationError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub doc_id: String,
    pub verdicts: Vec<Verdict>,
    pub accepted_count: usize,
    pub rejected_count: usize,
}

impl ValidationReport {
    /// All error codes in the report, in verdict order.
    pub fn codes(&self) -> Vec<ErrorCode> {
        self.verdicts
            .iter()
            .flat_map(|v| v.errors.iter().map(|e| e.code))
            .collect()
    }

    pub fn is_clean(&self) -> bool {
        self.rejected_count == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidateError {
    #[error("instance set belongs to document `{set}` but was checked against `{doc}`")]
    DocIdMismatch { set: String, doc: String },
    #[error("report has {report} verdicts but the instance set has {set} instances")]
    LengthMismatch { report: usize, set: usize },
}

/// Check every instance of `set` against `schema` and `doc` under `policy`.
pub fn validate(
    set: &InstanceSet,
    schema: &Schema,
    doc: &Document,
    policy: &GroundingPolicy,
) -> Result<ValidationReport, ValidateError> {
    if set.doc_id != doc.doc_id {
        return Err(ValidateError::DocIdMismatch {
            set: set.doc_id.clone(),
            doc: doc.doc_id.clone(),
        });
    }
    let haystack = policy.prepare(&doc.text);
    let verdicts: Vec<Verdict> = set
        .instances
        .iter()
        .enumerate()
        .map(|(index, instance)| {
            let errors = check_instance(instance, schema, &haystack, policy);
            Verdict {
                index,
                status: if errors.is_empty() {
                    Status::Accepted
                } else {
                    Status::Rejected
                },
                errors,
            }
        })
        .collect();
    let accepted_count = verdicts
        .iter()
        .filter(|v| v.status == Status::Accepted)
        .count();
    Ok(ValidationReport {
        doc_id: set.doc_id.clone(),
        rejected_count: verdicts.len() - accepted_count,
        accepted_count,
        verdicts,
    })
}

fn check_instance(
    instance: &EntityInstance,
    schema: &Schema,
    haystack: &str,
    policy: &GroundingPolicy,
) -> Vec<ValidationError> {
    let mut errors = Vec::new();
    let mut push = |code, message: String| errors.push(ValidationError { code, message });
    let class = schema.class(&instance.class_name);

    match class {
        None => push(
            ErrorCode::UndefinedEntityType,
            format!("entity type `{}` is not defined in the schema", instance.class_name),
        ),
        Some(class) => {
            for (name, value) in &instance.assignments {
                match class.field(name) {
                    None => push(
                        ErrorCode::MisalignedAttribute,
                        format!("`{}` has no field `{name}`", class.name),
                    ),
                    Some(field) => match (field.kind, value) {
                        (FieldKind::Text, FieldValue::List(_)) => push(
                            ErrorCode::TypeMismatch,
                            format!("`{}.{name}` is a text field but got a list", class.name),
                        ),
                        (FieldKind::TextList, FieldValue::Text(_)) => push(
                            ErrorCode::TypeMismatch,
                            format!("`{}.{name}` is a list field but got a string", class.name),
                        ),
                        _ => {}
                    },
                }
            }
            for field in class.fields.iter().filter(|f| f.required) {
                if !instance.assignments.contains_key(&field.name) {
                    push(
                        ErrorCode::MissingRequiredField,
                        format!("required field `{}.{}` is not assigned", class.name, field.name),
                    );
                }
            }
        }
    }

    for (name, value) in &instance.assignments {
        let strings = value.strings();
        if matches!(value, FieldValue::List(items) if items.is_empty())
            || strings.iter().any(|s| s.trim().is_empty())
        {
            push(ErrorCode::EmptyValue, format!("field `{name}` has an empty value"));
        }
        if policy.mode == GroundingMode::Off {
            continue;
        }
        for s in strings.iter().filter(|s| !s.trim().is_empty()) {
            if !haystack.contains(&policy.prepare(s)) {
                push(
                    ErrorCode::UngroundedSpan,
                    format!("value {s:?} of field `{name}` does not occur in the document"),
                );
            }
        }
    }
    errors
}

/// Keep exactly the accepted instances, in their original order.
pub fn filter(set: &InstanceSet, report: &ValidationReport) -> Result<InstanceSet, ValidateError> {
    if report.verdicts.len() != set.instances.len() {
        return Err(ValidateError::LengthMismatch {
            report: report.verdicts.len(),
            set: set.instances.len(),
        });
    }
    let instances = set
        .instances
        .iter()
        .zip(&report.verdicts)
        .filter(|(_, v)| v.status == Status::Accepted)
        .map(|(i, _)| i.clone())
        .collect();
    Ok(InstanceSet {
        doc_id: set.doc_id.clone(),
        instances,
        source_text: set.source_text.clone(),
    })
}
