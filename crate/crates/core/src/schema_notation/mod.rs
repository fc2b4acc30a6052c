//! Code-style notation for annotation guidelines and extracted instances.
//!
//! Guidelines are written as decorated class definitions, one class per
//! entity type, with the guideline text in the class docstring and one
//! typed, commented field per attribute:
//!
//! ```text
//! @dataclass
//! class Framework:
//!     """A software framework for building machine learning models."""
//!     name: str  # the framework name
//!     features: Optional[List[str]]  # notable capabilities
//! ```
//!
//! Instances are a bracketed list of keyword-only constructor calls whose
//! arguments are string or list-of-string literals:
//!
//! ```text
//! [Framework(name="TensorFlow", features=["graphs", "serving"])]
//! ```
//!
//! Both notations are parsed as a standalone formal language; nothing is
//! ever executed. Each has a canonical printer and `parse(print(x))`
//! reproduces `x`.

mod cursor;
mod guidelines;
mod instances;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::fmt;

pub use guidelines::{normalize_guideline, parse_guidelines, print_guidelines};
pub use instances::{parse_instances, print_instances, print_string_literal};

/// A located parse error. `line` and `column` are 1-based and point inside
/// the offending construct; `column` counts characters, not bytes.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn at(text: &str, byte_offset: usize, message: impl Into<String>) -> Self {
        let (line, column) = line_col(text, byte_offset);
        ParseError {
            line,
            column,
            message: message.into(),
        }
    }
}

/// Errors raised by the printers when an AST breaks a notation invariant.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot print: {0}")]
pub struct PrintError(pub String);

pub(crate) fn line_col(text: &str, byte_offset: usize) -> (usize, usize) {
    let offset = byte_offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let line_start = before.rfind('\n').map(|i| i + 1).unwrap_or(0);
    let column = text[line_start..offset].chars().count() + 1;
    (line, column)
}

pub(crate) fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Parsed guidelines: an ordered list of entity classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub classes: Vec<EntityClass>,
    /// The guideline text exactly as it was parsed.
    #[serde(default)]
    pub source_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityClass {
    pub name: String,
    /// Docstring text, dedented and trimmed (see [`normalize_guideline`]).
    pub guideline: String,
    pub fields: Vec<FieldDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDef {
    pub name: String,
    pub kind: FieldKind,
    pub comment: String,
    /// `false` when the annotation is wrapped in `Optional[...]`.
    pub required: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Text,
    TextList,
}

impl Schema {
    pub fn class(&self, name: &str) -> Option<&EntityClass> {
        self.classes.iter().find(|c| c.name == name)
    }

    /// Equality on the AST only, ignoring `source_text`.
    pub fn structurally_eq(&self, other: &Schema) -> bool {
        self.classes == other.classes
    }

    /// Check the AST invariants the printer relies on.
    pub fn check(&self) -> Result<(), PrintError> {
        if self.classes.is_empty() {
            return Err(PrintError("schema has no classes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for class in &self.classes {
            if !seen.insert(class.name.as_str()) {
                return Err(PrintError(format!("duplicate class `{}`", class.name)));
            }
            class.check()?;
        }
        Ok(())
    }
}

impl EntityClass {
    pub fn field(&self, name: &str) -> Option<&FieldDef> {
        self.fields.iter().find(|f| f.name == name)
    }

    fn check(&self) -> Result<(), PrintError> {
        if !is_identifier(&self.name) {
            return Err(PrintError(format!("`{}` is not an identifier", self.name)));
        }
        if self.guideline.trim().is_empty() {
            return Err(PrintError(format!("class `{}` has an empty guideline", self.name)));
        }
        if self.guideline.contains("\"\"\"") {
            return Err(PrintError(format!(
                "guideline of `{}` contains a triple quote",
                self.name
            )));
        }
        if self.fields.is_empty() {
            return Err(PrintError(format!("class `{}` has no fields", self.name)));
        }
        let mut seen = std::collections::HashSet::new();
        for field in &self.fields {
            if !is_identifier(&field.name) {
                return Err(PrintError(format!("`{}` is not an identifier", field.name)));
            }
            if !seen.insert(field.name.as_str()) {
                return Err(PrintError(format!(
                    "duplicate field `{}` in class `{}`",
                    field.name, self.name
                )));
            }
            if field.comment.trim().is_empty() || field.comment.contains('\n') {
                return Err(PrintError(format!(
                    "field `{}.{}` needs a single-line, non-empty comment",
                    self.name, field.name
                )));
            }
        }
        Ok(())
    }
}

/// A field value inside an instance: a string or a list of strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldValue {
    Text(String),
    List(Vec<String>),
}

impl FieldValue {
    /// The individual strings of this value, in order.
    pub fn strings(&self) -> Vec<&str> {
        match self {
            FieldValue::Text(s) => vec![s.as_str()],
            FieldValue::List(items) => items.iter().map(String::as_str).collect(),
        }
    }
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::Text(s) => f.write_str(&print_string_literal(s)),
            FieldValue::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    f.write_str(&print_string_literal(item))?;
                }
                f.write_str("]")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityInstance {
    pub class_name: String,
    pub assignments: IndexMap<String, FieldValue>,
    /// Byte offset of the constructor call within the list literal.
    #[serde(default)]
    pub source_offset: usize,
}

impl EntityInstance {
    pub fn new(class_name: impl Into<String>) -> Self {
        EntityInstance {
            class_name: class_name.into(),
            assignments: IndexMap::new(),
            source_offset: 0,
        }
    }

    pub fn with(mut self, field: impl Into<String>, value: FieldValue) -> Self {
        self.assignments.insert(field.into(), value);
        self
    }

    fn structurally_eq(&self, other: &EntityInstance) -> bool {
        self.class_name == other.class_name
            && self.assignments.len() == other.assignments.len()
            && self
                .assignments
                .iter()
                .zip(other.assignments.iter())
                .all(|(a, b)| a == b)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InstanceSet {
    pub doc_id: String,
    pub instances: Vec<EntityInstance>,
    /// The list literal exactly as it appeared in the raw text.
    #[serde(default)]
    pub source_text: String,
}

impl InstanceSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Equality on class names and ordered assignments only; ignores
    /// `doc_id`, `source_text` and offsets.
    pub fn structurally_eq(&self, other: &InstanceSet) -> bool {
        self.instances.len() == other.instances.len()
            && self
                .instances
                .iter()
                .zip(&other.instances)
                .all(|(a, b)| a.structurally_eq(b))
    }
}
