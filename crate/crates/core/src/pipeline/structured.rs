use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::schema_notation::FieldValue;

/// One labelled entity from the structured-representation stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredEntry {
    pub label: String,
    pub attributes: IndexMap<String, FieldValue>,
}

/// The structured JSON representation of one document.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructuredRecord {
    pub doc_id: String,
    pub entries: Vec<StructuredEntry>,
}

impl StructuredRecord {
    /// Canonical pretty JSON of the entries, as threaded into later prompts.
    pub fn to_prompt_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("plain data always serializes")
    }
}

/// Remove a surrounding markdown code fence, if any. When the text contains a
/// fenced block, the contents of the first block are returned; otherwise the
/// text is returned unchanged.
pub fn strip_code_fences(text: &str) -> &str {
    let Some(open) = text.find("```") else {
        return text;
    };
    let after = &text[open + 3..];
    // skip the info string (e.g. `json`, `python`) up to the end of the line
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
    let body = &after[body_start..];
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

/// Parse a structured-stage response.
///
/// Accepted shapes, after stripping code fences and any prose around the
/// first JSON value:
///
/// - an array of objects, each with a `label` (or `type`, `entity_type`) and
///   either an `attributes` object or its attributes inline;
/// - an object wrapping such an array under `entities`;
/// - an object mapping each label to one attribute object or to an array of
///   them.
///
/// Scalar numbers and booleans become strings; nulls, empty strings, and
/// nested objects are dropped. A response with no labelled entity is an
/// error.
pub fn parse_structured(text: &str, doc_id: &str) -> Result<StructuredRecord, String> {
    let body = strip_code_fences(text);
    let value = first_json_value(body)?;
    let mut entries = Vec::new();
    collect(&value, &mut entries)?;
    if entries.is_empty() {
        return Err("the JSON contains no labelled entities".into());
    }
    Ok(StructuredRecord {
        doc_id: doc_id.to_string(),
        entries,
    })
}

fn first_json_value(text: &str) -> Result<Value, String> {
    let mut first_err = None;
    for (idx, ch) in text.char_indices() {
        if ch != '[' && ch != '{' {
            continue;
        }
        let mut stream = serde_json::Deserializer::from_str(&text[idx..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(v)) => return Ok(v),
            Some(Err(e)) => {
                first_err.get_or_insert_with(|| format!("invalid JSON: {e}"));
            }
            None => {}
        }
    }
    Err(first_err.unwrap_or_else(|| "no JSON object or array found".into()))
}

const LABEL_KEYS: [&str; 4] = ["label", "type", "entity_type", "entity"];

fn collect(value: &Value, out: &mut Vec<StructuredEntry>) -> Result<(), String> {
    match value {
        Value::Array(items) => {
            for item in items {
                match item {
                    Value::Object(_) => {
                        if let Some(entry) = labelled_entry(item) {
                            out.push(entry);
                        }
                    }
                    Value::Array(_) => collect(item, out)?,
                    _ => {}
                }
            }
            Ok(())
        }
        Value::Object(map) => {
            if let Some(inner) = map.get("entities") {
                return collect(inner, out);
            }
            if let Some(entry) = labelled_entry(value) {
                out.push(entry);
                return Ok(());
            }
            for (label, v) in map {
                let label = label.trim();
                if label.is_empty() {
                    continue;
                }
                match v {
                    Value::Object(attrs) => out.push(StructuredEntry {
                        label: label.to_string(),
                        attributes: attributes(attrs),
                    }),
                    Value::Array(items) => {
                        for item in items {
                            if let Value::Object(attrs) = item {
                                out.push(StructuredEntry {
                                    label: label.to_string(),
                                    attributes: attributes(attrs),
                                });
                            } else if let Some(s) = scalar(item) {
                                let mut attrs = IndexMap::new();
                                attrs.insert("name".to_string(), FieldValue::Text(s));
                                out.push(StructuredEntry {
                                    label: label.to_string(),
                                    attributes: attrs,
                                });
                            }
                        }
                    }
                    _ => {}
                }
            }
            Ok(())
        }
        _ => Err("expected a JSON object or array".into()),
    }
}

fn labelled_entry(value: &Value) -> Option<StructuredEntry> {
    let map = value.as_object()?;
    let (label_key, label) = LABEL_KEYS
        .iter()
        .find_map(|k| map.get(*k).and_then(Value::as_str).map(|s| (*k, s.trim())))?;
    if label.is_empty() {
        return None;
    }
    let attrs = match map.get("attributes").and_then(Value::as_object) {
        Some(attrs) => attributes(attrs),
        None => {
            let mut inline = map.clone();
            inline.remove(label_key);
            inline.remove("attributes");
            attributes(&inline)
        }
    };
    Some(StructuredEntry {
        label: label.to_string(),
        attributes: attrs,
    })
}

fn scalar(value: &Value) -> Option<String> {
    let s = match value {
        Value::String(s) => s.trim().to_string(),
        Value::Number(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        _ => return None,
    };
    (!s.is_empty()).then_some(s)
}

fn attributes(map: &serde_json::Map<String, Value>) -> IndexMap<String, FieldValue> {
    let mut out = IndexMap::new();
    for (name, v) in map {
        let value = match v {
            Value::Array(items) => {
                let items: Vec<String> = items.iter().filter_map(scalar).collect();
                if items.is_empty() {
                    continue;
                }
                FieldValue::List(items)
            }
            other => match scalar(other) {
                Some(s) => FieldValue::Text(s),
                None => continue,
            },
        };
        out.insert(name.clone(), value);
    }
    out
}
