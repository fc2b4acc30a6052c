use indexmap::IndexMap;

use super::cursor::Cursor;
use super::{is_identifier, EntityInstance, FieldValue, InstanceSet, ParseError, PrintError, Schema};

/// Parse an instance list, locating the outermost list literal amid
/// surrounding prose.
///
/// Every `[` in the text is tried as a list start, left to right; the first
/// candidate that parses completely wins. Brackets inside the region a
/// failed candidate already consumed are not retried, so an inner `[]` can
/// never stand in for a broken outer list. When nothing parses, the error of
/// the first candidate is returned.
///
/// The schema is accepted for interface symmetry but not consulted: binding
/// instances to their classes is the validator's job.
pub fn parse_instances(text: &str, _schema: Option<&Schema>) -> Result<InstanceSet, ParseError> {
    let mut first_error = None;
    let mut consumed = 0;
    for (start, _) in text.match_indices('[') {
        if start < consumed {
            continue;
        }
        let mut cur = Cursor::new(text, start);
        match parse_list(text, &mut cur) {
            Ok((instances, end)) => {
                return Ok(InstanceSet {
                    doc_id: String::new(),
                    instances,
                    source_text: text[start..end].to_string(),
                })
            }
            Err(e) => {
                consumed = cur.pos().max(start + 1);
                first_error.get_or_insert(e);
            }
        }
    }
    Err(first_error.unwrap_or_else(|| ParseError::at(text, 0, "no list literal found")))
}

fn parse_list(text: &str, cur: &mut Cursor<'_>) -> Result<(Vec<EntityInstance>, usize), ParseError> {
    let start = cur.pos();
    cur.eat('[');
    let mut instances = Vec::new();
    cur.skip_ws();
    if cur.eat(']') {
        return Ok((instances, cur.pos()));
    }
    loop {
        let mut instance = parse_call(text, cur)?;
        instance.source_offset -= start;
        instances.push(instance);
        cur.skip_ws();
        if cur.eat(',') {
            cur.skip_ws();
            if cur.eat(']') {
                break;
            }
        } else if cur.eat(']') {
            break;
        } else {
            return Err(unexpected(text, cur, "expected `,` or `]` after an instance"));
        }
    }
    Ok((instances, cur.pos()))
}

fn unexpected(text: &str, cur: &Cursor<'_>, message: &str) -> ParseError {
    match cur.peek() {
        None => ParseError::at(text, cur.pos(), format!("{message}, found end of input")),
        Some(_) => ParseError::at(text, cur.pos(), message),
    }
}

fn parse_call(text: &str, cur: &mut Cursor<'_>) -> Result<EntityInstance, ParseError> {
    let call_start = cur.pos();
    let class_name = cur
        .ident()
        .ok_or_else(|| unexpected(text, cur, "expected an entity constructor `Name(field=...)`"))?
        .to_string();
    cur.skip_ws();
    if !cur.eat('(') {
        return Err(unexpected(
            text,
            cur,
            &format!("expected `(` after entity name `{class_name}`"),
        ));
    }
    let mut assignments = IndexMap::new();
    cur.skip_ws();
    if cur.peek() == Some(')') {
        return Err(ParseError::at(
            text,
            cur.pos(),
            format!("constructor `{class_name}` has no keyword arguments"),
        ));
    }
    loop {
        cur.skip_ws();
        let kw_start = cur.pos();
        let Some(field) = cur.ident() else {
            return Err(match cur.peek() {
                Some('"' | '\'' | '[') => {
                    ParseError::at(text, kw_start, "positional arguments are not supported")
                }
                _ => unexpected(text, cur, "expected a keyword argument `field=value`"),
            });
        };
        let field = field.to_string();
        cur.skip_ws();
        if !cur.eat('=') {
            let message = if matches!(cur.peek(), Some(',' | ')')) {
                "positional arguments are not supported"
            } else {
                "non-literal value"
            };
            return Err(ParseError::at(text, kw_start, message));
        }
        cur.skip_ws();
        let value = parse_value(text, cur)?;
        if assignments.contains_key(&field) {
            return Err(ParseError::at(
                text,
                kw_start,
                format!("duplicate keyword `{field}`"),
            ));
        }
        assignments.insert(field, value);
        cur.skip_ws();
        if cur.eat(',') {
            continue;
        }
        if cur.eat(')') {
            break;
        }
        return Err(unexpected(text, cur, "expected `,` or `)` in constructor call"));
    }
    Ok(EntityInstance {
        class_name,
        assignments,
        source_offset: call_start,
    })
}

fn parse_value(text: &str, cur: &mut Cursor<'_>) -> Result<FieldValue, ParseError> {
    let value_start = cur.pos();
    let value = match cur.peek() {
        Some('"' | '\'') => FieldValue::Text(parse_string(text, cur)?),
        Some('[') => {
            cur.eat('[');
            let mut items = Vec::new();
            loop {
                cur.skip_ws();
                match cur.peek() {
                    Some('"' | '\'') => items.push(parse_string(text, cur)?),
                    Some(']') if items.is_empty() => {
                        return Err(ParseError::at(text, value_start, "empty list value"))
                    }
                    _ => return Err(ParseError::at(text, cur.pos(), "non-literal value")),
                }
                cur.skip_ws();
                if cur.eat(',') {
                    continue;
                }
                if cur.eat(']') {
                    break;
                }
                return Err(not_a_literal_or(text, cur, "expected `,` or `]` in list value"));
            }
            FieldValue::List(items)
        }
        None => return Err(unexpected(text, cur, "expected a value")),
        Some(_) => return Err(ParseError::at(text, value_start, "non-literal value")),
    };
    cur.skip_ws();
    if matches!(cur.peek(), Some('+' | '*' | '%' | '.' | '[' | '(' | '-' | '/')) {
        return Err(ParseError::at(text, value_start, "non-literal value"));
    }
    Ok(value)
}

fn not_a_literal_or(text: &str, cur: &Cursor<'_>, message: &str) -> ParseError {
    if matches!(cur.peek(), Some('+' | '*' | '%' | '.' | '(' | '-' | '/')) {
        ParseError::at(text, cur.pos(), "non-literal value")
    } else {
        unexpected(text, cur, message)
    }
}

fn parse_string(text: &str, cur: &mut Cursor<'_>) -> Result<String, ParseError> {
    let start = cur.pos();
    let quote = cur.bump().expect("caller checked the quote");
    let mut out = String::new();
    loop {
        match cur.bump() {
            None | Some('\n') => {
                return Err(ParseError::at(text, start, "unterminated string"));
            }
            Some('\\') => match cur.bump() {
                None => return Err(ParseError::at(text, start, "unterminated string")),
                Some('n') => out.push('\n'),
                Some('t') => out.push('\t'),
                Some('r') => out.push('\r'),
                Some('\\') => out.push('\\'),
                Some('"') => out.push('"'),
                Some('\'') => out.push('\''),
                Some('\n') => {}
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
            },
            Some(c) if c == quote => return Ok(out),
            Some(c) => out.push(c),
        }
    }
}

/// Render a string as a double-quoted literal with backslash escapes.
pub fn print_string_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Canonical rendering: one constructor call per line, trailing comma,
/// `[]` for an empty set.
pub fn print_instances(set: &InstanceSet) -> Result<String, PrintError> {
    if set.instances.is_empty() {
        return Ok("[]".to_string());
    }
    let mut out = String::from("[\n");
    for instance in &set.instances {
        if !is_identifier(&instance.class_name) {
            return Err(PrintError(format!(
                "`{}` is not an identifier",
                instance.class_name
            )));
        }
        if instance.assignments.is_empty() {
            return Err(PrintError(format!(
                "instance of `{}` has no assignments",
                instance.class_name
            )));
        }
        out.push_str("    ");
        out.push_str(&instance.class_name);
        out.push('(');
        for (i, (field, value)) in instance.assignments.iter().enumerate() {
            if !is_identifier(field) {
                return Err(PrintError(format!("`{field}` is not an identifier")));
            }
            if matches!(value, FieldValue::List(items) if items.is_empty()) {
                return Err(PrintError(format!("field `{field}` has an empty list value")));
            }
            if i > 0 {
                out.push_str(", ");
            }
            out.push_str(field);
            out.push('=');
            out.push_str(&value.to_string());
        }
        out.push_str("),\n");
    }
    out.push(']');
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<InstanceSet, ParseError> {
        parse_instances(text, None)
    }

    #[test]
    fn single_instance() {
        let set = parse(r#"[Framework(name="TensorFlow", developer="Google")]"#).unwrap();
        assert_eq!(set.len(), 1);
        let inst = &set.instances[0];
        assert_eq!(inst.class_name, "Framework");
        assert_eq!(inst.assignments.len(), 2);
        assert_eq!(inst.assignments["name"], FieldValue::Text("TensorFlow".into()));
        assert_eq!(inst.assignments["developer"], FieldValue::Text("Google".into()));
        assert_eq!(inst.source_offset, 1);
    }

    #[test]
    fn empty_list() {
        let set = parse("[]").unwrap();
        assert!(set.is_empty());
        assert_eq!(set.source_text, "[]");
        assert_eq!(print_instances(&set).unwrap(), "[]");
        assert!(parse("[ \n ]").unwrap().is_empty());
    }

    #[test]
    fn non_literal_value() {
        let e = parse("[Framework(name=compute())]").unwrap_err();
        assert_eq!(e.message, "non-literal value");
        assert_eq!((e.line, e.column), (1, 17));
        let e = parse("[A(x=\"a\" + \"b\")]").unwrap_err();
        assert_eq!(e.message, "non-literal value");
        let e = parse("[A(x=3)]").unwrap_err();
        assert_eq!(e.message, "non-literal value");
        let e = parse("[A(x=[\"a\", B(y=\"c\")])]").unwrap_err();
        assert_eq!(e.message, "non-literal value");
        let e = parse("[A(x=None)]").unwrap_err();
        assert_eq!(e.message, "non-literal value");
    }

    #[test]
    fn positional_arguments() {
        for text in ["[A(\"x\")]", "[A(x)]", "[A(y=\"1\", x)]"] {
            let e = parse(text).unwrap_err();
            assert_eq!(e.message, "positional arguments are not supported", "{text}");
        }
    }

    #[test]
    fn unterminated_string() {
        let e = parse("[A(x=\"abc)]").unwrap_err();
        assert_eq!(e.message, "unterminated string");
        assert_eq!((e.line, e.column), (1, 6));
        let e = parse("[A(x='ab\ncd')]").unwrap_err();
        assert_eq!(e.message, "unterminated string");
    }

    #[test]
    fn no_list() {
        let e = parse("There are no entities here.").unwrap_err();
        assert_eq!(e.message, "no list literal found");
    }

    #[test]
    fn prose_is_stripped() {
        let text = "Here are the instances:\n[A(x='1'),\n B(y=[\"2\", '3'])]\nLet me know if you need more.";
        let set = parse(text).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.source_text, "[A(x='1'),\n B(y=[\"2\", '3'])]");
        assert_eq!(set.instances[1].source_offset, 12);
        assert_eq!(
            set.instances[1].assignments["y"],
            FieldValue::List(vec!["2".into(), "3".into()])
        );
    }

    #[test]
    fn skips_bracketed_prose_before_list() {
        let set = parse("See note [1] below.\n[A(x=\"1\")]").unwrap();
        assert_eq!(set.len(), 1);
    }

    #[test]
    fn escapes() {
        let set = parse(r#"[A(x="q\"uo\\te\n\t", y='it\'s', z="\d")]"#).unwrap();
        let a = &set.instances[0].assignments;
        assert_eq!(a["x"], FieldValue::Text("q\"uo\\te\n\t".into()));
        assert_eq!(a["y"], FieldValue::Text("it's".into()));
        assert_eq!(a["z"], FieldValue::Text("\\d".into()));
    }

    #[test]
    fn grammar_edges() {
        assert_eq!(parse("[A(x='1'),]").unwrap().len(), 1);
        assert_eq!(parse("[A()]").unwrap_err().message, "constructor `A` has no keyword arguments");
        assert_eq!(parse("[A(x=[])]").unwrap_err().message, "empty list value");
        assert_eq!(parse("[A(x='1', x='2')]").unwrap_err().message, "duplicate keyword `x`");
        assert!(parse("[A(x='1')").is_err());
        assert!(parse("['a']").is_err());
    }

    #[test]
    fn canonical_print() {
        let set = parse("[A(x='1', y=['a','b']), B(z=\"q\\\"\")]").unwrap();
        let printed = print_instances(&set).unwrap();
        assert_eq!(
            printed,
            "[\n    A(x=\"1\", y=[\"a\", \"b\"]),\n    B(z=\"q\\\"\"),\n]"
        );
        assert!(parse(&printed).unwrap().structurally_eq(&set));
    }
}
