use std::collections::HashSet;

use super::cursor::Cursor;
use super::{EntityClass, FieldDef, FieldKind, ParseError, PrintError, Schema};

struct Line<'a> {
    start: usize,
    text: &'a str,
}

impl Line<'_> {
    fn end(&self) -> usize {
        self.start + self.text.len()
    }

    fn is_blank(&self) -> bool {
        self.text.trim().is_empty()
    }

    fn indent(&self) -> usize {
        self.text.len() - self.text.trim_start_matches([' ', '\t']).len()
    }
}

fn split_lines(text: &str) -> Vec<Line<'_>> {
    let mut lines = Vec::new();
    let mut start = 0;
    for piece in text.split('\n') {
        lines.push(Line {
            start,
            text: piece.strip_suffix('\r').unwrap_or(piece),
        });
        start += piece.len() + 1;
    }
    lines
}

fn starts_with_keyword(text: &str, keyword: &str) -> bool {
    text.strip_prefix(keyword)
        .is_some_and(|rest| rest.is_empty() || rest.starts_with([' ', '\t']))
}

fn is_dataclass_decorator(line: &str) -> bool {
    let line = line.trim_end();
    ["@dataclass", "@dataclasses.dataclass"]
        .iter()
        .any(|d| line == *d || line.strip_prefix(d).is_some_and(|r| r.starts_with('(')))
}

/// Dedent and trim a raw docstring body.
///
/// The first line loses its leading spaces and tabs; the remaining lines
/// lose their common leading indentation; every line loses trailing
/// whitespace; leading and trailing blank lines are dropped. Parsed
/// guidelines are always in this form, and the printer relies on it.
pub fn normalize_guideline(raw: &str) -> String {
    let raw_lines: Vec<&str> = raw.split('\n').collect();
    let common = raw_lines
        .iter()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.chars().take_while(|c| *c == ' ' || *c == '\t').count())
        .min()
        .unwrap_or(0);
    let mut lines: Vec<String> = raw_lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let stripped = if i == 0 {
                l.trim_start_matches([' ', '\t'])
            } else if l.trim().is_empty() {
                ""
            } else {
                let skip: usize = l.chars().take(common).map(char::len_utf8).sum();
                &l[skip..]
            };
            stripped.trim_end().to_string()
        })
        .collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    let first = lines.iter().position(|l| !l.is_empty()).unwrap_or(lines.len());
    lines.drain(..first);
    lines.join("\n")
}

/// Parse dataclass-style guidelines into a [`Schema`].
///
/// Blank lines and decorators other than `@dataclass` are tolerated.
/// Comment-only lines inside a class body are accepted and become the
/// comment of the next field when that field has no trailing comment.
/// Anything else outside the grammar is an error located at the construct.
pub fn parse_guidelines(text: &str) -> Result<Schema, ParseError> {
    let lines = split_lines(text);
    let mut classes: Vec<EntityClass> = Vec::new();
    let mut names = HashSet::new();
    let mut decorators: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = &lines[i];
        if line.is_blank() {
            i += 1;
            continue;
        }
        let indent = line.indent();
        if indent > 0 {
            return Err(ParseError::at(
                text,
                line.start + indent,
                "unexpected indentation outside a class body",
            ));
        }
        if line.text.starts_with('@') {
            decorators.push(i);
            i += 1;
            continue;
        }
        if starts_with_keyword(line.text, "class") {
            let (class, next) = parse_class(text, &lines, i, &decorators)?;
            if !names.insert(class.name.clone()) {
                return Err(ParseError::at(
                    text,
                    line.start,
                    format!("duplicate class `{}`", class.name),
                ));
            }
            classes.push(class);
            decorators.clear();
            i = next;
            continue;
        }
        return Err(ParseError::at(
            text,
            line.start,
            "unexpected top-level statement; only @dataclass class definitions are allowed",
        ));
    }
    if let Some(&d) = decorators.first() {
        return Err(ParseError::at(
            text,
            lines[d].start,
            "decorator is not followed by a class definition",
        ));
    }
    if classes.is_empty() {
        return Err(ParseError::at(text, 0, "no classes found"));
    }
    Ok(Schema {
        classes,
        source_text: text.to_string(),
    })
}

fn parse_class(
    text: &str,
    lines: &[Line<'_>],
    header_idx: usize,
    decorators: &[usize],
) -> Result<(EntityClass, usize), ParseError> {
    let header = &lines[header_idx];
    let mut cur = Cursor::new(text, header.start);
    cur.eat_str("class");
    cur.skip_inline_ws();
    let name_pos = cur.pos();
    let name = cur
        .ident()
        .ok_or_else(|| ParseError::at(text, name_pos, "expected a class name"))?
        .to_string();
    cur.skip_inline_ws();
    if cur.peek() == Some('(') {
        return Err(ParseError::at(
            text,
            cur.pos(),
            format!("class `{name}`: inheritance is not supported"),
        ));
    }
    if !cur.eat(':') {
        return Err(ParseError::at(
            text,
            cur.pos(),
            format!("expected `:` after class name `{name}`"),
        ));
    }
    cur.skip_inline_ws();
    if cur.pos() < header.end() {
        return Err(ParseError::at(
            text,
            cur.pos(),
            "unexpected text after class header",
        ));
    }
    if !decorators.iter().any(|&d| is_dataclass_decorator(lines[d].text)) {
        return Err(ParseError::at(
            text,
            header.start,
            format!("class `{name}` is not decorated with @dataclass"),
        ));
    }

    let mut j = header_idx + 1;
    while j < lines.len() && lines[j].is_blank() {
        j += 1;
    }
    if j >= lines.len() || lines[j].indent() == 0 {
        return Err(ParseError::at(
            text,
            header.start,
            format!("class `{name}` has no docstring"),
        ));
    }
    let body_indent = &lines[j].text[..lines[j].indent()];
    let doc_start = lines[j].start + body_indent.len();
    if !text[doc_start..].starts_with("\"\"\"") {
        return Err(ParseError::at(
            text,
            doc_start,
            format!("class `{name}` has no docstring"),
        ));
    }
    let after_open = doc_start + 3;
    let close = text[after_open..]
        .find("\"\"\"")
        .map(|p| after_open + p)
        .ok_or_else(|| ParseError::at(text, doc_start, "unterminated docstring"))?;
    let close_line = lines
        .iter()
        .rposition(|l| l.start <= close)
        .expect("offset lies inside the text");
    let trailing = &text[close + 3..lines[close_line].end()];
    if !trailing.trim().is_empty() {
        return Err(ParseError::at(
            text,
            close + 3,
            "unexpected text after docstring",
        ));
    }
    let guideline = normalize_guideline(&text[after_open..close]);
    if guideline.is_empty() {
        return Err(ParseError::at(
            text,
            doc_start,
            format!("class `{name}` has an empty docstring"),
        ));
    }

    let mut fields: Vec<FieldDef> = Vec::new();
    let mut pending_comment: Option<String> = None;
    j = close_line + 1;
    while j < lines.len() {
        let line = &lines[j];
        if line.is_blank() {
            j += 1;
            continue;
        }
        let indent = line.indent();
        if indent == 0 {
            break;
        }
        if &line.text[..indent] != body_indent {
            return Err(ParseError::at(
                text,
                line.start,
                format!("inconsistent indentation in class `{name}`"),
            ));
        }
        let content = &line.text[indent..];
        if let Some(comment) = content.strip_prefix('#') {
            let comment = comment.trim();
            if !comment.is_empty() {
                pending_comment = Some(comment.to_string());
            }
            j += 1;
            continue;
        }
        let (mut field, inline_comment) = parse_field(text, line, line.start + indent)?;
        field.comment = match inline_comment.or_else(|| pending_comment.take()) {
            Some(c) => c,
            None => {
                return Err(ParseError::at(
                    text,
                    line.start + indent,
                    format!("field `{}` has no comment", field.name),
                ))
            }
        };
        pending_comment = None;
        if fields.iter().any(|f| f.name == field.name) {
            return Err(ParseError::at(
                text,
                line.start + indent,
                format!("duplicate field `{}` in class `{name}`", field.name),
            ));
        }
        fields.push(field);
        j += 1;
    }
    if fields.is_empty() {
        return Err(ParseError::at(
            text,
            header.start,
            format!("empty class `{name}`: no fields declared"),
        ));
    }
    Ok((
        EntityClass {
            name,
            guideline,
            fields,
        },
        j,
    ))
}

fn parse_field(
    text: &str,
    line: &Line<'_>,
    start: usize,
) -> Result<(FieldDef, Option<String>), ParseError> {
    let mut cur = Cursor::new(text, start);
    let name = cur
        .ident()
        .ok_or_else(|| {
            ParseError::at(
                text,
                start,
                "expected a field declaration `name: type  # comment`",
            )
        })?
        .to_string();
    cur.skip_inline_ws();
    if !cur.eat(':') {
        let message = if cur.pos() >= line.end() || cur.peek() == Some('=') {
            format!("field `{name}` has no type annotation")
        } else {
            format!("expected `:` after field name `{name}`")
        };
        return Err(ParseError::at(text, cur.pos(), message));
    }
    cur.skip_inline_ws();
    let (kind, optional) = parse_type(text, &mut cur, line.end())?;
    cur.skip_inline_ws();
    let comment = if cur.pos() >= line.end() {
        None
    } else if cur.eat('#') {
        let c = text[cur.pos()..line.end()].trim();
        (!c.is_empty()).then(|| c.to_string())
    } else {
        return Err(ParseError::at(
            text,
            cur.pos(),
            format!("unexpected text after the type of field `{name}`"),
        ));
    };
    Ok((
        FieldDef {
            name,
            kind,
            comment: String::new(),
            required: !optional,
        },
        comment,
    ))
}

fn parse_type(
    text: &str,
    cur: &mut Cursor<'_>,
    line_end: usize,
) -> Result<(FieldKind, bool), ParseError> {
    let start = cur.pos();
    if cur.eat_str("Optional[") {
        let (kind, _) = parse_type(text, cur, line_end)?;
        if !cur.eat(']') {
            return Err(ParseError::at(text, cur.pos(), "expected `]` to close Optional["));
        }
        return Ok((kind, true));
    }
    if cur.eat_str("List[str]") {
        return Ok((FieldKind::TextList, false));
    }
    let rest = &text[start..line_end];
    if rest.starts_with("str")
        && !rest[3..]
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == '_' || c == '[')
    {
        cur.eat_str("str");
        return Ok((FieldKind::Text, false));
    }
    let token: String = rest
        .chars()
        .take_while(|c| !c.is_whitespace() && *c != '#' && *c != ']')
        .collect();
    let message = if token.is_empty() {
        "missing field type".to_string()
    } else {
        format!("unsupported field kind `{token}`; expected str, List[str] or Optional[...]")
    };
    Err(ParseError::at(text, start, message))
}

fn type_expr(field: &FieldDef) -> String {
    let base = match field.kind {
        FieldKind::Text => "str",
        FieldKind::TextList => "List[str]",
    };
    if field.required {
        base.to_string()
    } else {
        format!("Optional[{base}]")
    }
}

/// Canonical rendering of a schema. Fails if the schema breaks an AST invariant.
pub fn print_guidelines(schema: &Schema) -> Result<String, PrintError> {
    schema.check()?;
    let mut out = String::new();
    for (i, class) in schema.classes.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str("@dataclass\n");
        out.push_str(&format!("class {}:\n", class.name));
        let lines: Vec<&str> = class.guideline.split('\n').collect();
        if lines.len() == 1 && !class.guideline.ends_with('"') {
            out.push_str(&format!("    \"\"\"{}\"\"\"\n", class.guideline));
        } else {
            out.push_str(&format!("    \"\"\"{}\n", lines[0]));
            for line in &lines[1..] {
                if line.is_empty() {
                    out.push('\n');
                } else {
                    out.push_str(&format!("    {line}\n"));
                }
            }
            out.push_str("    \"\"\"\n");
        }
        for field in &class.fields {
            out.push_str(&format!(
                "    {}: {}  # {}\n",
                field.name,
                type_expr(field),
                field.comment.trim()
            ));
        }
    }
    Ok(out)
}
