//! Proptest strategies for schemas, instance sets, grounded fixtures with
//! seeded defects, and small scoring suites.

use indexmap::IndexMap;
use proptest::prelude::*;
use proptest::sample::{select, subsequence};

use guidex::corpus::Document;
use guidex::eval::{GoldExample, Matching, Mention, Prediction};
use guidex::schema_notation::{
    EntityClass, EntityInstance, FieldDef, FieldKind, FieldValue, InstanceSet, Schema,
};
use guidex::validator::ErrorCode;

pub fn class_name() -> impl Strategy<Value = String> {
    "[A-Z][A-Za-z0-9_]{0,10}"
}

pub fn field_name() -> impl Strategy<Value = String> {
    "[a-z_][a-z0-9_]{0,10}"
}

/// One line of free text: no leading/trailing whitespace, no `""`.
fn text_line() -> impl Strategy<Value = String> {
    "[A-Za-z0-9éü,.;:()'\"#\\[\\]/ -]{1,40}"
        .prop_map(|s| s.trim().to_string())
        .prop_filter("non-empty without double quotes in a row", |s| {
            !s.is_empty() && !s.contains("\"\"")
        })
}

/// A docstring body in normalized form, possibly spanning several lines
/// with blank lines between paragraphs.
pub fn guideline() -> impl Strategy<Value = String> {
    prop::collection::vec(prop_oneof![4 => text_line(), 1 => Just(String::new())], 1..5).prop_map(
        |mut lines| {
            while lines.last().is_some_and(|l| l.is_empty()) {
                lines.pop();
            }
            while lines.first().is_some_and(|l| l.is_empty()) {
                lines.remove(0);
            }
            if lines.is_empty() {
                lines.push("guideline".into());
            }
            lines.join("\n")
        },
    )
}

pub fn field_def() -> impl Strategy<Value = (String, FieldKind, String, bool)> {
    (
        field_name(),
        prop_oneof![Just(FieldKind::Text), Just(FieldKind::TextList)],
        text_line(),
        any::<bool>(),
    )
}

pub fn entity_class() -> impl Strategy<Value = EntityClass> {
    (
        class_name(),
        guideline(),
        prop::collection::vec(field_def(), 1..5),
    )
        .prop_map(|(name, guideline, raw)| {
            let mut seen = std::collections::HashSet::new();
            let fields = raw
                .into_iter()
                .filter(|(n, ..)| seen.insert(n.clone()))
                .map(|(name, kind, comment, required)| FieldDef {
                    name,
                    kind,
                    comment,
                    required,
                })
                .collect();
            EntityClass {
                name,
                guideline,
                fields,
            }
        })
}

pub fn schema() -> impl Strategy<Value = Schema> {
    prop::collection::vec(entity_class(), 1..5).prop_map(|raw| {
        let mut seen = std::collections::HashSet::new();
        Schema {
            classes: raw.into_iter().filter(|c| seen.insert(c.name.clone())).collect(),
            source_text: String::new(),
        }
    })
}

/// Arbitrary string contents, including quotes, backslashes, newlines and
/// non-ASCII characters.
pub fn literal() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => "[A-Za-z0-9 ]{0,12}",
        2 => "[\"'\\\\\n\t\r a-zé😀\\[\\](),=#]{0,12}",
        1 => any::<String>().prop_map(|s| s.chars().take(12).collect()),
    ]
}

pub fn field_value() -> impl Strategy<Value = FieldValue> {
    prop_oneof![
        literal().prop_map(FieldValue::Text),
        prop::collection::vec(literal(), 1..4).prop_map(FieldValue::List),
    ]
}

pub fn instance() -> impl Strategy<Value = EntityInstance> {
    (
        class_name(),
        prop::collection::vec((field_name(), field_value()), 1..5),
    )
        .prop_map(|(class_name, kws)| {
            let mut assignments = IndexMap::new();
            for (k, v) in kws {
                assignments.entry(k).or_insert(v);
            }
            EntityInstance {
                class_name,
                assignments,
                source_offset: 0,
            }
        })
}

pub fn instance_set() -> impl Strategy<Value = InstanceSet> {
    prop::collection::vec(instance(), 0..6).prop_map(|instances| InstanceSet {
        doc_id: String::new(),
        instances,
        source_text: String::new(),
    })
}

/// Prose that contains no brackets.
pub fn prose() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ,.:;!?'\n-]{0,40}"
}

// ---------------------------------------------------------------------------
// Grounded fixtures

/// A document plus a schema and an instance set that validates cleanly
/// under every grounding policy.
#[derive(Debug, Clone)]
pub struct Grounded {
    pub doc: Document,
    pub schema: Schema,
    pub set: InstanceSet,
}

/// Document words use letters a–p only, so anything containing `q` is
/// guaranteed to be ungrounded.
fn doc_words() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-p]{2,6}", 8..30)
}

fn grounded_schema() -> impl Strategy<Value = Schema> {
    schema().prop_map(|mut s| {
        // every class gets at least one required field
        for c in &mut s.classes {
            c.fields[0].required = true;
        }
        s
    })
}

fn span(words: &[String], seed: usize) -> String {
    let len = 1 + seed % 3;
    let start = (seed / 3) % words.len().saturating_sub(len).max(1);
    words[start..(start + len).min(words.len())].join(" ")
}

pub fn grounded() -> impl Strategy<Value = Grounded> {
    (grounded_schema(), doc_words(), prop::collection::vec((any::<usize>(), any::<u64>()), 1..6)).prop_map(
        |(schema, words, picks)| {
            let text = words.join(" ");
            let doc = Document::new("doc", text.as_str(), "generated").unwrap();
            let instances = picks
                .iter()
                .map(|&(class_pick, bits)| {
                    let class = &schema.classes[class_pick % schema.classes.len()];
                    let mut inst = EntityInstance::new(class.name.as_str());
                    for (i, f) in class.fields.iter().enumerate() {
                        let include = f.required || (bits >> i) & 1 == 1;
                        if !include {
                            continue;
                        }
                        let seed = (bits as usize).wrapping_mul(31).wrapping_add(i * 7);
                        let value = match f.kind {
                            FieldKind::Text => FieldValue::Text(span(&words, seed)),
                            FieldKind::TextList => FieldValue::List(
                                (0..1 + seed % 3).map(|k| span(&words, seed + k * 11)).collect(),
                            ),
                        };
                        inst.assignments.insert(f.name.clone(), value);
                    }
                    inst
                })
                .collect();
            Grounded {
                doc,
                schema,
                set: InstanceSet {
                    doc_id: "doc".into(),
                    instances,
                    source_text: String::new(),
                },
            }
        },
    )
}

/// Inject exactly one defect of kind `code` into instance `which` (modulo
/// the set size). Returns the index of the corrupted instance.
pub fn corrupt(g: &mut Grounded, code: ErrorCode, which: usize, pick: usize) -> usize {
    try_corrupt(g, code, which, pick).expect("a clean fixture accepts every defect")
}

/// Like [`corrupt`], but leaves the fixture untouched and returns `None`
/// when an earlier defect made this one impossible to inject (an undeclared
/// class, or an instance with no assignments left).
pub fn try_corrupt(g: &mut Grounded, code: ErrorCode, which: usize, pick: usize) -> Option<usize> {
    let idx = which % g.set.instances.len();
    let inst = &mut g.set.instances[idx];
    let class = g.schema.class(&inst.class_name)?.clone();
    if inst.assignments.is_empty() {
        return None;
    }
    match code {
        ErrorCode::UndefinedEntityType => {
            let mut name = format!("{}Undeclared", inst.class_name);
            while g.schema.class(&name).is_some() {
                name.push('X');
            }
            inst.class_name = name;
        }
        ErrorCode::MisalignedAttribute => {
            let mut name = "undeclared_attr".to_string();
            while class.field(&name).is_some() {
                name.push('_');
            }
            let grounded = inst.assignments[0].strings()[0].to_string();
            inst.assignments.insert(name, FieldValue::Text(grounded));
        }
        ErrorCode::MissingRequiredField => {
            let required: Vec<&FieldDef> = class.fields.iter().filter(|f| f.required).collect();
            let f = required[pick % required.len()];
            inst.assignments.shift_remove(&f.name);
        }
        ErrorCode::TypeMismatch => {
            let keys: Vec<String> = inst.assignments.keys().cloned().collect();
            let key = &keys[pick % keys.len()];
            let v = inst.assignments.get_mut(key).unwrap();
            *v = match v.clone() {
                FieldValue::Text(s) => FieldValue::List(vec![s]),
                FieldValue::List(items) => FieldValue::Text(items[0].clone()),
            };
        }
        ErrorCode::UngroundedSpan | ErrorCode::EmptyValue => {
            let replacement = if code == ErrorCode::EmptyValue {
                ["", " ", "\t"][pick % 3].to_string()
            } else {
                "quq qoq".to_string()
            };
            let keys: Vec<String> = inst.assignments.keys().cloned().collect();
            let key = &keys[pick % keys.len()];
            match inst.assignments.get_mut(key).unwrap() {
                FieldValue::Text(s) => *s = replacement,
                FieldValue::List(items) => {
                    let n = items.len();
                    items[pick % n] = replacement;
                }
            }
        }
    }
    Some(idx)
}

// ---------------------------------------------------------------------------
// Scoring suites

pub fn mention() -> impl Strategy<Value = Mention> {
    (select(vec!["A", "B", "C"]), select(vec!["x", "y", "z", "X", "x  y"]))
        .prop_map(|(l, s)| Mention::new(l, s))
}

/// Up to 10 examples with up to 5 gold and 5 predicted mentions each; some
/// examples have no prediction at all.
pub fn suite() -> impl Strategy<Value = (Vec<GoldExample>, Vec<Prediction>)> {
    prop::collection::vec(
        (
            prop::collection::vec(mention(), 0..=5),
            prop::collection::vec(mention(), 0..=5),
            any::<bool>(),
        ),
        0..=10,
    )
    .prop_map(|rows| {
        let mut golds = Vec::new();
        let mut preds = Vec::new();
        for (i, (g, p, has_pred)) in rows.into_iter().enumerate() {
            let id = format!("ex{i}");
            golds.push(GoldExample {
                example_id: id.clone(),
                text: String::new(),
                mentions: g,
            });
            if has_pred {
                preds.push(Prediction {
                    example_id: id,
                    mentions: p,
                });
            }
        }
        (golds, preds)
    })
}

/// A permutation of the three scoring labels.
pub fn label_permutation() -> impl Strategy<Value = Vec<&'static str>> {
    subsequence(vec!["A", "B", "C"], 3).prop_shuffle()
}

/// Reference span comparison: lowercase, then collapse whitespace runs.
fn oracle_key(m: &Mention, matching: Matching) -> (String, String) {
    let span = match matching {
        Matching::Exact => m.span.clone(),
        Matching::Normalized => m.span.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" "),
    };
    (m.label.clone(), span)
}

/// Largest number of gold/prediction pairs with equal keys, found by
/// trying every assignment of each prediction to an unused gold mention
/// (or to none).
fn best_pairing(gold: &[(String, String)], pred: &[(String, String)], used: &mut Vec<bool>) -> usize {
    let Some((p, rest)) = pred.split_first() else {
        return 0;
    };
    let mut best = best_pairing(gold, rest, used);
    for (i, g) in gold.iter().enumerate() {
        if !used[i] && g == p {
            used[i] = true;
            best = best.max(1 + best_pairing(gold, rest, used));
            used[i] = false;
        }
    }
    best
}

pub fn brute_force_counts(golds: &[GoldExample], preds: &[Prediction], matching: Matching) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for g in golds {
        let gk: Vec<_> = g.mentions.iter().map(|m| oracle_key(m, matching)).collect();
        let pk: Vec<_> = preds
            .iter()
            .filter(|p| p.example_id == g.example_id)
            .flat_map(|p| p.mentions.iter().map(|m| oracle_key(m, matching)))
            .collect();
        let t = best_pairing(&gk, &pk, &mut vec![false; gk.len()]);
        tp += t;
        fp += pk.len() - t;
        fn_ += gk.len() - t;
    }
    (tp, fp, fn_)
}
