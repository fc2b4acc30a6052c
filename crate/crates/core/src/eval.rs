//! Span-level NER scoring.
//!
//! A mention is a `(label, span text)` pair. Within one example, predicted
//! and gold mentions are matched as multisets: each gold mention can absorb
//! at most one prediction. Micro precision, recall and F1 are computed from
//! pooled counts, with every 0/0 defined as 0.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::schema_notation::parse_instances;
use crate::text::normalize;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Mention {
    pub label: String,
    pub span: String,
}

impl Mention {
    pub fn new(label: impl Into<String>, span: impl Into<String>) -> Self {
        Mention {
            label: label.into(),
            span: span.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldExample {
    #[serde(rename = "id")]
    pub example_id: String,
    #[serde(default)]
    pub text: String,
    pub mentions: Vec<Mention>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "id")]
    pub example_id: String,
    pub mentions: Vec<Mention>,
}

/// Span comparison mode. Labels are always compared exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Matching {
    #[default]
    Exact,
    /// Case folding, then whitespace collapsing.
    Normalized,
}

impl std::str::FromStr for Matching {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" => Ok(Matching::Exact),
            "normalized" => Ok(Matching::Normalized),
            other => Err(format!("unknown matching mode `{other}` (expected exact or normalized)")),
        }
    }
}

impl Matching {
    fn key(self, m: &Mention) -> (String, String) {
        let span = match self {
            Matching::Exact => m.span.clone(),
            Matching::Normalized => normalize(&m.span, true, true),
        };
        (m.label.clone(), span)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Per-label results; empty on the per-label rows themselves.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub breakdown: BTreeMap<String, EvalResult>,
}

fn div0(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl EvalResult {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = div0(tp as f64, (tp + fp) as f64);
        let recall = div0(tp as f64, (tp + fn_) as f64);
        let f1 = div0(2.0 * precision * recall, precision + recall);
        EvalResult {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1,
            breakdown: BTreeMap::new(),
        }
    }

    pub fn counts(&self) -> (usize, usize, usize) {
        (self.tp, self.fp, self.fn_)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("duplicate gold example id `{0}`")]
    DuplicateGold(String),
    #[error("duplicate prediction for example id `{0}`")]
    DuplicatePrediction(String),
    #[error("prediction for unknown example id `{0}`")]
    UnknownExample(String),
    #[error("no benchmark suites to score")]
    NoSuites,
    #[error("suite `{suite}`: {source}")]
    Suite {
        suite: String,
        #[source]
        source: Box<EvalError>,
    },
    #[error("{path}, line {line}: {message}")]
    Record {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-label (tp, fp, fn) after multiset matching of one example.
fn match_example(
    gold: &[Mention],
    pred: &[Mention],
    matching: Matching,
    acc: &mut BTreeMap<String, [usize; 3]>,
) {
    let mut pool: HashMap<(String, String), usize> = HashMap::new();
    for g in gold {
        *pool.entry(matching.key(g)).or_insert(0) += 1;
    }
    for p in pred {
        let key = matching.key(p);
        let row = acc.entry(p.label.clone()).or_insert([0; 3]);
        match pool.get_mut(&key) {
            Some(n) if *n > 0 => {
                *n -= 1;
                row[0] += 1;
            }
            _ => row[1] += 1,
        }
    }
    for ((label, _), left) in pool {
        if left > 0 {
            acc.entry(label).or_insert([0; 3])[2] += left;
        }
    }
}

fn result_from_rows(rows: BTreeMap<String, [usize; 3]>) -> EvalResult {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut breakdown = BTreeMap::new();
    for (label, [t, f, n]) in rows {
        tp += t;
        fp += f;
        fn_ += n;
        breakdown.insert(label, EvalResult::from_counts(t, f, n));
    }
    EvalResult {
        breakdown,
        ..EvalResult::from_counts(tp, fp, fn_)
    }
}

fn index_golds(golds: &[GoldExample]) -> Result<HashMap<&str, &GoldExample>, EvalError> {
    let mut by_id = HashMap::with_capacity(golds.len());
    for g in golds {
        if by_id.insert(g.example_id.as_str(), g).is_some() {
            return Err(EvalError::DuplicateGold(g.example_id.clone()));
        }
    }
    Ok(by_id)
}

fn index_preds<'a>(
    golds: &HashMap<&str, &GoldExample>,
    preds: &'a [Prediction],
) -> Result<HashMap<&'a str, &'a Prediction>, EvalError> {
    let mut by_id = HashMap::with_capacity(preds.len());
    for p in preds {
        if !golds.contains_key(p.example_id.as_str()) {
            return Err(EvalError::UnknownExample(p.example_id.clone()));
        }
        if by_id.insert(p.example_id.as_str(), p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.example_id.clone()));
        }
    }
    Ok(by_id)
}

fn score_filtered(
    golds: &[GoldExample],
    preds: &[Prediction],
    matching: Matching,
    keep: impl Fn(&Mention) -> bool,
) -> Result<EvalResult, EvalError> {
    let gold_by_id = index_golds(golds)?;
    let pred_by_id = index_preds(&gold_by_id, preds)?;
    let mut rows = BTreeMap::new();
    for g in golds {
        let gm: Vec<Mention> = g.mentions.iter().filter(|m| keep(m)).cloned().collect();
        let pm: Vec<Mention> = pred_by_id
            .get(g.example_id.as_str())
            .map(|p| p.mentions.iter().filter(|m| keep(m)).cloned().collect())
            .unwrap_or_default();
        match_example(&gm, &pm, matching, &mut rows);
    }
    Ok(result_from_rows(rows))
}

/// Micro-averaged scores of `preds` against `golds`. Examples without a
/// prediction count as predicting nothing.
pub fn score(
    golds: &[GoldExample],
    preds: &[Prediction],
    matching: Matching,
) -> Result<EvalResult, EvalError> {
    score_filtered(golds, preds, matching, |_| true)
}

/// Unweighted mean; 0 for no values.
pub fn macro_average(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    div0(sum, n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub datasets: BTreeMap<String, EvalResult>,
    /// Unweighted mean of the per-dataset F1 values.
    pub macro_f1: f64,
}

/// A benchmark suite: gold examples and predictions for one dataset.
pub type Suite = (Vec<GoldExample>, Vec<Prediction>);

/// Score every suite and macro-average their F1.
pub fn score_benchmarks(
    suites: &BTreeMap<String, Suite>,
    matching: Matching,
) -> Result<BenchmarkReport, EvalError> {
    if suites.is_empty() {
        return Err(EvalError::NoSuites);
    }
    let mut datasets = BTreeMap::new();
    for (name, (golds, preds)) in suites {
        let result = score(golds, preds, matching).map_err(|e| EvalError::Suite {
            suite: name.clone(),
            source: Box::new(e),
        })?;
        datasets.insert(name.clone(), result);
    }
    let macro_f1 = macro_average(datasets.values().map(|r| r.f1));
    Ok(BenchmarkReport { datasets, macro_f1 })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelRow {
    pub label: String,
    pub result: EvalResult,
    /// The label occurs in neither golds nor predictions.
    pub absent: bool,
}

/// Scores restricted to `labels`, one row per requested label in the given
/// order.
pub fn label_report(
    golds: &[GoldExample],
    preds: &[Prediction],
    labels: &[String],
    matching: Matching,
) -> Result<Vec<LabelRow>, EvalError> {
    let wanted: BTreeSet<&str> = labels.iter().map(String::as_str).collect();
    let result = score_filtered(golds, preds, matching, |m| wanted.contains(m.label.as_str()))?;
    Ok(labels
        .iter()
        .map(|label| match result.breakdown.get(label) {
            Some(r) => LabelRow {
                label: label.clone(),
                result: r.clone(),
                absent: false,
            },
            None => LabelRow {
                label: label.clone(),
                result: EvalResult::from_counts(0, 0, 0),
                absent: true,
            },
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Loading

/// Class name → the field holding the mention text. Classes not listed use
/// their first assignment.
pub type MentionFields = BTreeMap<String, String>;

/// Mentions in raw model output. Unparseable output yields `None`; list
/// values give one mention per element; empty values are skipped.
pub fn mentions_from_output(output: &str, fields: &MentionFields) -> Option<Vec<Mention>> {
    let set = parse_instances(output, None).ok()?;
    let mut out = Vec::new();
    for inst in &set.instances {
        let value = match fields.get(&inst.class_name) {
            Some(f) => inst.assignments.get(f),
            None => inst.assignments.values().next(),
        };
        if let Some(v) = value {
            out.extend(
                v.strings()
                    .into_iter()
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| Mention::new(inst.class_name.as_str(), s)),
            );
        }
    }
    Some(out)
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, EvalError> {
    let io = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if !line.trim().is_empty() {
            out.push((idx + 1, line));
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct RawGoldMention {
    label: String,
    span: Option<String>,
    start: Option<usize>,
    end: Option<usize>,
}

#[derive(Deserialize)]
struct RawGold {
    id: String,
    #[serde(default)]
    text: String,
    mentions: Vec<RawGoldMention>,
}

/// Load gold examples from JSONL `{id, text, mentions: [{label, span}]}`.
/// A mention may give character offsets `start`/`end` into `text` instead
/// of `span`; it is projected to its surface string.
pub fn load_golds(path: &Path) -> Result<Vec<GoldExample>, EvalError> {
    let mut out = Vec::new();
    for (line, text) in read_lines(path)? {
        let err = |message: String| EvalError::Record {
            path: path.display().to_string(),
            line,
            message,
        };
        let raw: RawGold = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let mut mentions = Vec::with_capacity(raw.mentions.len());
        for m in raw.mentions {
            let span = match (m.span, m.start, m.end) {
                (Some(s), _, _) => s,
                (None, Some(start), Some(end)) if start < end => {
                    let s: String = raw.text.chars().skip(start).take(end - start).collect();
                    if s.chars().count() != end - start {
                        return Err(err(format!("offsets {start}..{end} exceed the text")));
                    }
                    s
                }
                _ => return Err(err("mention needs `span` or `start`/`end`".into())),
            };
            if span.is_empty() {
                return Err(err("empty mention span".into()));
            }
            mentions.push(Mention { label: m.label, span });
        }
        out.push(GoldExample {
            example_id: raw.id,
            text: raw.text,
            mentions,
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct RawPrediction {
    id: String,
    output: Option<String>,
    mentions: Option<Vec<Mention>>,
}

/// Predictions and the number of outputs that could not be parsed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedPredictions {
    pub predictions: Vec<Prediction>,
    pub unparseable: Vec<String>,
}

/// Load predictions from JSONL `{id, output}` (raw model text) or
/// `{id, mentions}`. Unparseable outputs score as empty predictions.
pub fn load_predictions(path: &Path, fields: &MentionFields) -> Result<LoadedPredictions, EvalError> {
    let mut out = LoadedPredictions::default();
    for (line, text) in read_lines(path)? {
        let raw: RawPrediction = serde_json::from_str(&text).map_err(|e| EvalError::Record {
            path: path.display().to_string(),
            line,
            message: e.to_string(),
        })?;
        let mentions = match (raw.mentions, raw.output) {
            (Some(m), _) => m,
            (None, Some(output)) => mentions_from_output(&output, fields).unwrap_or_else(|| {
                out.unparseable.push(raw.id.clone());
                Vec::new()
            }),
            (None, None) => {
                return Err(EvalError::Record {
                    path: path.display().to_string(),
                    line,
                    message: "prediction needs `output` or `mentions`".into(),
                })
            }
        };
        out.predictions.push(Prediction {
            example_id: raw.id,
            mentions,
        });
    }
    Ok(out)
}

/// Plain-text table: one row per dataset plus the macro average.
pub fn format_benchmark_table(report: &BenchmarkReport) -> String {
    let width = report
        .datasets
        .keys()
        .map(|k| k.chars().count())
        .chain(["AVERAGE".len(), "dataset".len()])
        .max()
        .unwrap_or(7);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}", "dataset", "P", "R", "F1", "tp", "fp", "fn");
    for (name, r) in &report.datasets {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.2} {:>7.2} {:>7.2} {:>7} {:>7} {:>7}",
            name,
            100.0 * r.precision,
            100.0 * r.recall,
            100.0 * r.f1,
            r.tp,
            r.fp,
            r.fn_
        );
    }
    let _ = writeln!(out, "{:<width$}  {:>7} {:>7} {:>7.2}", "AVERAGE", "", "", 100.0 * report.macro_f1);
    out
}

/// Plain-text per-label table.
pub fn format_label_table(rows: &[LabelRow]) -> String {
    let width = rows
        .iter()
        .map(|r| r.label.chars().count())
        .chain(["label".len()])
        .max()
        .unwrap_or(5);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>7} {:>7} {:>7}", "label", "P", "R", "F1");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>7.2} {:>7.2} {:>7.2}{}",
            r.label,
            100.0 * r.result.precision,
            100.0 * r.result.recall,
            100.0 * r.result.f1,
            if r.absent { "  (absent)" } else { "" }
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(id: &str, ms: &[(&str, &str)]) -> GoldExample {
        GoldExample {
            example_id: id.into(),
            text: String::new(),
            mentions: ms.iter().map(|(l, s)| Mention::new(*l, *s)).collect(),
        }
    }

    fn pred(id: &str, ms: &[(&str, &str)]) -> Prediction {
        Prediction {
            example_id: id.into(),
            mentions: ms.iter().map(|(l, s)| Mention::new(*l, *s)).collect(),
        }
    }

    #[test]
    fn half_right() {
        let g = [gold("1", &[("A", "x"), ("B", "y")])];
        let p = [pred("1", &[("A", "x"), ("A", "z")])];
        let r = score(&g, &p, Matching::Exact).unwrap();
        assert_eq!(r.counts(), (1, 1, 1));
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
        assert_eq!(r.breakdown["A"].counts(), (1, 1, 0));
        assert_eq!(r.breakdown["B"].counts(), (0, 0, 1));
    }

    #[test]
    fn identity_and_empty() {
        let g = [gold("1", &[("A", "x"), ("A", "x")]), gold("2", &[])];
        let self_preds: Vec<Prediction> = g.iter().map(|e| pred(&e.example_id, &[("A", "x"), ("A", "x")][..e.mentions.len()])).collect();
        assert_eq!(score(&g, &self_preds, Matching::Exact).unwrap().f1, 1.0);
        let r = score(&g, &[], Matching::Exact).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn multiset_consumption() {
        let g = [gold("1", &[("A", "x")])];
        let p = [pred("1", &[("A", "x"), ("A", "x")])];
        assert_eq!(score(&g, &p, Matching::Exact).unwrap().counts(), (1, 1, 0));
    }

    #[test]
    fn normalized_matching() {
        let g = [gold("1", &[("A", "New  York")])];
        let p = [pred("1", &[("A", "new york")])];
        assert_eq!(score(&g, &p, Matching::Exact).unwrap().tp, 0);
        assert_eq!(score(&g, &p, Matching::Normalized).unwrap().tp, 1);
    }

    #[test]
    fn input_errors() {
        let g = [gold("1", &[]), gold("1", &[])];
        assert!(matches!(score(&g, &[], Matching::Exact), Err(EvalError::DuplicateGold(_))));
        let g = [gold("1", &[])];
        assert!(matches!(score(&g, &[pred("2", &[])], Matching::Exact), Err(EvalError::UnknownExample(_))));
    }

    #[test]
    fn benchmarks_macro() {
        let mut suites = BTreeMap::new();
        suites.insert("a".to_string(), (vec![gold("1", &[("A", "x")])], vec![pred("1", &[("A", "x")])]));
        suites.insert("b".to_string(), (vec![gold("1", &[("A", "x")])], vec![]));
        let r = score_benchmarks(&suites, Matching::Exact).unwrap();
        assert_eq!(r.macro_f1, 0.5);
        assert!(format_benchmark_table(&r).contains("AVERAGE"));
        assert!(score_benchmarks(&BTreeMap::new(), Matching::Exact).is_err());
    }

    #[test]
    fn label_rows() {
        // Scientist: tp=1, fp=1, fn=2
        let g = [gold("1", &[("Scientist", "Curie"), ("Scientist", "Bohr"), ("Scientist", "Planck"), ("Place", "Paris")])];
        let p = [pred("1", &[("Scientist", "Curie"), ("Scientist", "Paris"), ("Place", "Paris")])];
        let labels = vec!["Scientist".to_string(), "Robot".to_string()];
        let rows = label_report(&g, &p, &labels, Matching::Exact).unwrap();
        assert_eq!(rows[0].result.counts(), (1, 1, 2));
        assert!((rows[0].result.f1 - 0.4).abs() < 1e-12);
        assert!(rows[1].absent);
        assert_eq!(rows[1].result.f1, 0.0);
    }

    #[test]
    fn mentions_from_model_output() {
        let mut fields = MentionFields::new();
        fields.insert("Person".into(), "name".into());
        let out = "Sure: [Person(role=\"chemist\", name=\"Curie\"), Place(names=[\"Paris\", \"Lyon\"])]";
        let ms = mentions_from_output(out, &fields).unwrap();
        assert_eq!(
            ms,
            vec![Mention::new("Person", "Curie"), Mention::new("Place", "Paris"), Mention::new("Place", "Lyon")]
        );
        assert!(mentions_from_output("no list here", &fields).is_none());
    }

    #[test]
    fn gold_offsets_project_to_spans() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"1\",\"text\":\"Marie Curie won\",\"mentions\":[{\"label\":\"person\",\"start\":0,\"end\":11},{\"label\":\"verb\",\"span\":\"won\"}]}\n",
        )
        .unwrap();
        let golds = load_golds(&path).unwrap();
        assert_eq!(golds[0].mentions[0].span, "Marie Curie");
        std::fs::write(&path, "{\"id\":\"1\",\"text\":\"ab\",\"mentions\":[{\"label\":\"x\",\"start\":0,\"end\":9}]}\n").unwrap();
        assert!(load_golds(&path).is_err());
    }
}
