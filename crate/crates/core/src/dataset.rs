//! Dataset store, label statistics, label-space overlap and training-example
//! emission.
//!
//! A dataset file is JSONL: a header line `{"format":"guidex-dataset","version":1}`
//! followed by one [`DatasetRecord`] per line.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::corpus::Document;
use crate::pipeline::StructuredRecord;
use crate::schema_notation::{
    print_guidelines, print_instances, print_string_literal, InstanceSet, Schema,
};
use crate::validator::{validate, GroundingPolicy, ValidateError, ValidationReport};

pub const DATASET_FORMAT: &str = "guidex-dataset";
pub const DATASET_VERSION: u32 = 1;

/// Provenance of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineMetadata {
    /// Stage name → template version.
    pub template_versions: BTreeMap<String, String>,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    /// The grounding policy the instances were filtered under.
    pub grounding: GroundingPolicy,
    /// The document was cut to fit the prompt budget.
    #[serde(default)]
    pub truncated: bool,
    /// Unix seconds; absent for reproducible runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
}

/// One document with every stage output and its filtered instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub doc_id: String,
    pub text: String,
    #[serde(default)]
    pub source: String,
    pub summary: String,
    pub structured: StructuredRecord,
    /// Guideline text as parsed into `schema`.
    pub guidelines_text: String,
    pub schema: Schema,
    /// Instances that passed validation.
    pub instances: InstanceSet,
    /// Verdicts for every extracted instance, before filtering.
    pub report: ValidationReport,
    pub metadata: PipelineMetadata,
}

impl DatasetRecord {
    pub fn document(&self) -> Document {
        Document {
            doc_id: self.doc_id.clone(),
            word_count: crate::text::word_count(&self.text),
            text: self.text.clone(),
            source: self.source.clone(),
        }
    }

    /// Validate the stored instances again, under `policy` or the record's own.
    pub fn revalidate(
        &self,
        policy: Option<&GroundingPolicy>,
    ) -> Result<ValidationReport, ValidateError> {
        validate(
            &self.instances,
            &self.schema,
            &self.document(),
            policy.unwrap_or(&self.metadata.grounding),
        )
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: missing dataset header line")]
    MissingHeader { path: String },
    #[error("{path}: not a dataset file (format `{found}`)")]
    Format { path: String, found: String },
    #[error("{path}: dataset version {found} is not supported (expected {DATASET_VERSION})")]
    VersionMismatch { path: String, found: u32 },
    #[error("{path}, line {line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

fn check_header(path: &Path, line: &str) -> Result<(), DatasetError> {
    let header: Header = serde_json::from_str(line).map_err(|_| DatasetError::MissingHeader {
        path: path.display().to_string(),
    })?;
    if header.format != DATASET_FORMAT {
        return Err(DatasetError::Format {
            path: path.display().to_string(),
            found: header.format,
        });
    }
    if header.version != DATASET_VERSION {
        return Err(DatasetError::VersionMismatch {
            path: path.display().to_string(),
            found: header.version,
        });
    }
    Ok(())
}

/// Appends records to a dataset file, one flushed line each.
pub struct DatasetWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl DatasetWriter {
    /// Create (or truncate) a dataset file and write its header.
    pub fn create(path: &Path) -> Result<Self, DatasetError> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut w = DatasetWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        let header = serde_json::to_string(&Header {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
        })
        .expect("header serializes");
        w.write_raw(&header)?;
        Ok(w)
    }

    /// Continue an existing dataset file, or create one if there is none.
    pub fn append(path: &Path) -> Result<Self, DatasetError> {
        let has_content = std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
        if !has_content {
            return Self::create(path);
        }
        let first = BufReader::new(File::open(path).map_err(io_err(path))?)
            .lines()
            .next()
            .transpose()
            .map_err(io_err(path))?
            .unwrap_or_default();
        check_header(path, &first)?;
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(DatasetWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    fn write_raw(&mut self, line: &str) -> Result<(), DatasetError> {
        let path = self.path.clone();
        self.out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .and_then(|_| self.out.flush())
            .map_err(io_err(&path))
    }

    pub fn write(&mut self, record: &DatasetRecord) -> Result<(), DatasetError> {
        let line = serde_json::to_string(record).expect("records serialize");
        self.write_raw(&line)
    }
}

pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<(), DatasetError> {
    let mut w = DatasetWriter::create(path)?;
    for r in records {
        w.write(r)?;
    }
    Ok(())
}

/// A corrupt line skipped in tolerant mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetContents {
    pub records: Vec<DatasetRecord>,
    pub warnings: Vec<LineWarning>,
}

/// Read a dataset file. In tolerant mode corrupt record lines are skipped
/// and reported with their 1-based line number; otherwise the first one is
/// an error. A bad header is always an error.
pub fn read_dataset(path: &Path, tolerant: bool) -> Result<DatasetContents, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(io_err(path))?
        .ok_or_else(|| DatasetError::MissingHeader {
            path: path.display().to_string(),
        })?;
    check_header(path, &header)?;
    let mut out = DatasetContents::default();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<DatasetRecord>(&line) {
            Ok(r) => out.records.push(r),
            Err(e) if tolerant => out.warnings.push(LineWarning {
                line: line_no,
                message: e.to_string(),
            }),
            Err(e) => {
                return Err(DatasetError::Corrupt {
                    path: path.display().to_string(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Label statistics

/// Label counts over a dataset. All counts are integers; averages are
/// computed from them on demand, so merging never accumulates rounding.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelStats {
    pub n_docs: usize,
    pub n_annotations: usize,
    /// Sum over documents of the number of distinct labels used.
    pub distinct_label_sum: usize,
    /// Label → number of instances.
    pub annotation_frequency: BTreeMap<String, usize>,
    /// Label → number of documents with at least one instance.
    pub document_frequency: BTreeMap<String, usize>,
}

/// One row of a top/bottom table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelCount {
    pub label: String,
    pub annotations: usize,
    pub documents: usize,
}

impl LabelStats {
    pub fn unique_label_count(&self) -> usize {
        self.annotation_frequency.len()
    }

    pub fn avg_distinct_labels_per_doc(&self) -> f64 {
        ratio(self.distinct_label_sum, self.n_docs)
    }

    pub fn avg_annotations_per_doc(&self) -> f64 {
        ratio(self.n_annotations, self.n_docs)
    }

    /// Statistics over the concatenation of the two datasets.
    pub fn merge(&self, other: &LabelStats) -> LabelStats {
        let add = |a: &BTreeMap<String, usize>, b: &BTreeMap<String, usize>| {
            let mut out = a.clone();
            for (k, v) in b {
                *out.entry(k.clone()).or_insert(0) += v;
            }
            out
        };
        LabelStats {
            n_docs: self.n_docs + other.n_docs,
            n_annotations: self.n_annotations + other.n_annotations,
            distinct_label_sum: self.distinct_label_sum + other.distinct_label_sum,
            annotation_frequency: add(&self.annotation_frequency, &other.annotation_frequency),
            document_frequency: add(&self.document_frequency, &other.document_frequency),
        }
    }

    fn row(&self, label: &str) -> LabelCount {
        LabelCount {
            label: label.to_string(),
            annotations: self.annotation_frequency[label],
            documents: self.document_frequency.get(label).copied().unwrap_or(0),
        }
    }

    /// The `k` most frequent labels by annotation count; ties by label.
    pub fn top_k(&self, k: usize) -> Vec<LabelCount> {
        let mut labels: Vec<(&String, &usize)> = self.annotation_frequency.iter().collect();
        labels.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        labels.into_iter().take(k).map(|(l, _)| self.row(l)).collect()
    }

    /// The `k` least frequent labels by annotation count; ties by label.
    pub fn bottom_k(&self, k: usize) -> Vec<LabelCount> {
        let mut labels: Vec<(&String, &usize)> = self.annotation_frequency.iter().collect();
        labels.sort_by(|a, b| a.1.cmp(b.1).then_with(|| a.0.cmp(b.0)));
        labels.into_iter().take(k).map(|(l, _)| self.row(l)).collect()
    }

    pub fn labels(&self) -> BTreeSet<String> {
        self.annotation_frequency.keys().cloned().collect()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Label statistics over the surviving instances of every record. Labels
/// are the class names of instances; a document's distinct labels are the
/// classes with at least one instance in it.
pub fn compute_stats(records: &[DatasetRecord]) -> LabelStats {
    let mut stats = LabelStats::default();
    for r in records {
        stats = stats.merge(&stats_for_instances(&r.instances));
    }
    stats
}

/// Statistics of a single document's instances.
pub fn stats_for_instances(set: &InstanceSet) -> LabelStats {
    let mut stats = LabelStats {
        n_docs: 1,
        n_annotations: set.len(),
        ..Default::default()
    };
    for inst in &set.instances {
        *stats
            .annotation_frequency
            .entry(inst.class_name.clone())
            .or_insert(0) += 1;
    }
    for label in stats.annotation_frequency.keys() {
        stats.document_frequency.insert(label.clone(), 1);
    }
    stats.distinct_label_sum = stats.annotation_frequency.len();
    stats
}

// ---------------------------------------------------------------------------
// Label-space overlap

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train or test)")),
        }
    }
}

/// Benchmark name → split → gold label set.
pub type LabelSpaces = BTreeMap<String, BTreeMap<Split, BTreeSet<String>>>;

/// Name of the aggregate row computed over the union of all benchmarks.
pub const AGGREGATE: &str = "ALL";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapResult {
    pub benchmark: String,
    pub split: Split,
    pub gold_label_count: usize,
    pub matched_count: usize,
    pub coverage: f64,
    pub matched: Vec<String>,
    pub unmatched: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum OverlapError {
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("label set `{0}` is empty")]
    EmptyLabelSet(String),
}

/// How labels are compared: always trimmed; case-sensitive unless
/// `case_insensitive`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Canonicalization {
    pub case_insensitive: bool,
}

impl Canonicalization {
    pub fn apply(&self, label: &str) -> String {
        let t = label.trim();
        if self.case_insensitive {
            t.to_lowercase()
        } else {
            t.to_string()
        }
    }

    fn set(&self, labels: &BTreeSet<String>) -> BTreeSet<String> {
        labels
            .iter()
            .map(|l| self.apply(l))
            .filter(|l| !l.is_empty())
            .collect()
    }
}

fn overlap_row(
    benchmark: &str,
    split: Split,
    gold: &BTreeSet<String>,
    ours: &BTreeSet<String>,
) -> OverlapResult {
    let (matched, unmatched): (Vec<String>, Vec<String>) =
        gold.iter().cloned().partition(|l| ours.contains(l));
    OverlapResult {
        benchmark: benchmark.to_string(),
        split,
        gold_label_count: gold.len(),
        matched_count: matched.len(),
        coverage: ratio(matched.len(), gold.len()),
        matched,
        unmatched,
    }
}

/// Coverage of each benchmark split's gold labels by `dataset_labels`, then
/// one aggregate row per split over the union of all gold labels.
pub fn compute_overlap(
    dataset_labels: &BTreeSet<String>,
    benchmarks: &LabelSpaces,
    canon: Canonicalization,
) -> Result<Vec<OverlapResult>, OverlapError> {
    let ours = canon.set(dataset_labels);
    if ours.is_empty() {
        return Err(OverlapError::EmptyLabelSet("dataset".into()));
    }
    let mut rows = Vec::new();
    let mut union: BTreeMap<Split, BTreeSet<String>> = BTreeMap::new();
    for (name, splits) in benchmarks {
        for (split, labels) in splits {
            let gold = canon.set(labels);
            if gold.is_empty() {
                return Err(OverlapError::EmptyLabelSet(format!("{name}.{}", split.as_str())));
            }
            rows.push(overlap_row(name, *split, &gold, &ours));
            union.entry(*split).or_default().extend(gold);
        }
    }
    for (split, gold) in &union {
        rows.push(overlap_row(AGGREGATE, *split, gold, &ours));
    }
    Ok(rows)
}

/// Load `<benchmark>.<split>.txt` files (one label per line) from `dir`.
/// Hidden files are ignored; any other file is a format error.
pub fn load_label_spaces(dir: &Path) -> Result<LabelSpaces, OverlapError> {
    let mut out = LabelSpaces::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    entries.sort();
    for path in entries {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        if name.starts_with('.') || path.is_dir() {
            continue;
        }
        let format_err = |message: String| OverlapError::Format {
            path: path.display().to_string(),
            message,
        };
        let stem = name
            .strip_suffix(".txt")
            .ok_or_else(|| format_err("expected a `<benchmark>.<split>.txt` file".into()))?;
        let (bench, split) = stem
            .rsplit_once('.')
            .ok_or_else(|| format_err("file name has no split component".into()))?;
        let split: Split = split.parse().map_err(format_err)?;
        let labels: BTreeSet<String> = std::fs::read_to_string(&path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        out.entry(bench.to_string()).or_default().insert(split, labels);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Training examples

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmitWarning {
    pub doc_id: String,
    pub message: String,
}

/// The code-style prompt for a record: its canonical guidelines followed by
/// the document as a string literal.
pub fn training_input(schema: &Schema, text: &str) -> Result<String, String> {
    let guidelines = print_guidelines(schema).map_err(|e| e.to_string())?;
    Ok(format!(
        "# The following lines describe the task definition\n{guidelines}\n\
         # This is the text to analyze\ntext = {}\n\n\
         # The list called result contains the instances for the following types: {}\n\
         result = ",
        print_string_literal(text),
        schema
            .classes
            .iter()
            .map(|c| format!("`{}`", c.name))
            .collect::<Vec<_>>()
            .join(", ")
    ))
}

/// One training example per record. Records whose instances no longer
/// validate cleanly, or that cannot be printed, are skipped with a warning.
pub fn emit_training_examples(
    records: &[DatasetRecord],
) -> (Vec<TrainingExample>, Vec<EmitWarning>) {
    let mut examples = Vec::new();
    let mut warnings = Vec::new();
    for r in records {
        let warn = |message: String| EmitWarning {
            doc_id: r.doc_id.clone(),
            message,
        };
        match r.revalidate(None) {
            Ok(report) if report.is_clean() => {}
            Ok(report) => {
                warnings.push(warn(format!(
                    "{} instance(s) fail validation",
                    report.rejected_count
                )));
                continue;
            }
            Err(e) => {
                warnings.push(warn(e.to_string()));
                continue;
            }
        }
        let example = training_input(&r.schema, &r.text).and_then(|input| {
            print_instances(&r.instances)
                .map(|target| TrainingExample { input, target })
                .map_err(|e| e.to_string())
        });
        match example {
            Ok(e) => examples.push(e),
            Err(message) => warnings.push(warn(message)),
        }
    }
    (examples, warnings)
}

/// Write examples as JSONL with fields `input` and `target`.
pub fn write_training_file(path: &Path, examples: &[TrainingExample]) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for e in examples {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}
