//! Document ingestion, seeded sampling and length statistics.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::text::word_count;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("document `{0}` has empty text")]
    EmptyText(String),
    #[error("duplicate doc_id `{0}`")]
    DuplicateId(String),
    #[error("cannot sample {requested} documents from a corpus of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("corpus is empty")]
    Empty,
}

/// One source document. The text is kept whole, never segmented.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub word_count: usize,
    pub source: String,
}

impl Document {
    pub fn new(
        doc_id: impl Into<String>,
        text: impl Into<String>,
        source: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let doc_id = doc_id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyText(doc_id));
        }
        Ok(Document {
            word_count: word_count(&text),
            doc_id,
            text,
            source: source.into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Jsonl,
    TextDirectory,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "text-directory" | "text_directory" | "dir" => Ok(CorpusFormat::TextDirectory),
            other => Err(format!(
                "unknown corpus format `{other}` (expected jsonl or text-directory)"
            )),
        }
    }
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: Option<String>,
    text: Option<String>,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Document>, CorpusError> {
    let docs = match format {
        CorpusFormat::Jsonl => load_jsonl(path)?,
        CorpusFormat::TextDirectory => load_text_dir(path)?,
    };
    let mut seen = HashSet::new();
    for doc in &docs {
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(CorpusError::DuplicateId(doc.doc_id.clone()));
        }
    }
    Ok(docs)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_jsonl(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let source = path.display().to_string();
    let mut docs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |message: String| CorpusError::Record {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let record: JsonlRecord =
            serde_json::from_str(&line).map_err(|e| record_err(e.to_string()))?;
        let text = record
            .text
            .ok_or_else(|| record_err("record has no `text` field".into()))?;
        if text.trim().is_empty() {
            return Err(record_err("record has empty `text`".into()));
        }
        let doc_id = record.id.unwrap_or_else(|| format!("{idx:06}"));
        docs.push(Document::new(doc_id, text, source.clone())?);
    }
    Ok(docs)
}

/// Every `*.txt` file is one document, keyed by file stem, in file-name order.
fn load_text_dir(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(io_err(path))?
        .map(|entry| entry.map(|e| e.path()).map_err(io_err(path)))
        .collect::<Result<_, _>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"));
    files.sort();
    files
        .iter()
        .map(|file| {
            let text = fs::read_to_string(file).map_err(io_err(file))?;
            let stem = file
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Document::new(stem, text, file.display().to_string())
        })
        .collect()
}

/// Draw `n` documents without replacement. The result is a pure function of
/// `(docs, n, seed)`.
pub fn sample_corpus(docs: &[Document], n: usize, seed: u64) -> Result<Vec<Document>, CorpusError> {
    if n > docs.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: docs.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, docs.len(), n)
        .into_iter()
        .map(|i| docs[i].clone())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBucket {
    /// Inclusive lower bound in words.
    pub lower: usize,
    /// Exclusive upper bound; `None` for the open last bucket.
    pub upper: Option<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub mean_words: f64,
    pub word_histogram: Vec<HistogramBucket>,
}

/// Power-of-two bucket edges from 128 to 32768 words.
const HISTOGRAM_EDGES: [usize; 9] = [128, 256, 512, 1024, 2048, 4096, 8192, 16384, 32768];

pub fn corpus_stats(docs: &[Document]) -> Result<CorpusStats, CorpusError> {
    if docs.is_empty() {
        return Err(CorpusError::Empty);
    }
    let counts: Vec<usize> = docs.iter().map(|d| word_count(&d.text)).collect();
    let total: usize = counts.iter().sum();
    let mut word_histogram = Vec::with_capacity(HISTOGRAM_EDGES.len() + 1);
    let mut lower = 0;
    for upper in HISTOGRAM_EDGES.iter().copied().map(Some).chain([None]) {
        let count = counts
            .iter()
            .filter(|&&c| c >= lower && upper.is_none_or(|u| c < u))
            .count();
        word_histogram.push(HistogramBucket {
            lower,
            upper,
            count,
        });
        lower = upper.unwrap_or(lower);
    }
    Ok(CorpusStats {
        n_docs: docs.len(),
        min_words: *counts.iter().min().expect("non-empty"),
        max_words: *counts.iter().max().expect("non-empty"),
        mean_words: total as f64 / docs.len() as f64,
        word_histogram,
    })
}
