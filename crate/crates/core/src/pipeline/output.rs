use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{DocResult, Outcome, OutcomeSink, PipelineError, RejectEntry};
use crate::dataset::DatasetWriter;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const REJECTS_FILE: &str = "rejects.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";

/// Writes a run into an output directory: `dataset.jsonl`, `rejects.jsonl`
/// and the `audit.jsonl` stage trail. Each document's lines are flushed
/// before the next document is accepted, so an interrupted run can resume.
pub struct DirSink {
    dir: PathBuf,
    dataset: DatasetWriter,
    rejects: BufWriter<File>,
    audit: BufWriter<File>,
}

fn out_err(path: &Path, e: impl ToString) -> PipelineError {
    PipelineError::Output {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn open_jsonl(path: &Path, append: bool) -> Result<BufWriter<File>, PipelineError> {
    let mut opts = OpenOptions::new();
    opts.create(true);
    if append {
        opts.append(true);
    } else {
        opts.write(true).truncate(true);
    }
    opts.open(path).map(BufWriter::new).map_err(|e| out_err(path, e))
}

impl DirSink {
    /// Start fresh (truncating earlier outputs) or, with `append`, continue
    /// the files of an earlier run.
    pub fn open(dir: &Path, append: bool) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
        let dataset_path = dir.join(DATASET_FILE);
        let dataset = if append {
            DatasetWriter::append(&dataset_path)
        } else {
            DatasetWriter::create(&dataset_path)
        }
        .map_err(|e| out_err(&dataset_path, e))?;
        Ok(DirSink {
            dir: dir.to_path_buf(),
            dataset,
            rejects: open_jsonl(&dir.join(REJECTS_FILE), append)?,
            audit: open_jsonl(&dir.join(AUDIT_FILE), append)?,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

fn write_line<T: serde::Serialize>(
    w: &mut BufWriter<File>,
    path: &Path,
    value: &T,
) -> Result<(), PipelineError> {
    let mut line = serde_json::to_string(value).map_err(|e| out_err(path, e))?;
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(|e| out_err(path, e))
}

impl OutcomeSink for DirSink {
    fn accept(&mut self, result: &DocResult) -> Result<(), PipelineError> {
        let audit_path = self.dir.join(AUDIT_FILE);
        for record in &result.trail {
            write_line(&mut self.audit, &audit_path, record)?;
        }
        self.audit.flush().map_err(|e| out_err(&audit_path, e))?;
        match &result.outcome {
            Outcome::Record(record) => {
                let path = self.dir.join(DATASET_FILE);
                self.dataset.write(record).map_err(|e| out_err(&path, e))?;
            }
            Outcome::Reject(reject) => {
                let path = self.dir.join(REJECTS_FILE);
                write_line(&mut self.rejects, &path, reject)?;
                self.rejects.flush().map_err(|e| out_err(&path, e))?;
            }
        }
        Ok(())
    }
}

/// Document ids listed in a reject log. A missing file yields no ids;
/// unreadable lines are skipped.
pub fn read_reject_ids(path: &Path) -> std::io::Result<HashSet<String>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashSet::new()),
        Err(e) => return Err(e),
    };
    let mut ids = HashSet::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if let Ok(entry) = serde_json::from_str::<RejectEntry>(&line) {
            ids.insert(entry.doc_id);
        }
    }
    Ok(ids)
}
