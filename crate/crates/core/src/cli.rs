//! Command-line front end.
//!
//! Exit codes: 0 success, 1 finished with warnings (rejections, skipped
//! records, unparseable predictions), 2 usage or configuration error,
//! 3 runtime failure.

use clap::{Args, Parser, Subcommand};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::config::{Backend, RunConfig};
use crate::corpus::{load_corpus, sample_corpus};
use crate::dataset::{
    compute_overlap, compute_stats, emit_training_examples, load_label_spaces, read_dataset,
    write_training_file, Canonicalization, DatasetRecord, DatasetWriter, AGGREGATE,
};
use crate::eval::{
    format_benchmark_table, format_label_table, label_report, load_golds, load_predictions,
    score_benchmarks, Matching, MentionFields, Suite,
};
use crate::llm_client::{LlmClient, ReplayCache};
use crate::pipeline::{read_reject_ids, run_pipeline, DirSink, DATASET_FILE, REJECTS_FILE};
use crate::validator::{filter, GroundingMode, GroundingPolicy};

pub const EXIT_OK: i32 = 0;
pub const EXIT_WARNINGS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "guidex", version, about = "Guideline-driven synthetic IE dataset generation, validation and scoring")]
pub struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Sampling seed (overrides `corpus.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Skip documents already present in the dataset or reject log.
    #[arg(long, global = true)]
    pub resume: bool,
    /// Only report errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    /// Override any config field, e.g. `--set client.parallelism=8`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the four generation stages over the corpus.
    Generate,
    /// Re-validate a dataset and write the filtered dataset and reports.
    Validate(ValidateArgs),
    /// Label statistics of a dataset.
    Stats(StatsArgs),
    /// Coverage of benchmark label spaces by the dataset's labels.
    Overlap(OverlapArgs),
    /// Emit code-style training examples.
    EmitTrain(EmitArgs),
    /// Score predictions against gold annotations.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArg {
    /// Dataset file; defaults to `<output dir>/dataset.jsonl`.
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    /// Grounding mode; defaults to the policy stored with each record.
    #[arg(long)]
    pub grounding: Option<GroundingMode>,
    /// Keep records whose instances are all rejected.
    #[arg(long)]
    pub keep_empty: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    /// Rows in the most/least frequent label tables.
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    /// Directory of `<benchmark>.<split>.txt` label files.
    #[arg(long)]
    pub labels: PathBuf,
    /// Compare labels ignoring case.
    #[arg(long)]
    pub case_insensitive: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EmitArgs {
    #[command(flatten)]
    pub dataset: DatasetArg,
    /// Output file; defaults to `<output dir>/train.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of gold `<dataset>.jsonl` files (and optional
    /// `<dataset>.mapping.json` mention-field maps).
    #[arg(long)]
    pub gold: PathBuf,
    /// Directory of prediction `<dataset>.jsonl` files.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, default_value = "exact")]
    pub matching: Matching,
    /// Comma-separated labels for a per-label table.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long)]
    pub json: bool,
}

/// An error with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

fn usage(e: impl ToString) -> CliError {
    CliError {
        code: EXIT_USAGE,
        message: e.to_string(),
    }
}

fn runtime(e: impl ToString) -> CliError {
    CliError {
        code: EXIT_RUNTIME,
        message: e.to_string(),
    }
}

type CliResult = Result<i32, CliError>;

/// Parse `args` (including the program name), run, and return the exit
/// code. Reports go to `out`, diagnostics to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.quiet);
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn init_logging(quiet: bool) {
    let default = if quiet { "error" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default))
        .format_timestamp(None)
        .try_init();
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Generate => cmd_generate(cli, out),
        Command::Validate(a) => cmd_validate(cli, a, out),
        Command::Stats(a) => cmd_stats(cli, a, out),
        Command::Overlap(a) => cmd_overlap(cli, a, out),
        Command::EmitTrain(a) => cmd_emit_train(cli, a, out),
        Command::Eval(a) => cmd_eval(cli, a, out),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| usage("this command needs --config"))?;
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("corpus.seed={seed}"));
    }
    let mut config = RunConfig::load(path, &overrides).map_err(usage)?;
    if let Some(dir) = &cli.output_dir {
        config.output_dir = dir.clone();
    }
    Ok(config)
}

/// The output directory from `--output-dir`, else the config, else `.`.
fn output_dir(cli: &Cli) -> Result<PathBuf, CliError> {
    if let Some(dir) = &cli.output_dir {
        return Ok(dir.clone());
    }
    if cli.config.is_some() {
        return Ok(load_config(cli)?.output_dir);
    }
    Ok(PathBuf::from("."))
}

fn dataset_path(cli: &Cli, arg: &DatasetArg) -> Result<PathBuf, CliError> {
    let path = match &arg.dataset {
        Some(p) => p.clone(),
        None => output_dir(cli)?.join(DATASET_FILE),
    };
    if !path.is_file() {
        return Err(usage(format!("dataset not found: {}", path.display())));
    }
    Ok(path)
}

/// Load a dataset, reporting corrupt lines as warnings.
fn load_records(path: &Path) -> Result<(Vec<DatasetRecord>, usize), CliError> {
    let contents = read_dataset(path, true).map_err(runtime)?;
    for w in &contents.warnings {
        log::warn!("{}, line {}: skipped corrupt record: {}", path.display(), w.line, w.message);
    }
    Ok((contents.records, contents.warnings.len()))
}

fn generated_at(backend: Backend) -> Option<u64> {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return Some(epoch);
    }
    match backend {
        Backend::Replay => None,
        _ => std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs()),
    }
}

fn cmd_generate(cli: &Cli, out: &mut dyn Write) -> CliResult {
    let config = load_config(cli)?;
    config.check_paths().map_err(usage)?;
    let templates = config.template_set().map_err(usage)?;
    let mut docs = load_corpus(&config.corpus.path, config.corpus.format).map_err(runtime)?;
    if let Some(n) = config.corpus.sample_size {
        docs = sample_corpus(&docs, n, config.corpus.seed).map_err(usage)?;
    }
    let parallelism = config.client.parallelism;
    let client = match config.client.backend {
        Backend::Http => LlmClient::http(config.http_config(), parallelism),
        Backend::Replay => {
            let path = config.client.cache_path.as_deref().expect("checked on load");
            LlmClient::replay(Arc::new(ReplayCache::load(path).map_err(runtime)?), parallelism)
        }
        Backend::Record => {
            let path = config.client.cache_path.as_deref().expect("checked on load");
            let cache = ReplayCache::open_for_append(path).map_err(runtime)?;
            LlmClient::record(config.http_config(), Arc::new(cache), parallelism)
        }
    };
    let dir = &config.output_dir;
    let dataset_file = dir.join(DATASET_FILE);
    let mut skip = HashSet::new();
    if cli.resume && dataset_file.is_file() {
        let (records, _) = load_records(&dataset_file)?;
        skip.extend(records.into_iter().map(|r| r.doc_id));
    }
    if cli.resume {
        skip.extend(read_reject_ids(&dir.join(REJECTS_FILE)).map_err(runtime)?);
    }
    let mut sink = DirSink::open(dir, cli.resume).map_err(runtime)?;
    let pipeline = config.pipeline_config(generated_at(config.client.backend));
    let summary =
        run_pipeline(&docs, &templates, &client, &pipeline, &skip, &mut sink).map_err(runtime)?;
    drop(sink);
    let (records, _) = load_records(&dataset_file)?;
    if !cli.quiet {
        writeln!(
            out,
            "documents: {}  processed: {}  skipped: {}  records: {}  rejected: {}  llm calls: {}",
            docs.len(),
            summary.processed,
            summary.skipped,
            summary.records,
            summary.rejects,
            summary.llm_calls
        )
        .map_err(runtime)?;
        writeln!(out, "dataset: {} ({} records)", dataset_file.display(), records.len())
            .map_err(runtime)?;
    }
    if records.is_empty() {
        return Err(runtime("no dataset records were produced"));
    }
    Ok(EXIT_OK)
}

fn cmd_validate(cli: &Cli, args: &ValidateArgs, out: &mut dyn Write) -> CliResult {
    let path = dataset_path(cli, &args.dataset)?;
    let (records, corrupt) = load_records(&path)?;
    let dir = match &cli.output_dir {
        Some(d) => d.clone(),
        None => path.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    std::fs::create_dir_all(&dir).map_err(runtime)?;
    let policy_override = args.grounding.map(|mode| match mode {
        GroundingMode::Exact => GroundingPolicy::exact(),
        GroundingMode::Normalized => GroundingPolicy::normalized(),
        GroundingMode::Off => GroundingPolicy::off(),
    });
    let report_path = dir.join("validation.jsonl");
    let filtered_path = dir.join("dataset.filtered.jsonl");
    let mut reports = std::io::BufWriter::new(std::fs::File::create(&report_path).map_err(runtime)?);
    let mut writer = DatasetWriter::create(&filtered_path).map_err(runtime)?;
    let (mut instances, mut rejected, mut kept, mut dropped) = (0, 0, 0, 0);
    for record in &records {
        let report = record
            .revalidate(policy_override.as_ref())
            .map_err(runtime)?;
        instances += report.verdicts.len();
        rejected += report.rejected_count;
        for v in report.verdicts.iter().filter(|v| !v.errors.is_empty()) {
            let codes: Vec<&str> = v.errors.iter().map(|e| e.code.as_str()).collect();
            log::info!("{} instance {}: {}", record.doc_id, v.index, codes.join(", "));
        }
        serde_json::to_writer(&mut reports, &report).map_err(runtime)?;
        reports.write_all(b"\n").map_err(runtime)?;
        let filtered = filter(&record.instances, &report).map_err(runtime)?;
        if filtered.is_empty() && !args.keep_empty {
            dropped += 1;
            continue;
        }
        let mut kept_record = record.clone();
        kept_record.instances = filtered;
        if let Some(p) = policy_override {
            kept_record.metadata.grounding = p;
        }
        writer.write(&kept_record).map_err(runtime)?;
        kept += 1;
    }
    reports.flush().map_err(runtime)?;
    if !cli.quiet {
        writeln!(
            out,
            "records: {}  instances: {}  rejected instances: {}  kept records: {}  dropped records: {}",
            records.len(),
            instances,
            rejected,
            kept,
            dropped
        )
        .map_err(runtime)?;
        writeln!(out, "reports: {}\nfiltered dataset: {}", report_path.display(), filtered_path.display())
            .map_err(runtime)?;
    }
    Ok(if rejected > 0 || corrupt > 0 { EXIT_WARNINGS } else { EXIT_OK })
}

/// Text report for `stats`.
pub fn format_stats(stats: &crate::dataset::LabelStats, k: usize) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "documents:                     {}", stats.n_docs);
    let _ = writeln!(s, "annotations:                   {}", stats.n_annotations);
    let _ = writeln!(s, "unique labels:                 {}", stats.unique_label_count());
    let _ = writeln!(s, "distinct labels per document:  {:.2}", stats.avg_distinct_labels_per_doc());
    let _ = writeln!(s, "annotations per document:      {:.2}", stats.avg_annotations_per_doc());
    for (title, rows) in [("most frequent", stats.top_k(k)), ("least frequent", stats.bottom_k(k))] {
        let _ = writeln!(s, "\n{title} labels (annotations, documents):");
        for r in rows {
            let _ = writeln!(s, "  {:>8} {:>8}  {}", r.annotations, r.documents, r.label);
        }
    }
    s
}

fn cmd_stats(cli: &Cli, args: &StatsArgs, out: &mut dyn Write) -> CliResult {
    let path = dataset_path(cli, &args.dataset)?;
    let (records, corrupt) = load_records(&path)?;
    let stats = compute_stats(&records);
    let text = if args.json {
        let v = serde_json::json!({
            "n_docs": stats.n_docs,
            "n_annotations": stats.n_annotations,
            "unique_label_count": stats.unique_label_count(),
            "avg_distinct_labels_per_doc": stats.avg_distinct_labels_per_doc(),
            "avg_annotations_per_doc": stats.avg_annotations_per_doc(),
            "top_k": stats.top_k(args.top_k),
            "bottom_k": stats.bottom_k(args.top_k),
            "annotation_frequency": stats.annotation_frequency,
            "document_frequency": stats.document_frequency,
        });
        format!("{}\n", serde_json::to_string_pretty(&v).map_err(runtime)?)
    } else {
        format_stats(&stats, args.top_k)
    };
    out.write_all(text.as_bytes()).map_err(runtime)?;
    Ok(if corrupt > 0 { EXIT_WARNINGS } else { EXIT_OK })
}

fn cmd_overlap(cli: &Cli, args: &OverlapArgs, out: &mut dyn Write) -> CliResult {
    let path = dataset_path(cli, &args.dataset)?;
    if !args.labels.is_dir() {
        return Err(usage(format!("label directory not found: {}", args.labels.display())));
    }
    let (records, corrupt) = load_records(&path)?;
    let labels: BTreeSet<String> = compute_stats(&records).labels();
    let spaces = load_label_spaces(&args.labels).map_err(usage)?;
    let rows = compute_overlap(
        &labels,
        &spaces,
        Canonicalization {
            case_insensitive: args.case_insensitive,
        },
    )
    .map_err(runtime)?;
    let text = if args.json {
        format!("{}\n", serde_json::to_string_pretty(&rows).map_err(runtime)?)
    } else {
        let width = rows.iter().map(|r| r.benchmark.len()).max().unwrap_or(0).max(9);
        let mut s = format!("{:<width$}  {:<5} {:>8} {:>6} {:>9}\n", "benchmark", "split", "matched", "gold", "coverage");
        for r in &rows {
            if r.benchmark == AGGREGATE {
                continue;
            }
            let _ = writeln!(s, "{:<width$}  {:<5} {:>8} {:>6} {:>8.1}%", r.benchmark, r.split.as_str(), r.matched_count, r.gold_label_count, 100.0 * r.coverage);
        }
        for r in rows.iter().filter(|r| r.benchmark == AGGREGATE) {
            let _ = writeln!(s, "{:<width$}  {:<5} {:>8} {:>6} {:>8.1}%", r.benchmark, r.split.as_str(), r.matched_count, r.gold_label_count, 100.0 * r.coverage);
        }
        s
    };
    out.write_all(text.as_bytes()).map_err(runtime)?;
    Ok(if corrupt > 0 { EXIT_WARNINGS } else { EXIT_OK })
}

fn cmd_emit_train(cli: &Cli, args: &EmitArgs, out: &mut dyn Write) -> CliResult {
    let path = dataset_path(cli, &args.dataset)?;
    let (records, corrupt) = load_records(&path)?;
    let target = match &args.out {
        Some(p) => p.clone(),
        None => {
            let dir = match &cli.output_dir {
                Some(d) => d.clone(),
                None => path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            };
            std::fs::create_dir_all(&dir).map_err(runtime)?;
            dir.join("train.jsonl")
        }
    };
    let (examples, warnings) = emit_training_examples(&records);
    for w in &warnings {
        log::warn!("skipping {}: {}", w.doc_id, w.message);
    }
    write_training_file(&target, &examples).map_err(runtime)?;
    if !cli.quiet {
        writeln!(out, "examples: {}  skipped: {}\ntraining file: {}", examples.len(), warnings.len(), target.display())
            .map_err(runtime)?;
    }
    Ok(if warnings.is_empty() && corrupt == 0 { EXIT_OK } else { EXIT_WARNINGS })
}

fn cmd_eval(cli: &Cli, args: &EvalArgs, out: &mut dyn Write) -> CliResult {
    for (what, dir) in [("gold", &args.gold), ("prediction", &args.pred)] {
        if !dir.is_dir() {
            return Err(usage(format!("{what} directory not found: {}", dir.display())));
        }
    }
    let mut names: Vec<String> = std::fs::read_dir(&args.gold)
        .map_err(runtime)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_suffix(".jsonl").map(String::from)
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(usage(format!("no gold .jsonl files in {}", args.gold.display())));
    }
    let mut warnings = 0;
    let mut suites: BTreeMap<String, Suite> = BTreeMap::new();
    for name in names {
        let golds = load_golds(&args.gold.join(format!("{name}.jsonl"))).map_err(runtime)?;
        let mapping_path = args.gold.join(format!("{name}.mapping.json"));
        let fields: MentionFields = if mapping_path.is_file() {
            let text = std::fs::read_to_string(&mapping_path).map_err(runtime)?;
            serde_json::from_str(&text)
                .map_err(|e| usage(format!("{}: {e}", mapping_path.display())))?
        } else {
            MentionFields::new()
        };
        let pred_path = args.pred.join(format!("{name}.jsonl"));
        let preds = if pred_path.is_file() {
            let loaded = load_predictions(&pred_path, &fields).map_err(runtime)?;
            if !loaded.unparseable.is_empty() {
                warnings += 1;
                log::warn!(
                    "{name}: {} prediction(s) could not be parsed and score as empty",
                    loaded.unparseable.len()
                );
            }
            loaded.predictions
        } else {
            warnings += 1;
            log::warn!("{name}: no prediction file {}; scoring as empty", pred_path.display());
            Vec::new()
        };
        suites.insert(name, (golds, preds));
    }
    let report = score_benchmarks(&suites, args.matching).map_err(runtime)?;
    let mut label_rows = BTreeMap::new();
    if !args.labels.is_empty() {
        for (name, (golds, preds)) in &suites {
            label_rows.insert(
                name.clone(),
                label_report(golds, preds, &args.labels, args.matching).map_err(runtime)?,
            );
        }
    }
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "matching": args.matching,
        "datasets": report.datasets,
        "macro_f1": report.macro_f1,
        "labels": label_rows,
    }))
    .map_err(runtime)?;
    let mut text = format_benchmark_table(&report);
    for (name, rows) in &label_rows {
        let _ = write!(text, "\n{name}\n{}", format_label_table(rows));
    }
    if let Some(dir) = &cli.output_dir {
        std::fs::create_dir_all(dir).map_err(runtime)?;
        std::fs::write(dir.join("eval_report.json"), format!("{json}\n")).map_err(runtime)?;
        std::fs::write(dir.join("eval_report.txt"), &text).map_err(runtime)?;
    }
    let shown = if args.json { format!("{json}\n") } else { text };
    out.write_all(shown.as_bytes()).map_err(runtime)?;
    Ok(if warnings > 0 { EXIT_WARNINGS } else { EXIT_OK })
}
