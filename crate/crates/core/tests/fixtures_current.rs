//! Committed fixtures are regenerated here and compared byte for byte.
//! Run with `GUIDEX_BLESS=1` to rewrite them after an intentional change.

mod support;

use std::path::Path;

use guidex::corpus::{load_corpus, sample_corpus, CorpusFormat};
use guidex::dataset::write_dataset;
use guidex::schema_notation::{EntityInstance, FieldValue};
use support::*;

fn check_or_bless(committed: &Path, fresh: &[u8]) {
    if blessing() {
        std::fs::create_dir_all(committed.parent().unwrap()).unwrap();
        std::fs::write(committed, fresh).unwrap();
        return;
    }
    let old = std::fs::read(committed)
        .unwrap_or_else(|e| panic!("{}: {e} (run with GUIDEX_BLESS=1)", committed.display()));
    assert!(
        old == fresh,
        "{} is stale; rerun with GUIDEX_BLESS=1",
        committed.display()
    );
}

#[test]
fn replay_cache_matches_scripted_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let sink = record_e2e_cache(&path);
    assert_eq!(sink.records.len(), 5, "rejects: {:?}", sink.rejects);
    check_or_bless(&e2e_dir().join("cache.jsonl"), &std::fs::read(&path).unwrap());
}

#[test]
fn stats_dataset_matches_builder() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.jsonl");
    write_dataset(&path, &stats_records()).unwrap();
    check_or_bless(
        &fixtures().join("stats/dataset.jsonl"),
        &std::fs::read(&path).unwrap(),
    );
}

/// 100 documents `doc-000` .. `doc-099`.
fn sampling_corpus() -> String {
    (0..100)
        .map(|i| format!("{{\"id\":\"doc-{i:03}\",\"text\":\"sample document number {i}\"}}\n"))
        .collect()
}

#[test]
fn sampling_golden() {
    let corpus_path = fixtures().join("sampling/corpus.jsonl");
    check_or_bless(&corpus_path, sampling_corpus().as_bytes());
    let docs = load_corpus(&corpus_path, CorpusFormat::Jsonl).unwrap();
    let sample = sample_corpus(&docs, 20, 1).unwrap();
    let ids: String = sample.iter().map(|d| format!("{}\n", d.doc_id)).collect();
    check_or_bless(&fixtures().join("golden/sample_100_n20_seed1.txt"), ids.as_bytes());
}

/// Seeded defects for the validate fixture: record index → instance index
/// and the error code it must produce.
pub const SEEDED: [(usize, usize, &str); 3] = [
    (2, 0, "UndefinedEntityType"),
    (5, 1, "MisalignedAttribute"),
    (7, 2, "UngroundedSpan"),
];

#[test]
fn validate_fixtures() {
    let clean: Vec<_> = (0..10).map(stats_record).collect();
    let mut corrupted = clean.clone();
    for (rec, inst, code) in SEEDED {
        let target = &mut corrupted[rec].instances.instances[inst];
        match code {
            "UndefinedEntityType" => target.class_name = "Unknown".into(),
            "MisalignedAttribute" => {
                target
                    .assignments
                    .insert("extra".into(), FieldValue::Text("beta".into()));
            }
            "UngroundedSpan" => {
                *target = EntityInstance::new(target.class_name.as_str())
                    .with("name", FieldValue::Text("omega".into()))
            }
            _ => unreachable!(),
        }
    }
    let dir = tempfile::tempdir().unwrap();
    for (name, records) in [("clean.jsonl", &clean), ("corrupted.jsonl", &corrupted)] {
        let path = dir.path().join(name);
        write_dataset(&path, records).unwrap();
        check_or_bless(&fixtures().join("validate").join(name), &std::fs::read(&path).unwrap());
    }
}
