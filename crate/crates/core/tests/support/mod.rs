//! Shared fixtures for integration tests: a scripted chat backend that plays
//! the model for the five end-to-end documents, plus builders for the
//! synthetic statistics dataset.

#![allow(dead_code)]

pub mod gen;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use guidex::config::RunConfig;
use guidex::corpus::{load_corpus, CorpusFormat, Document};
use guidex::dataset::{DatasetRecord, PipelineMetadata};
use guidex::llm_client::{
    ChatBackend, ChatRequest, ChatResponse, FinishReason, LlmClient, LlmError, RecordingBackend,
    ReplayCache,
};
use guidex::pipeline::{run_pipeline, MemorySink, StructuredRecord, TemplateSet};
use guidex::schema_notation::{parse_guidelines, EntityInstance, FieldValue, InstanceSet};
use guidex::validator::{validate, GroundingPolicy};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn e2e_dir() -> PathBuf {
    fixtures().join("e2e")
}

/// Scripted answers for one document.
struct Script {
    summary: &'static str,
    structured: &'static str,
    /// Answer to the first guidelines prompt.
    guidelines: &'static str,
    /// Answer once the prompt carries a repair note, if different.
    guidelines_repaired: Option<&'static str>,
    instances: &'static str,
}

fn scripts() -> BTreeMap<&'static str, Script> {
    let mut m = BTreeMap::new();
    m.insert(
        "ml-frameworks",
        Script {
            summary: "- TensorFlow and PyTorch are the two dominant deep learning frameworks.\n- TensorFlow was developed by Google Brain, released in 2015, and offers TensorFlow Serving for deployment.\n- PyTorch was developed by Meta AI and is popular with researchers for dynamic computation graphs.",
            structured: "```json\n[\n  {\"label\": \"Framework\", \"attributes\": {\"name\": \"TensorFlow\", \"developer\": \"Google Brain\", \"features\": [\"TensorFlow Serving\"]}},\n  {\"label\": \"Framework\", \"attributes\": {\"name\": \"PyTorch\", \"developer\": \"Meta AI\", \"features\": [\"dynamic computation graphs\", \"Pythonic interface\"]}},\n  {\"label\": \"Organization\", \"attributes\": {\"name\": \"Google Brain\"}},\n  {\"label\": \"Organization\", \"attributes\": {\"name\": \"Meta AI\"}}\n]\n```",
            guidelines: "@dataclass\nclass Framework:\n    \"\"\"A software framework or library used to build, train or deploy deep\n    learning models. Annotate the proper name of the framework only, not\n    generic phrases such as \"deep learning framework\".\n    \"\"\"\n    name: str  # name of the framework, e.g. \"TensorFlow\"\n    developer: Optional[str]  # organization that develops the framework\n    features: Optional[List[str]]  # notable capabilities or bundled tools\n\n@dataclass\nclass Organization:\n    \"\"\"A company, lab or institute that develops software.\"\"\"\n    name: str  # name of the organization\n",
            guidelines_repaired: None,
            instances: "[\n    Framework(name=\"TensorFlow\", developer=\"Google Brain\", features=[\"TensorFlow Serving\"]),\n    Framework(name=\"PyTorch\", developer=\"Meta AI\", features=[\"dynamic computation graphs\", \"Pythonic interface\"]),\n    Organization(name=\"Google Brain\"),\n    Organization(name=\"Meta AI\"),\n]\nThese are all the instances mentioned in the text.",
        },
    );
    m.insert(
        "influenza",
        Script {
            summary: "- Influenza starts with sudden fever, muscle aches, dry cough and fatigue.\n- Most patients recover within two weeks; older adults risk pneumonia.\n- Antiviral drugs like oseltamivir shorten the illness if taken early.",
            structured: "{\"Disease\": {\"name\": \"Influenza\", \"complications\": [\"pneumonia\"]}, \"Symptom\": [{\"name\": \"fever\"}, {\"name\": \"muscle aches\"}, {\"name\": \"dry cough\"}, {\"name\": \"fatigue\"}], \"Drug\": [{\"name\": \"oseltamivir\", \"drug_class\": \"antiviral\"}]}",
            guidelines: "@dataclass\nclass Disease:\n    \"\"\"An illness or medical condition affecting humans.\"\"\"\n    name: str\n",
            guidelines_repaired: Some("@dataclass\nclass Disease:\n    \"\"\"An illness or medical condition affecting humans, named as in the text.\"\"\"\n    name: str  # name of the disease\n    complications: Optional[List[str]]  # conditions the disease can lead to\n\n@dataclass\nclass Symptom:\n    \"\"\"A physical or mental sign of a disease as experienced by the patient.\"\"\"\n    name: str  # the symptom as written in the text\n\n@dataclass\nclass Drug:\n    \"\"\"A medication used to treat or prevent a disease.\"\"\"\n    name: str  # generic or brand name of the drug\n    drug_class: Optional[str]  # pharmacological class, e.g. \"antiviral\"\n"),
            instances: "[Disease(name=\"Influenza\", complications=[\"pneumonia\"]), Symptom(name=\"fever\"), Symptom(name=\"muscle aches\"), Symptom(name=\"dry cough\"), Symptom(name=\"fatigue\"), Symptom(name=\"headache\"), Drug(name=\"oseltamivir\", drug_class=\"Antiviral\")]",
        },
    );
    m.insert(
        "westphalia",
        Script {
            summary: "- The Peace of Westphalia was signed in 1648 in Osnabrück and Münster.\n- It ended the Thirty Years' War.\n- It established state sovereignty in Europe.",
            structured: "[{\"type\": \"Treaty\", \"name\": \"Peace of Westphalia\", \"year\": 1648, \"places\": [\"Osnabrück\", \"Münster\"]}, {\"type\": \"War\", \"name\": \"Thirty Years' War\"}, {\"type\": \"Principle\", \"name\": \"state sovereignty\"}]",
            guidelines: "@dataclass\nclass Treaty:\n    \"\"\"A formal agreement between states that ends a conflict or regulates\n    their relations. Use the conventional name of the agreement.\n    \"\"\"\n    name: str  # conventional name of the treaty\n    year: Optional[str]  # year in which it was signed\n    places: Optional[List[str]]  # cities where it was signed\n\n@dataclass\nclass War:\n    \"\"\"An armed conflict between states or groups, named as in the text.\"\"\"\n    name: str  # name of the war\n\n@dataclass\nclass Principle:\n    \"\"\"A political or legal principle established or discussed in the text.\"\"\"\n    name: str  # the principle as written\n",
            guidelines_repaired: None,
            instances: "[\n  Treaty(name='Peace of Westphalia', year='1648', places=['Osnabrück', 'Münster']),\n  War(name=\"Thirty Years' War\"),\n  Principle(name=\"state sovereignty\"),\n  Person(name=\"Ferdinand III\"),\n]",
        },
    );
    m.insert(
        "curie",
        Script {
            summary: "- Marie and Pierre Curie discovered polonium and radium in 1898 in Paris.\n- Marie Curie was the first person to win Nobel Prizes in two sciences, physics and chemistry.",
            structured: "[{\"label\": \"Scientist\", \"attributes\": {\"name\": \"Marie Curie\", \"discoveries\": [\"polonium\", \"radium\"]}}, {\"label\": \"Scientist\", \"attributes\": {\"name\": \"Pierre Curie\", \"discoveries\": [\"polonium\", \"radium\"]}}, {\"label\": \"ChemicalElement\", \"attributes\": {\"name\": \"polonium\", \"discovery_year\": \"1898\"}}, {\"label\": \"ChemicalElement\", \"attributes\": {\"name\": \"radium\", \"discovery_year\": \"1898\"}}, {\"label\": \"Award\", \"attributes\": {\"name\": \"Nobel Prizes\", \"fields\": [\"physics\", \"chemistry\"]}}]",
            guidelines: "Here are the guidelines:\n\n```python\nfrom dataclasses import dataclass\nfrom typing import List, Optional\n\n@dataclass\nclass Scientist:\n    \"\"\"A person who conducts scientific research. Annotate full names when\n    they are given.\n    \"\"\"\n    name: str  # full name of the scientist\n    discoveries: Optional[List[str]]  # things the scientist discovered\n\n@dataclass\nclass ChemicalElement:\n    \"\"\"A chemical element mentioned in the text.\"\"\"\n    name: str  # name of the element\n    discovery_year: Optional[str]  # year the element was discovered\n\n@dataclass\nclass Award:\n    \"\"\"A prize or honour awarded for achievements.\"\"\"\n    name: str  # name of the award\n    fields: Optional[List[str]]  # disciplines in which it was awarded\n```\n",
            guidelines_repaired: None,
            instances: "```python\n[\n    Scientist(name=\"Marie Curie\", discoveries=[\"polonium\", \"radium\"]),\n    Scientist(name=\"Pierre Curie\", discoveries=[\"polonium\", \"radium\"]),\n    ChemicalElement(name=\"polonium\", discovery_year=\"1898\"),\n    ChemicalElement(name=\"radium\", discovery_year=\"1898\"),\n    Award(name=\"Nobel Prizes\", fields=[\"physics\", \"chemistry\"]),\n]\n```",
        },
    );
    m.insert(
        "pizza",
        Script {
            summary: "- Neapolitan pizza uses San Marzano tomatoes, mozzarella di bufala, basil and olive oil.\n- It bakes for about ninety seconds in a wood-fired oven at about 485 degrees Celsius.",
            structured: "{\"entities\": [{\"label\": \"Dish\", \"attributes\": {\"name\": \"Neapolitan pizza\", \"ingredients\": [\"San Marzano tomatoes\", \"mozzarella di bufala\", \"fresh basil\", \"olive oil\"]}}, {\"label\": \"Appliance\", \"attributes\": {\"name\": \"wood-fired oven\", \"temperature\": \"485 degrees Celsius\"}}]}",
            guidelines: "@dataclass\nclass Dish:\n    \"\"\"A prepared food or recipe, named as in the text.\"\"\"\n    name: str  # name of the dish\n    ingredients: List[str]  # ingredients used in the dish\n\n@dataclass\nclass Appliance:\n    \"\"\"A kitchen device used to prepare food.\"\"\"\n    name: str  # name of the appliance\n    temperature: Optional[str]  # operating temperature, with units\n",
            guidelines_repaired: None,
            instances: "[Dish(name=\"Neapolitan pizza\", ingredients=[\"San Marzano tomatoes\", \"mozzarella di bufala\", \"fresh basil\", \"olive oil\"]), Appliance(name=\"wood-fired oven\", temperature=\"485 degrees Celsius\")]",
        },
    );
    m
}

/// Plays the model: recognizes the stage from the prompt wording and the
/// document from its text.
pub struct ScriptedBackend {
    docs: Vec<Document>,
    scripts: BTreeMap<&'static str, Script>,
    pub calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(docs: Vec<Document>) -> Self {
        ScriptedBackend {
            docs,
            scripts: scripts(),
            calls: AtomicUsize::new(0),
        }
    }
}

impl ChatBackend for ScriptedBackend {
    fn send(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt = &req.messages().last().expect("non-empty").content;
        let doc = self
            .docs
            .iter()
            .find(|d| prompt.contains(&d.text))
            .ok_or_else(|| LlmError::Malformed("scripted backend: unknown document".into()))?;
        let script = &self.scripts[doc.doc_id.as_str()];
        let repair = prompt.contains("could not be used");
        let text = if prompt.contains("summarize its key points") {
            script.summary
        } else if prompt.contains("organize the relevant information") {
            script.structured
        } else if prompt.contains("Write annotation guidelines") {
            match (repair, script.guidelines_repaired) {
                (true, Some(fixed)) => fixed,
                _ => script.guidelines,
            }
        } else if prompt.contains("Extract every instance") {
            script.instances
        } else {
            return Err(LlmError::Malformed("scripted backend: unknown stage".into()));
        };
        Ok(ChatResponse {
            text: text.to_string(),
            finish_reason: FinishReason::Stop,
            usage: None,
        })
    }
}

pub fn e2e_config() -> RunConfig {
    RunConfig::load(&e2e_dir().join("config.toml"), &[]).expect("fixture config loads")
}

pub fn e2e_docs() -> Vec<Document> {
    let config = e2e_config();
    load_corpus(&config.corpus.path, CorpusFormat::Jsonl).expect("fixture corpus loads")
}

/// Run the fixture pipeline against the scripted backend, recording every
/// call into a cache at `cache_path`.
pub fn record_e2e_cache(cache_path: &Path) -> MemorySink {
    let config = e2e_config();
    let docs = e2e_docs();
    let cache = Arc::new(ReplayCache::open_for_append(cache_path).expect("cache opens"));
    let backend = RecordingBackend::new(ScriptedBackend::new(docs.clone()), cache);
    // one worker so the cache lines come out in a stable order
    let client = LlmClient::new(Arc::new(backend), 1);
    let mut sink = MemorySink::default();
    run_pipeline(
        &docs,
        &TemplateSet::builtin(),
        &client,
        &config.pipeline_config(None),
        &Default::default(),
        &mut sink,
    )
    .expect("memory sink never fails");
    sink
}

// ---------------------------------------------------------------------------
// Synthetic statistics dataset

pub const STATS_RECORDS: usize = 50;

/// Record `i` of the statistics fixture: `(i % 5) + 1` instances of
/// `Label{i % 7}` and two of `Common`, all grounded in the document.
pub fn stats_record(i: usize) -> DatasetRecord {
    let label = format!("Label{}", i % 7);
    let text = format!("Document {i} mentions alpha, beta and gamma.");
    let mention = |k: usize| ["alpha", "beta", "gamma"][k % 3];
    let mut instances: Vec<(&str, &str)> = (0..(i % 5) + 1).map(|k| (label.as_str(), mention(k))).collect();
    instances.push(("Common", mention(0)));
    instances.push(("Common", mention(1)));
    labeled_record(&format!("syn-{i:03}"), &text, &[label.as_str(), "Common"], &instances)
}

/// A clean record declaring one single-field class per entry of `classes`,
/// with one instance per `(class, name)` pair. Every name must occur in
/// `text`.
pub fn labeled_record(
    doc_id: &str,
    text: &str,
    classes: &[&str],
    instances: &[(&str, &str)],
) -> DatasetRecord {
    let guidelines_text = classes
        .iter()
        .map(|c| {
            let guideline = if *c == "Common" {
                "A type shared by every document.".to_string()
            } else {
                format!("Synthetic type {c}.")
            };
            format!("@dataclass\nclass {c}:\n    \"\"\"{guideline}\"\"\"\n    name: str  # the mention\n")
        })
        .collect::<Vec<_>>()
        .join("\n");
    let schema = parse_guidelines(&guidelines_text).expect("fixture guidelines parse");
    let set = InstanceSet {
        doc_id: doc_id.to_string(),
        instances: instances
            .iter()
            .map(|(c, name)| EntityInstance::new(*c).with("name", FieldValue::Text(name.to_string())))
            .collect(),
        source_text: String::new(),
    };
    let doc = Document::new(doc_id, text, "synthetic").unwrap();
    let report = validate(&set, &schema, &doc, &GroundingPolicy::normalized()).unwrap();
    assert!(report.is_clean(), "{report:?}");
    DatasetRecord {
        doc_id: doc_id.to_string(),
        text: text.to_string(),
        source: "synthetic".into(),
        summary: String::new(),
        structured: StructuredRecord::default(),
        guidelines_text,
        schema,
        instances: set,
        report,
        metadata: PipelineMetadata {
            template_versions: BTreeMap::new(),
            model_name: "synthetic".into(),
            temperature: 0.7,
            top_p: 0.95,
            max_new_tokens: 1024,
            grounding: GroundingPolicy::normalized(),
            truncated: false,
            generated_at: None,
        },
    }
}

pub fn stats_records() -> Vec<DatasetRecord> {
    (0..STATS_RECORDS).map(stats_record).collect()
}

/// Whether tests should rewrite golden files instead of comparing.
pub fn blessing() -> bool {
    std::env::var_os("GUIDEX_BLESS").is_some()
}

/// Table anchor: per-dataset F1 values and their macro average.
pub const ANCHOR_F1: [(&str, f64); 7] = [
    ("d1", 62.41),
    ("d2", 63.79),
    ("d3", 67.92),
    ("d4", 64.59),
    ("d5", 69.58),
    ("d6", 65.25),
    ("d7", 55.50),
];
pub const ANCHOR_MACRO: f64 = 64.15;

/// A suite scoring exactly `hits / 10000` F1: one example with 10000 gold
/// mentions, `hits` of them predicted, plus `10000 - hits` spurious
/// predictions (tp = h, fp = fn = 10000 - h, so F1 = 2h / 20000).
pub fn anchor_suite(hits: usize) -> guidex::eval::Suite {
    use guidex::eval::{GoldExample, Mention, Prediction};
    const N: usize = 10_000;
    assert!(hits <= N);
    let gold: Vec<Mention> = (0..N).map(|i| Mention::new("E", format!("g{i}"))).collect();
    let mut pred: Vec<Mention> = gold[..hits].to_vec();
    pred.extend((0..N - hits).map(|i| Mention::new("E", format!("p{i}"))));
    (
        vec![GoldExample {
            example_id: "all".into(),
            text: String::new(),
            mentions: gold,
        }],
        vec![Prediction {
            example_id: "all".into(),
            mentions: pred,
        }],
    )
}

/// The anchor suites, keyed by dataset name.
pub fn anchor_suites() -> BTreeMap<String, guidex::eval::Suite> {
    ANCHOR_F1
        .iter()
        .map(|&(name, f1)| (name.to_string(), anchor_suite((f1 * 100.0).round() as usize)))
        .collect()
}

// ---------------------------------------------------------------------------
// Constructed overlap inventories
//
// Labels are `L000` .. `L284`. The train splits of two benchmarks cover
// L000..L242 (243 labels) and the test splits L050..L284 (235 labels). The
// dataset uses L000..L004 (train only) and L050..L147 (both splits) plus
// two labels no benchmark knows, so exactly 103 train and 98 test labels
// are matched.

pub const OVERLAP_TRAIN: (usize, usize) = (103, 243);
pub const OVERLAP_TEST: (usize, usize) = (98, 235);

fn label_range(lo: usize, hi: usize) -> Vec<String> {
    (lo..hi).map(|i| format!("L{i:03}")).collect()
}

/// Write `<bench>.<split>.txt` inventories into `dir`.
pub fn write_overlap_inventories(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    let files = [
        ("alpha.train.txt", label_range(0, 150)),
        ("beta.train.txt", label_range(100, 243)),
        ("alpha.test.txt", label_range(50, 200)),
        ("beta.test.txt", label_range(150, 285)),
    ];
    for (name, labels) in files {
        std::fs::write(dir.join(name), labels.join("\n") + "\n").unwrap();
    }
}

/// The dataset labels of the overlap construction.
pub fn overlap_dataset_labels() -> Vec<String> {
    let mut labels = label_range(0, 5);
    labels.extend(label_range(50, 148));
    labels.push("Spaceship".into());
    labels.push("Volcano".into());
    labels
}

/// A dataset whose instance-backed labels are [`overlap_dataset_labels`],
/// spread over three records.
pub fn overlap_dataset() -> Vec<DatasetRecord> {
    let labels = overlap_dataset_labels();
    labels
        .chunks(40)
        .enumerate()
        .map(|(i, chunk)| {
            let classes: Vec<&str> = chunk.iter().map(String::as_str).collect();
            let instances: Vec<(&str, &str)> = classes.iter().map(|c| (*c, "thing")).collect();
            labeled_record(&format!("ov-{i}"), "A thing of interest.", &classes, &instances)
        })
        .collect()
}
